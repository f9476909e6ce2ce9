import math

import numpy as np
import pytest

from doorsim.neural import (AdamState, CheckpointError, GaussianPolicy, Mlp,
                            Normalizer, adam_step, clip_grads, gaussian_log_prob,
                            global_grad_norm, load_checkpoint, make_gaussian_policy,
                            make_squashed_policy, mlp_arrays, mlp_backward,
                            mlp_forward, mlp_from_arrays, save_checkpoint,
                            squashed_gaussian_log_prob, tanh_correction)


def manual_forward(net, x):
    """Independent dense-algebra oracle: explicit loops, no shared code path."""
    h = list(x)
    for layer, (w, b) in enumerate(zip(net.weights, net.biases)):
        out = []
        for j in range(w.shape[1]):
            acc = b[j]
            for i in range(w.shape[0]):
                acc += h[i] * w[i, j]
            out.append(acc)
        if layer != len(net.weights) - 1:
            out = [math.tanh(v) for v in out]
        h = out
    return np.array(h)


def random_net(rng, sizes):
    return Mlp(weights=[rng.standard_normal((a, b)) for a, b in zip(sizes[:-1], sizes[1:])],
               biases=[rng.standard_normal(b) for b in sizes[1:]])


def numeric_grads(net, x, upstream, h=1e-5):
    """Central finite differences of loss = sum(upstream * y)."""
    def loss():
        y, _ = mlp_forward(net, x)
        return float((upstream * y).sum())
    grads = []
    for p in net.params():
        g = np.zeros_like(p)
        flat = p.reshape(-1)
        gflat = g.reshape(-1)
        for i in range(flat.size):
            orig = flat[i]
            flat[i] = orig + h
            hi = loss()
            flat[i] = orig - h
            lo = loss()
            flat[i] = orig
            gflat[i] = (hi - lo) / (2 * h)
        grads.append(g)
    return grads


# -- forward -------------------------------------------------------------------

def test_forward_zero_net_is_zero():
    net = Mlp(weights=[np.zeros((4, 8)), np.zeros((8, 8)), np.zeros((8, 2))],
              biases=[np.zeros(8), np.zeros(8), np.zeros(2)])
    y, _ = mlp_forward(net, np.ones(4))
    assert np.array_equal(y, np.zeros(2))


def test_forward_hand_value_1111():
    net = Mlp(weights=[np.ones((1, 1)), np.ones((1, 1)), np.ones((1, 1))],
              biases=[np.zeros(1), np.zeros(1), np.zeros(1)])
    y, _ = mlp_forward(net, np.array([0.5]))
    expected = math.tanh(math.tanh(0.5))
    assert abs(y[0] - expected) < 1e-15
    assert round(expected, 6) == 0.431808


def test_forward_matches_independent_oracle():
    rng = np.random.default_rng(3)
    for _ in range(10):
        net = random_net(rng, (5, 7, 6, 3))
        x = rng.standard_normal(5)
        y, _ = mlp_forward(net, x)
        assert np.allclose(y, manual_forward(net, x), atol=1e-12)


def test_forward_shape_mismatch():
    net = random_net(np.random.default_rng(0), (4, 3, 3, 2))
    with pytest.raises(ValueError):
        mlp_forward(net, np.ones(5))


def test_forward_batched_equals_rowwise():
    rng = np.random.default_rng(4)
    net = random_net(rng, (6, 8, 8, 2))
    xs = rng.standard_normal((5, 6))
    ys, _ = mlp_forward(net, xs)
    for i in range(5):
        yi, _ = mlp_forward(net, xs[i])
        # batched vs row-wise may differ by accumulation order (BLAS paths)
        assert np.allclose(ys[i], yi, rtol=0, atol=1e-12)


# -- backward ------------------------------------------------------------------

def test_backward_zero_upstream_zero_grads():
    rng = np.random.default_rng(5)
    net = random_net(rng, (4, 6, 6, 3))
    x = rng.standard_normal((7, 4))
    _, cache = mlp_forward(net, x)
    grads, dx = mlp_backward(net, cache, np.zeros((7, 3)))
    assert all(np.all(g == 0) for g in grads)
    assert np.all(dx == 0)


def test_backward_matches_finite_differences():
    rng = np.random.default_rng(6)
    for _ in range(10):
        sizes = (3, 5, 4, 2)
        net = random_net(rng, sizes)
        x = rng.standard_normal((4, 3))
        upstream = rng.standard_normal((4, 2))
        _, cache = mlp_forward(net, x)
        grads, _ = mlp_backward(net, cache, upstream)
        numeric = numeric_grads(net, x, upstream)
        for g, ng in zip(grads, numeric):
            denom = np.maximum(np.abs(ng), 1e-3)
            assert np.max(np.abs(g - ng) / denom) < 1e-6


def test_backward_duplicate_inputs_additivity():
    rng = np.random.default_rng(7)
    net = random_net(rng, (3, 4, 4, 2))
    x = rng.standard_normal(3)
    upstream = rng.standard_normal(2)
    _, cache1 = mlp_forward(net, x[None, :])
    g1, _ = mlp_backward(net, cache1, upstream[None, :])
    _, cache2 = mlp_forward(net, np.stack([x, x]))
    g2, _ = mlp_backward(net, cache2, np.stack([upstream, upstream]))
    for a, b in zip(g1, g2):
        assert np.allclose(2.0 * a, b, atol=1e-12)


def test_backward_input_gradient():
    rng = np.random.default_rng(8)
    net = random_net(rng, (3, 5, 5, 2))
    x = rng.standard_normal(3)
    upstream = rng.standard_normal(2)
    _, cache = mlp_forward(net, x)
    _, dx = mlp_backward(net, cache, upstream)
    h = 1e-6
    for i in range(3):
        xp, xm = x.copy(), x.copy()
        xp[i] += h
        xm[i] -= h
        yp, _ = mlp_forward(net, xp)
        ym, _ = mlp_forward(net, xm)
        num = float((upstream * (yp - ym)).sum()) / (2 * h)
        assert abs(dx[i] - num) < 1e-6 * max(abs(num), 1e-3)


# -- Gaussian log-probs ----------------------------------------------------------

def test_log_prob_standard_normal_at_mode():
    lp = gaussian_log_prob(np.zeros(1), np.zeros(1), np.zeros(1))
    expected = -0.5 * math.log(2 * math.pi)
    assert abs(lp - expected) < 1e-12
    assert round(expected, 6) == -0.918939


def test_log_prob_standard_normal_at_one():
    lp = gaussian_log_prob(np.zeros(1), np.zeros(1), np.ones(1))
    expected = -0.5 - 0.5 * math.log(2 * math.pi)
    assert abs(lp - expected) < 1e-12
    assert round(expected, 6) == -1.418939


def test_log_prob_integrates_to_one():
    xs = np.linspace(-8, 8, 4001)[:, None]
    density = np.exp(gaussian_log_prob(np.zeros(1), np.zeros(1), xs))
    integral = np.trapezoid(density, xs[:, 0])
    assert abs(integral - 1.0) < 1e-3


def test_squashed_log_prob_integrates_to_one():
    # density of a = tanh(z), z ~ N(0, 0.5^2), integrated over (-1, 1)
    mean = np.zeros(1)
    log_std = np.full(1, math.log(0.5))
    a = np.linspace(-0.9999, 0.9999, 20001)
    z = np.arctanh(a)[:, None]
    density = np.exp(squashed_gaussian_log_prob(mean, log_std, z))
    integral = np.trapezoid(density, a)
    assert abs(integral - 1.0) < 1e-3


def test_tanh_correction_stable_at_extremes():
    val = tanh_correction(np.array([50.0, -50.0]))
    assert np.isfinite(val)
    # log(1 - tanh^2) is huge and negative at |z| = 50
    assert val < -180.0


def test_sampling_finite_for_extreme_log_std():
    policy = GaussianPolicy(
        mean_net=Mlp(weights=[np.zeros((3, 4)), np.zeros((4, 4)), np.zeros((4, 2))],
                     biases=[np.zeros(4), np.zeros(4), np.zeros(2)]),
        log_std=np.array([1000.0, -1000.0]))
    actions, logp = policy.sample(np.zeros((5, 3)), np.random.default_rng(0))
    assert np.isfinite(actions).all() and np.isfinite(logp).all()


# -- Adam and clipping -------------------------------------------------------------

def test_adam_zero_grad_keeps_params():
    params = [np.array([1.0, 2.0])]
    adam = AdamState.for_params(params)
    adam_step(adam, params, [np.zeros(2)], lr=1e-3)
    assert np.array_equal(params[0], [1.0, 2.0])
    assert adam.step == 1


def test_adam_first_step_hand_value():
    params = [np.array([0.0])]
    adam = AdamState.for_params(params)
    adam_step(adam, params, [np.array([1.0])], lr=1e-3)
    exact = -1e-3 / (1.0 + 1e-8)  # bias-corrected first step, eps outside sqrt
    assert abs(params[0][0] - exact) < 1e-12
    assert abs(params[0][0] - (-0.000999999)) < 1e-9


def test_grad_clip_scales_to_max_norm():
    grads = [np.array([3.0]), np.array([4.0])]  # global norm 5
    norm = clip_grads(grads, 0.5)
    assert abs(norm - 5.0) < 1e-12
    assert np.allclose(grads[0], [0.3]) and np.allclose(grads[1], [0.4])
    assert abs(global_grad_norm(grads) - 0.5) < 1e-12


def test_grad_clip_no_scale_below_max():
    grads = [np.array([0.1])]
    clip_grads(grads, 0.5)
    assert grads[0][0] == 0.1


def test_adam_clip_applied_before_update():
    params_a = [np.zeros(2)]
    params_b = [np.zeros(2)]
    adam_a = AdamState.for_params(params_a)
    adam_b = AdamState.for_params(params_b)
    big = [np.array([3.0, 4.0])]
    adam_step(adam_a, params_a, [g.copy() for g in big], lr=1e-3, max_grad_norm=0.5)
    pre_scaled = [np.array([0.3, 0.4])]
    adam_step(adam_b, params_b, pre_scaled, lr=1e-3)
    assert np.array_equal(params_a[0], params_b[0])


# -- checkpoints --------------------------------------------------------------------

def test_checkpoint_bit_exact_roundtrip(tmp_path):
    rng = np.random.default_rng(11)
    net = random_net(rng, (5, 8, 8, 3))
    arrays = mlp_arrays("policy", net)
    arrays["policy.log_std"] = rng.standard_normal(3)
    path = tmp_path / "ckpt.json"
    save_checkpoint(str(path), "ppo", "hook", 15, 6, step=7, arrays=arrays)
    doc = load_checkpoint(str(path))
    assert doc["algorithm"] == "ppo" and doc["step"] == 7
    for name, a in arrays.items():
        assert doc["arrays"][name].tobytes() == np.ascontiguousarray(a).tobytes()
    rebuilt = mlp_from_arrays("policy", doc["arrays"])
    y0, _ = mlp_forward(net, np.ones(5))
    y1, _ = mlp_forward(rebuilt, np.ones(5))
    assert np.array_equal(y0, y1)


def test_checkpoint_rejects_bad_format(tmp_path):
    path = tmp_path / "bad.json"
    path.write_text('{"format": "something_else"}')
    with pytest.raises(CheckpointError):
        load_checkpoint(str(path))


def test_policy_checkpoint_preserves_normalizer_behavior(tmp_path):
    rng = np.random.default_rng(12)
    policy = make_gaussian_policy(6, 2, rng)
    policy.obs_norm.update(rng.standard_normal((100, 6)) * 5.0 + 2.0)
    obs = rng.standard_normal(6)
    arrays = mlp_arrays("policy", policy.mean_net)
    arrays["policy.log_std"] = policy.log_std
    arrays.update(policy.obs_norm.arrays("policy.obs_norm"))
    path = tmp_path / "p.json"
    save_checkpoint(str(path), "ppo", "hook", 6, 2, step=0, arrays=arrays)
    doc = load_checkpoint(str(path))
    rebuilt = GaussianPolicy(mean_net=mlp_from_arrays("policy", doc["arrays"]),
                             log_std=doc["arrays"]["policy.log_std"],
                             obs_norm=Normalizer.from_arrays("policy.obs_norm", doc["arrays"]))
    assert np.array_equal(policy.mean_action(obs), rebuilt.mean_action(obs))


# -- normalizer ----------------------------------------------------------------------

def test_normalizer_matches_batch_statistics():
    rng = np.random.default_rng(13)
    data = rng.standard_normal((1000, 4)) * np.array([1.0, 5.0, 0.1, 2.0]) + 3.0
    norm = Normalizer(4)
    for chunk in np.array_split(data, 7):
        norm.update(chunk)
    # count starts at 1e-4, so stats match the data to ~1e-4 relative
    assert np.allclose(norm.mean, data.mean(axis=0), atol=1e-3)
    assert np.allclose(norm.var, data.var(axis=0), rtol=1e-3, atol=1e-3)
    z = norm.normalize(data)
    assert abs(z.mean()) < 1e-3
    assert abs(z.std() - 1.0) < 1e-2


def test_normalizer_clips():
    norm = Normalizer(1)
    norm.update(np.zeros((10, 1)) + np.arange(10)[:, None] * 0.001)
    assert norm.normalize(np.array([[1e9]]))[0, 0] == 10.0


def test_squashed_policy_mean_action_in_bounds():
    policy = make_squashed_policy(5, 3, np.random.default_rng(1))
    a = policy.mean_action(np.random.default_rng(2).standard_normal((10, 5)) * 100)
    assert np.all(np.abs(a) <= 1.0)
