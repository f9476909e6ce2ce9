import numpy as np
import pytest

from doorsim.env import KnobEstimateMode
from doorsim.neural import make_gaussian_policy, mlp_forward
from doorsim.ppo import (PpoConfig, TrainSetup, clipped_objective, collect_rollouts,
                         compute_gae, episode_seed, make_ppo_models,
                         policy_objective_grads, ppo_update, rollout_world_index,
                         train_ppo)
from doorsim.worldgen import sample_worlds


def brute_force_gae(rewards, values, dones, gamma, lam):
    """O(T^2) oracle: A_t = sum_{l>=0} (gamma*lam)^l * delta_{t+l}, cut at done."""
    length = len(rewards)
    delta = [rewards[t] + gamma * values[t + 1] * (1 - dones[t]) - values[t]
             for t in range(length)]
    adv = np.zeros(length)
    for t in range(length):
        acc = 0.0
        coef = 1.0
        for l in range(t, length):
            acc += coef * delta[l]
            if dones[l]:
                break
            coef *= gamma * lam
        adv[t] = acc
    return adv, adv + np.asarray(values[:length])


SMALL_CFG = PpoConfig(workers=2, episodes_per_worker=2, steps_per_episode=40,
                      minibatch=32, epochs=2)


@pytest.fixture(scope="module")
def small_worlds():
    return tuple(sample_worlds(500, 10, "pull", "pull"))


# -- GAE ------------------------------------------------------------------------

def test_gae_lambda_zero_is_td_error():
    rng = np.random.default_rng(0)
    rewards = rng.standard_normal(50)
    values = rng.standard_normal(51)
    dones = np.zeros(50)
    dones[-1] = 1.0
    adv, _ = compute_gae(rewards, values, dones, gamma=0.99, lam=0.0)
    delta = rewards + 0.99 * values[1:] * (1 - dones) - values[:-1]
    assert np.allclose(adv, delta, atol=0, rtol=0)


def test_gae_two_step_hand_example():
    rewards = [1.0, 1.0]
    values = [0.5, 0.5, 0.0]
    dones = [0.0, 1.0]
    adv, targets = compute_gae(rewards, values, dones, gamma=0.99, lam=0.95)
    assert abs(adv[1] - 0.5) < 1e-12
    assert abs(adv[0] - (0.995 + 0.9405 * 0.5)) < 1e-12
    assert abs(adv[0] - 1.46525) < 1e-9
    assert np.allclose(targets, adv + np.array([0.5, 0.5]))


def test_gae_matches_brute_force_512():
    rng = np.random.default_rng(1)
    rewards = rng.standard_normal(512)
    values = rng.standard_normal(513)
    dones = np.zeros(512)
    dones[-1] = 1.0
    adv, targets = compute_gae(rewards, values, dones, 0.99, 0.95)
    b_adv, b_tgt = brute_force_gae(rewards, values, dones, 0.99, 0.95)
    assert np.max(np.abs(adv - b_adv)) < 1e-10
    assert np.max(np.abs(targets - b_tgt)) < 1e-10


def test_gae_mid_episode_done_cuts_the_sum():
    rng = np.random.default_rng(2)
    rewards = rng.standard_normal(20)
    values = rng.standard_normal(21)
    dones = np.zeros(20)
    dones[7] = 1.0
    dones[-1] = 1.0
    adv, _ = compute_gae(rewards, values, dones, 0.97, 0.9)
    b_adv, _ = brute_force_gae(rewards, values, dones, 0.97, 0.9)
    assert np.max(np.abs(adv - b_adv)) < 1e-12


def test_gae_batched_rows_match_single():
    rng = np.random.default_rng(3)
    rewards = rng.standard_normal((4, 30))
    values = rng.standard_normal((4, 31))
    dones = np.zeros((4, 30))
    dones[:, -1] = 1.0
    adv, tgt = compute_gae(rewards, values, dones, 0.99, 0.95)
    for e in range(4):
        a1, t1 = compute_gae(rewards[e], values[e], dones[e], 0.99, 0.95)
        assert np.array_equal(adv[e], a1)
        assert np.array_equal(tgt[e], t1)


# -- clipped objective -------------------------------------------------------------

def test_clipped_objective_hand_values():
    assert abs(clipped_objective(1.5, 1.0, 0.2) - 1.2) < 1e-9
    assert abs(clipped_objective(0.5, -1.0, 0.2) - (-0.8)) < 1e-9


def test_clipped_objective_identity_ratio():
    adv = np.array([0.3, -2.0, 5.0])
    assert np.array_equal(clipped_objective(np.ones(3), adv, 0.2), adv)


def test_clipped_objective_min_contract():
    rng = np.random.default_rng(4)
    ratio = rng.uniform(0.0, 3.0, 1000)
    adv = rng.standard_normal(1000)
    obj = clipped_objective(ratio, adv, 0.2)
    assert np.all(obj <= ratio * adv + 1e-15)
    assert np.all(obj <= np.clip(ratio, 0.8, 1.2) * adv + 1e-15)


# -- policy gradient --------------------------------------------------------------

def unclipped_loss(policy, obs, actions, logp_old, adv):
    from doorsim.neural import gaussian_log_prob
    mean, _ = mlp_forward(policy.mean_net, obs)
    logp = gaussian_log_prob(mean, policy.log_std, actions)
    return -float((np.exp(logp - logp_old) * adv).mean())


def test_policy_grads_match_finite_differences_unclipped():
    """With clip_eps = inf the gradient equals the vanilla importance-weighted
    policy gradient (checked against central finite differences)."""
    rng = np.random.default_rng(5)
    policy = make_gaussian_policy(4, 2, rng, hidden=8, normalize_obs=False)
    obs = rng.standard_normal((16, 4))
    actions, logp_old = policy.sample(obs, rng)
    logp_old = logp_old + rng.standard_normal(16) * 0.05  # pretend an older policy
    adv = rng.standard_normal(16)

    grads, _ = policy_objective_grads(policy, obs, actions, logp_old, adv,
                                      clip_eps=float("inf"))
    h = 1e-6
    params = policy.params()
    for pi, p in enumerate(params):
        flat = p.reshape(-1)
        for i in range(0, flat.size, max(1, flat.size // 5)):
            orig = flat[i]
            flat[i] = orig + h
            hi = unclipped_loss(policy, obs, actions, logp_old, adv)
            flat[i] = orig - h
            lo = unclipped_loss(policy, obs, actions, logp_old, adv)
            flat[i] = orig
            numeric = (hi - lo) / (2 * h)
            assert abs(grads[pi].reshape(-1)[i] - numeric) < 1e-5 * max(1.0, abs(numeric))


def test_policy_grads_identity_ratio_stats():
    rng = np.random.default_rng(6)
    policy = make_gaussian_policy(3, 2, rng, hidden=8, normalize_obs=False)
    obs = rng.standard_normal((8, 3))
    actions, logp = policy.sample(obs, rng)
    adv = rng.standard_normal(8)
    _, stats = policy_objective_grads(policy, obs, actions, logp, adv, clip_eps=0.2)
    assert abs(stats["mean_ratio"] - 1.0) < 1e-12
    assert stats["clip_frac"] == 0.0
    # identity ratio: per-sample objective equals the advantage exactly
    assert np.allclose(stats["objective"], adv, atol=1e-12)


# -- rollouts ----------------------------------------------------------------------

def test_rollout_shapes_and_world_keying(small_worlds):
    policy, value, _ = make_ppo_models(15, 6, run_seed=9, hidden=8)
    buf = collect_rollouts(policy, value, TrainSetup(worlds=small_worlds),
                           SMALL_CFG, run_seed=9, update=0)
    n_ep = SMALL_CFG.workers * SMALL_CFG.episodes_per_worker
    assert buf.rewards.shape == (n_ep, 40)
    assert buf.obs.shape == (n_ep, 41, 15)
    assert buf.values.shape == (n_ep, 41)
    assert buf.n_transitions == n_ep * 40
    # all episodes of one worker share that worker's world
    for w in range(SMALL_CFG.workers):
        expected = small_worlds[rollout_world_index(9, 0, w, len(small_worlds))].world_id
        for e in range(SMALL_CFG.episodes_per_worker):
            assert buf.world_ids[w * SMALL_CFG.episodes_per_worker + e] == expected
    # fixed-length episodes: done only at the last step
    assert np.all(buf.dones[:, :-1] == 0.0) and np.all(buf.dones[:, -1] == 1.0)


def test_rollout_single_worker_single_episode(small_worlds):
    cfg = PpoConfig(workers=1, episodes_per_worker=1, steps_per_episode=512)
    policy, value, _ = make_ppo_models(15, 6, run_seed=2, hidden=8)
    buf = collect_rollouts(policy, value, TrainSetup(worlds=small_worlds), cfg,
                           run_seed=2, update=0)
    assert buf.n_transitions == 512


def test_rollout_deterministic(small_worlds):
    policy, value, _ = make_ppo_models(15, 6, run_seed=3, hidden=8)
    a = collect_rollouts(policy, value, TrainSetup(worlds=small_worlds), SMALL_CFG,
                         run_seed=3, update=5)
    b = collect_rollouts(policy, value, TrainSetup(worlds=small_worlds), SMALL_CFG,
                         run_seed=3, update=5)
    assert a.obs.tobytes() == b.obs.tobytes()
    assert a.actions.tobytes() == b.actions.tobytes()
    assert a.rewards.tobytes() == b.rewards.tobytes()
    assert a.log_probs.tobytes() == b.log_probs.tobytes()


def test_episode_seeds_are_schedule_independent():
    keys = {(u, w, e): episode_seed(1, u, w, e)
            for u in range(3) for w in range(3) for e in range(3)}
    assert len(set(keys.values())) == len(keys)


# -- update -------------------------------------------------------------------------

def test_ppo_update_normalizes_advantages(small_worlds):
    policy, value, adam = make_ppo_models(15, 6, run_seed=4, hidden=8)
    buf = collect_rollouts(policy, value, TrainSetup(worlds=small_worlds), SMALL_CFG,
                           run_seed=4, update=0)
    buf.prepare(SMALL_CFG.gamma, SMALL_CFG.gae_lambda)
    stats = ppo_update(policy, value, adam, buf, SMALL_CFG, np.random.default_rng(0))
    assert abs(stats["adv_norm_mean"]) < 1e-10
    assert abs(stats["adv_norm_std"] - 1.0) < 1e-8
    assert adam.step == SMALL_CFG.epochs * (buf.n_transitions // SMALL_CFG.minibatch)


def test_train_ppo_single_update_checkpoints(tmp_path, small_worlds):
    res = train_ppo(SMALL_CFG, TrainSetup(worlds=small_worlds), total_updates=1,
                    run_seed=5, out_dir=str(tmp_path), checkpoint_every=0)
    assert len(res.rows) == 1
    assert (tmp_path / "ckpt_final.json").exists()
    log = (tmp_path / "train_log.csv").read_text().strip().split("\n")
    assert log[0] == "update,steps,mean_reward,probe_asr,clip_frac,value_loss,mode"
    assert len(log) == 2


def test_train_ppo_curriculum_switch_logged(tmp_path, small_worlds):
    res = train_ppo(SMALL_CFG, TrainSetup(worlds=small_worlds), total_updates=4,
                    run_seed=5, out_dir=str(tmp_path), checkpoint_every=0,
                    curriculum_switch=2,
                    post_switch_mode=KnobEstimateMode.noisy(0.02))
    modes = [row["mode"] for row in res.rows]
    assert modes[0] == "gt" and modes[1] == "gt"
    assert modes[2].startswith("gt-noise") and modes[3].startswith("gt-noise")


def test_train_ppo_log_bytes_reproducible(tmp_path, small_worlds):
    out_a, out_b = tmp_path / "a", tmp_path / "b"
    for out in (out_a, out_b):
        train_ppo(SMALL_CFG, TrainSetup(worlds=small_worlds), total_updates=2,
                  run_seed=6, out_dir=str(out), checkpoint_every=0)
    assert (out_a / "train_log.csv").read_bytes() == (out_b / "train_log.csv").read_bytes()
    assert (out_a / "ckpt_final.json").read_bytes() == (out_b / "ckpt_final.json").read_bytes()
