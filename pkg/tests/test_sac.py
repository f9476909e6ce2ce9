import math

import numpy as np
import pytest

from doorsim.neural import Mlp, make_squashed_policy
from doorsim.ppo import TrainSetup
from doorsim.sac import (ReplayBuffer, SacConfig, make_sac_agent, policy_loss,
                         q_forward, q_loss, q_target_value, target_update,
                         temperature_update, train_sac)
from doorsim.worldgen import sample_worlds


def constant_q_net(obs_dim, act_dim, value):
    """Single affine layer with zero weights: Q(s, a) = value everywhere."""
    return Mlp(weights=[np.zeros((obs_dim + act_dim, 1))], biases=[np.array([float(value)])])


# -- replay buffer -----------------------------------------------------------------

def test_replay_fifo_overwrite():
    buf = ReplayBuffer(3, 1, 1)
    for v in (1, 2, 3, 4):
        buf.push([v], [v], v, [v], 0)
    assert buf.size == 3
    assert sorted(buf.rewards.tolist()) == [2.0, 3.0, 4.0]


def test_replay_size_below_capacity():
    buf = ReplayBuffer(100, 2, 1)
    for v in range(7):
        buf.push([v, v], [v], v, [v, v], 0)
    assert buf.size == 7


def test_replay_sample_uniform():
    buf = ReplayBuffer(10, 1, 1)
    buf.push([0.0], [0.0], 0.0, [0.0], 0)  # reward a = 0
    buf.push([1.0], [1.0], 1.0, [1.0], 0)  # reward b = 1
    rng = np.random.default_rng(0)
    total = 0.0
    n_draws = 100_000
    for _ in range(n_draws // 2):
        total += buf.sample(2, rng)["rewards"].sum()
    freq = total / n_draws
    assert abs(freq - 0.5) < 0.01


def test_replay_undersized_sampling_rejected():
    buf = ReplayBuffer(10, 1, 1)
    buf.push([0.0], [0.0], 0.0, [0.0], 0)
    with pytest.raises(ValueError):
        buf.sample(2, np.random.default_rng(0))


def test_replay_sample_deterministic():
    buf = ReplayBuffer(50, 2, 2)
    rng = np.random.default_rng(1)
    for i in range(50):
        buf.push(rng.standard_normal(2), rng.standard_normal(2), float(i),
                 rng.standard_normal(2), 0)
    a = buf.sample(16, np.random.default_rng(7))
    b = buf.sample(16, np.random.default_rng(7))
    assert np.array_equal(a["rewards"], b["rewards"])


# -- q loss -----------------------------------------------------------------------

def test_q_target_hand_value():
    """y = r + gamma * (min Q_target(s', a') - alpha * log pi) = 3.178."""
    obs_dim, act_dim = 2, 1
    policy = make_squashed_policy(obs_dim, act_dim, np.random.default_rng(0), hidden=4)
    target = [constant_q_net(obs_dim, act_dim, 2.0)]
    batch = {
        "obs": np.zeros((1, obs_dim)),
        "actions": np.zeros((1, act_dim)),
        "rewards": np.array([1.0]),
        "next_obs": np.zeros((1, obs_dim)),
        "dones": np.array([0.0]),
    }
    # with alpha = 0.2 and log pi forced to -1: y = 1 + 0.99 * (2 + 0.2) = 3.178
    soft_v = 2.0 - 0.2 * (-1.0)
    y = batch["rewards"] + 0.99 * (1.0 - batch["dones"]) * soft_v
    assert abs(y[0] - 3.178) < 1e-9
    # and the implementation's target with the real sampled log pi:
    rng = np.random.default_rng(3)
    _, logp, _ = policy.sample(batch["next_obs"], rng)
    v_impl = q_target_value(target, policy, batch["next_obs"], math.log(0.2),
                            np.random.default_rng(3))
    assert abs(v_impl[0] - (2.0 - 0.2 * logp[0])) < 1e-12


def test_q_target_terminal_is_reward():
    obs_dim, act_dim = 2, 1
    policy = make_squashed_policy(obs_dim, act_dim, np.random.default_rng(0), hidden=4)
    q_net = constant_q_net(obs_dim, act_dim, 5.0)
    batch = {
        "obs": np.zeros((3, obs_dim)),
        "actions": np.zeros((3, act_dim)),
        "rewards": np.array([1.0, -2.0, 0.5]),
        "next_obs": np.zeros((3, obs_dim)),
        "dones": np.ones(3),
    }
    _, _, y = q_loss([q_net], [constant_q_net(obs_dim, act_dim, 99.0)], policy,
                     batch, log_alpha=0.0, gamma=0.99, rng=np.random.default_rng(0))
    assert np.allclose(y, batch["rewards"])


def test_q_loss_zero_residual_zero_grads():
    obs_dim, act_dim = 2, 1
    policy = make_squashed_policy(obs_dim, act_dim, np.random.default_rng(0), hidden=4)
    q_net = constant_q_net(obs_dim, act_dim, 1.5)
    target = constant_q_net(obs_dim, act_dim, 0.0)
    # alpha = 0 and done = 1 make y = r; set r = Q = 1.5
    batch = {
        "obs": np.zeros((4, obs_dim)),
        "actions": np.zeros((4, act_dim)),
        "rewards": np.full(4, 1.5),
        "next_obs": np.zeros((4, obs_dim)),
        "dones": np.ones(4),
    }
    loss, grads, y = q_loss([q_net], [target], policy, batch, log_alpha=0.0,
                            gamma=0.99, rng=np.random.default_rng(0))
    assert loss == 0.0
    assert all(np.all(g == 0.0) for g in grads)


def test_twin_q_target_uses_elementwise_min():
    obs_dim, act_dim = 2, 1
    policy = make_squashed_policy(obs_dim, act_dim, np.random.default_rng(0), hidden=4)
    targets = [constant_q_net(obs_dim, act_dim, 1.0), constant_q_net(obs_dim, act_dim, 2.0)]
    v = q_target_value(targets, policy, np.zeros((5, obs_dim)), log_alpha=-100.0,
                       rng=np.random.default_rng(0))
    # alpha ~ 0: soft value is the min head = 1.0
    assert np.allclose(v, 1.0, atol=1e-6)


# -- policy loss -------------------------------------------------------------------

def test_policy_loss_flat_q_zero_mean_gradient():
    obs_dim, act_dim = 3, 2
    policy = make_squashed_policy(obs_dim, act_dim, np.random.default_rng(1), hidden=4)
    q_net = constant_q_net(obs_dim, act_dim, 7.0)  # constant in a => dQ/da = 0
    batch = {"obs": np.random.default_rng(2).standard_normal((16, obs_dim))}
    loss, grads, logp = policy_loss(policy, [q_net], batch, log_alpha=-np.inf,
                                    rng=np.random.default_rng(3))
    # alpha = 0 and flat Q: nothing to improve
    assert all(np.allclose(g, 0.0, atol=1e-15) for g in grads)
    assert abs(loss - (-7.0)) < 1e-12


def test_policy_loss_quadratic_q_pushes_mean_to_zero():
    obs_dim, act_dim = 2, 2
    rng = np.random.default_rng(4)
    policy = make_squashed_policy(obs_dim, act_dim, rng, hidden=4)
    policy.net.biases[-1][:act_dim] = 0.5  # bias the mean head positive

    def quadratic_q(obs, actions):
        return -np.sum(actions ** 2, axis=1), -2.0 * actions

    batch = {"obs": rng.standard_normal((64, obs_dim))}
    _, grads, _ = policy_loss(policy, [], batch, log_alpha=-np.inf,
                              rng=np.random.default_rng(5), q_eval=quadratic_q)
    # final-layer mean-head bias gradient positive => descent lowers the mean
    bias_grad = grads[-1][:act_dim]
    assert np.all(bias_grad > 0.0)


def test_policy_loss_matches_independent_recomputation():
    obs_dim, act_dim = 3, 2
    rng = np.random.default_rng(6)
    policy = make_squashed_policy(obs_dim, act_dim, rng, hidden=6)
    q_nets = [Mlp(weights=[rng.standard_normal((obs_dim + act_dim, 4)) * 0.3,
                           rng.standard_normal((4, 1)) * 0.3],
                  biases=[np.zeros(4), np.zeros(1)]) for _ in range(2)]
    batch = {"obs": rng.standard_normal((32, obs_dim))}
    log_alpha = math.log(0.2)
    loss, _, _ = policy_loss(policy, q_nets, batch, log_alpha,
                             rng=np.random.default_rng(7))
    # independent recomputation with the same reparameterization noise
    action, logp, _ = policy.sample(batch["obs"], np.random.default_rng(7))
    q_vals = [q_forward(q, batch["obs"], action)[0] for q in q_nets]
    expected = float(np.mean(0.2 * logp - np.minimum(*q_vals)))
    assert abs(loss - expected) < 1e-12


def test_losses_deterministic_under_fixed_noise_seed():
    obs_dim, act_dim = 3, 2
    rng = np.random.default_rng(9)
    policy = make_squashed_policy(obs_dim, act_dim, rng, hidden=4)
    q_nets = [constant_q_net(obs_dim, act_dim, 0.3), constant_q_net(obs_dim, act_dim, 0.6)]
    batch = {
        "obs": rng.standard_normal((8, obs_dim)),
        "actions": rng.standard_normal((8, act_dim)),
        "rewards": rng.standard_normal(8),
        "next_obs": rng.standard_normal((8, obs_dim)),
        "dones": np.zeros(8),
    }
    runs = []
    for _ in range(2):
        ql, _, y = q_loss(q_nets, q_nets, policy, batch, 0.0, 0.99,
                          np.random.default_rng(42))
        pl, _, logp = policy_loss(policy, q_nets, batch, 0.0, np.random.default_rng(43))
        runs.append((ql, y.tobytes(), pl, logp.tobytes()))
    assert runs[0] == runs[1]


# -- temperature --------------------------------------------------------------------

def test_temperature_stationary_point():
    log_alpha = 0.3
    out = temperature_update(log_alpha, np.full(8, 2.0), target_entropy=-2.0, lr=1e-2)
    assert out == log_alpha


def test_temperature_moves_toward_target():
    target = -3.0
    # entropy below target (log pi too high): alpha must increase
    up = temperature_update(0.0, np.full(4, 4.0), target, lr=0.1)
    assert up > 0.0
    # entropy above target: alpha decreases
    down = temperature_update(0.0, np.full(4, -5.0), target, lr=0.1)
    assert down < 0.0


# -- target update ------------------------------------------------------------------

def test_target_update_tau_one_copies():
    target = [np.zeros(3)]
    online = [np.array([1.0, 2.0, 3.0])]
    target_update(target, online, tau=1.0)
    assert np.array_equal(target[0], online[0])


def test_target_update_hand_value():
    target = [np.array([0.0])]
    target_update(target, [np.array([1.0])], tau=0.005)
    assert abs(target[0][0] - 0.005) < 1e-15


def test_target_update_geometric_convergence_and_drift_bound():
    target = [np.array([0.0])]
    online = [np.array([1.0])]
    prev = 0.0
    for k in range(1, 200):
        before = target[0][0]
        target_update(target, online, tau=0.005)
        drift = abs(target[0][0] - before)
        assert drift <= 0.005 * abs(online[0][0] - before) + 1e-15
        expected = 1.0 - (1.0 - 0.005) ** k
        assert abs(target[0][0] - expected) < 1e-12
        assert target[0][0] > prev
        prev = target[0][0]


# -- training loop ------------------------------------------------------------------

SMALL_SAC = SacConfig(batch=32, episodes_per_epoch=2, steps_per_episode=24,
                      buffer_capacity=500, hidden=8)


@pytest.fixture(scope="module")
def sac_worlds():
    return tuple(sample_worlds(600, 5, "pull", "pull"))


def test_train_sac_replay_accounting(tmp_path, sac_worlds):
    res = train_sac(SMALL_SAC, TrainSetup(worlds=sac_worlds), epochs=1, run_seed=1,
                    out_dir=str(tmp_path), checkpoint_every=0)
    assert res.replay_size == 2 * 24
    assert len(res.rows) == 1
    log = (tmp_path / "train_log.csv").read_text().strip().split("\n")
    assert log[0] == "epoch,env_steps,mean_reward,probe_asr,q_loss,policy_loss,alpha"
    assert len(log) == 2


def test_train_sac_buffer_pinned_at_capacity(sac_worlds):
    cfg = SacConfig(batch=16, episodes_per_epoch=2, steps_per_episode=24,
                    buffer_capacity=60, hidden=8)
    res = train_sac(cfg, TrainSetup(worlds=sac_worlds), epochs=2, run_seed=2)
    assert res.replay_size == 60


def test_train_sac_deterministic(sac_worlds):
    a = train_sac(SMALL_SAC, TrainSetup(worlds=sac_worlds), epochs=1, run_seed=3)
    b = train_sac(SMALL_SAC, TrainSetup(worlds=sac_worlds), epochs=1, run_seed=3)
    assert a.rows == b.rows


def test_sac_agent_twin_toggle(sac_worlds):
    twin = make_sac_agent(15, 6, 1, SacConfig(twin_q=True, hidden=8))
    single = make_sac_agent(15, 6, 1, SacConfig(twin_q=False, hidden=8))
    assert len(twin.q_nets) == 2 and len(twin.target_nets) == 2
    assert len(single.q_nets) == 1
