"""Off-policy trainer: replay buffer, soft Bellman Q losses against an EMA
target, squashed-Gaussian policy loss, and automatic entropy temperature.

Single-worker pipeline: each epoch collects a fixed number of episodes
into the replay ring, then performs one gradient step per collected
environment step.  All sampling is keyed by (run_seed, epoch, ...), so
training logs are byte-identical across reruns.
"""

import os
from dataclasses import dataclass

import numpy as np

from .dynamics import arm_dof
from .env import DEFAULT_EPISODE_STEPS, VecDoorEnv
from .neural import (AdamState, Mlp, SquashedGaussianPolicy, adam_step,
                     make_squashed_policy, mlp_arrays, mlp_backward, mlp_forward,
                     mlp_init, save_checkpoint)
from .ppo import TrainSetup, write_train_log
from .rng import mix_key
from .worldgen import WorldSpec


@dataclass(frozen=True)
class SacConfig:
    gamma: float = 0.99
    lr_policy: float = 1e-3
    lr_q: float = 1e-3
    tau: float = 0.005             # target smoothing coefficient
    target_update_period: int = 1
    auto_entropy: bool = True
    target_entropy: float | None = None  # defaults to -act_dim
    batch: int = 256
    episodes_per_epoch: int = 10
    steps_per_episode: int = DEFAULT_EPISODE_STEPS
    grad_steps_per_env_step: int = 1
    twin_q: bool = True
    buffer_capacity: int = 10 ** 6
    hidden: int = 64
    alpha_init: float = 1.0


class ReplayBuffer:
    """Fixed-capacity FIFO ring with uniform with-replacement sampling."""

    def __init__(self, capacity: int, obs_dim: int, act_dim: int):
        if capacity < 1:
            raise ValueError("capacity must be >= 1")
        self.capacity = capacity
        self.obs = np.zeros((capacity, obs_dim))
        self.actions = np.zeros((capacity, act_dim))
        self.rewards = np.zeros(capacity)
        self.next_obs = np.zeros((capacity, obs_dim))
        self.dones = np.zeros(capacity)
        self.cursor = 0
        self.size = 0

    def push(self, obs, action, reward, next_obs, done) -> None:
        i = self.cursor
        self.obs[i] = obs
        self.actions[i] = action
        self.rewards[i] = reward
        self.next_obs[i] = next_obs
        self.dones[i] = float(done)
        self.cursor = (i + 1) % self.capacity
        self.size = min(self.size + 1, self.capacity)

    def push_block(self, obs, actions, rewards, next_obs, dones) -> None:
        """Push a contiguous block of transitions, oldest first."""
        for i in range(len(rewards)):
            self.push(obs[i], actions[i], rewards[i], next_obs[i], dones[i])

    def sample(self, batch: int, rng: np.random.Generator) -> dict:
        if self.size < batch:
            raise ValueError(f"buffer holds {self.size} transitions, need {batch}")
        idx = rng.integers(0, self.size, size=batch)
        return {
            "obs": self.obs[idx],
            "actions": self.actions[idx],
            "rewards": self.rewards[idx],
            "next_obs": self.next_obs[idx],
            "dones": self.dones[idx],
        }


def q_forward(q_net: Mlp, obs: np.ndarray, actions: np.ndarray):
    x = np.concatenate([obs, actions], axis=1)
    y, cache = mlp_forward(q_net, x)
    return y[:, 0], cache


def q_target_value(target_nets: list[Mlp], policy: SquashedGaussianPolicy,
                   next_obs: np.ndarray, log_alpha: float, rng: np.random.Generator):
    """min over target heads of Q(s', a') - alpha * log pi(a'|s'), a' ~ pi."""
    next_action, next_logp, _ = policy.sample(next_obs, rng)
    qs = [q_forward(t, next_obs, next_action)[0] for t in target_nets]
    q_min = qs[0] if len(qs) == 1 else np.minimum(qs[0], qs[1])
    return q_min - np.exp(log_alpha) * next_logp


def soft_bellman_target(reward, done, q_min_next, next_logp, alpha: float, gamma: float):
    """y = r + gamma * (1 - done) * (min Q_target(s', a') - alpha * log pi(a'|s'))."""
    return (np.asarray(reward, dtype=float)
            + gamma * (1.0 - np.asarray(done, dtype=float))
            * (np.asarray(q_min_next, dtype=float) - alpha * np.asarray(next_logp, dtype=float)))


def q_loss(q_nets: list[Mlp], target_nets: list[Mlp], policy: SquashedGaussianPolicy,
           batch: dict, log_alpha: float, gamma: float, rng: np.random.Generator):
    """Soft Bellman residual, 0.5 * MSE per head; the target y is constant.

    Returns (loss_total, grads aligned with q params, y).
    """
    next_action, next_logp, _ = policy.sample(batch["next_obs"], rng)
    qs = [q_forward(t, batch["next_obs"], next_action)[0] for t in target_nets]
    q_min = qs[0] if len(qs) == 1 else np.minimum(qs[0], qs[1])
    y = soft_bellman_target(batch["rewards"], batch["dones"], q_min, next_logp,
                            float(np.exp(log_alpha)), gamma)
    n = len(y)
    total = 0.0
    grads: list[np.ndarray] = []
    for q_net in q_nets:
        q, cache = q_forward(q_net, batch["obs"], batch["actions"])
        err = q - y
        total += float(0.5 * (err * err).mean())
        d_q = (err / n)[:, None]
        g, _ = mlp_backward(q_net, cache, d_q)
        grads.extend(g)
    return total, grads, y


def policy_loss(policy: SquashedGaussianPolicy, q_nets: list[Mlp], batch: dict,
                log_alpha: float, rng: np.random.Generator, q_eval=None):
    """loss = mean(alpha * log pi(a|s) - min_i Q_i(s, a)), a reparameterized;
    gradients flow through the action into Q.

    Returns (loss, grads aligned with policy params, logp); logp feeds the
    temperature update.  q_eval, when given, replaces the critic networks
    with a callable (obs, actions) -> (q, dq_da) (analytic oracles in tests).
    """
    obs = batch["obs"]
    n = len(obs)
    alpha = float(np.exp(log_alpha))
    action, logp, aux = policy.sample(obs, rng)
    z, mean = aux["z"], aux["mean"]
    tanh_z = action
    act_dim = policy.act_dim

    if q_eval is not None:
        q_min, dq_da = q_eval(obs, action)
        dq_da = np.asarray(dq_da, dtype=float) / n
    else:
        q_vals = []
        q_caches = []
        for q_net in q_nets:
            q, cache = q_forward(q_net, obs, action)
            q_vals.append(q)
            q_caches.append(cache)
        if len(q_nets) == 1:
            pick = np.zeros(n, dtype=int)
            q_min = q_vals[0]
        else:
            pick = (q_vals[1] < q_vals[0]).astype(int)  # ties keep head 0
            q_min = np.where(pick == 1, q_vals[1], q_vals[0])
        # dQmin/da: backprop a gradient of one through the selected head only
        dq_da = np.zeros((n, act_dim))
        for head, (q_net, cache) in enumerate(zip(q_nets, q_caches)):
            sel = (pick == head).astype(float)[:, None]
            _, dx = mlp_backward(q_net, cache, sel)
            dq_da += dx[:, -act_dim:]
        dq_da /= n
    loss = float((alpha * logp - q_min).mean())

    # derivatives with z = mean + exp(log_std) * eps reparameterized:
    # dlogp/dmean = 2*tanh(z); dlogp/dlog_std = -1 + 2*tanh(z)*(z - mean);
    # da/dmean = 1 - tanh(z)^2; da/dlog_std = (1 - tanh(z)^2)*(z - mean)
    sech2 = 1.0 - tanh_z * tanh_z
    z_c = z - mean
    d_mean = (alpha / n) * (2.0 * tanh_z) - dq_da * sech2
    d_log_std = (alpha / n) * (-1.0 + 2.0 * tanh_z * z_c) - dq_da * sech2 * z_c
    clamp_mask = (aux["raw_log_std"] > -20.0) & (aux["raw_log_std"] < 2.0)
    d_log_std = d_log_std * clamp_mask
    d_heads = np.concatenate([d_mean, d_log_std], axis=1)
    grads, _ = mlp_backward(policy.net, aux["cache"], d_heads)
    return loss, grads, logp


def temperature_update(log_alpha: float, batch_logp: np.ndarray,
                       target_entropy: float, lr: float) -> float:
    """Descend J(alpha) = mean(-alpha * (log pi + target_entropy)) in log_alpha."""
    grad = -float(np.exp(log_alpha)) * float(np.mean(batch_logp + target_entropy))
    return log_alpha - lr * grad


def target_update(target_params: list[np.ndarray], online_params: list[np.ndarray],
                  tau: float) -> None:
    """theta_bar <- (1 - tau) * theta_bar + tau * theta, in place."""
    for t, o in zip(target_params, online_params):
        t *= 1.0 - tau
        t += tau * o


@dataclass
class SacAgent:
    policy: SquashedGaussianPolicy
    q_nets: list[Mlp]
    target_nets: list[Mlp]
    log_alpha: float
    policy_adam: AdamState
    q_adam: AdamState


def make_sac_agent(obs_dim: int, act_dim: int, run_seed: int, cfg: SacConfig) -> SacAgent:
    rng = np.random.default_rng(mix_key(run_seed, 0x5AC))
    policy = make_squashed_policy(obs_dim, act_dim, rng, hidden=cfg.hidden)
    n_q = 2 if cfg.twin_q else 1
    q_nets = [mlp_init((obs_dim + act_dim, cfg.hidden, cfg.hidden, 1), rng) for _ in range(n_q)]
    target_nets = [Mlp(weights=[w.copy() for w in q.weights],
                       biases=[b.copy() for b in q.biases]) for q in q_nets]
    q_params = [p for q in q_nets for p in q.params()]
    return SacAgent(policy=policy, q_nets=q_nets, target_nets=target_nets,
                    log_alpha=float(np.log(cfg.alpha_init)),
                    policy_adam=AdamState.for_params(policy.params()),
                    q_adam=AdamState.for_params(q_params))


def sac_checkpoint_arrays(agent: SacAgent) -> dict:
    arrays = mlp_arrays("policy", agent.policy.net)
    for i, q in enumerate(agent.q_nets):
        arrays.update(mlp_arrays(f"q{i}", q))
    for i, t in enumerate(agent.target_nets):
        arrays.update(mlp_arrays(f"q{i}_target", t))
    arrays["log_alpha"] = np.array([agent.log_alpha])
    for j, (m, v) in enumerate(zip(agent.policy_adam.m, agent.policy_adam.v)):
        arrays[f"policy_adam.m{j}"] = m
        arrays[f"policy_adam.v{j}"] = v
    for j, (m, v) in enumerate(zip(agent.q_adam.m, agent.q_adam.v)):
        arrays[f"q_adam.m{j}"] = m
        arrays[f"q_adam.v{j}"] = v
    return arrays


@dataclass
class SacResult:
    rows: list[dict]
    checkpoint_paths: list[str]
    agent: SacAgent
    replay_size: int
    log_path: str | None


def train_sac(cfg: SacConfig, setup: TrainSetup, epochs: int, run_seed: int,
              out_dir: str | None = None,
              probe_worlds: tuple[WorldSpec, ...] | None = None,
              probe_every: int = 5,
              checkpoint_every: int = 20) -> SacResult:
    """Per epoch: collect episodes_per_epoch episodes into replay, then one
    gradient step (q, policy, temperature, target) per collected env step."""
    from .evaluate import PolicyController, run_episodes

    dof = arm_dof(setup.arm)
    obs_dim = 2 * dof + 3
    agent = make_sac_agent(obs_dim, dof, run_seed, cfg)
    target_h = cfg.target_entropy if cfg.target_entropy is not None else -float(dof)
    replay = ReplayBuffer(cfg.buffer_capacity, obs_dim, dof)
    q_params = [p for q in agent.q_nets for p in q.params()]
    target_params = [p for t in agent.target_nets for p in t.params()]

    rows: list[dict] = []
    ckpts: list[str] = []
    env_steps = 0
    grad_steps = 0
    if out_dir:
        os.makedirs(out_dir, exist_ok=True)

    def save(tag: str) -> str:
        path = os.path.join(out_dir, f"ckpt_{tag}.json")
        save_checkpoint(path, "sac", setup.arm, obs_dim, dof, step=grad_steps,
                        arrays=sac_checkpoint_arrays(agent),
                        extra={"hidden": cfg.hidden, "twin_q": cfg.twin_q})
        ckpts.append(path)
        return path

    for epoch in range(epochs):
        # -- collection: episodes_per_epoch single-worker episodes, batched
        n_ep = cfg.episodes_per_epoch
        worlds = [setup.worlds[mix_key(run_seed, epoch, e) % len(setup.worlds)]
                  for e in range(n_ep)]
        seeds = [mix_key(run_seed, epoch, e, 1) for e in range(n_ep)]
        env = VecDoorEnv(worlds, arm=setup.arm, mode=setup.mode, reward=setup.reward,
                         criterion=setup.criterion, constants=setup.constants,
                         max_episode_steps=cfg.steps_per_episode,
                         terminate_on_success=False)
        act_rng = np.random.default_rng(mix_key(run_seed, epoch, 0xAC))
        length = cfg.steps_per_episode
        obs = env.reset(seeds)
        ep_obs = np.empty((n_ep, length, obs_dim))
        ep_act = np.empty((n_ep, length, dof))
        ep_rew = np.empty((n_ep, length))
        ep_next = np.empty((n_ep, length, obs_dim))
        ep_done = np.empty((n_ep, length))
        for t in range(length):
            ep_obs[:, t] = obs
            actions, _, _ = agent.policy.sample(obs, act_rng)
            obs, rewards, dones, _ = env.step(actions)
            ep_act[:, t] = actions
            ep_rew[:, t] = rewards
            ep_next[:, t] = obs
            ep_done[:, t] = dones
        for e in range(n_ep):  # replay insertion order: (episode, step)
            replay.push_block(ep_obs[e], ep_act[e], ep_rew[e], ep_next[e], ep_done[e])
        collected = n_ep * length
        env_steps += collected
        mean_reward = float(ep_rew.sum(axis=1).mean())

        # -- updates: one gradient step per collected env step
        update_rng = np.random.default_rng(mix_key(run_seed, epoch, 0x0B))
        q_loss_sum = 0.0
        pi_loss_sum = 0.0
        n_updates = collected * cfg.grad_steps_per_env_step
        for _ in range(n_updates):
            batch = replay.sample(cfg.batch, update_rng)
            ql, q_grads, _ = q_loss(agent.q_nets, agent.target_nets, agent.policy,
                                    batch, agent.log_alpha, cfg.gamma, update_rng)
            adam_step(agent.q_adam, q_params, q_grads, cfg.lr_q)
            pl, p_grads, logp = policy_loss(agent.policy, agent.q_nets, batch,
                                            agent.log_alpha, update_rng)
            adam_step(agent.policy_adam, agent.policy.params(), p_grads, cfg.lr_policy)
            if cfg.auto_entropy:
                agent.log_alpha = temperature_update(agent.log_alpha, logp, target_h,
                                                     cfg.lr_policy)
            grad_steps += 1
            if grad_steps % cfg.target_update_period == 0:
                target_update(target_params, q_params, cfg.tau)
            q_loss_sum += ql
            pi_loss_sum += pl

        probe_asr = None
        if probe_worlds is not None and ((epoch + 1) % probe_every == 0 or epoch == epochs - 1):
            controller = PolicyController(agent.policy)
            report = run_episodes(controller, list(probe_worlds), arm=setup.arm,
                                  mode=setup.mode, criterion=setup.criterion,
                                  constants=setup.constants,
                                  eval_seed=mix_key(run_seed, 0xEE, epoch))
            probe_asr = report["asr"]

        rows.append({
            "epoch": epoch,
            "env_steps": env_steps,
            "mean_reward": mean_reward,
            "probe_asr": probe_asr,
            "q_loss": q_loss_sum / max(n_updates, 1),
            "policy_loss": pi_loss_sum / max(n_updates, 1),
            "alpha": float(np.exp(agent.log_alpha)),
        })
        if out_dir and checkpoint_every and (epoch + 1) % checkpoint_every == 0:
            save(f"epoch_{epoch + 1:04d}")

    log_path = None
    if out_dir:
        save("final")
        log_path = os.path.join(out_dir, "train_log.csv")
        write_train_log(log_path, rows,
                        ["epoch", "env_steps", "mean_reward", "probe_asr",
                         "q_loss", "policy_loss", "alpha"])
    return SacResult(rows=rows, checkpoint_paths=ckpts, agent=agent,
                     replay_size=replay.size, log_path=log_path)
