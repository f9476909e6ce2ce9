"""On-policy trainer: synchronous multi-worker rollouts, generalized
advantage estimation, and clipped-surrogate updates with a value head.

Workers are realized as slots of one vectorized environment batch stepping
in lockstep against an immutable policy snapshot.  Every random choice is
keyed by (run_seed, update, worker, episode), so the collected buffer is a
pure function of the configuration: any scheduling or thread count yields
identical results.
"""

import csv
import os
from dataclasses import dataclass, replace

import numpy as np

from .dynamics import DEFAULT_CONSTANTS, DynamicsConstants, arm_dof
from .env import (DEFAULT_EPISODE_STEPS, KnobEstimateMode, RewardConfig,
                  SuccessCriterion, VecDoorEnv)
from .neural import (AdamState, GaussianPolicy, Mlp, Normalizer, adam_step,
                     gaussian_log_prob, LOG_STD_MAX, LOG_STD_MIN,
                     make_gaussian_policy, mlp_arrays, mlp_backward, mlp_forward,
                     mlp_init, save_checkpoint)
from .rng import mix_key
from .worldgen import WorldSpec


@dataclass(frozen=True)
class PpoConfig:
    workers: int = 8
    episodes_per_worker: int = 8
    steps_per_episode: int = DEFAULT_EPISODE_STEPS
    minibatch: int = 256
    clip_eps: float = 0.2
    gamma: float = 0.99
    gae_lambda: float = 0.95
    lr: float = 1e-3
    epochs: int = 10
    entropy_coef: float = 0.0
    value_loss_coef: float = 0.5
    max_grad_norm: float = 0.5
    hidden: int = 64


@dataclass(frozen=True)
class TrainSetup:
    """Environment side of a training run (shared by PPO and SAC)."""

    worlds: tuple[WorldSpec, ...]
    arm: str = "hook"
    mode: KnobEstimateMode = KnobEstimateMode.ground_truth()
    reward: RewardConfig = RewardConfig()
    criterion: SuccessCriterion = SuccessCriterion()
    constants: DynamicsConstants = DEFAULT_CONSTANTS

    def with_mode(self, mode: KnobEstimateMode) -> "TrainSetup":
        return replace(self, mode=mode)


@dataclass
class RolloutBuffer:
    """(episodes, steps) arrays; episode e belongs to worker e // episodes_per_worker."""

    obs: np.ndarray          # (E, L + 1, obs_dim); slot L is the final observation
    actions: np.ndarray      # (E, L, act_dim)
    log_probs: np.ndarray    # (E, L)
    rewards: np.ndarray      # (E, L)
    values: np.ndarray       # (E, L + 1)
    dones: np.ndarray        # (E, L)
    world_ids: list[str]
    advantages: np.ndarray | None = None
    value_targets: np.ndarray | None = None

    @property
    def n_transitions(self) -> int:
        return self.rewards.size

    def prepare(self, gamma: float, lam: float) -> None:
        self.advantages, self.value_targets = compute_gae(
            self.rewards, self.values, self.dones, gamma, lam)


def compute_gae(rewards, values, dones, gamma: float, lam: float):
    """delta_t = r_t + gamma*V(s_{t+1})*(1-done_t) - V(s_t);
    A_t = delta_t + gamma*lam*(1-done_t)*A_{t+1} (reverse recursion).

    rewards/dones are (L,) or (E, L); values carries one bootstrap entry
    per episode, (L+1,) or (E, L+1).
    """
    r = np.asarray(rewards, dtype=float)
    single = r.ndim == 1
    r = np.atleast_2d(r)
    v = np.atleast_2d(np.asarray(values, dtype=float))
    d = np.atleast_2d(np.asarray(dones, dtype=float))
    n_ep, length = r.shape
    if v.shape != (n_ep, length + 1):
        raise ValueError(f"values shape {v.shape} != {(n_ep, length + 1)}")
    not_done = 1.0 - d
    delta = r + gamma * v[:, 1:] * not_done - v[:, :-1]
    adv = np.zeros_like(r)
    carry = np.zeros(n_ep)
    for t in range(length - 1, -1, -1):
        carry = delta[:, t] + gamma * lam * not_done[:, t] * carry
        adv[:, t] = carry
    targets = adv + v[:, :-1]
    if single:
        return adv[0], targets[0]
    return adv, targets


def clipped_objective(ratio, advantage, clip_eps: float):
    """Per-sample PPO objective: min(ratio*A, clip(ratio)*A)."""
    ratio = np.asarray(ratio, dtype=float)
    adv = np.asarray(advantage, dtype=float)
    return np.minimum(ratio * adv, np.clip(ratio, 1.0 - clip_eps, 1.0 + clip_eps) * adv)


def rollout_world_index(run_seed: int, update: int, worker: int, n_worlds: int) -> int:
    return mix_key(run_seed, update, worker) % n_worlds


def episode_seed(run_seed: int, update: int, worker: int, episode: int) -> int:
    return mix_key(run_seed, update, worker, episode)


def collect_rollouts(policy: GaussianPolicy, value_net: Mlp, setup: TrainSetup,
                     cfg: PpoConfig, run_seed: int, update: int,
                     mode: KnobEstimateMode | None = None) -> RolloutBuffer:
    """One synchronous rollout round: workers x episodes_per_worker episodes.

    The policy snapshot is read-only here.  Episodes run in lockstep as one
    vectorized batch; buffer rows are ordered (worker, episode).
    """
    n_worlds = len(setup.worlds)
    ep_worlds = []
    for worker in range(cfg.workers):
        idx = rollout_world_index(run_seed, update, worker, n_worlds)
        ep_worlds.extend([setup.worlds[idx]] * cfg.episodes_per_worker)
    seeds = [episode_seed(run_seed, update, w, e)
             for w in range(cfg.workers) for e in range(cfg.episodes_per_worker)]

    env = VecDoorEnv(ep_worlds, arm=setup.arm, mode=mode or setup.mode,
                     reward=setup.reward, criterion=setup.criterion,
                     constants=setup.constants,
                     max_episode_steps=cfg.steps_per_episode,
                     terminate_on_success=False)
    n_env = env.n
    length = cfg.steps_per_episode
    act_dim = env.dof
    obs = env.reset(seeds)

    buf_obs = np.empty((n_env, length + 1, env.obs_dim))
    buf_act = np.empty((n_env, length, act_dim))
    buf_logp = np.empty((n_env, length))
    buf_rew = np.empty((n_env, length))
    buf_done = np.zeros((n_env, length))

    action_rng = np.random.default_rng(mix_key(run_seed, update, 0xAC))
    for t in range(length):
        buf_obs[:, t] = obs
        actions, logp = policy.sample(obs, action_rng)
        obs, rewards, dones, _ = env.step(actions)
        buf_act[:, t] = actions
        buf_logp[:, t] = logp
        buf_rew[:, t] = rewards
        buf_done[:, t] = dones
    buf_obs[:, length] = obs

    # value net shares the policy's (frozen) observation normalization
    flat_in = policy.net_input(buf_obs.reshape(-1, env.obs_dim))
    flat_values, _ = mlp_forward(value_net, flat_in)
    values = flat_values.reshape(n_env, length + 1)
    return RolloutBuffer(obs=buf_obs, actions=buf_act, log_probs=buf_logp,
                         rewards=buf_rew, values=values, dones=buf_done,
                         world_ids=[w.world_id for w in ep_worlds])


def policy_objective_grads(policy: GaussianPolicy, net_obs: np.ndarray,
                           actions: np.ndarray, logp_old: np.ndarray,
                           advantages: np.ndarray, clip_eps: float,
                           entropy_coef: float = 0.0):
    """Gradients of -mean(clipped surrogate) - entropy_coef * entropy.

    net_obs must already be in net coordinates (normalized if the policy
    normalizes).  Returns (grads aligned with policy.params(), stats).
    Gradient flows only through the unclipped branch where it is the min;
    where the clipped branch is active and saturated the sample contributes
    nothing, matching the exact subgradient of the min.
    """
    b = len(actions)
    mean, cache = mlp_forward(policy.mean_net, net_obs)
    log_std = np.clip(policy.log_std, LOG_STD_MIN, LOG_STD_MAX)
    inv_var = np.exp(-2.0 * log_std)
    logp = gaussian_log_prob(mean, log_std, actions)
    ratio = np.exp(logp - logp_old)
    surr1 = ratio * advantages
    surr2 = np.clip(ratio, 1.0 - clip_eps, 1.0 + clip_eps) * advantages
    objective = np.minimum(surr1, surr2)
    policy_loss = -float(objective.mean())
    if not np.isfinite(policy_loss):
        raise FloatingPointError("non-finite PPO policy loss")

    d_logp = np.where(surr1 <= surr2, surr1, 0.0) * (-1.0 / b)
    diff = actions - mean
    d_mean = d_logp[:, None] * diff * inv_var
    std_mask = (policy.log_std > LOG_STD_MIN) & (policy.log_std < LOG_STD_MAX)
    d_log_std = (d_logp[:, None] * (diff * diff * inv_var - 1.0)).sum(axis=0)
    d_log_std -= entropy_coef  # dH/dlog_std = 1 per dim
    d_log_std = d_log_std * std_mask

    grads, _ = mlp_backward(policy.mean_net, cache, d_mean)
    stats = {
        "policy_loss": policy_loss,
        "mean_ratio": float(ratio.mean()),
        "clip_frac": float((np.abs(ratio - 1.0) > clip_eps).mean()),
        "objective": objective,
        "surr1": surr1,
        "surr2": surr2,
    }
    return grads + [d_log_std], stats


def value_objective_grads(value_net: Mlp, net_obs: np.ndarray, targets: np.ndarray,
                          value_loss_coef: float):
    """Gradients of value_loss_coef * mean((V - target)^2); unclipped."""
    b = len(targets)
    v, cache = mlp_forward(value_net, net_obs)
    v = v[:, 0]
    err = v - targets
    value_loss = float((err * err).mean())
    d_v = (value_loss_coef * 2.0 / b) * err
    grads, _ = mlp_backward(value_net, cache, d_v[:, None])
    return grads, value_loss


def ppo_update(policy: GaussianPolicy, value_net: Mlp, adam: AdamState,
               buffer: RolloutBuffer, cfg: PpoConfig, rng: np.random.Generator) -> dict:
    """epochs passes of shuffled minibatches over the buffer; Adam with
    global-norm clipping.  Advantages are normalized once per update batch."""
    if buffer.advantages is None:
        buffer.prepare(cfg.gamma, cfg.gae_lambda)
    obs_dim = buffer.obs.shape[-1]
    length = buffer.rewards.shape[1]
    obs = policy.net_input(buffer.obs[:, :length].reshape(-1, obs_dim))
    actions = buffer.actions.reshape(-1, buffer.actions.shape[-1])
    logp_old = buffer.log_probs.reshape(-1)
    adv_raw = buffer.advantages.reshape(-1)
    targets = buffer.value_targets.reshape(-1)
    n = len(adv_raw)
    if not np.isfinite(adv_raw).all():
        raise FloatingPointError("non-finite advantages entering the update")

    adv_std = float(adv_raw.std())
    adv = (adv_raw - adv_raw.mean()) / max(adv_std, 1e-12)

    params = policy.mean_net.params() + [policy.log_std] + value_net.params()

    totals = {"mean_ratio": 0.0, "clip_frac": 0.0, "policy_loss": 0.0, "value_loss": 0.0}
    batches = 0
    for _ in range(cfg.epochs):
        perm = rng.permutation(n)
        for start in range(0, n - cfg.minibatch + 1, cfg.minibatch):
            idx = perm[start:start + cfg.minibatch]
            pol_grads, stats = policy_objective_grads(
                policy, obs[idx], actions[idx], logp_old[idx], adv[idx],
                cfg.clip_eps, cfg.entropy_coef)
            val_grads, value_loss = value_objective_grads(
                value_net, obs[idx], targets[idx], cfg.value_loss_coef)
            adam_step(adam, params, pol_grads + val_grads, cfg.lr, cfg.max_grad_norm)
            totals["mean_ratio"] += stats["mean_ratio"]
            totals["clip_frac"] += stats["clip_frac"]
            totals["policy_loss"] += stats["policy_loss"]
            totals["value_loss"] += value_loss
            batches += 1

    out = {key: total / batches for key, total in totals.items()}
    out["entropy"] = policy.entropy()
    out["adv_std_raw"] = adv_std
    out["adv_norm_mean"] = float(adv.mean())
    out["adv_norm_std"] = float(adv.std())
    return out


@dataclass
class TrainResult:
    rows: list[dict]
    checkpoint_paths: list[str]
    policy: GaussianPolicy
    value_net: Mlp
    log_path: str | None
    best_probe_asr: float


def make_ppo_models(obs_dim: int, act_dim: int, run_seed: int, hidden: int = 64):
    init_rng = np.random.default_rng(mix_key(run_seed, 0xA11))
    policy = make_gaussian_policy(obs_dim, act_dim, init_rng, hidden=hidden)
    value_net = mlp_init((obs_dim, hidden, hidden, 1), init_rng)
    adam = AdamState.for_params(policy.mean_net.params() + [policy.log_std] + value_net.params())
    return policy, value_net, adam


def ppo_checkpoint_arrays(policy: GaussianPolicy, value_net: Mlp, adam: AdamState) -> dict:
    arrays = mlp_arrays("policy", policy.mean_net)
    arrays["policy.log_std"] = policy.log_std
    if policy.obs_norm is not None:
        arrays.update(policy.obs_norm.arrays("policy.obs_norm"))
    arrays.update(mlp_arrays("value", value_net))
    for i, (m, v) in enumerate(zip(adam.m, adam.v)):
        arrays[f"adam.m{i}"] = m
        arrays[f"adam.v{i}"] = v
    return arrays


def discounted_reward_trace(rewards: np.ndarray, dones: np.ndarray, gamma: float) -> np.ndarray:
    """Forward accumulation ret_t = gamma * ret_{t-1} + r_t per episode row
    (the running quantity whose spread sets the reward scaling)."""
    out = np.empty_like(rewards)
    carry = np.zeros(rewards.shape[0])
    for t in range(rewards.shape[1]):
        carry = gamma * carry + rewards[:, t]
        out[:, t] = carry
        carry = carry * (1.0 - dones[:, t])
    return out


def train_ppo(cfg: PpoConfig, setup: TrainSetup, total_updates: int, run_seed: int,
              out_dir: str | None = None,
              probe_worlds: tuple[WorldSpec, ...] | None = None,
              probe_every: int = 10,
              checkpoint_every: int = 50,
              curriculum_switch: int | None = None,
              post_switch_mode: KnobEstimateMode | None = None,
              stop_probe_asr: float | None = None) -> TrainResult:
    """collect -> update loop with CSV log, periodic checkpoints, and an
    optional two-stage curriculum (ground truth for the first K updates,
    then noisy estimates).

    The log is a pure function of (cfg, setup, total_updates, run_seed,
    probe settings); reruns produce byte-identical files.
    """
    from .evaluate import PolicyController, run_episodes  # late import: evaluate ties back to training for ablations

    dof = arm_dof(setup.arm)
    obs_dim = 2 * dof + 3
    policy, value_net, adam = make_ppo_models(obs_dim, dof, run_seed, hidden=cfg.hidden)
    update_rng = np.random.default_rng(mix_key(run_seed, 0x0B))
    if post_switch_mode is None:
        post_switch_mode = KnobEstimateMode.noisy()

    rows: list[dict] = []
    ckpts: list[str] = []
    steps_total = 0
    best_probe = float("-inf")
    if out_dir:
        os.makedirs(out_dir, exist_ok=True)

    def save(tag: str) -> str:
        path = os.path.join(out_dir, f"ckpt_{tag}.json")
        save_checkpoint(path, "ppo", setup.arm, obs_dim, dof, step=adam.step,
                        arrays=ppo_checkpoint_arrays(policy, value_net, adam),
                        extra={"hidden": cfg.hidden})
        ckpts.append(path)
        return path

    def probe(update: int) -> float:
        controller = PolicyController(policy)
        report = run_episodes(controller, list(probe_worlds), arm=setup.arm,
                              mode=setup.mode, criterion=setup.criterion,
                              constants=setup.constants,
                              eval_seed=mix_key(run_seed, 0xEE, update))
        return report["asr"]

    reward_norm = Normalizer(1)
    for update in range(total_updates):
        mode = setup.mode
        if curriculum_switch is not None and update >= curriculum_switch:
            mode = post_switch_mode
        buffer = collect_rollouts(policy, value_net, setup, cfg, run_seed, update, mode=mode)
        steps_total += buffer.n_transitions
        mean_reward = float(buffer.rewards.sum(axis=1).mean())

        # scale rewards by the running spread of the discounted reward trace
        # (keeps value targets O(1) at the fixed learning rate), then freeze
        # observation statistics for the next rollout+update pair
        reward_norm.update(discounted_reward_trace(buffer.rewards, buffer.dones,
                                                   cfg.gamma).reshape(-1, 1))
        buffer.rewards = np.clip(buffer.rewards / reward_norm.std[0], -10.0, 10.0)
        buffer.prepare(cfg.gamma, cfg.gae_lambda)
        stats = ppo_update(policy, value_net, adam, buffer, cfg, update_rng)
        if policy.obs_norm is not None:
            policy.obs_norm.update(buffer.obs.reshape(-1, obs_dim))

        probe_asr = None
        if probe_worlds is not None and ((update + 1) % probe_every == 0 or update == total_updates - 1):
            probe_asr = probe(update)
            best_probe = max(best_probe, probe_asr)

        rows.append({
            "update": update,
            "steps": steps_total,
            "mean_reward": mean_reward,
            "probe_asr": probe_asr,
            "clip_frac": stats["clip_frac"],
            "value_loss": stats["value_loss"],
            "mode": mode.describe(),
        })
        if out_dir and checkpoint_every and (update + 1) % checkpoint_every == 0:
            save(f"update_{update + 1:04d}")
        if stop_probe_asr is not None and probe_asr is not None and probe_asr >= stop_probe_asr:
            break

    log_path = None
    if out_dir:
        save("final")
        log_path = os.path.join(out_dir, "train_log.csv")
        write_train_log(log_path, rows,
                        ["update", "steps", "mean_reward", "probe_asr", "clip_frac",
                         "value_loss", "mode"])
    return TrainResult(rows=rows, checkpoint_paths=ckpts, policy=policy,
                       value_net=value_net, log_path=log_path,
                       best_probe_asr=best_probe if best_probe > float("-inf") else float("nan"))


def write_train_log(path: str, rows: list[dict], columns: list[str]) -> None:
    with open(path, "w", encoding="utf-8", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(columns)
        for row in rows:
            out = []
            for col in columns:
                v = row.get(col)
                out.append("" if v is None else (format(v, ".17g") if isinstance(v, float) else v))
            writer.writerow(out)
