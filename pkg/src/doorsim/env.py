"""Step/reset environment over the door dynamics.

Observation is a flat float64 vector [q, qdot, dir] where q/qdot are the
robot coordinates and velocities (6 for the hook, 7 with aperture for the
gripper) and dir is the vector from the end-effector to the knob-position
estimate.  Door and knob joint angles are not observed.

The shaped reward is
    r = -a0*d - a1*ln(d + alpha) - a2*o - a3*||u|| + a4*door_angle + a5*knob_angle
with d the true tip-to-knob-center distance, o the orientation error, u the
clamped normalized control vector, and the knob-angle term dropped for pull
knobs.  Success means the door angle strictly exceeded the threshold
strictly before the time limit.

Knob estimate modes: ground truth; ground truth plus Gaussian noise (one
offset per episode by default, or per step); or an externally injected
fixed estimate.  Noise draws come from a stream separate from the robot
initialization stream, so sigma = 0 is bitwise identical to ground truth.
"""

import json
import math
from dataclasses import dataclass

import numpy as np

from . import dynamics
from .dynamics import BatchDynamics, BatchState, DEFAULT_CONSTANTS, DynamicsConstants, arm_dof
from .worldgen import WorldSpec, read_world

DEFAULT_EPISODE_STEPS = 512


class EpisodeDoneError(RuntimeError):
    """step() was called on a finished episode."""


@dataclass(frozen=True)
class RewardConfig:
    weights: tuple[float, ...] = (1.0, 1.0, 1.0, 1.0, 30.0, 50.0)
    alpha: float = 0.005

    def __post_init__(self):
        if len(self.weights) != 6:
            raise ValueError("reward needs exactly 6 weights")
        if not self.alpha > 0:
            raise ValueError("alpha must be positive")


@dataclass(frozen=True)
class SuccessCriterion:
    door_angle_threshold: float = 0.2  # rad, strict ">"
    time_limit_s: float = 10.2         # strict "<"; 20.0 also supported

    def __post_init__(self):
        if self.door_angle_threshold <= 0 or self.time_limit_s <= 0:
            raise ValueError("success thresholds must be positive")


@dataclass(frozen=True)
class KnobEstimateMode:
    kind: str = "gt"            # gt | gt-noise | external
    sigma: float = 0.02         # m, per-axis std of the estimate error
    per_step: bool = False      # fresh draw each step instead of per episode
    vector: tuple[float, float, float] | None = None

    @staticmethod
    def ground_truth() -> "KnobEstimateMode":
        return KnobEstimateMode(kind="gt")

    @staticmethod
    def noisy(sigma: float = 0.02, per_step: bool = False) -> "KnobEstimateMode":
        if sigma < 0:
            raise ValueError("sigma must be >= 0")
        return KnobEstimateMode(kind="gt-noise", sigma=sigma, per_step=per_step)

    @staticmethod
    def external(vector) -> "KnobEstimateMode":
        v = tuple(float(x) for x in vector)
        if len(v) != 3:
            raise ValueError("external estimate must be a 3-vector")
        return KnobEstimateMode(kind="external", vector=v)

    def describe(self) -> str:
        if self.kind == "gt":
            return "gt"
        if self.kind == "gt-noise":
            tag = "per-step" if self.per_step else "per-episode"
            return f"gt-noise(sigma={self.sigma:g},{tag})"
        return f"external{self.vector}"


def compute_reward(knob_distance, orient_err, control, door_angle, knob_angle,
                   cfg: RewardConfig = RewardConfig(), knob_type: str = "pull"):
    """Shaped per-step reward; accepts scalars or aligned arrays."""
    d = np.asarray(knob_distance, dtype=float)
    a0, a1, a2, a3, a4, a5 = cfg.weights
    u = np.asarray(control, dtype=float)
    u_norm = np.linalg.norm(u, axis=-1)
    r = (-a0 * d - a1 * np.log(d + cfg.alpha) - a2 * np.asarray(orient_err)
         - a3 * u_norm + a4 * np.asarray(door_angle))
    if knob_type != "pull":
        r = r + a5 * np.asarray(knob_angle)
    return float(r) if np.ndim(r) == 0 else r


def success_indicator(door_angle_max, t_open, criterion: SuccessCriterion = SuccessCriterion()) -> int:
    """1 iff the door strictly exceeded the threshold strictly before the limit."""
    if door_angle_max <= criterion.door_angle_threshold:
        return 0
    if t_open is None or not math.isfinite(t_open):
        return 0
    return 1 if t_open < criterion.time_limit_s else 0


def observation_layout(arm: str) -> dict[str, slice]:
    dof = arm_dof(arm)
    return {"q": slice(0, dof), "qdot": slice(dof, 2 * dof), "dir": slice(2 * dof, 2 * dof + 3)}


class VecDoorEnv:
    """N door worlds stepped in lockstep (training and evaluation backend).

    One instance is single-caller; distinct instances share nothing.
    """

    def __init__(self, worlds, arm: str = "hook",
                 mode: KnobEstimateMode = KnobEstimateMode.ground_truth(),
                 reward: RewardConfig = RewardConfig(),
                 criterion: SuccessCriterion = SuccessCriterion(),
                 constants: DynamicsConstants = DEFAULT_CONSTANTS,
                 max_episode_steps: int = DEFAULT_EPISODE_STEPS,
                 terminate_on_success: bool = False):
        self.worlds = list(worlds)
        self.arm = arm
        self.dof = arm_dof(arm)
        self.mode = mode
        self.reward_cfg = reward
        self.criterion = criterion
        self.max_episode_steps = max_episode_steps
        self.terminate_on_success = terminate_on_success
        self.dyn = BatchDynamics(self.worlds, arm=arm, constants=constants)
        self.knob_types = [w.knob_type for w in self.worlds]
        # reward's knob term applies only where a knob DOF exists
        self._knob_term = np.array([w.knob_type != "pull" for w in self.worlds], dtype=float)
        self.state: BatchState | None = None
        self._offsets = np.zeros((self.n, 3))
        self._noise_rngs: list | None = None
        self.step_count = 0
        self.t_open = np.full(self.n, np.nan)
        self.success = np.zeros(self.n, dtype=bool)

    @property
    def n(self) -> int:
        return len(self.worlds)

    @property
    def obs_dim(self) -> int:
        return 2 * self.dof + 3

    def set_mode(self, mode: KnobEstimateMode) -> None:
        """Takes effect at the next reset (curriculum switching)."""
        self.mode = mode

    def reset(self, episode_seeds) -> np.ndarray:
        if len(episode_seeds) != self.n:
            raise ValueError(f"need {self.n} episode seeds, got {len(episode_seeds)}")
        self.state = self.dyn.init_state(episode_seeds)
        self.step_count = 0
        self.t_open = np.full(self.n, np.nan)
        self.success = np.zeros(self.n, dtype=bool)
        self._offsets = np.zeros((self.n, 3))
        self._noise_rngs = None
        if self.mode.kind == "gt-noise":
            rngs = [np.random.default_rng([w.rng_seed, int(s) & ((1 << 64) - 1), 1])
                    for w, s in zip(self.worlds, episode_seeds)]
            if self.mode.per_step:
                self._noise_rngs = rngs
            else:
                self._offsets = self.mode.sigma * np.stack(
                    [r.standard_normal(3) for r in rngs])
        return self._observe()

    def _estimate(self, knob_center: np.ndarray) -> np.ndarray:
        if self.mode.kind == "external":
            return np.broadcast_to(np.array(self.mode.vector), (self.n, 3)).copy()
        if self._noise_rngs is not None:
            self._offsets = self.mode.sigma * np.stack(
                [r.standard_normal(3) for r in self._noise_rngs])
        return knob_center + self._offsets

    def _observe(self) -> np.ndarray:
        st = self.state
        geo = self.dyn.geometry(st)
        direction = self._estimate(geo["knob_center"]) - st.pos
        return np.concatenate([st.q_matrix(self.dof), st.qdot_matrix(self.dof), direction], axis=1)

    def current_info(self) -> dict:
        """Info snapshot without stepping (controllers acting at reset)."""
        st = self.state
        geo = self.dyn.geometry(st)
        return {
            "phi": st.door_angle.copy(),
            "psi": st.knob_angle.copy(),
            "d_t": geo["knob_distance"],
            "o_t": geo["orientation_error"],
            "success": self.success.copy(),
            "t_open": self.t_open.copy(),
            "attached": st.attached.copy(),
            "latched": st.latched.copy(),
            "t": st.t.copy(),
            "action_clamped": np.zeros(self.n, dtype=bool),
        }

    def step(self, actions):
        """(obs, reward, done, info); actions are clamped to [-1, 1] first."""
        if self.state is None:
            raise EpisodeDoneError("reset() must be called before step()")
        st = self.state
        raw = np.asarray(actions, dtype=float).reshape(self.n, self.dof)
        u = np.clip(raw, -1.0, 1.0)
        clamped = np.any(raw != u, axis=1)
        self.dyn.step(st, u)
        geo = self.dyn.geometry(st)
        d_t = geo["knob_distance"]
        o_t = geo["orientation_error"]
        a0, a1, a2, a3, a4, a5 = self.reward_cfg.weights
        reward = (-a0 * d_t - a1 * np.log(d_t + self.reward_cfg.alpha) - a2 * o_t
                  - a3 * np.linalg.norm(u, axis=1) + a4 * st.door_angle
                  + a5 * st.knob_angle * self._knob_term)

        crossed = np.isnan(self.t_open) & (st.door_angle_max > self.criterion.door_angle_threshold)
        self.t_open[crossed] = st.t[crossed]
        self.success = (~np.isnan(self.t_open)) & (self.t_open < self.criterion.time_limit_s)

        self.step_count += 1
        done = np.full(self.n, self.step_count >= self.max_episode_steps)
        if self.terminate_on_success:
            done |= self.success

        direction = self._estimate(geo["knob_center"]) - st.pos
        obs = np.concatenate([st.q_matrix(self.dof), st.qdot_matrix(self.dof), direction], axis=1)
        info = {
            "phi": st.door_angle.copy(),
            "psi": st.knob_angle.copy(),
            "d_t": d_t,
            "o_t": o_t,
            "success": self.success.copy(),
            "t_open": self.t_open.copy(),
            "attached": st.attached.copy(),
            "latched": st.latched.copy(),
            "t": st.t.copy(),
            "action_clamped": clamped,
        }
        return obs, reward, done, info


class DoorEnv:
    """Single-world convenience wrapper around VecDoorEnv."""

    def __init__(self, world: WorldSpec, arm: str = "hook",
                 mode: KnobEstimateMode = KnobEstimateMode.ground_truth(),
                 reward: RewardConfig = RewardConfig(),
                 criterion: SuccessCriterion = SuccessCriterion(),
                 constants: DynamicsConstants = DEFAULT_CONSTANTS,
                 max_episode_steps: int = DEFAULT_EPISODE_STEPS,
                 terminate_on_success: bool = False):
        self.vec = VecDoorEnv([world], arm=arm, mode=mode, reward=reward,
                              criterion=criterion, constants=constants,
                              max_episode_steps=max_episode_steps,
                              terminate_on_success=terminate_on_success)
        self.world = world
        self._done = True

    @property
    def arm(self) -> str:
        return self.vec.arm

    @property
    def dof(self) -> int:
        return self.vec.dof

    @property
    def obs_dim(self) -> int:
        return self.vec.obs_dim

    @property
    def state(self):
        return self.vec.state.to_single(0, self.vec.dof)

    def reset(self, episode_seed: int) -> np.ndarray:
        obs = self.vec.reset([episode_seed])
        self._done = False
        return obs[0]

    def step(self, action):
        if self._done:
            raise EpisodeDoneError("episode is finished; call reset()")
        action = np.asarray(action, dtype=float)
        if action.shape != (self.dof,):
            raise ValueError(f"action shape {action.shape} does not match dof {self.dof}")
        obs, reward, done, info = self.vec.step(action[None, :])
        self._done = bool(done[0])
        scalar_info = {}
        for key, value in info.items():
            v = value[0]
            scalar_info[key] = bool(v) if value.dtype == bool else float(v)
        return obs[0], float(reward[0]), self._done, scalar_info


class TraceWriter:
    """JSONL trajectory trace: one record per control step."""

    def __init__(self, path: str):
        self._fh = open(path, "w", encoding="utf-8")

    def write(self, t, q, qdot, u, phi, psi, latched, attached, reward) -> None:
        record = {
            "t": float(t),
            "q": [float(x) for x in q],
            "qdot": [float(x) for x in qdot],
            "u": [float(x) for x in u],
            "phi": float(phi),
            "psi": float(psi),
            "latched": bool(latched),
            "attached": bool(attached),
            "reward": float(reward),
        }
        self._fh.write(json.dumps(record) + "\n")

    def close(self) -> None:
        self._fh.close()

    def __enter__(self):
        return self

    def __exit__(self, *exc):
        self.close()


def parse_mode(kind: str, sigma: float = 0.02, per_step: bool = False,
               vector=None) -> KnobEstimateMode:
    """Knob-estimate mode from CLI/JSON spellings."""
    if kind in ("gt", "ground_truth", "ground-truth"):
        return KnobEstimateMode.ground_truth()
    if kind in ("gt-noise", "gt_noise", "noisy"):
        return KnobEstimateMode.noisy(sigma=sigma, per_step=per_step)
    if kind == "external":
        if vector is None:
            raise ValueError("external mode needs a 3-vector estimate")
        return KnobEstimateMode.external(vector)
    raise ValueError(f"unknown knob estimate mode {kind!r}")


@dataclass(frozen=True)
class EnvConfig:
    """Resolved single-environment configuration (External JSON interface)."""

    world_file: str
    arm: str = "hook"
    mode: KnobEstimateMode = KnobEstimateMode.ground_truth()
    reward: RewardConfig = RewardConfig()
    criterion: SuccessCriterion = SuccessCriterion()
    trace_path: str | None = None

    def build(self, constants: DynamicsConstants = DEFAULT_CONSTANTS,
              **env_kwargs) -> DoorEnv:
        world = read_world(self.world_file)
        return DoorEnv(world, arm=self.arm, mode=self.mode, reward=self.reward,
                       criterion=self.criterion, constants=constants, **env_kwargs)


def load_env_config(path: str) -> EnvConfig:
    with open(path, "r", encoding="utf-8") as fh:
        raw = json.load(fh)
    est = raw.get("knob_estimate", {})
    mode = parse_mode(est.get("mode", "gt"), sigma=est.get("sigma", 0.02),
                      per_step=est.get("per_step", False), vector=est.get("vector"))
    success = raw.get("success", {})
    return EnvConfig(
        world_file=raw["world_file"],
        arm=raw.get("arm", "hook"),
        mode=mode,
        reward=RewardConfig(weights=tuple(raw.get("reward_weights", (1, 1, 1, 1, 30, 50))),
                            alpha=raw.get("reward_alpha", 0.005)),
        criterion=SuccessCriterion(
            door_angle_threshold=success.get("door_angle_threshold_rad", 0.2),
            time_limit_s=success.get("time_limit_s", 10.2)),
        trace_path=raw.get("trace_path"),
    )
