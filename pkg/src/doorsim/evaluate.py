"""Benchmark harness: success-rate / time-to-open metrics over world sets,
grid sweeps across knob types and arms, and the domain-randomization
ablation protocol.

Evaluation is deterministic: controllers act on the policy mean (no
sampling), per-world episode seeds derive from one evaluation seed, and
reports contain no wall-clock data, so identical inputs produce
byte-identical report files.
"""

import csv
import json
import math
import os
from dataclasses import dataclass, field

import numpy as np

from .dynamics import CONTROL_DT, DEFAULT_CONSTANTS, DynamicsConstants, arm_dof
from .env import KnobEstimateMode, RewardConfig, SuccessCriterion, VecDoorEnv
from .neural import (CheckpointError, GaussianPolicy, Normalizer,
                     SquashedGaussianPolicy, load_checkpoint, mlp_from_arrays)
from .oracle import OracleController, OracleGains
from .rng import mix_key
from .worldgen import sample_world, sample_worlds

KNOB_TYPES = ("pull", "lever", "round")
ARMS = ("hook", "gripper")
DIRECTIONS = ("pull", "push")


class PolicyController:
    """Deterministic (mean-action) controller over a trained policy."""

    def __init__(self, policy):
        self.policy = policy

    def begin_episode(self) -> None:
        pass

    def act(self, obs, info) -> np.ndarray:
        return self.policy.mean_action(obs)


def load_policy_controller(path: str, arm: str) -> PolicyController:
    """Rebuild the policy from a checkpoint; arch/arm mismatches raise."""
    doc = load_checkpoint(path)
    if doc["arm"] != arm:
        raise CheckpointError(f"{path}: trained for arm {doc['arm']!r}, requested {arm!r}")
    expected_obs = 2 * arm_dof(arm) + 3
    if doc["obs_dim"] != expected_obs:
        raise CheckpointError(f"{path}: obs_dim {doc['obs_dim']} != expected {expected_obs}")
    arrays = doc["arrays"]
    if doc["algorithm"] == "ppo":
        norm = (Normalizer.from_arrays("policy.obs_norm", arrays)
                if "policy.obs_norm.mean" in arrays else None)
        policy = GaussianPolicy(mean_net=mlp_from_arrays("policy", arrays),
                                log_std=np.array(arrays["policy.log_std"]),
                                obs_norm=norm)
    elif doc["algorithm"] == "sac":
        policy = SquashedGaussianPolicy(net=mlp_from_arrays("policy", arrays),
                                        act_dim=doc["act_dim"])
    else:
        raise CheckpointError(f"{path}: unknown algorithm {doc['algorithm']!r}")
    if policy.mean_action(np.zeros(expected_obs)).shape != (doc["act_dim"],):
        raise CheckpointError(f"{path}: inconsistent action head")
    return PolicyController(policy)


def run_episodes(controller, worlds, arm: str = "hook",
                 mode: KnobEstimateMode = KnobEstimateMode.ground_truth(),
                 criterion: SuccessCriterion = SuccessCriterion(),
                 constants: DynamicsConstants = DEFAULT_CONSTANTS,
                 reward: RewardConfig = RewardConfig(),
                 eval_seed: int = 0,
                 episodes_per_world: int = 1) -> dict:
    """One deterministic episode per (world, repeat); returns records + metrics.

    Episodes run exactly ceil(time_limit / dt) control steps; success is
    latched at the first strict threshold crossing strictly inside the
    limit.  Episode seeds are mix_key(eval_seed, world_index, repeat).
    """
    ep_worlds = [w for w in worlds for _ in range(episodes_per_world)]
    seeds = [mix_key(eval_seed, i, rep)
             for i in range(len(worlds)) for rep in range(episodes_per_world)]
    env = VecDoorEnv(ep_worlds, arm=arm, mode=mode, criterion=criterion,
                     constants=constants, reward=reward,
                     max_episode_steps=10 ** 9, terminate_on_success=False)
    n_steps = int(math.ceil(criterion.time_limit_s / CONTROL_DT - 1e-9))
    obs = env.reset(seeds)
    if hasattr(controller, "begin_episode"):
        controller.begin_episode()
    info = env.current_info()
    for _ in range(n_steps):
        actions = controller.act(obs, info)
        obs, _, _, info = env.step(actions)
        if info["success"].all():
            break
    records = []
    for i, w in enumerate(ep_worlds):
        success = int(info["success"][i])
        t_open = float(env.t_open[i]) if success else None
        records.append({
            "world_id": w.world_id,
            "success": success,
            "t_open": t_open,
            "phi_max": float(env.state.door_angle_max[i]),
        })
    return {"records": records, **aggregate_metrics(records)}


def aggregate_metrics(records) -> dict:
    """Mean success indicator; mean open time over successful attempts only."""
    n = len(records)
    successes = [r for r in records if r["success"]]
    asr = len(successes) / n if n else 0.0
    at = sum(r["t_open"] for r in successes) / len(successes) if successes else None
    return {"asr": asr, "at": at}


@dataclass
class EvalReport:
    records: list[dict]
    asr: float
    at: float | None
    metadata: dict = field(default_factory=dict)

    def to_json(self) -> str:
        doc = {
            "schema_version": "doorsim_eval_v1",
            "r_asr": self.asr,
            "r_at": self.at,
            "n_worlds": len(self.records),
            "metadata": self.metadata,
            "records": self.records,
        }
        return json.dumps(doc, indent=2) + "\n"

    def save(self, json_path: str | None = None, csv_path: str | None = None) -> None:
        if json_path:
            with open(json_path, "w", encoding="utf-8") as fh:
                fh.write(self.to_json())
        if csv_path:
            with open(csv_path, "w", encoding="utf-8", newline="") as fh:
                writer = csv.writer(fh)
                writer.writerow(["world_id", "success", "t_open", "phi_max"])
                for r in self.records:
                    writer.writerow([r["world_id"], r["success"],
                                     "" if r["t_open"] is None else format(r["t_open"], ".17g"),
                                     format(r["phi_max"], ".17g")])


def evaluate(controller, worlds, arm: str = "hook",
             mode: KnobEstimateMode = KnobEstimateMode.ground_truth(),
             criterion: SuccessCriterion = SuccessCriterion(),
             constants: DynamicsConstants = DEFAULT_CONSTANTS,
             eval_seed: int = 0,
             episodes_per_world: int = 1,
             policy_source: str = "") -> EvalReport:
    """Benchmark a controller on a world set; aggregates per the r_ASR / r_AT
    definitions (r_AT absent when there are no successes)."""
    out = run_episodes(controller, worlds, arm=arm, mode=mode, criterion=criterion,
                       constants=constants, eval_seed=eval_seed,
                       episodes_per_world=episodes_per_world)
    metadata = {
        "policy": policy_source,
        "arm": arm,
        "knob_estimate": mode.describe(),
        "time_limit_s": criterion.time_limit_s,
        "door_angle_threshold_rad": criterion.door_angle_threshold,
        "eval_seed": eval_seed,
        "episodes_per_world": episodes_per_world,
        "dynamics_overrides": constants.overrides(),
    }
    return EvalReport(records=out["records"], asr=out["asr"], at=out["at"],
                      metadata=metadata)


def evaluate_oracle(worlds, arm: str = "hook",
                    mode: KnobEstimateMode = KnobEstimateMode.ground_truth(),
                    criterion: SuccessCriterion = SuccessCriterion(),
                    constants: DynamicsConstants = DEFAULT_CONSTANTS,
                    eval_seed: int = 0,
                    episodes_per_world: int = 1,
                    gains: OracleGains = OracleGains()) -> EvalReport:
    ep_worlds = [w for w in worlds for _ in range(episodes_per_world)]
    controller = OracleController(ep_worlds, arm=arm, constants=constants, gains=gains)
    return evaluate(controller, worlds, arm=arm, mode=mode, criterion=criterion,
                    constants=constants, eval_seed=eval_seed,
                    episodes_per_world=episodes_per_world, policy_source="oracle")


# -- sweep -------------------------------------------------------------------

def sweep(master_seed: int, n_worlds: int = 100,
          arms=ARMS, knob_types=KNOB_TYPES, directions=DIRECTIONS,
          policy_source: str | dict = "oracle",
          mode: KnobEstimateMode = KnobEstimateMode.ground_truth(),
          criterion: SuccessCriterion = SuccessCriterion(),
          constants: DynamicsConstants = DEFAULT_CONSTANTS,
          eval_seed: int = 0,
          out_csv: str | None = None) -> list[dict]:
    """Grid of (direction, arm, knob type) cells, each on its own world set.

    policy_source: "oracle", or a dict mapping (arm, knob, direction) to a
    checkpoint path; missing cells are reported as untrained, not errors.
    """
    rows = []
    for direction in directions:
        for arm in arms:
            for knob in knob_types:
                cell_seed = mix_key(master_seed, DIRECTIONS.index(direction),
                                    ARMS.index(arm), KNOB_TYPES.index(knob))
                worlds = sample_worlds(cell_seed, n_worlds, knob, direction)
                row = {"direction": direction, "arm": arm, "knob_type": knob,
                       "r_asr": None, "r_at": None, "policy": ""}
                controller = None
                if policy_source == "oracle":
                    controller = OracleController(worlds, arm=arm, constants=constants)
                    row["policy"] = "oracle"
                elif isinstance(policy_source, dict):
                    path = policy_source.get((arm, knob, direction))
                    if path:
                        controller = load_policy_controller(path, arm)
                        row["policy"] = path
                if controller is None:
                    row["policy"] = "untrained"
                else:
                    report = evaluate(controller, worlds, arm=arm, mode=mode,
                                      criterion=criterion, constants=constants,
                                      eval_seed=eval_seed, policy_source=row["policy"])
                    row["r_asr"] = report.asr
                    row["r_at"] = report.at
                rows.append(row)
    if out_csv:
        write_sweep_csv(out_csv, rows)
    return rows


def write_sweep_csv(path: str, rows: list[dict]) -> None:
    with open(path, "w", encoding="utf-8", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["direction", "arm", "knob_type", "r_asr", "r_at", "policy"])
        for r in rows:
            writer.writerow([r["direction"], r["arm"], r["knob_type"],
                             "" if r["r_asr"] is None else format(r["r_asr"], ".17g"),
                             "" if r["r_at"] is None else format(r["r_at"], ".17g"),
                             r["policy"]])


# -- domain-randomization ablation --------------------------------------------

def run_ablation(out_dir: str | None = None,
                 arm: str = "hook", knob_type: str = "pull", direction: str = "pull",
                 updates: int = 75, n_train_worlds: int = 100, n_test_worlds: int = 100,
                 run_seed: int = 1234,
                 env1_repeats: int = 100,
                 ppo_config=None,
                 mode: KnobEstimateMode = KnobEstimateMode.ground_truth(),
                 criterion: SuccessCriterion = SuccessCriterion(),
                 constants: DynamicsConstants = DEFAULT_CONSTANTS) -> dict:
    """Train one policy on a single fixed world (env1) and one on the
    randomized set, then cross-evaluate both on {env1, randomized test set}.

    Returns the 2x2 grid of (r_ASR, r_AT); env1 cells run env1_repeats
    episodes with distinct start seeds.
    """
    from .ppo import PpoConfig, TrainSetup, train_ppo

    cfg = ppo_config or PpoConfig()
    env1 = sample_world(mix_key(run_seed, 1), 0, knob_type, direction)
    train_worlds = tuple(sample_worlds(mix_key(run_seed, 2), n_train_worlds, knob_type, direction))
    test_worlds = sample_worlds(mix_key(run_seed, 3), n_test_worlds, knob_type, direction)

    results = {}
    policies = {}
    for tag, worlds in (("env1", (env1,)), ("randomized", train_worlds)):
        setup = TrainSetup(worlds=worlds, arm=arm, mode=mode, criterion=criterion,
                           constants=constants)
        sub_dir = os.path.join(out_dir, f"train_{tag}") if out_dir else None
        result = train_ppo(cfg, setup, updates, run_seed=mix_key(run_seed, 4, len(tag)),
                           out_dir=sub_dir, probe_worlds=None, checkpoint_every=0)
        policies[tag] = PolicyController(result.policy)

    grid_rows = []
    for trained_on, controller in policies.items():
        for tested_on, worlds, repeats in (("env1", [env1], env1_repeats),
                                           ("randomized", test_worlds, 1)):
            report = evaluate(controller, worlds, arm=arm, mode=mode,
                              criterion=criterion, constants=constants,
                              eval_seed=mix_key(run_seed, 5),
                              episodes_per_world=repeats,
                              policy_source=f"ppo[{trained_on}]")
            key = f"{trained_on}_on_{tested_on}"
            results[key] = {"r_asr": report.asr, "r_at": report.at}
            grid_rows.append({"trained_on": trained_on, "tested_on": tested_on,
                              "r_asr": report.asr, "r_at": report.at})

    if out_dir:
        os.makedirs(out_dir, exist_ok=True)
        with open(os.path.join(out_dir, "ablation.csv"), "w", encoding="utf-8", newline="") as fh:
            writer = csv.writer(fh)
            writer.writerow(["trained_on", "tested_on", "r_asr", "r_at"])
            for r in grid_rows:
                writer.writerow([r["trained_on"], r["tested_on"],
                                 format(r["r_asr"], ".17g"),
                                 "" if r["r_at"] is None else format(r["r_at"], ".17g")])
        with open(os.path.join(out_dir, "ablation.json"), "w", encoding="utf-8") as fh:
            json.dump(results, fh, indent=2)
            fh.write("\n")
    return results
