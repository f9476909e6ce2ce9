"""Command-line entry point: world generation, training, evaluation,
ablation, replay, and config inspection.

Every command derives all randomness from one --seed, writes its outputs
under --out, and drops a resolved_config.json there that fully reproduces
the run.  Exit codes: 0 success, 2 usage error, 3 missing input file,
4 schema/validation error, 5 numerical failure, 1 unexpected error.
Errors print one machine-parsable line: "error: <category>: <message>".
"""

import argparse
import json
import os
import sys

import numpy as np

from . import __version__
from .dynamics import CONTROL_DT, DEFAULT_CONSTANTS, NumericsError
from .env import (KnobEstimateMode, RewardConfig, SuccessCriterion, TraceWriter,
                  VecDoorEnv, parse_mode)
from .evaluate import (evaluate, evaluate_oracle, load_policy_controller,
                       run_ablation, sweep)
from .neural import CheckpointError
from .oracle import OracleController
from .ppo import PpoConfig, TrainSetup, train_ppo
from .sac import SacConfig, train_sac
from .worldgen import (WorldFormatError, generate_world_set, load_world_set,
                       read_world)

EXIT_OK = 0
EXIT_USAGE = 2
EXIT_MISSING_FILE = 3
EXIT_SCHEMA = 4
EXIT_NUMERICS = 5
EXIT_OTHER = 1


def _threads_default() -> int:
    return int(os.environ.get("DOORSIM_THREADS", "1"))


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="doorsim",
        description="Door-opening benchmark: randomized worlds, analytic physics, "
                    "PPO/SAC baselines, evaluation harness.")
    parser.add_argument("--version", action="version", version=f"doorsim {__version__}")
    sub = parser.add_subparsers(dest="command", required=True)

    gen = sub.add_parser("gen", help="generate a door-world set")
    gen.add_argument("--n", type=int, default=100, help="number of worlds (default 100)")
    gen.add_argument("--knob", choices=("pull", "lever", "round"), required=True,
                     help="knob type for the whole set")
    gen.add_argument("--direction", choices=("push", "pull"), required=True,
                     help="opening direction for the whole set")
    gen.add_argument("--seed", type=int, default=0, help="master seed (default 0)")
    gen.add_argument("--out", required=True, help="output directory for world files + manifest")

    train = sub.add_parser("train", help="train a PPO or SAC policy")
    train.add_argument("--algo", choices=("ppo", "sac"), default="ppo",
                       help="training algorithm (default ppo)")
    train.add_argument("--worlds", required=True, help="world-set directory or manifest path")
    train.add_argument("--arm", choices=("hook", "gripper"), default="hook",
                       help="end-effector type (default hook)")
    train.add_argument("--mode", choices=("gt", "gt-noise"), default="gt",
                       help="knob position estimate mode (default gt)")
    train.add_argument("--sigma", type=float, default=0.02,
                       help="estimate noise std in meters for gt-noise (default 0.02)")
    train.add_argument("--noise-per-step", action="store_true",
                       help="redraw the estimate error every step instead of per episode")
    train.add_argument("--updates", type=int, default=150,
                       help="PPO updates / SAC epochs (default 150)")
    train.add_argument("--curriculum", type=int, default=None, metavar="K",
                       help="PPO: switch gt -> gt-noise after K updates")
    train.add_argument("--probe-worlds", default=None,
                       help="world set evaluated periodically for the probe_asr column")
    train.add_argument("--probe-every", type=int, default=10,
                       help="probe interval in updates (default 10)")
    train.add_argument("--checkpoint-every", type=int, default=50,
                       help="checkpoint interval in updates (default 50)")
    train.add_argument("--seed", type=int, default=0, help="run seed (default 0)")
    train.add_argument("--threads", type=int, default=None,
                       help="rollout parallelism cap; results are identical for any "
                            "value (default $DOORSIM_THREADS or 1)")
    train.add_argument("--out", required=True, help="output directory (checkpoints + log)")

    ev = sub.add_parser("eval", help="evaluate a policy or the scripted oracle")
    ev.add_argument("--worlds", help="world-set directory or manifest path")
    ev.add_argument("--checkpoint", help="policy checkpoint to evaluate")
    ev.add_argument("--oracle", action="store_true", help="run the scripted oracle controller")
    ev.add_argument("--arm", choices=("hook", "gripper"), default="hook",
                    help="end-effector type (default hook)")
    ev.add_argument("--mode", choices=("gt", "gt-noise"), default="gt",
                    help="knob position estimate mode (default gt)")
    ev.add_argument("--sigma", type=float, default=0.02, help="noise std in meters (default 0.02)")
    ev.add_argument("--noise-per-step", action="store_true",
                    help="redraw the estimate error every step (default per episode)")
    ev.add_argument("--limit", type=float, default=10.2,
                    help="success time limit in seconds (default 10.2; 20.0 also standard)")
    ev.add_argument("--threshold", type=float, default=0.2,
                    help="door angle success threshold in radians (default 0.2)")
    ev.add_argument("--repeats", type=int, default=1,
                    help="episodes per world with distinct start seeds (default 1)")
    ev.add_argument("--seed", type=int, default=0, help="evaluation seed (default 0)")
    ev.add_argument("--sweep", action="store_true",
                    help="oracle grid over knob types x arms x directions instead of one set")
    ev.add_argument("--sweep-n", type=int, default=100, help="worlds per sweep cell (default 100)")
    ev.add_argument("--ablation", action="store_true",
                    help="run the single-world vs randomized training ablation")
    ev.add_argument("--ablation-updates", type=int, default=75,
                    help="PPO updates per ablation arm (default 75)")
    ev.add_argument("--threads", type=int, default=None,
                    help="evaluation parallelism cap; results identical for any value")
    ev.add_argument("--out", required=True, help="output directory for reports")

    rep = sub.add_parser("replay", help="re-run a policy/oracle on one world, emit a JSONL trace")
    rep.add_argument("--world", required=True, help="world JSON file")
    rep.add_argument("--checkpoint", help="policy checkpoint (omit with --oracle)")
    rep.add_argument("--oracle", action="store_true", help="replay the scripted oracle")
    rep.add_argument("--arm", choices=("hook", "gripper"), default="hook",
                     help="end-effector type (default hook)")
    rep.add_argument("--mode", choices=("gt", "gt-noise"), default="gt",
                     help="knob position estimate mode (default gt)")
    rep.add_argument("--sigma", type=float, default=0.02,
                     help="estimate noise std in meters (default 0.02)")
    rep.add_argument("--episode-seed", type=int, default=0,
                     help="episode start seed (default 0)")
    rep.add_argument("--steps", type=int, default=512, help="control steps (default 512)")
    rep.add_argument("--out", required=True, help="output directory for the trace")

    cfg = sub.add_parser("config", help="print the fully resolved default configuration")
    cfg.add_argument("--algo", choices=("ppo", "sac"), default="ppo",
                     help="which trainer defaults to print (default ppo)")

    return parser


def _resolved_config(args: argparse.Namespace, extra: dict | None = None) -> dict:
    doc = {k: v for k, v in vars(args).items() if k != "command"}
    doc["command"] = args.command
    doc["control_dt"] = CONTROL_DT
    doc["dynamics_overrides"] = {}
    if extra:
        doc.update(extra)
    return doc


def _write_resolved(args: argparse.Namespace, out_dir: str, extra: dict | None = None) -> None:
    os.makedirs(out_dir, exist_ok=True)
    with open(os.path.join(out_dir, "resolved_config.json"), "w", encoding="utf-8") as fh:
        json.dump(_resolved_config(args, extra), fh, indent=2, sort_keys=True)
        fh.write("\n")


def _load_worlds(path: str):
    return load_world_set(path).load()


def cmd_gen(args) -> int:
    world_set = generate_world_set(args.seed, args.n, args.knob, args.direction, args.out)
    _write_resolved(args, args.out, {"world_count": world_set.count})
    print(f"wrote {world_set.count} worlds to {args.out}")
    return EXIT_OK


def cmd_train(args) -> int:
    worlds = tuple(_load_worlds(args.worlds))
    mode = parse_mode(args.mode, sigma=args.sigma, per_step=args.noise_per_step)
    setup = TrainSetup(worlds=worlds, arm=args.arm, mode=mode)
    probe = tuple(_load_worlds(args.probe_worlds)) if args.probe_worlds else None
    threads = args.threads if args.threads is not None else _threads_default()
    _write_resolved(args, args.out, {"threads_resolved": threads,
                                     "ppo_config": vars(PpoConfig()) if args.algo == "ppo"
                                     else vars(SacConfig())})
    if args.algo == "ppo":
        result = train_ppo(PpoConfig(), setup, args.updates, run_seed=args.seed,
                           out_dir=args.out, probe_worlds=probe,
                           probe_every=args.probe_every,
                           checkpoint_every=args.checkpoint_every,
                           curriculum_switch=args.curriculum,
                           post_switch_mode=KnobEstimateMode.noisy(args.sigma, args.noise_per_step))
        print(f"trained ppo for {len(result.rows)} updates; log: {result.log_path}")
    else:
        result = train_sac(SacConfig(), setup, args.updates, run_seed=args.seed,
                           out_dir=args.out, probe_worlds=probe,
                           probe_every=args.probe_every,
                           checkpoint_every=args.checkpoint_every)
        print(f"trained sac for {len(result.rows)} epochs; log: {result.log_path}")
    return EXIT_OK


def cmd_eval(args) -> int:
    criterion = SuccessCriterion(door_angle_threshold=args.threshold, time_limit_s=args.limit)
    mode = parse_mode(args.mode, sigma=args.sigma, per_step=args.noise_per_step)
    os.makedirs(args.out, exist_ok=True)

    if args.ablation:
        _write_resolved(args, args.out)
        results = run_ablation(out_dir=args.out, updates=args.ablation_updates,
                               run_seed=args.seed, mode=mode, criterion=criterion)
        for key, cell in results.items():
            at = "N/A" if cell["r_at"] is None else f"{cell['r_at']:.2f}"
            print(f"{key}: r_ASR={cell['r_asr']:.2f} r_AT={at}")
        return EXIT_OK

    if args.sweep:
        _write_resolved(args, args.out)
        rows = sweep(master_seed=args.seed, n_worlds=args.sweep_n, mode=mode,
                     criterion=criterion, eval_seed=args.seed,
                     out_csv=os.path.join(args.out, "sweep.csv"))
        for r in rows:
            asr = "untrained" if r["r_asr"] is None else f"{r['r_asr']:.2f}"
            print(f"{r['direction']}/{r['arm']}/{r['knob_type']}: {asr}")
        return EXIT_OK

    if not args.worlds:
        print("error: usage: --worlds is required unless --sweep/--ablation", file=sys.stderr)
        return EXIT_USAGE
    worlds = _load_worlds(args.worlds)
    if args.oracle:
        report = evaluate_oracle(worlds, arm=args.arm, mode=mode, criterion=criterion,
                                 eval_seed=args.seed, episodes_per_world=args.repeats)
    elif args.checkpoint:
        controller = load_policy_controller(args.checkpoint, args.arm)
        report = evaluate(controller, worlds, arm=args.arm, mode=mode,
                          criterion=criterion, eval_seed=args.seed,
                          episodes_per_world=args.repeats,
                          policy_source=args.checkpoint)
    else:
        print("error: usage: need --oracle or --checkpoint", file=sys.stderr)
        return EXIT_USAGE
    _write_resolved(args, args.out)
    report.save(json_path=os.path.join(args.out, "eval_report.json"),
                csv_path=os.path.join(args.out, "eval_report.csv"))
    at = "N/A" if report.at is None else f"{report.at:.3f}"
    print(f"r_ASR={report.asr:.3f} r_AT={at} ({len(report.records)} attempts)")
    return EXIT_OK


def cmd_replay(args) -> int:
    world = read_world(args.world)
    mode = parse_mode(args.mode, sigma=args.sigma)
    if args.oracle:
        controller = OracleController([world], arm=args.arm)
    elif args.checkpoint:
        controller = load_policy_controller(args.checkpoint, args.arm)
    else:
        print("error: usage: need --oracle or --checkpoint", file=sys.stderr)
        return EXIT_USAGE
    env = VecDoorEnv([world], arm=args.arm, mode=mode,
                     max_episode_steps=args.steps, terminate_on_success=False)
    obs = env.reset([args.episode_seed])
    if hasattr(controller, "begin_episode"):
        controller.begin_episode()
    info = env.current_info()
    os.makedirs(args.out, exist_ok=True)
    trace_path = os.path.join(args.out, "trace.jsonl")
    dof = env.dof
    with TraceWriter(trace_path) as trace:
        for _ in range(args.steps):
            actions = controller.act(obs, info)
            obs, reward, done, info = env.step(actions)
            st = env.state
            trace.write(info["t"][0], st.q_matrix(dof)[0], st.qdot_matrix(dof)[0],
                        np.clip(actions[0], -1.0, 1.0), info["phi"][0], info["psi"][0],
                        info["latched"][0], info["attached"][0], reward[0])
            if done[0]:
                break
    _write_resolved(args, args.out)
    print(f"trace written to {trace_path} "
          f"(success={bool(info['success'][0])}, phi_max={env.state.door_angle_max[0]:.3f})")
    return EXIT_OK


def cmd_config(args) -> int:
    cfg = PpoConfig() if args.algo == "ppo" else SacConfig()
    doc = {
        "algorithm": args.algo,
        "trainer": vars(cfg),
        "reward": {"weights": list(RewardConfig().weights), "alpha": RewardConfig().alpha},
        "success": vars(SuccessCriterion()),
        "control_dt": CONTROL_DT,
        "dynamics_constants": {k: v for k, v in vars(DEFAULT_CONSTANTS).items()},
    }
    print(json.dumps(doc, indent=2, sort_keys=True))
    return EXIT_OK


_COMMANDS = {
    "gen": cmd_gen,
    "train": cmd_train,
    "eval": cmd_eval,
    "replay": cmd_replay,
    "config": cmd_config,
}


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:  # argparse: usage errors exit 2, --help exits 0
        return int(exc.code or 0)
    try:
        return _COMMANDS[args.command](args)
    except FileNotFoundError as exc:
        print(f"error: missing-file: {exc}", file=sys.stderr)
        return EXIT_MISSING_FILE
    except (WorldFormatError, CheckpointError, ValueError) as exc:
        print(f"error: schema: {exc}", file=sys.stderr)
        return EXIT_SCHEMA
    except NumericsError as exc:
        print(f"error: numerics: {exc}", file=sys.stderr)
        return EXIT_NUMERICS
    except Exception as exc:  # pragma: no cover - last resort
        print(f"error: internal: {exc}", file=sys.stderr)
        return EXIT_OTHER


if __name__ == "__main__":
    sys.exit(main())
