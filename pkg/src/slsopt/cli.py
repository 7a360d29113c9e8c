"""Command-line interface: run experiments, baselines, replays, and the service.

Exit code 0 on success; any configuration or validation failure prints a
message to stderr and exits nonzero.
"""

import argparse
import sys

import numpy as np

from .acquisition import AcquisitionConfig
from .harness import ExperimentConfig, replay_log, run_baseline, run_experiment
from .oracles import OracleConfigError
from .session import GPConfig, ReplayMismatchError


def _add_experiment_args(p):
    p.add_argument("--dim", type=int, required=True, help="search space dimensionality")
    p.add_argument("--steps", type=int, default=30, help="choices per session")
    p.add_argument("--seeds", type=int, default=1, help="number of seeded sessions")
    p.add_argument("--seed", type=int, default=0, help="base seed")
    p.add_argument("--n-points", type=int, default=20, help="slider positions per segment")
    p.add_argument("--extension-factor", type=float, default=1.25)
    p.add_argument("--oracle", default="neg_l2", choices=["neg_l2"],
                   help="simulated user kind")
    p.add_argument("--target", default="random",
                   help="'random' (one per seed) or comma-separated coordinates")
    p.add_argument("--temperature", type=float, default=0.0,
                   help="choice noise; 0 = deterministic argmax")
    p.add_argument("--endpoint-mode", default="random", choices=["random", "table_means"])
    p.add_argument("--table", default=None, help="embedding table CSV (table_means mode)")
    p.add_argument("--labels", nargs=2, metavar=("LABEL_A", "LABEL_B"), default=None,
                   help="two label filters for table-mean endpoints")
    p.add_argument("--ei-candidates", type=int, default=2000,
                   help="uniform candidates for EI maximization")
    p.add_argument("--out", required=True, help="output CSV path")
    p.add_argument("--log-dir", default=None, help="write replayable session logs here")


def _experiment_config(args):
    target = args.target
    if target != "random":
        target = np.array([float(v) for v in target.split(",")])
        if target.shape[0] != args.dim:
            raise ValueError(f"--target has {target.shape[0]} coordinates, --dim is {args.dim}")
    return ExperimentConfig(
        dim=args.dim, steps=args.steps, n_points=args.n_points,
        extension_factor=args.extension_factor, n_seeds=args.seeds,
        base_seed=args.seed, oracle_kind=args.oracle, oracle_target=target,
        temperature=args.temperature, endpoint_mode=args.endpoint_mode,
        table_path=args.table, label_a=args.labels[0] if args.labels else None,
        label_b=args.labels[1] if args.labels else None,
        acquisition=AcquisitionConfig(n_uniform_candidates=args.ei_candidates),
        gp=GPConfig(), out=args.out)


def main(argv=None):
    parser = argparse.ArgumentParser(
        prog="slsopt",
        description="Preference-driven sequential line search: experiments, "
                    "baselines, replays, and the HTTP session service.")
    sub = parser.add_subparsers(dest="command", required=True)

    p_run = sub.add_parser("run", help="run model-guided sessions with a simulated user")
    _add_experiment_args(p_run)

    p_base = sub.add_parser("baseline", help="run the random-segments control condition")
    _add_experiment_args(p_base)

    p_replay = sub.add_parser("replay", help="replay a session log, verifying bit-exact agreement")
    p_replay.add_argument("log", help="session JSONL log path")

    p_serve = sub.add_parser("serve", help="start the HTTP session service")
    p_serve.add_argument("--config", default=None, help="service config JSON file")
    p_serve.add_argument("--host", default=None)
    p_serve.add_argument("--port", type=int, default=None)

    args = parser.parse_args(argv)
    try:
        if args.command == "run":
            report = run_experiment(_experiment_config(args), log_dir=args.log_dir)
            report.to_csv(args.out)
            print(f"wrote {args.out} ({len(report.rows)} rows, {args.seeds} seeds)")
        elif args.command == "baseline":
            report = run_baseline(_experiment_config(args), log_dir=args.log_dir)
            report.to_csv(args.out)
            print(f"wrote {args.out} ({len(report.rows)} rows, {args.seeds} seeds)")
        elif args.command == "replay":
            session = replay_log(args.log)
            print(f"replay OK: {session.step} steps reproduced bit-exactly")
        elif args.command == "serve":
            from .service import ServiceConfig, run_service
            config = (ServiceConfig.from_file(args.config) if args.config
                      else ServiceConfig())
            if args.host is not None:
                config = ServiceConfig.from_dict({**_config_dict(config), "host": args.host})
            if args.port is not None:
                config = ServiceConfig.from_dict({**_config_dict(config), "port": args.port})
            run_service(config)
    except (ValueError, OSError, OracleConfigError, ReplayMismatchError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    return 0


def _config_dict(config):
    from dataclasses import asdict

    return asdict(config)


if __name__ == "__main__":
    sys.exit(main())
