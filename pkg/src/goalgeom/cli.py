"""``goalgeom`` command line: gen-data, train, sweep, diagnose, verify.

Exit codes: 0 success, 1 verification failure, 2 usage or input error,
3 numerical abort. A JSON ``--config`` file may hold the sections ``data``,
``train`` and ``verify`` (plus ``out`` and ``verbose``); command-line flags
override it. Every command writes ``resolved_config.json`` into ``--out``.
"""

import argparse
import csv
import json
import logging
import math
import os
import sys
import time
from dataclasses import asdict, fields

import numpy as np

from goalgeom import diagnostics, theoremlab
from goalgeom.data import BundleFormatError, SpecError, SyntheticSpec, generate_synthetic, load_bundle, save_bundle
from goalgeom.matrixcore import NumericalError
from goalgeom.model import load_checkpoint, save_checkpoint
from goalgeom.objectives import PartitionError
from goalgeom.trainer import TrainConfig, TrainingAborted, evaluate, make_monitor, train

__all__ = ["main", "build_parser", "resolve_config"]

EXIT_OK, EXIT_VERIFY, EXIT_USAGE, EXIT_ABORT = 0, 1, 2, 3

log = logging.getLogger("goalgeom")

VERIFY_DEFAULTS = {
    "seeds": [0, 1, 2, 3, 4],
    "trials_t12": 100_000,
    "trials_t3": 10_000,
    "rank_trials": 10_000,
    "lambda_grid": list(theoremlab.DEFAULT_LAMBDA_GRID),
    "alpha": 1.0,
    "d": 4,
    "k": 2,
}
SWEEP_GRID = [0.0, 0.25, 0.5, 1.0, 2.0, 1.0 + math.sqrt(2.0), 5.0, 10.0, 50.0]
SECTIONS = {"data", "train", "verify", "out", "verbose"}


class UsageError(Exception):
    pass


def _defaults():
    train = TrainConfig().to_dict()
    return {
        "data": asdict(SyntheticSpec()),
        "train": train,
        "verify": dict(VERIFY_DEFAULTS),
        "out": None,
        "verbose": False,
    }


def resolve_config(file_cfg, overrides):
    """Merge defaults, a config dict and ``{section: {key: value}}`` overrides; unknown keys raise."""
    cfg = _defaults()
    for layer in (file_cfg or {}), overrides:
        unknown = set(layer) - SECTIONS
        if unknown:
            raise UsageError(f"unknown config sections: {sorted(unknown)}")
        for name, value in layer.items():
            if name in ("out", "verbose"):
                if value is not None:
                    cfg[name] = value
                continue
            if not isinstance(value, dict):
                raise UsageError(f"config section '{name}' must be an object")
            bad = set(value) - set(cfg[name])
            if bad:
                raise UsageError(f"unknown keys in '{name}': {sorted(bad)}")
            cfg[name].update({k: v for k, v in value.items() if v is not None})
    return cfg


def _read_config(path):
    if path is None:
        return {}
    try:
        with open(path) as fh:
            return json.load(fh)
    except FileNotFoundError:
        raise UsageError(f"{path}: config file not found") from None
    except json.JSONDecodeError as exc:
        raise UsageError(f"{path}:{exc.lineno}: {exc.msg}") from None


def _spec(cfg):
    known = {f.name for f in fields(SyntheticSpec)}
    return SyntheticSpec(**{k: v for k, v in cfg["data"].items() if k in known})


def _train_cfg(cfg):
    try:
        return TrainConfig.from_dict(cfg["train"])
    except (TypeError, ValueError) as exc:
        raise UsageError(f"invalid training config: {exc}") from None


def _prepare_out(cfg):
    out = cfg["out"]
    if not out:
        raise UsageError("--out is required")
    os.makedirs(out, exist_ok=True)
    with open(os.path.join(out, "resolved_config.json"), "w") as fh:
        json.dump(cfg, fh, indent=2, sort_keys=True)
    return out


def _bundle(args, cfg):
    if getattr(args, "data", None):
        return load_bundle(args.data)
    return generate_synthetic(_spec(cfg))


def cmd_gen_data(args, cfg):
    spec = _spec(cfg)
    out = _prepare_out(cfg)
    bundle = generate_synthetic(spec)
    save_bundle(bundle, out)
    print(f"wrote {bundle.n_source} source and {bundle.n_target} target samples "
          f"(k={bundle.k}, D={bundle.ambient_dim}) to {out}")
    return EXIT_OK


def cmd_train(args, cfg):
    tcfg = _train_cfg(cfg)
    bundle = _bundle(args, cfg)
    out = _prepare_out(cfg)
    start = time.perf_counter()
    params, report = train(bundle, tcfg, monitor=make_monitor(bundle))
    ckpt = os.path.join(out, "checkpoint.json")
    save_checkpoint(params, ckpt, meta={"config": tcfg.to_dict()})
    report.checkpoint = "checkpoint.json"
    report.save(os.path.join(out, "report.json"))
    if bundle.y_target_true is not None:
        acc = evaluate(params, bundle.x_target, bundle.y_target_true)
        print(f"target accuracy {acc:.4f} ({time.perf_counter() - start:.1f}s)")
    else:
        print(f"training done ({time.perf_counter() - start:.1f}s); no target labels to score")
    return EXIT_OK


def cmd_sweep(args, cfg):
    tcfg = _train_cfg(cfg)
    bundle = _bundle(args, cfg)
    grid = args.grid if args.grid is not None else SWEEP_GRID
    if not grid or any(v < 0 or not math.isfinite(v) for v in grid):
        raise UsageError(f"bad lambda grid {grid}: values must be finite and >= 0")
    out = _prepare_out(cfg)
    rows = diagnostics.lambda_sweep(bundle, tcfg, grid, jobs=args.jobs)
    cols = ["lambda", "lambda_tb", "lambda_db", "target_acc", "final_loss_tb", "final_loss_db", "error"]
    with open(os.path.join(out, "sweep.csv"), "w", newline="") as fh:
        w = csv.DictWriter(fh, fieldnames=cols)
        w.writeheader()
        for r in rows:
            w.writerow({c: r.get(c, "") for c in cols})
    for r in rows:
        print(f"lambda={r['lambda']:<8.4g} acc={r['target_acc']:.4f} {r['error']}")
    if all(r["error"] for r in rows):
        print("every sweep run failed", file=sys.stderr)
        return EXIT_ABORT
    return EXIT_OK


def cmd_diagnose(args, cfg):
    if not os.path.exists(args.checkpoint):
        raise UsageError(f"{args.checkpoint}: checkpoint not found")
    try:
        params = load_checkpoint(args.checkpoint)
    except (ValueError, KeyError, json.JSONDecodeError) as exc:
        raise UsageError(f"{args.checkpoint}: unreadable checkpoint ({exc})") from None
    bundle = _bundle(args, cfg)
    out = _prepare_out(cfg)
    rep = diagnostics.diagnose(params, bundle)
    with open(os.path.join(out, "diagnostics.json"), "w") as fh:
        json.dump(_jsonable(rep.to_dict()), fh, indent=2)
    with open(os.path.join(out, "heatmap.csv"), "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["source_class"] + [f"target_{j}" for j in range(bundle.k)])
        for i, row in enumerate(rep.pairwise_cos_matrix):
            w.writerow([i] + [repr(float(v)) for v in row])
    print(f"discriminant {rep.discriminant:.4f}  p-angle {rep.mean_p_angle_cos:.4f}  "
          f"c-angle {rep.mean_c_angle_cos:.4f}")
    return EXIT_OK


def cmd_verify(args, cfg):
    v = cfg["verify"]
    grid = v["lambda_grid"]
    if not grid or any(not isinstance(x, (int, float)) or x < 0 or not math.isfinite(x) for x in grid):
        raise UsageError(f"bad lambda grid {grid}: values must be finite and >= 0")
    if v["d"] < v["k"] or v["k"] < 2:
        raise UsageError("verify needs k >= 2 and d >= k")
    out = _prepare_out(cfg)
    reports = theoremlab.verify_all(
        seeds=v["seeds"], trials_t12=v["trials_t12"], trials_t3=v["trials_t3"], lambda_grid=grid,
        alpha=v["alpha"], d=v["d"], k=v["k"], rank_trials=v["rank_trials"])
    if args.force_violation:
        reports.append(theoremlab.verify_theorem1(1000, v["alpha"], seed=0, bound_scale=0.5))
    for r in reports:
        print(f"{r.theorem:<12} seed={r.seed} trials={r.trials:<7} violations={r.violations} "
              f"worst_slack={r.worst_slack:.3e} {'PASS' if r.passed else 'FAIL'}")
    with open(os.path.join(out, "verify.json"), "w") as fh:
        json.dump([_jsonable(r.to_dict()) for r in reports], fh, indent=2)
    return EXIT_OK if all(r.passed for r in reports) else EXIT_VERIFY


def _jsonable(obj):
    if isinstance(obj, dict):
        return {k: _jsonable(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_jsonable(v) for v in obj]
    if isinstance(obj, (np.floating, float)):
        return float(obj) if math.isfinite(obj) else None
    if isinstance(obj, np.integer):
        return int(obj)
    return obj


def _add_train_flags(p):
    p.add_argument("--data", help="bundle directory (default: generate from the data config)")
    p.add_argument("--t-warm", type=int)
    p.add_argument("--t-adapt", type=int)
    p.add_argument("--lr", type=float)
    p.add_argument("--lambda-tb", type=float)
    p.add_argument("--lambda-db", type=float)
    p.add_argument("--lambda-t", type=float)
    p.add_argument("--tau", type=float)
    p.add_argument("--seed", type=int)


def build_parser():
    parser = argparse.ArgumentParser(prog="goalgeom", description=__doc__.splitlines()[0])
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", help="JSON config file")
    common.add_argument("--out", help="output directory")
    common.add_argument("-v", "--verbose", action="store_true", default=None)
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("gen-data", parents=[common], help="write a synthetic two-domain bundle")
    p.add_argument("--seed", type=int)
    p.add_argument("--k", type=int)
    p.add_argument("--ambient-dim", type=int)
    p.add_argument("--n-per-class", type=int)
    p.add_argument("--noise", type=float)
    p.add_argument("--theta-deg", type=float)
    p.set_defaults(func=cmd_gen_data, section="data")

    p = sub.add_parser("train", parents=[common], help="warm-up then adaptation training")
    _add_train_flags(p)
    p.set_defaults(func=cmd_train, section="train")

    p = sub.add_parser("sweep", parents=[common], help="one training run per lambda = lambda_tb / lambda_db")
    _add_train_flags(p)
    p.add_argument("--grid", type=float, nargs="+", help="lambda values")
    p.add_argument("--jobs", type=int, default=1)
    p.set_defaults(func=cmd_sweep, section="train")

    p = sub.add_parser("diagnose", parents=[common], help="scatter, angle and dominant-direction measures")
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--data", help="bundle directory (default: generate from the data config)")
    p.set_defaults(func=cmd_diagnose, section=None)

    p = sub.add_parser("verify", parents=[common], help="randomized checks of the norm inequalities")
    p.add_argument("--seeds", type=int, nargs="+")
    p.add_argument("--trials-t12", type=int)
    p.add_argument("--trials-t3", type=int)
    p.add_argument("--rank-trials", type=int)
    p.add_argument("--lambda-grid", type=float, nargs="+")
    p.add_argument("--alpha", type=float)
    p.add_argument("--d", type=int)
    p.add_argument("--k", type=int)
    p.add_argument("--force-violation", action="store_true",
                   help="add a deliberately tightened check that must fail (self-test of the exit code)")
    p.set_defaults(func=cmd_verify, section="verify")
    return parser


_NOT_CONFIG = {"command", "func", "section", "config", "out", "verbose", "data", "grid", "jobs",
               "checkpoint", "force_violation"}


def main(argv=None):
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        overrides = {"out": args.out, "verbose": args.verbose}
        if args.section:
            overrides[args.section] = {k: v for k, v in vars(args).items() if k not in _NOT_CONFIG}
        cfg = resolve_config(_read_config(args.config), overrides)
        logging.basicConfig(level=logging.INFO if cfg["verbose"] else logging.WARNING,
                            format="%(levelname)s %(name)s: %(message)s")
        if args.section == "data" or args.command in ("train", "sweep", "diagnose"):
            try:
                _spec(cfg).validate()
            except SpecError as exc:
                raise UsageError(f"invalid data spec: {exc}") from None
        return args.func(args, cfg)
    except (UsageError, BundleFormatError, SpecError, PartitionError) as exc:
        print(f"goalgeom {args.command}: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except (TrainingAborted, NumericalError) as exc:
        snap = getattr(exc, "snapshot", None)
        print(f"goalgeom {args.command}: numerical abort: {exc}", file=sys.stderr)
        if snap:
            print(json.dumps(_jsonable(snap), sort_keys=True), file=sys.stderr)
        return EXIT_ABORT


if __name__ == "__main__":
    sys.exit(main())
