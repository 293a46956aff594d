"""Command-line entry point: ``miue <subcommand> ...``.

Exit codes: 0 success, 1 assertion or bound failure, 2 usage or config error.
"""

from __future__ import annotations

import argparse
import json
import logging
import os
import sys
import time
from dataclasses import asdict

from . import __version__
from .bench import train_victim, verify_theorem1
from .data import ParseError, load_matrix, load_poison, save_poison
from .estimators import ESTIMATORS, DegenerateInputError, MIConfig, estimate_mi
from .experiment import (SEED_ENV, ConfigError, ExperimentConfig, atomic_write_text, build_data,
                         build_model_spec, clean_victim, curves_csv, default_config, generate, run,
                         to_json, write_experiment)
from .model import accuracy
from .poison import PoisonSet
from .rng import RngState

EXIT_OK, EXIT_FAIL, EXIT_USAGE = 0, 1, 2

log = logging.getLogger("miue")


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        raise UsageError(message)


def _resolve_seed(flag: int | None, fallback: int = 0) -> int:
    if flag is not None:
        return flag
    env = os.environ.get(SEED_ENV, "").strip()
    if env:
        try:
            return int(env)
        except ValueError:
            raise UsageError(f"{SEED_ENV} must be an integer, got {env!r}") from None
    return fallback


def _manifest(command: str, cfg: ExperimentConfig, started: float, outputs: dict) -> str:
    return to_json({"command": command, "generator": cfg.raw["generator"]["name"], "seed": cfg.seed,
                    "wall_time_s": round(time.perf_counter() - started, 3), "outputs": outputs,
                    "version": __version__})


# ---------------------------------------------------------------------------
# subcommands

def cmd_estimate_mi(args) -> int:
    for p in (args.x, args.y):
        if not os.path.exists(p):
            raise UsageError(f"input file not found: {p}")
    X, Y = load_matrix(args.x), load_matrix(args.y)
    if X.shape[0] != Y.shape[0]:
        raise UsageError(f"{args.x} has {X.shape[0]} rows but {args.y} has {Y.shape[0]}")
    seed = _resolve_seed(args.seed)
    cfg = MIConfig(estimator=args.estimator, bins=args.bins, k_neighbors=args.k, slices=args.slices,
                   mine_iters=args.mine_iters, sliced=not args.joint_knn, seed=seed)
    est = estimate_mi(X, Y, cfg, RngState(seed).split("slices"))
    out = est.to_dict()
    if not out.get("degenerate"):
        out.pop("degenerate", None)
    print(json.dumps(out, sort_keys=True, default=float))
    return EXIT_OK


def _load_config(args) -> ExperimentConfig:
    cfg = ExperimentConfig.load(args.config, args.seed) if args.config else ExperimentConfig.from_dict({}, args.seed)
    if getattr(args, "output_dir", None):
        cfg.raw["output_dir"] = args.output_dir
    return cfg


def cmd_gen_poison(args) -> int:
    started = time.perf_counter()
    cfg = _load_config(args)
    root = RngState(cfg.seed)
    train, test = build_data(cfg, root)
    spec = build_model_spec(cfg, train)
    poison = generate(cfg, train, spec, root, test=test)
    out = cfg.raw["output_dir"]
    path = os.path.join(out, "poison.csv")
    save_poison(poison.deltas, path)
    reloaded = PoisonSet(load_poison(path), poison.budget, poison.generator, poison.class_mask)
    reloaded.check(train.labels)
    atomic_write_text(os.path.join(out, "config.json"), to_json(cfg.raw))
    atomic_write_text(os.path.join(out, "manifest.json"),
                      _manifest("gen-poison", cfg, started, {"poison": path}))
    print(to_json({"poison": path, "max_abs_delta": poison.max_abs(), "epsilon": poison.budget.epsilon}),
          end="")
    return EXIT_OK


def cmd_train_victim(args) -> int:
    started = time.perf_counter()
    cfg = _load_config(args)
    root = RngState(cfg.seed)
    train, test = build_data(cfg, root)
    spec = build_model_spec(cfg, train)
    poison = None
    if args.poison:
        if not os.path.exists(args.poison):
            raise UsageError(f"poison file not found: {args.poison}")
        deltas = load_poison(args.poison)
        if deltas.shape != train.inputs.shape:
            raise UsageError(f"poison shape {deltas.shape} does not match training data {train.inputs.shape}")
        poison = PoisonSet(deltas, cfg.budget(), "file")
    if poison is None:
        model, curves = clean_victim(cfg, train, test, spec, root)
    else:
        model, curves = train_victim(train, poison, spec, cfg.train_config(), root.split("victim"), test)
    x_train = train.inputs if poison is None else train.inputs + poison.deltas
    out = cfg.raw["output_dir"]
    summary = {"train_acc": 100.0 * accuracy(model, x_train, train.labels),
               "test_acc": 100.0 * accuracy(model, test.inputs, test.labels),
               "poison": args.poison, "victim": asdict(cfg.train_config()), "model": asdict(spec),
               "seed": cfg.seed}
    atomic_write_text(os.path.join(out, "victim_curves.csv"), curves_csv(curves))
    atomic_write_text(os.path.join(out, "victim.json"), to_json(summary))
    atomic_write_text(os.path.join(out, "manifest.json"),
                      _manifest("train-victim", cfg, started, {"curves": "victim_curves.csv"}))
    print(to_json(summary), end="")
    return EXIT_OK


def cmd_run_experiment(args) -> int:
    started = time.perf_counter()
    cfg = _load_config(args)
    report, poison = run(cfg)
    out = cfg.raw["output_dir"]
    paths = write_experiment(out, report, poison)
    atomic_write_text(os.path.join(out, "manifest.json"), _manifest("run-experiment", cfg, started, paths))
    brief = {k: getattr(report, k) for k in ("generator", "clean_test_acc", "poisoned_test_acc", "acc_gap",
                                             "mi_clean_baseline", "mi_poisoned", "mi_gap")}
    print(to_json(brief), end="")
    return EXIT_OK


def cmd_verify_bound(args) -> int:
    try:
        dims = [int(d) for d in args.dims.split(",") if d.strip()]
    except ValueError:
        raise UsageError(f"--dims must be a comma-separated list of integers, got {args.dims!r}") from None
    if not dims or any(not 1 <= d <= 16 for d in dims):
        raise UsageError("every dimension in --dims must lie in [1, 16]")
    if args.trials < 1:
        raise UsageError("--trials must be >= 1")
    root = RngState(_resolve_seed(args.seed))
    per_dim, violations = {}, 0
    for d in dims:
        rep = verify_theorem1(d, args.trials, root.split(f"dim-{d}"))
        per_dim[str(d)] = rep.to_dict()
        violations += len(rep.violations)
        print(f"d={d}: min margin {rep.min_margin_by_dim()[d]:.6f}, violations {len(rep.violations)}")
    doc = {"dims": dims, "trials": args.trials, "seed": root.seed, "n_violations": violations,
           "reports": per_dim}
    if args.output:
        atomic_write_text(args.output, to_json(doc))
    return EXIT_FAIL if violations else EXIT_OK


# ---------------------------------------------------------------------------

def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="miue", description="MI-reduction unlearnable examples toolkit")
    parser.add_argument("--version", action="version", version=__version__)
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", parser_class=_Parser)

    p = sub.add_parser("estimate-mi", help="estimate MI between two CSV matrices")
    p.add_argument("--x", required=True)
    p.add_argument("--y", required=True)
    p.add_argument("--estimator", choices=ESTIMATORS, default="knn")
    p.add_argument("--bins", type=int, default=100)
    p.add_argument("--k", type=int, default=3)
    p.add_argument("--slices", type=int, default=200)
    p.add_argument("--mine-iters", type=int, default=500)
    p.add_argument("--joint-knn", action="store_true", help="KSG on the joint space instead of slicing")
    p.add_argument("--seed", type=int)
    p.set_defaults(func=cmd_estimate_mi)

    for name, func, text in (("gen-poison", cmd_gen_poison, "generate a poison CSV"),
                             ("train-victim", cmd_train_victim, "train a victim, optionally on a poison"),
                             ("run-experiment", cmd_run_experiment, "paired clean/poisoned experiment")):
        p = sub.add_parser(name, help=text)
        p.add_argument("--config", help="experiment config JSON (defaults apply to missing keys)")
        p.add_argument("--print-defaults", action="store_true", help="print the default config and exit")
        p.add_argument("--seed", type=int)
        p.add_argument("--output-dir")
        if name == "train-victim":
            p.add_argument("--poison", help="poison CSV row-aligned with the training data")
        p.set_defaults(func=func)

    p = sub.add_parser("verify-bound", help="check the covariance MI bound on random Gaussians")
    p.add_argument("--dims", default="1,2,4,8")
    p.add_argument("--trials", type=int, default=1000)
    p.add_argument("--seed", type=int)
    p.add_argument("--output", help="write the BoundCheckReport JSON here")
    p.set_defaults(func=cmd_verify_bound)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
        logging.basicConfig(level=logging.DEBUG if args.verbose else logging.WARNING,
                            format="%(levelname)s %(name)s: %(message)s")
        if args.command is None:
            parser.print_help(sys.stderr)
            return EXIT_USAGE
        if getattr(args, "print_defaults", False):
            print(to_json(default_config()), end="")
            return EXIT_OK
        return args.func(args)
    except (UsageError, ConfigError, ParseError, DegenerateInputError) as exc:
        print(f"miue: error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except FileNotFoundError as exc:
        print(f"miue: error: {exc.filename}: file not found", file=sys.stderr)
        return EXIT_USAGE
    except AssertionError as exc:
        print(f"miue: check failed: {exc}", file=sys.stderr)
        return EXIT_FAIL
    except ValueError as exc:
        print(f"miue: error: {exc}", file=sys.stderr)
        return EXIT_USAGE


if __name__ == "__main__":
    sys.exit(main())
