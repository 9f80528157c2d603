"""Command-line interface.

Exit codes: 0 success, 2 usage/validation, 3 resource or guard limit,
4 no convergence, 5 data error, 6 verification mismatch.
"""

from __future__ import annotations

import argparse
import hashlib
import json
import logging
import sys
from pathlib import Path

from . import __version__
from .em import ABORT, SKIP, EMConfig, NoUsableObservationsError, fit, format_trace
from .inside_outside import MODES, MULTISET, UnderivableObservationError, likelihood, observation_counts
from .model import ModelError, parse_model, parse_structure, random_init, serialize_model, uniform_init
from .oracle import DEFAULT_GUARD, GuardExceededError, enumerate_trees, oracle_expected_counts
from .simulator import (
    BoundsInfeasibleError,
    SimConfig,
    SimulationConfigError,
    read_observations,
    simulate_sample,
    write_observations,
)
from .study import SAMPLE_SIZES, TREE_SIZES, run_study
from .trees import TreeError, UndefinedDistributionError, complete_data_mle, read_trees, write_trees
from .worked_example import run_example

EXIT_OK = 0
EXIT_USAGE = 2
EXIT_RESOURCE = 3
EXIT_NOT_CONVERGED = 4
EXIT_DATA = 5
EXIT_MISMATCH = 6

ORACLE_TOL = 1e-9

log = logging.getLogger("branchem")


class CliError(Exception):
    def __init__(self, message: str, code: int = EXIT_USAGE):
        super().__init__(message)
        self.code = code


def _read(path: str) -> str:
    try:
        return Path(path).read_text(encoding="utf-8")
    except OSError as exc:
        raise CliError(f"cannot read {path}: {exc.strerror}") from None


def _digest(path: str) -> str:
    return hashlib.sha256(Path(path).read_bytes()).hexdigest()


def _write_manifest(path: str | None, command: str, args: argparse.Namespace, inputs: list[str], extra=None):
    if not path:
        return
    config = {k: v for k, v in sorted(vars(args).items()) if k not in ("func", "manifest")}
    manifest = {
        "command": command,
        "config": config,
        "inputs": {p: _digest(p) for p in inputs if p},
        "version": __version__,
    }
    if extra:
        manifest.update(extra)
    Path(path).write_text(json.dumps(manifest, indent=2, sort_keys=True) + "\n", encoding="utf-8")


def _manifest_path(args, out: str) -> str:
    return args.manifest if args.manifest else out + ".manifest.json"


def cmd_simulate(args) -> int:
    model = parse_model(_read(args.model))
    try:
        root = model.types.index(args.root)
    except ModelError as exc:
        raise CliError(str(exc)) from None
    if (args.min_leaves is None) != (args.max_leaves is None):
        raise CliError("--min-leaves and --max-leaves must be given together")
    bounds = (args.min_leaves, args.max_leaves) if args.min_leaves is not None else None
    cfg = SimConfig(root=root, seed=args.seed, count=args.count, max_depth=args.max_depth, size_bounds=bounds)
    try:
        trees, obs = simulate_sample(model, cfg)
    except BoundsInfeasibleError as exc:
        raise CliError(str(exc), EXIT_RESOURCE) from None
    Path(args.out).write_text(write_observations(obs, model.types), encoding="utf-8")
    if args.trees:
        Path(args.trees).write_text(write_trees(trees, model.types), encoding="utf-8")
    _write_manifest(_manifest_path(args, args.out), "simulate", args, [args.model])
    print(f"wrote {len(obs)} observations to {args.out}")
    return EXIT_OK


def _initial_model(args, structure):
    if args.init == "uniform":
        return uniform_init(structure)
    if args.init == "random":
        return random_init(structure, args.seed)
    if not args.init_file:
        raise CliError("--init file needs --init-file")
    init = parse_model(_read(args.init_file))
    if init.structure_key != structure.structure_key:
        raise CliError("--init-file does not have the same types and productions as --structure")
    return init


def cmd_estimate(args) -> int:
    structure = parse_structure(_read(args.structure))
    obs = read_observations(_read(args.obs), structure.types)
    if not obs:
        raise CliError("observations file has no rows")
    init = _initial_model(args, structure)
    cfg = EMConfig(mode=args.mode, tol_loglik=args.tol, tol_param=args.tol, max_iter=args.max_iter,
                   on_impossible=SKIP if args.skip_impossible else ABORT)
    if not args.skip_impossible:
        bad = [i for i, o in enumerate(obs) if not likelihood(init, o, args.mode) > 0]
        if bad:
            rows = ", ".join(str(i + 1) for i in bad)
            raise CliError(f"underivable observation rows: {rows} (use --skip-impossible)", EXIT_DATA)
    try:
        result = fit(init, obs, cfg)
    except NoUsableObservationsError as exc:
        raise CliError(str(exc), EXIT_DATA) from None
    for i in result.skipped_observations:
        print(f"warning: skipped row {i + 1}: impossible under the initial model", file=sys.stderr)
    Path(args.out).write_text(serialize_model(result.model), encoding="utf-8")
    Path(args.trace).write_text(format_trace(result), encoding="utf-8")
    inputs = [args.structure, args.obs] + ([args.init_file] if args.init == "file" else [])
    _write_manifest(_manifest_path(args, args.out), "estimate", args, inputs)
    status = "converged" if result.converged else "not converged"
    print(f"final loglik {result.loglik:.17g}; {status} after {result.iterations} iterations")
    return EXIT_OK if result.converged else EXIT_NOT_CONVERGED


def cmd_oracle(args) -> int:
    model = parse_model(_read(args.model))
    obs = read_observations(_read(args.obs), model.types)
    labels = model.labels()
    worst = 0.0
    out = []
    for i, o in enumerate(obs, start=1):
        try:
            trees = enumerate_trees(model, o, args.max_leaves_guard)
            oracle = oracle_expected_counts(model, o, args.mode, args.max_leaves_guard)
        except GuardExceededError as exc:
            raise CliError(f"row {i}: {exc}", EXIT_RESOURCE) from None
        except UnderivableObservationError:
            raise CliError(f"row {i}: observation is impossible under the model", EXIT_DATA) from None
        dp = observation_counts(model, o, args.mode)
        lik_set = sum(w.probability for w in trees)
        lik_ordered = sum(w.probability * w.multiplicity for w in trees)
        out.append(f"# row {i}: root {model.types.names[o.root]} x={','.join(map(str, o.x))}")
        out.append(f"# trees {len(trees)}; oracle likelihood multiset {lik_set:.17g} ordered {lik_ordered:.17g}")
        out.append(f"# dp likelihood ({args.mode}) {dp.likelihood:.17g}")
        out.append("quantity\tdp\toracle\tabs_diff")
        rows = [("likelihood", dp.likelihood, oracle.likelihood)]
        rows += [(f"E c({model.types.names[v]})", dp.type_expectations[v], oracle.type_expectations[v])
                 for v in range(model.types.m)]
        rows += [(f"E c({labels[k]})", dp.production_expectations[k], oracle.production_expectations[k])
                 for k in range(len(labels))]
        for name, a, b in rows:
            diff = abs(float(a) - float(b))
            worst = max(worst, diff)
            out.append(f"{name}\t{float(a):.17g}\t{float(b):.17g}\t{diff:.3g}")
    out.append(f"max abs diff {worst:.3g}")
    if worst >= ORACLE_TOL and args.mode == MULTISET:
        out.append("# note: multiset counting only agrees with tree enumeration when no node has "
                   "identical-type children with equal yields; use --mode ordered for an exact check")
    print("\n".join(out))
    _write_manifest(args.manifest, "oracle", args, [args.model, args.obs])
    return EXIT_OK if worst < ORACLE_TOL else EXIT_MISMATCH


def cmd_mle(args) -> int:
    structure = parse_structure(_read(args.structure))
    try:
        trees = read_trees(_read(args.trees), structure.types, structure)
    except TreeError as exc:
        raise CliError(f"bad tree: {exc}") from None
    if not trees:
        raise CliError("trees file is empty")
    try:
        fitted = complete_data_mle(trees, structure)
    except UndefinedDistributionError as exc:
        raise CliError(str(exc), EXIT_DATA) from None
    Path(args.out).write_text(serialize_model(fitted), encoding="utf-8")
    _write_manifest(_manifest_path(args, args.out), "mle", args, [args.trees, args.structure])
    print(f"wrote complete-data estimate from {len(trees)} trees to {args.out}")
    return EXIT_OK


def cmd_example(args) -> int:
    run = run_example(args.mode)
    sys.stdout.write(run.report)
    _write_manifest(args.manifest, "example", args, [])
    if args.mode != MULTISET:
        print("\n(values not checked: reference values are for multiset mode)")
        return EXIT_OK
    bad = run.mismatches
    print(f"\nchecked {len(run.checks)} values against reference: {len(bad)} mismatches")
    for c in bad:
        print(f"MISMATCH {c.name}: expected {c.expected:.17g} got {c.actual:.17g} "
              f"(diff {abs(c.expected - c.actual):.3g})")
    return EXIT_MISMATCH if bad else EXIT_OK


def cmd_study(args) -> int:
    result = run_study(args.samples, args.sample_size, args.tree_size, args.seed,
                       mode=args.mode, max_iter=args.max_iter, jobs=args.jobs)
    s = result.settings
    print(f"# tree size {s['tree_size']}: leaves in [{s['size_bounds'][0]}, {s['size_bounds'][1]}], "
          f"max depth {s['max_depth']}, seed {s['seed']}, mode {s['mode']}")
    sys.stdout.write(result.table())
    n_conv = sum(result.converged)
    print(f"# {n_conv}/{len(result.converged)} fits converged")
    _write_manifest(args.manifest, "study", args, [], {"harness": s})
    return EXIT_OK


def _nonneg_int(text: str) -> int:
    value = int(text)
    if value < 0:
        raise argparse.ArgumentTypeError("must be >= 0")
    return value


def _positive_int(text: str) -> int:
    value = int(text)
    if value < 1:
        raise argparse.ArgumentTypeError("must be >= 1")
    return value


def _positive_float(text: str) -> float:
    value = float(text)
    if not value > 0:
        raise argparse.ArgumentTypeError("must be > 0")
    return value


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="branchem", description=__doc__.splitlines()[0])
    parser.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    parser.add_argument("-v", "--verbose", action="store_true", help="log progress to stderr")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("simulate", help="simulate trees and observations from a model")
    p.add_argument("--model", required=True)
    p.add_argument("--root", required=True, help="name of the ancestor type")
    p.add_argument("--count", type=_nonneg_int, required=True)
    p.add_argument("--seed", type=_nonneg_int, required=True)
    p.add_argument("--max-depth", type=_positive_int, default=64)
    p.add_argument("--min-leaves", type=_positive_int)
    p.add_argument("--max-leaves", type=_positive_int)
    p.add_argument("--out", required=True, help="observations CSV")
    p.add_argument("--trees", help="also write the simulated trees here")
    p.add_argument("--manifest", help="run manifest path (default: OUT.manifest.json)")
    p.set_defaults(func=cmd_simulate)

    p = sub.add_parser("estimate", help="fit offspring probabilities to observations with EM")
    p.add_argument("--structure", required=True, help="model file; probabilities ignored")
    p.add_argument("--obs", required=True)
    p.add_argument("--init", choices=["uniform", "random", "file"], default="uniform")
    p.add_argument("--init-file")
    p.add_argument("--seed", type=_nonneg_int, default=0, help="seed for --init random")
    p.add_argument("--mode", choices=MODES, default=MULTISET)
    p.add_argument("--tol", type=_positive_float, default=1e-8)
    p.add_argument("--max-iter", type=_positive_int, default=200)
    p.add_argument("--skip-impossible", action="store_true")
    p.add_argument("--out", required=True)
    p.add_argument("--trace", required=True)
    p.add_argument("--manifest")
    p.set_defaults(func=cmd_estimate)

    p = sub.add_parser("oracle", help="compare the DP against exhaustive tree enumeration")
    p.add_argument("--model", required=True)
    p.add_argument("--obs", required=True)
    p.add_argument("--mode", choices=MODES, default=MULTISET)
    p.add_argument("--max-leaves-guard", type=_positive_int, default=DEFAULT_GUARD)
    p.add_argument("--manifest")
    p.set_defaults(func=cmd_oracle)

    p = sub.add_parser("mle", help="complete-data estimate from fully observed trees")
    p.add_argument("--trees", required=True)
    p.add_argument("--structure", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--manifest")
    p.set_defaults(func=cmd_mle)

    p = sub.add_parser("example", help="run and check the built-in two-type example")
    p.add_argument("--mode", choices=MODES, default=MULTISET)
    p.add_argument("--manifest")
    p.set_defaults(func=cmd_example)

    p = sub.add_parser("study", help="simulation study of estimator behaviour")
    p.add_argument("--samples", type=_positive_int, required=True)
    p.add_argument("--sample-size", type=int, choices=SAMPLE_SIZES, required=True)
    p.add_argument("--tree-size", choices=sorted(TREE_SIZES), required=True)
    p.add_argument("--seed", type=_nonneg_int, default=0)
    p.add_argument("--mode", choices=MODES, default=MULTISET)
    p.add_argument("--max-iter", type=_positive_int, default=200)
    p.add_argument("--jobs", type=_positive_int, default=1)
    p.add_argument("--manifest")
    p.set_defaults(func=cmd_study)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s: %(message)s", stream=sys.stderr)
    try:
        return args.func(args)
    except CliError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return exc.code
    except UnderivableObservationError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_DATA
    except (ModelError, TreeError, SimulationConfigError, ValueError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_USAGE


if __name__ == "__main__":
    sys.exit(main())
