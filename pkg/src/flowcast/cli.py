"""Command-line entry point: ``flowcast {run,sweep,bound,compare,gen-field}``.

Exit codes: 0 success, 1 expected failure (bad config, failed check, runtime
error), 2 usage or schema error. Failures print one line to stderr of the form
``error: <kind>: <message>``.
"""

from __future__ import annotations

import argparse
import csv
import json
import logging
import math
import sys
from pathlib import Path
from typing import List, Optional

import numpy as np

from . import __version__
from .analysis import bound_check, deviation_report, epsilon_for_tolerance
from .bench import (
    COLUMNS,
    ConfigError,
    DEFAULT_EPSILONS,
    ExperimentConfig,
    dump_json,
    parse_config,
    read_csv,
    sweep,
    sweep_report,
    write_csv,
)
from .core import FieldRegularity, SpecConfig
from .fields import (
    FIELD_ALIASES,
    FieldFileError,
    ConstantField,
    LinearField,
    TabulatedField,
    TinyMLPField,
    estimate_curvature,
    estimate_lipschitz,
    resolve_field,
    save_field,
)
from .integrator import IntegrationError, flowcast, full_euler, reference_solution

logger = logging.getLogger("flowcast")

# initial states pinned for aliases whose acceptance runs use a fixed start
ALIAS_INITIAL_STATE = {"linear-contract": [1.0, 0.0], "rotation": [1.0, 0.0]}

COUNT_COLUMNS = {"K", "seed", "rounds_folded", "rounds_strict", "total_evals"}
EXACT_COLUMNS = COUNT_COLUMNS | {"field_id", "bound_holds"}
FLOAT_TOLERANCE = 1e-9


class CliError(Exception):
    def __init__(self, kind: str, message: str, code: int = 1):
        super().__init__(message)
        self.kind = kind
        self.code = code


def _floats(text: str) -> List[float]:
    try:
        return [float(v) for v in text.split(",") if v.strip()]
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected comma-separated numbers, got {text!r}") from None


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="flowcast", description=__doc__.splitlines()[0])
    parser.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    sub = parser.add_subparsers(dest="command", required=True)

    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", help="experiment config JSON")
    common.add_argument("--out", default="flowcast-out", help="output directory (default: %(default)s)")
    common.add_argument("--field", help=f"alias ({', '.join(sorted(FIELD_ALIASES))}), tabulated:<path>, mlp:<path>")
    common.add_argument("--steps", type=int, action="append", help="number of grid steps K (repeatable)")
    common.add_argument("--epsilon", type=float, action="append", help="MSE acceptance threshold (repeatable)")
    common.add_argument("--seed", type=int, help="base seed of the initial-state sampler")
    common.add_argument("--x0", type=_floats, help="explicit initial state, comma separated")
    common.add_argument("--repetitions", type=int, help="seeds per cell")
    common.add_argument("--jobs", type=int, help="concurrent runs")
    common.add_argument("-v", "--verbose", action="count", default=0)

    p = sub.add_parser("run", parents=[common], help="run one experiment, write CSV + traces")
    p.set_defaults(handler=cmd_run)

    p = sub.add_parser("sweep", parents=[common], help="cross-product sweep, resumable")
    p.add_argument("--default-epsilons", action="store_true", help="use the default 13-point epsilon sweep")
    p.add_argument("--fresh", action="store_true", help="ignore rows already in the output CSV")
    p.set_defaults(handler=cmd_sweep)

    p = sub.add_parser("bound", parents=[common], help="check the global error bound on one run")
    p.add_argument("--tolerance", type=float, help="deviation budget q_d; derives epsilon from it")
    p.add_argument("--estimate-regularity", action="store_true", help="estimate M when the field declares none")
    p.add_argument("--box", type=_floats, help="estimation box lo_1..lo_d,hi_1..hi_d")
    p.set_defaults(handler=cmd_bound)

    p = sub.add_parser("compare", help="compare two result CSVs column by column")
    p.add_argument("a")
    p.add_argument("b")
    p.add_argument("--tolerance", type=float, default=FLOAT_TOLERANCE, help="float column tolerance")
    p.add_argument("-v", "--verbose", action="count", default=0)
    p.set_defaults(handler=cmd_compare)

    p = sub.add_parser("gen-field", help="write a tabulated or MLP field file from an analytic field")
    p.add_argument("--field", required=True, help="analytic alias or analytic field file")
    p.add_argument("--kind", choices=("tabulated", "mlp"), default="tabulated")
    p.add_argument("--nodes", type=int, default=9, help="nodes per state axis")
    p.add_argument("--time-nodes", type=int, default=11)
    p.add_argument("--box", type=_floats, default=None, help="lo,hi for every axis, or lo_1..lo_d,hi_1..hi_d")
    p.add_argument("--hidden", type=int, default=16, help="hidden width of a random MLP")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--output", "-o", required=True)
    p.add_argument("-v", "--verbose", action="count", default=0)
    p.set_defaults(handler=cmd_gen_field)
    return parser


# -- config resolution -----------------------------------------------------


def effective_config(args, require_epsilon: bool = True) -> ExperimentConfig:
    """Merge the config file (if any) with command-line overrides."""
    if args.config:
        path = Path(args.config)
        if not path.exists():
            raise CliError("config", f"config file not found: {path}")
        try:
            data = json.loads(path.read_text(encoding="utf-8"))
        except json.JSONDecodeError as exc:
            raise CliError("config", f"{path}: invalid JSON ({exc})") from None
    else:
        if not args.field:
            raise CliError("usage", "give --config or --field", code=2)
        data = {"field": args.field}

    if args.field:
        data.pop("fields", None)
        data["field"] = args.field
    if args.steps:
        data.pop("nodes", None)
        data["steps"] = args.steps
    if args.epsilon:
        data["epsilons"] = args.epsilon
    if getattr(args, "default_epsilons", False):
        data["epsilons"] = list(DEFAULT_EPSILONS)
    if getattr(args, "tolerance", None) is not None:
        data["tolerance"] = args.tolerance
        if not args.epsilon:
            data.pop("epsilons", None)
    if args.repetitions is not None:
        data["repetitions"] = args.repetitions
    if args.jobs is not None:
        data["jobs"] = args.jobs

    state = dict(data.get("initial_state", {}))
    if args.x0 is not None:
        state = {k: v for k, v in state.items() if k == "seed"}
        state["vector"] = args.x0
    elif "initial_state" not in data and isinstance(data.get("field"), str) and data["field"] in ALIAS_INITIAL_STATE:
        state = {"vector": ALIAS_INITIAL_STATE[data["field"]]}
    if args.seed is not None:
        state["seed"] = args.seed
    if state:
        data["initial_state"] = state
    if require_epsilon and "epsilons" not in data and data.get("tolerance") is None:
        raise CliError("config", "no epsilon given (use --epsilon or set 'epsilons' in the config)")
    data.pop("output", None)
    try:
        return parse_config(data)
    except (ConfigError, FieldFileError) as exc:
        raise CliError("config", str(exc)) from None


def _write_effective(config: ExperimentConfig, out: Path) -> None:
    dump_json(config.to_dict(), out / "effective-config.json")


# -- commands --------------------------------------------------------------


def cmd_run(args) -> int:
    config = effective_config(args)
    out = Path(args.out)
    result = sweep(config)
    if result.failures:
        f = result.failures[0]
        raise CliError(
            "runtime", f"field={f['field_id']} K={f['K']} epsilon={f['epsilon']} seed={f['seed']}: {f['error']}"
        )
    out.mkdir(parents=True, exist_ok=True)
    write_csv(result.rows, out / "results.csv")
    dump_json(sweep_report(config, result), out / "results.json")
    traces = []
    for key in sorted(result.artifacts, key=lambda k: (k[0], k[1], float(k[2]), k[3])):
        art = result.artifacts[key]
        traces.append(
            {"field_id": key[0], "K": key[1], "epsilon": key[2], "seed": key[3], **art.trace.to_dict()}
        )
    dump_json(traces, out / "traces.json")
    _write_effective(config, out)
    for row in result.rows:
        print(
            f"{row.field_id} K={row.K} epsilon={row.epsilon:.6g} seed={row.seed} "
            f"rounds={row.rounds_folded} speedup={row.speedup_rounds:.4g} "
            f"p={row.acceptance_fraction:.4g} max_dev={row.max_spec_deviation:.3e} bound_holds={str(row.bound_holds).lower()}"
        )
    return 0


def cmd_sweep(args) -> int:
    config = effective_config(args)
    out = Path(args.out)
    csv_path = out / "results.csv"
    existing = []
    if csv_path.exists() and not args.fresh:
        try:
            existing = read_csv(csv_path)
        except ValueError as exc:
            raise CliError("schema", str(exc), code=2) from None
    result = sweep(config, existing)
    out.mkdir(parents=True, exist_ok=True)
    write_csv(result.rows, csv_path)
    report = sweep_report(config, result)
    json_path = out / "results.json"
    if existing and json_path.exists():
        # keep bound reports of resumed rows
        previous = json.loads(json_path.read_text(encoding="utf-8"))
        new_keys = {json.dumps(r["key"], sort_keys=True) for r in report["bound_reports"]}
        kept = [r for r in previous.get("bound_reports", []) if json.dumps(r["key"], sort_keys=True) not in new_keys]
        report["bound_reports"] = sorted(
            kept + report["bound_reports"],
            key=lambda r: (r["key"]["field_id"], r["key"]["K"], float(r["key"]["epsilon"]), r["key"]["seed"]),
        )
    dump_json(report, json_path)
    _write_effective(config, out)
    print(f"rows={len(result.rows)} new={len(result.artifacts)} skipped={result.skipped} failed={len(result.failures)}")
    for f in result.failures:
        print(f"failed: field={f['field_id']} K={f['K']} epsilon={f['epsilon']} seed={f['seed']}: {f['error']}", file=sys.stderr)
    return 1 if result.failures else 0


def _box(args, field):
    if args.box is None:
        return None
    vals = np.array(args.box)
    if vals.size != 2 * field.dim:
        raise CliError("usage", f"--box needs {2 * field.dim} numbers for a {field.dim}-d field", code=2)
    return vals[: field.dim], vals[field.dim :]


def cmd_bound(args) -> int:
    config = effective_config(args)
    src = config.fields[0]
    try:
        field = src.load()
    except FieldFileError as exc:
        raise CliError("field", str(exc)) from None
    grid = config.grids()[0]
    x0 = config.initial_state(field, config.seed)

    declared = field.declared_regularity()
    euler, _ = full_euler(field, grid, x0)
    if declared is None:
        if not args.estimate_regularity:
            raise CliError("regularity", f"field {src.field_id!r} declares no regularity; pass --estimate-regularity")
        box = _box(args, field)
        if box is None:
            if isinstance(field, TabulatedField):
                box = (np.array([a[0] for a in field.axes[:-1]]), np.array([a[-1] for a in field.axes[:-1]]))
            else:
                lo, hi = euler.states.min(axis=0), euler.states.max(axis=0)
                pad = 0.1 * np.maximum(hi - lo, 1.0)
                box = (lo - pad, hi + pad)
        M = estimate_lipschitz(field, box, 4096, 0)
        m_prov = "estimated"
        print(f"warning: M={M:.6g} is a sampled lower estimate; the bound is advisory", file=sys.stderr)
    else:
        M, m_prov = declared.M, "declared"
    N = estimate_curvature(field, x0, 2000)
    regularity = FieldRegularity(M, N, m_prov, "estimated")

    if args.tolerance is not None:
        epsilons = [epsilon_for_tolerance(args.tolerance, M)]
        print(f"epsilon={epsilons[0]:.6e} (tolerance={args.tolerance:g}, M={M:.6g})")
    else:
        epsilons = list(config.epsilons)

    ref = reference_solution(field, x0, config.reference_factor * grid.K, grid=grid) if grid.is_uniform() else None
    if ref is None:
        raise CliError("usage", "bound needs a uniform grid", code=2)
    reports = []
    ok = True
    for eps in epsilons:
        spec, stats, _ = flowcast(field, grid, x0, SpecConfig(eps))
        dev = deviation_report(spec, euler, ref)
        report = bound_check(regularity, grid, stats, SpecConfig(eps), dev)
        reports.append(report.to_dict())
        tight = report.max_tightness
        print(
            f"epsilon={eps:.6g} bound_holds={str(report.bound_holds).lower()} "
            f"max_tightness={'exact' if math.isinf(tight) else f'{tight:.6g}'} "
            f"p={stats.acceptance_fraction:.4g} max_spec_deviation={dev.max_spec_deviation:.6e}"
        )
        ok &= report.bound_holds
        if args.tolerance is not None:
            within = dev.max_spec_deviation <= args.tolerance
            print(f"max_spec_deviation={dev.max_spec_deviation:.6e} <= tolerance={args.tolerance:g}: {str(within).lower()}")
            ok &= within
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    dump_json(
        {"field_id": src.field_id, "K": grid.K, "x0": list(map(float, x0)), "reports": reports},
        out / "bound-report.json",
    )
    _write_effective(config, out)
    return 0 if ok else 1


def cmd_compare(args) -> int:
    tables = []
    for path in (args.a, args.b):
        if not Path(path).exists():
            raise CliError("io", f"file not found: {path}")
        with open(path, encoding="utf-8", newline="") as fh:
            rows = list(csv.reader(fh))
        if not rows or tuple(rows[0]) != COLUMNS:
            raise CliError("schema", f"{path}: header does not match the result schema", code=2)
        tables.append([r for r in rows[1:] if r])
    a, b = tables
    if any(len(r) != len(COLUMNS) for r in a + b):
        raise CliError("schema", "row with wrong number of columns", code=2)
    ok = True
    if len(a) != len(b):
        print(f"row count differs: {len(a)} vs {len(b)}")
        ok = False
    for i, col in enumerate(COLUMNS):
        if col in EXACT_COLUMNS:
            mismatches = sum(x[i] != y[i] for x, y in zip(a, b))
            diff = 0.0
            if col in COUNT_COLUMNS:
                diff = max((abs(int(x[i]) - int(y[i])) for x, y in zip(a, b)), default=0)
            status = "ok" if mismatches == 0 else "DIFF"
            print(f"{col}: max_abs_diff={diff:g} mismatched_rows={mismatches} {status}")
        else:
            diffs = [abs(float(x[i]) - float(y[i])) for x, y in zip(a, b)]
            diff = max(diffs, default=0.0)
            mismatches = sum(d > args.tolerance for d in diffs)
            status = "ok" if mismatches == 0 else "DIFF"
            print(f"{col}: max_abs_diff={diff:.3e} tolerance={args.tolerance:g} {status}")
        ok &= mismatches == 0
    return 0 if ok else 1


def cmd_gen_field(args) -> int:
    try:
        field = resolve_field(args.field)
    except FieldFileError as exc:
        raise CliError("field", str(exc)) from None
    if field.declared_regularity() is None:
        raise CliError("field", f"{args.field!r} is not an analytic field")
    if args.kind == "tabulated":
        if args.nodes < 2 or args.time_nodes < 2:
            raise CliError("usage", "--nodes and --time-nodes must be >= 2", code=2)
        box = args.box if args.box is not None else [-4.0, 4.0]
        if len(box) == 2:
            lo, hi = [box[0]] * field.dim, [box[1]] * field.dim
        elif len(box) == 2 * field.dim:
            lo, hi = box[: field.dim], box[field.dim :]
        else:
            raise CliError("usage", f"--box needs 2 or {2 * field.dim} numbers", code=2)
        axes = [np.linspace(l, h, args.nodes) for l, h in zip(lo, hi)] + [np.linspace(0.0, 1.0, args.time_nodes)]
        out_field = TabulatedField.from_field(field, axes)
    else:
        out_field = _mlp_for(field, args)
    Path(args.output).parent.mkdir(parents=True, exist_ok=True)
    save_field(out_field, args.output)
    print(f"wrote {args.kind} field (dim={out_field.dim}) to {args.output}")
    return 0


def _mlp_for(field, args):
    """Exact single-layer network for affine fields, a seeded random one otherwise."""
    d = field.dim
    if isinstance(field, LinearField):
        w = np.hstack([np.asarray(field.A), np.zeros((d, 1))])
        return TinyMLPField([(w, field.b, "identity")])
    if isinstance(field, ConstantField):
        return TinyMLPField([(np.zeros((d, d + 1)), field.c, "identity")])
    logger.warning("no exact network for %s; writing a random tanh MLP (seed %d)", field.name, args.seed)
    return TinyMLPField.random(d, hidden=args.hidden, seed=args.seed)


def main(argv: Optional[List[str]] = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(
        level=logging.WARNING - 10 * min(args.verbose, 2), format="%(levelname)s %(name)s: %(message)s"
    )
    try:
        return args.handler(args)
    except CliError as exc:
        print(f"error: {exc.kind}: {exc}", file=sys.stderr)
        return exc.code
    except (FieldFileError, ConfigError) as exc:
        print(f"error: config: {exc}", file=sys.stderr)
        return 1
    except IntegrationError as exc:
        print(f"error: runtime: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
