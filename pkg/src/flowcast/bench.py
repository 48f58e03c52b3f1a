"""Seeded, reproducible experiment runner.

An experiment is described by a JSON config (see ``ExperimentConfig``). Each
(field, K, epsilon, seed) cell runs full Euler, FlowCast and an RK4 reference
and produces one :class:`ResultRow`. Rows are written to CSV with a fixed
header and 17-significant-digit floats, so identical configs give
byte-identical files.

Initial states come from a pinned generator: the raw 64-bit output of numpy's
PCG64 bit generator, mapped to doubles in (0, 1] as ``((r >> 11) + 1) * 2**-53``
and turned into normals with the Box-Muller transform (``cos`` branch for even
coordinates, ``sin`` branch for odd ones).
"""

from __future__ import annotations

import csv
import io
import json
import logging
import math
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, fields as dc_fields
from pathlib import Path
from typing import Dict, Iterable, List, Optional, Sequence, Tuple, Union

import numpy as np

from .analysis import BoundReport, bound_check, deviation_report, epsilon_for_tolerance
from .core import FieldRegularity, SpecConfig, TimeGrid, VelocityField, make_uniform_grid
from .fields import (
    TabulatedField,
    estimate_curvature,
    estimate_lipschitz,
    field_from_dict,
    resolve_field,
)
from .integrator import SpecTrace, Trajectory, _rk4, flowcast, full_euler, reference_solution

logger = logging.getLogger(__name__)

DEFAULT_EPSILONS = tuple(float(e) for e in np.logspace(-5, -1, 13))
DEFAULT_REFERENCE_FACTOR = 100
CURVATURE_RESOLUTION = 2000
LIPSCHITZ_SAMPLES = 4096


class ConfigError(ValueError):
    """Invalid experiment configuration."""


class ExperimentError(RuntimeError):
    """A run failed; the message names the config coordinates."""


# -- initial states --------------------------------------------------------


def uniform_doubles(seed: int, n: int) -> np.ndarray:
    raw = np.random.PCG64(seed).random_raw(n)
    return ((raw >> np.uint64(11)).astype(np.float64) + 1.0) * 2.0**-53


def gaussian_state(seed: int, dim: int, mean=0.0, stddev: float = 1.0) -> np.ndarray:
    """Seeded Gaussian vector via PCG64 raw output and Box-Muller."""
    pairs = (dim + 1) // 2
    u = uniform_doubles(seed, 2 * pairs)
    z = np.empty(2 * pairs)
    for i in range(pairs):
        r = math.sqrt(-2.0 * math.log(u[2 * i]))
        theta = 2.0 * math.pi * u[2 * i + 1]
        z[2 * i] = r * math.cos(theta)
        z[2 * i + 1] = r * math.sin(theta)
    return np.asarray(mean, dtype=np.float64) + stddev * z[:dim]


# -- configuration ---------------------------------------------------------

_TOP_KEYS = {
    "fields",
    "field",
    "steps",
    "nodes",
    "initial_state",
    "epsilons",
    "tolerance",
    "repetitions",
    "reference_factor",
    "regularity",
    "estimate_regularity",
    "box",
    "jobs",
    "output",
}
_STATE_KEYS = {"vector", "sampler", "seed", "dim", "mean", "stddev"}
_OUTPUT_KEYS = {"csv", "json", "traces"}


@dataclass(frozen=True)
class FieldSource:
    """A field reference: alias / path string, or an inline field object."""

    ref: Union[str, dict]
    field_id: str

    def load(self) -> VelocityField:
        if isinstance(self.ref, dict):
            return field_from_dict(self.ref)
        return resolve_field(self.ref)


@dataclass(frozen=True)
class ExperimentConfig:
    fields: Tuple[FieldSource, ...]
    steps: Tuple[int, ...] = (50,)
    nodes: Optional[Tuple[float, ...]] = None
    initial_vector: Optional[Tuple[float, ...]] = None
    seed: int = 0
    dim: Optional[int] = None
    mean: Union[float, Tuple[float, ...]] = 0.0
    stddev: Optional[float] = None
    epsilons: Tuple[float, ...] = ()
    tolerance: Optional[float] = None
    repetitions: int = 1
    reference_factor: int = DEFAULT_REFERENCE_FACTOR
    regularity: Optional[Tuple[float, float]] = None
    estimate_regularity: bool = False
    box: Optional[Tuple[Tuple[float, ...], Tuple[float, ...]]] = None
    jobs: int = 1
    csv_path: Optional[str] = None
    json_path: Optional[str] = None
    traces_path: Optional[str] = None

    def __post_init__(self):
        if not self.fields:
            raise ConfigError("config needs at least one field")
        if not self.epsilons and self.tolerance is None:
            raise ConfigError("config needs 'epsilons' or 'tolerance'")
        if any(not (e >= 0 and math.isfinite(e)) for e in self.epsilons):
            raise ConfigError("epsilons must be finite and >= 0")
        if self.tolerance is not None and not self.tolerance > 0:
            raise ConfigError("tolerance must be positive")
        if self.repetitions < 1:
            raise ConfigError("repetitions must be >= 1")
        if self.nodes is None and (not self.steps or any(k < 1 for k in self.steps)):
            raise ConfigError("steps must be positive integers")
        if self.reference_factor < 10:
            raise ConfigError("reference_factor must be >= 10")
        if self.jobs < 1:
            raise ConfigError("jobs must be >= 1")

    # grids and seeds

    def grids(self) -> List[TimeGrid]:
        if self.nodes is not None:
            return [TimeGrid(np.array(self.nodes))]
        return [make_uniform_grid(k) for k in self.steps]

    def seeds(self) -> List[int]:
        return [self.seed + r for r in range(self.repetitions)]

    def initial_state(self, field: VelocityField, seed: int) -> np.ndarray:
        if self.initial_vector is not None:
            x0 = np.array(self.initial_vector, dtype=np.float64)
            if x0.size != field.dim:
                raise ConfigError(f"initial_state.vector has dimension {x0.size}, field has {field.dim}")
            return x0
        dim = self.dim if self.dim is not None else field.dim
        if dim != field.dim:
            raise ConfigError(f"initial_state.dim={dim} does not match field dimension {field.dim}")
        stddev = self.stddev
        if stddev is None:
            # the source distribution of a bridge field, unit normal otherwise
            stddev = getattr(field, "sigma0", 1.0)
        mean = np.broadcast_to(np.asarray(self.mean, dtype=np.float64), (dim,))
        return gaussian_state(seed, dim, mean, stddev)

    def to_dict(self) -> dict:
        out: dict = {"fields": [f.ref if isinstance(f.ref, str) else {"id": f.field_id, **f.ref} for f in self.fields]}
        if self.nodes is not None:
            out["nodes"] = list(self.nodes)
        else:
            out["steps"] = list(self.steps)
        if self.initial_vector is not None:
            out["initial_state"] = {"vector": list(self.initial_vector), "seed": self.seed}
        else:
            state = {"sampler": "gaussian", "seed": self.seed, "mean": self.mean}
            if self.dim is not None:
                state["dim"] = self.dim
            if self.stddev is not None:
                state["stddev"] = self.stddev
            if isinstance(state["mean"], tuple):
                state["mean"] = list(state["mean"])
            out["initial_state"] = state
        if self.epsilons:
            out["epsilons"] = list(self.epsilons)
        if self.tolerance is not None:
            out["tolerance"] = self.tolerance
        out["repetitions"] = self.repetitions
        out["reference_factor"] = self.reference_factor
        if self.regularity is not None:
            out["regularity"] = {"M": self.regularity[0], "N": self.regularity[1]}
        out["estimate_regularity"] = self.estimate_regularity
        if self.box is not None:
            out["box"] = [list(self.box[0]), list(self.box[1])]
        out["jobs"] = self.jobs
        output = {k: v for k, v in (("csv", self.csv_path), ("json", self.json_path), ("traces", self.traces_path)) if v}
        if output:
            out["output"] = output
        return out


def _unknown(keys, allowed, where):
    extra = sorted(set(keys) - allowed)
    if extra:
        raise ConfigError(f"{where}: unknown key(s) {', '.join(extra)}")


def _field_id(ref) -> str:
    if isinstance(ref, str):
        return ref
    if not isinstance(ref, dict):
        raise ConfigError(f"field entry must be a string or an object, got {type(ref).__name__}")
    if "id" in ref:
        return str(ref["id"])
    kind = ref.get("kind", "field")
    return f"{kind}:{ref['variant']}" if kind == "analytic" and "variant" in ref else str(kind)


def parse_config(data: dict) -> ExperimentConfig:
    """Validate a parsed JSON config; unknown keys are rejected."""
    if not isinstance(data, dict):
        raise ConfigError("config must be a JSON object")
    _unknown(data, _TOP_KEYS, "config")
    if ("field" in data) == ("fields" in data):
        raise ConfigError("config needs exactly one of 'field' or 'fields'")
    refs = data["fields"] if "fields" in data else [data["field"]]
    if not isinstance(refs, list) or not refs:
        raise ConfigError("'fields' must be a non-empty list")
    sources = []
    for ref in refs:
        fid = _field_id(ref)
        if isinstance(ref, dict):
            ref = {k: v for k, v in ref.items() if k != "id"}
        sources.append(FieldSource(ref, fid))

    kw: dict = {"fields": tuple(sources)}
    if "steps" in data and "nodes" in data:
        raise ConfigError("give either 'steps' or 'nodes', not both")
    if "steps" in data:
        steps = data["steps"]
        steps = [steps] if isinstance(steps, int) else steps
        if not isinstance(steps, list) or not all(isinstance(k, int) and not isinstance(k, bool) for k in steps):
            raise ConfigError("'steps' must be an integer or a list of integers")
        kw["steps"] = tuple(steps)
    if "nodes" in data:
        kw["nodes"] = tuple(float(t) for t in data["nodes"])

    state = data.get("initial_state", {"sampler": "gaussian"})
    if not isinstance(state, dict):
        raise ConfigError("'initial_state' must be an object")
    _unknown(state, _STATE_KEYS, "initial_state")
    if "vector" in state:
        if "sampler" in state:
            raise ConfigError("initial_state: give 'vector' or 'sampler', not both")
        kw["initial_vector"] = tuple(float(v) for v in state["vector"])
    elif state.get("sampler", "gaussian") != "gaussian":
        raise ConfigError(f"initial_state: unknown sampler {state['sampler']!r}")
    for key in ("seed", "dim"):
        if key in state:
            if not isinstance(state[key], int) or isinstance(state[key], bool):
                raise ConfigError(f"initial_state.{key} must be an integer")
            kw[key] = state[key]
    if "mean" in state:
        m = state["mean"]
        kw["mean"] = tuple(float(v) for v in m) if isinstance(m, list) else float(m)
    if "stddev" in state:
        kw["stddev"] = float(state["stddev"])

    if "epsilons" in data:
        eps = data["epsilons"]
        if eps == "default":
            eps = list(DEFAULT_EPSILONS)
        eps = [eps] if isinstance(eps, (int, float)) else eps
        kw["epsilons"] = tuple(float(e) for e in eps)
    if "tolerance" in data and data["tolerance"] is not None:
        kw["tolerance"] = float(data["tolerance"])
    for key in ("repetitions", "reference_factor", "jobs"):
        if key in data:
            kw[key] = int(data[key])
    if "regularity" in data and data["regularity"] is not None:
        reg = data["regularity"]
        _unknown(reg, {"M", "N"}, "regularity")
        kw["regularity"] = (float(reg["M"]), float(reg["N"]))
    if "estimate_regularity" in data:
        kw["estimate_regularity"] = bool(data["estimate_regularity"])
    if "box" in data and data["box"] is not None:
        lo, hi = data["box"]
        kw["box"] = (tuple(map(float, lo)), tuple(map(float, hi)))
    output = data.get("output", {})
    _unknown(output, _OUTPUT_KEYS, "output")
    kw["csv_path"] = output.get("csv")
    kw["json_path"] = output.get("json")
    kw["traces_path"] = output.get("traces")
    try:
        return ExperimentConfig(**kw)
    except (TypeError, ValueError) as exc:
        raise ConfigError(str(exc)) from None


def load_config(path) -> ExperimentConfig:
    path = Path(path)
    if not path.exists():
        raise ConfigError(f"config file not found: {path}")
    try:
        data = json.loads(path.read_text(encoding="utf-8"))
    except json.JSONDecodeError as exc:
        raise ConfigError(f"{path}: invalid JSON ({exc})") from None
    return parse_config(data)


# -- results ---------------------------------------------------------------


@dataclass(frozen=True)
class ResultRow:
    field_id: str
    K: int
    epsilon: float
    seed: int
    rounds_folded: int
    rounds_strict: int
    total_evals: int
    acceptance_fraction: float
    speedup_rounds: float
    final_spec_deviation: float
    max_spec_deviation: float
    bound: float
    bound_holds: bool
    speedup_vs_50: float

    @property
    def key(self) -> Tuple[str, int, str, int]:
        return (self.field_id, self.K, fmt_float(self.epsilon), self.seed)

    def sort_key(self):
        return (self.field_id, self.K, self.epsilon, self.seed)


COLUMNS = tuple(f.name for f in dc_fields(ResultRow))
_INT_COLUMNS = {"K", "seed", "rounds_folded", "rounds_strict", "total_evals"}


def fmt_float(x: float) -> str:
    return format(float(x), ".17g")


def _cell(value) -> str:
    if isinstance(value, bool):
        return "true" if value else "false"
    if isinstance(value, (int, np.integer)):
        return str(int(value))
    if isinstance(value, (float, np.floating)):
        return fmt_float(value)
    return str(value)


def rows_to_csv(rows: Iterable[ResultRow]) -> str:
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(COLUMNS)
    for row in rows:
        writer.writerow([_cell(getattr(row, c)) for c in COLUMNS])
    return buf.getvalue()


def write_csv(rows: Iterable[ResultRow], path) -> None:
    Path(path).parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w", encoding="utf-8", newline="") as fh:
        fh.write(rows_to_csv(rows))


def _parse_cell(column, text):
    if column == "field_id":
        return text
    if column == "bound_holds":
        if text not in ("true", "false"):
            raise ValueError(f"bound_holds must be true/false, got {text!r}")
        return text == "true"
    if column in _INT_COLUMNS:
        return int(text)
    return float(text)


def read_csv(path) -> List[ResultRow]:
    with open(path, encoding="utf-8", newline="") as fh:
        reader = csv.reader(fh)
        header = next(reader, None)
        if header is None or tuple(header) != COLUMNS:
            raise ValueError(f"{path}: header does not match result schema")
        return [ResultRow(*(_parse_cell(c, v) for c, v in zip(COLUMNS, rec))) for rec in reader if rec]


# -- running ---------------------------------------------------------------


@dataclass
class RunArtifacts:
    row: ResultRow
    bound: BoundReport
    trace: SpecTrace
    regularity: FieldRegularity


def resolve_regularity(
    field: VelocityField,
    x0,
    config: ExperimentConfig,
    trajectories: Sequence[np.ndarray] = (),
) -> FieldRegularity:
    """Regularity constants for the bound.

    ``M`` comes from the config override, the field's closed form, or (when
    neither exists) a sampled estimate. ``N`` is always measured along the
    trajectory through ``x0`` unless overridden.
    """
    if config.regularity is not None:
        return FieldRegularity(config.regularity[0], config.regularity[1], "declared", "declared")
    declared = field.declared_regularity()
    if declared is not None:
        M, m_prov = declared.M, "declared"
    else:
        M, m_prov = estimate_lipschitz(field, _estimation_box(field, config, trajectories), LIPSCHITZ_SAMPLES, 0), "estimated"
    N = estimate_curvature(field, x0, CURVATURE_RESOLUTION)
    return FieldRegularity(M, N, m_prov, "estimated")


def _estimation_box(field, config, trajectories):
    if config.box is not None:
        return np.array(config.box[0]), np.array(config.box[1])
    if isinstance(field, TabulatedField):
        return np.array([ax[0] for ax in field.axes[:-1]]), np.array([ax[-1] for ax in field.axes[:-1]])
    pts = np.vstack(trajectories) if len(trajectories) else np.zeros((1, field.dim))
    lo, hi = pts.min(axis=0), pts.max(axis=0)
    pad = 0.1 * np.maximum(hi - lo, 1.0)
    return lo - pad, hi + pad


def run_cell(
    field: VelocityField,
    field_id: str,
    grid: TimeGrid,
    epsilon: float,
    seed: int,
    config: ExperimentConfig,
    regularity: Optional[FieldRegularity] = None,
    baseline: Optional[Tuple[Trajectory, Trajectory]] = None,
) -> RunArtifacts:
    """Run full Euler, FlowCast and the reference for one sweep cell.

    ``baseline`` is a precomputed ``(euler, reference)`` pair for this
    (field, grid, seed); neither depends on epsilon.
    """
    x0 = config.initial_state(field, seed)
    spec_cfg = SpecConfig(epsilon)
    if baseline is None:
        euler, _ = full_euler(field, grid, x0)
        ref = _reference_on(field, x0, grid, config.reference_factor)
    else:
        euler, ref = baseline
    spec, stats, trace = flowcast(field, grid, x0, spec_cfg)
    if regularity is None:
        regularity = resolve_regularity(field, x0, config, (euler.states, ref.states))
    dev = deviation_report(spec, euler, ref)
    report = bound_check(regularity, grid, stats, spec_cfg, dev)
    row = ResultRow(
        field_id=field_id,
        K=grid.K,
        epsilon=float(epsilon),
        seed=seed,
        rounds_folded=stats.rounds_folded,
        rounds_strict=stats.rounds_strict,
        total_evals=stats.total_evals,
        acceptance_fraction=stats.acceptance_fraction,
        speedup_rounds=grid.K / stats.rounds_folded,
        final_spec_deviation=dev.final_spec_deviation,
        max_spec_deviation=dev.max_spec_deviation,
        bound=float(report.per_step_bound[-1]),
        bound_holds=report.bound_holds,
        speedup_vs_50=50 / stats.rounds_folded,
    )
    return RunArtifacts(row, report, trace, regularity)


def _reference_on(field, x0, grid, factor):
    if grid.is_uniform():
        return reference_solution(field, x0, factor * grid.K, grid=grid)
    # non-uniform grid: integrate each interval with `factor` RK4 substeps
    states = np.empty((grid.K + 1, field.dim))
    states[0] = x0
    for k in range(grid.K):
        x = states[k]
        t0, t1 = grid.nodes[k], grid.nodes[k + 1]
        h = (t1 - t0) / factor
        for i in range(factor):
            x = _rk4(field, x, t0 + i * h, h)
        states[k + 1] = x
    return Trajectory(grid, states)


def _tolerance_epsilons(field, config, seed) -> List[float]:
    if config.tolerance is None:
        return []
    if config.regularity is not None:
        M = config.regularity[0]
    else:
        declared = field.declared_regularity()
        if declared is not None:
            M = declared.M
        else:
            x0 = config.initial_state(field, seed)
            euler, _ = full_euler(field, config.grids()[0], x0)
            M = estimate_lipschitz(field, _estimation_box(field, config, (euler.states,)), LIPSCHITZ_SAMPLES, 0)
    return [epsilon_for_tolerance(config.tolerance, M)]


def _cells(config: ExperimentConfig, failures: List[dict]):
    for src in config.fields:
        eps = list(config.epsilons)
        try:
            extra = _tolerance_epsilons(src.load(), config, config.seed)
        except Exception as exc:  # unloadable field: one failure per planned cell
            for grid in config.grids():
                for e in eps:
                    for seed in config.seeds():
                        failures.append(_failure(src, grid, e, seed, exc))
            if not eps:
                failures.append(_failure(src, config.grids()[0], math.nan, config.seed, exc))
            continue
        for e in extra:
            if e not in eps:
                eps.append(e)
        for grid in config.grids():
            for e in eps:
                for seed in config.seeds():
                    yield src, grid, e, seed


def _failure(src, grid, eps, seed, exc) -> dict:
    return {
        "field_id": src.field_id,
        "K": grid.K,
        "epsilon": eps,
        "seed": seed,
        "error": f"{type(exc).__name__}: {exc}",
    }


def _run_group_task(args):
    """All epsilons of one (field, grid, seed); the baselines are shared."""
    src, grid, seed, epsilons, config = args
    out = []
    try:
        field = src.load()
        x0 = config.initial_state(field, seed)
        euler, _ = full_euler(field, grid, x0)
        ref = _reference_on(field, x0, grid, config.reference_factor)
        regularity = resolve_regularity(field, x0, config, (euler.states, ref.states))
    except Exception as exc:
        return [(None, _failure(src, grid, eps, seed, exc)) for eps in epsilons]
    for eps in epsilons:
        try:
            art = run_cell(field, src.field_id, grid, eps, seed, config, regularity, (euler, ref))
        except Exception as exc:  # recorded per row, the sweep continues
            out.append((None, _failure(src, grid, eps, seed, exc)))
        else:
            out.append((art, None))
    return out


@dataclass
class SweepResult:
    rows: List[ResultRow]
    artifacts: Dict[Tuple, RunArtifacts]
    failures: List[dict]
    skipped: int = 0


def sweep(config: ExperimentConfig, existing: Sequence[ResultRow] = (), jobs: Optional[int] = None) -> SweepResult:
    """Run the cross product of fields x grids x epsilons x seeds.

    Rows whose key is already in ``existing`` are kept and not re-run. The
    returned rows are sorted by (field, K, epsilon, seed).
    """
    done = {r.key: r for r in existing}
    skipped = 0
    failures: List[dict] = []
    groups: Dict[Tuple, list] = {}
    for src, grid, eps, seed in _cells(config, failures):
        key = (src.field_id, grid.K, fmt_float(eps), seed)
        if key in done:
            skipped += 1
            continue
        groups.setdefault((src.field_id, grid.K, seed), (src, grid, []))[2].append(eps)
    tasks = [(src, grid, seed, eps, config) for (_, _, seed), (src, grid, eps) in groups.items()]
    jobs = jobs or config.jobs
    if jobs > 1 and len(tasks) > 1:
        with ProcessPoolExecutor(max_workers=jobs) as pool:
            outcomes = [o for group in pool.map(_run_group_task, tasks) for o in group]
    else:
        outcomes = [o for t in tasks for o in _run_group_task(t)]

    rows = dict(done)
    artifacts = {}
    for art, failure in outcomes:
        if failure is not None:
            logger.warning("run failed: %s", failure)
            failures.append(failure)
            continue
        rows[art.row.key] = art.row
        artifacts[art.row.key] = art
    ordered = sorted(rows.values(), key=ResultRow.sort_key)
    return SweepResult(ordered, artifacts, failures, skipped)


def run_single(config: ExperimentConfig) -> List[ResultRow]:
    """Rows for every (epsilon, repetition) of a config; raises on failure."""
    result = sweep(config)
    if result.failures:
        f = result.failures[0]
        raise ExperimentError(
            f"run failed for field={f['field_id']} K={f['K']} epsilon={f['epsilon']} seed={f['seed']}: {f['error']}"
        )
    return result.rows


def sweep_report(config: ExperimentConfig, result: SweepResult) -> dict:
    """JSON companion: effective config, rows, bound reports and failures."""
    reports = []
    for key in sorted(result.artifacts, key=lambda k: (k[0], k[1], float(k[2]), k[3])):
        art = result.artifacts[key]
        reports.append({"key": {"field_id": key[0], "K": key[1], "epsilon": key[2], "seed": key[3]}, **art.bound.to_dict()})
    return {
        "config": config.to_dict(),
        "columns": list(COLUMNS),
        "rows": [{c: getattr(r, c) for c in COLUMNS} for r in result.rows],
        "bound_reports": reports,
        "failures": result.failures,
    }


def dump_json(obj, path) -> None:
    Path(path).parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        json.dump(obj, fh, indent=1, sort_keys=False, allow_nan=False, default=_json_default)
        fh.write("\n")


def _json_default(obj):
    if isinstance(obj, np.ndarray):
        return obj.tolist()
    if isinstance(obj, (np.floating, np.integer)):
        return obj.item()
    raise TypeError(f"cannot serialize {type(obj).__name__}")


def seed_means(rows: Sequence[ResultRow], column: str) -> Dict[float, float]:
    """Average of ``column`` over seeds for each epsilon."""
    acc: Dict[float, List[float]] = {}
    for r in rows:
        acc.setdefault(r.epsilon, []).append(getattr(r, column))
    return {e: float(np.mean(v)) for e, v in sorted(acc.items())}
