"""Shared types: state vectors, time grids, the velocity-field interface, run
statistics and the MSE primitive."""

from __future__ import annotations

from dataclasses import dataclass
from typing import Iterable, Optional, Sequence, Tuple

import numpy as np

from ._backend import kernels


def as_state(values, dim: Optional[int] = None, name: str = "state") -> np.ndarray:
    """Validate and return a read-only float64 state vector."""
    if np.ndim(values) > 1:
        raise ValueError(f"{name} must be one-dimensional, got shape {np.shape(values)}")
    arr = np.array(values, dtype=np.float64).reshape(-1)
    if arr.size < 1:
        raise ValueError(f"{name} must have dimension >= 1")
    if dim is not None and arr.size != dim:
        raise ValueError(f"{name} has dimension {arr.size}, expected {dim}")
    if not np.all(np.isfinite(arr)):
        raise ValueError(f"{name} contains non-finite entries")
    arr.setflags(write=False)
    return arr


def mse(a, b) -> float:
    """Mean over coordinates of the squared difference between ``a`` and ``b``."""
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    if a.ndim != 1 or a.shape != b.shape:
        raise ValueError(f"mse dimension mismatch: {a.shape} vs {b.shape}")
    if a.size == 0:
        raise ValueError("mse of empty vectors is undefined")
    return float(kernels.mse(np.ascontiguousarray(a), np.ascontiguousarray(b)))


@dataclass(frozen=True)
class TimeGrid:
    """Strictly increasing discretization of [0, 1].

    Nodes are stored as a read-only array. ``steps[k] = nodes[k+1] - nodes[k]``.
    """

    nodes: np.ndarray

    def __post_init__(self):
        nodes = np.array(self.nodes, dtype=np.float64).reshape(-1)
        if nodes.size < 2:
            raise ValueError("time grid needs at least two nodes (K >= 1)")
        if nodes[0] != 0.0 or nodes[-1] != 1.0:
            raise ValueError(f"time grid must start at 0 and end at 1, got [{nodes[0]}, {nodes[-1]}]")
        if not np.all(np.isfinite(nodes)):
            raise ValueError("time grid contains non-finite nodes")
        diffs = np.diff(nodes)
        if np.any(diffs <= 0.0):
            bad = int(np.argmax(diffs <= 0.0))
            raise ValueError(f"time grid not strictly increasing at node {bad + 1}")
        nodes.setflags(write=False)
        object.__setattr__(self, "nodes", nodes)

    @property
    def K(self) -> int:
        return self.nodes.size - 1

    @property
    def steps(self) -> np.ndarray:
        return np.diff(self.nodes)

    @property
    def h(self) -> float:
        return float(np.max(self.steps))

    def is_uniform(self) -> bool:
        return bool(np.array_equal(self.nodes, make_uniform_grid(self.K).nodes))

    def __len__(self) -> int:
        return self.nodes.size

    def __eq__(self, other) -> bool:
        return isinstance(other, TimeGrid) and np.array_equal(self.nodes, other.nodes)

    def __hash__(self) -> int:
        return hash(self.nodes.tobytes())


def make_uniform_grid(K: int) -> TimeGrid:
    """Uniform grid with nodes ``k / K`` for ``k = 0..K``."""
    if isinstance(K, bool) or int(K) != K or K < 1:
        raise ValueError(f"K must be a positive integer, got {K!r}")
    K = int(K)
    return TimeGrid(np.arange(K + 1, dtype=np.float64) / K)


@dataclass(frozen=True)
class FieldRegularity:
    """Lipschitz constant ``M`` and curvature bound ``N`` for a field.

    ``provenance`` describes ``M``; ``n_provenance`` describes ``N``.  Either is
    "declared" (closed form) or "estimated" (sampled, a lower estimate).
    """

    M: float
    N: float
    provenance: str = "declared"
    n_provenance: str = "declared"

    def __post_init__(self):
        if not (self.M >= 0.0 and self.N >= 0.0):
            raise ValueError(f"regularity constants must be >= 0, got M={self.M}, N={self.N}")
        for p in (self.provenance, self.n_provenance):
            if p not in ("declared", "estimated"):
                raise ValueError(f"unknown provenance {p!r}")

    def to_dict(self) -> dict:
        return {"M": self.M, "N": self.N, "provenance": self.provenance, "n_provenance": self.n_provenance}


class VelocityField:
    """Base class for velocity fields ``v(x, t)``.

    Subclasses implement :meth:`eval`; :meth:`batch_eval` defaults to a loop,
    and vectorised overrides must agree with :meth:`eval` bit for bit.
    Implementations are immutable, so concurrent calls are safe.
    """

    dim: int
    name: str = "field"

    def eval(self, x: np.ndarray, t: float) -> np.ndarray:
        raise NotImplementedError

    def batch_eval(self, pairs: Iterable[Tuple[np.ndarray, float]]) -> list:
        return [self.eval(x, t) for x, t in pairs]

    def eval_many(self, xs: np.ndarray, ts: Sequence[float]) -> np.ndarray:
        """Evaluate at rows of ``xs``; returns an array of the same shape."""
        out = self.batch_eval(list(zip(xs, ts)))
        return np.array(out, dtype=np.float64).reshape(len(out), self.dim)

    def declared_regularity(self) -> Optional[FieldRegularity]:
        return None

    def _check(self, x, t) -> np.ndarray:
        x = np.asarray(x, dtype=np.float64)
        if x.shape != (self.dim,):
            raise ValueError(f"{self.name}: state has shape {x.shape}, expected ({self.dim},)")
        return x

    def to_json(self) -> dict:
        raise NotImplementedError(f"{type(self).__name__} has no file representation")


@dataclass(frozen=True)
class SpecConfig:
    epsilon: float
    max_rounds: Optional[int] = None
    literal_reanchor: bool = False

    def __post_init__(self):
        if not (self.epsilon >= 0.0) or not np.isfinite(self.epsilon):
            raise ValueError(f"epsilon must be finite and >= 0, got {self.epsilon}")
        if self.max_rounds is not None and self.max_rounds < 1:
            raise ValueError("max_rounds must be positive")

    def round_cap(self, K: int) -> int:
        return self.max_rounds if self.max_rounds is not None else 4 * K


@dataclass(frozen=True)
class RunStats:
    """Cost accounting for one sampler run.

    ``rounds`` is the folded count of sequential model-call batches (anchor
    re-evaluation after a rejection shares the round of the next verification
    batch). ``rounds_strict`` charges that re-evaluation as its own round.
    """

    K: int
    rounds: int
    total_evals: int
    accepted_draft_steps: int
    correction_rounds: int
    rounds_strict: int

    def __post_init__(self):
        if self.rounds < 1 or self.total_evals < self.rounds:
            raise ValueError(f"inconsistent run stats: rounds={self.rounds}, total_evals={self.total_evals}")
        if not 0 <= self.accepted_draft_steps <= self.K:
            raise ValueError("accepted_draft_steps out of range")

    @property
    def rounds_folded(self) -> int:
        return self.rounds

    @property
    def acceptance_fraction(self) -> float:
        return self.accepted_draft_steps / self.K

    @property
    def speedup_rounds(self) -> float:
        return self.K / self.rounds

    def to_dict(self) -> dict:
        return {
            "K": self.K,
            "rounds_folded": self.rounds,
            "rounds_strict": self.rounds_strict,
            "total_evals": self.total_evals,
            "accepted_draft_steps": self.accepted_draft_steps,
            "correction_rounds": self.correction_rounds,
            "acceptance_fraction": self.acceptance_fraction,
        }
