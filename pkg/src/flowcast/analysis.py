"""Error-bound evaluation, threshold selection and deviation measurement.

All norms are Euclidean. Drafts are accepted on a *mean* squared velocity
error, so an accepted draft satisfies ``|v - v_anchor|_2 <= sqrt(d * eps)``;
:func:`bound_check` uses that converted radius wherever the bound needs the
norm of the velocity error.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import List

import numpy as np

from .core import FieldRegularity, RunStats, SpecConfig, TimeGrid
from .integrator import Trajectory

# serialized in place of an infinite tightness ratio
EXACT_MATCH = "exact"
UNBOUNDED = "unbounded"

# errors at or below ROUNDOFF * max(1, |state|) are floating-point noise
ROUNDOFF = 1e-12


def growth_factor(M: float, t: float) -> float:
    """``(exp(M t) - 1) / M``, with the limit ``t`` at ``M = 0``."""
    x = M * t
    if abs(x) < 1e-8:
        # series form; expm1(x) / M loses all precision once M*t underflows
        return float(t) * (1.0 + 0.5 * x)
    return math.expm1(x) / M


def lemma_bound(M: float, N: float, h: float, p: float, epsilon: float, t: float) -> float:
    """Global error bound ``(exp(M t) - 1) / (2 M) * (h N + 2 p sqrt(eps))``."""
    return 0.5 * growth_factor(M, t) * (h * N + 2.0 * p * math.sqrt(epsilon))


def epsilon_for_tolerance(q_d: float, M: float) -> float:
    """Largest MSE threshold keeping the speculative deviation within ``q_d``.

    Returns ``(q_d / (2 A))**2`` with ``A = (exp(M) - 1) / M`` (``A = 1`` at
    ``M = 0``).
    """
    if not q_d > 0:
        raise ValueError(f"tolerance q_d must be positive, got {q_d}")
    if M < 0:
        raise ValueError(f"M must be >= 0, got {M}")
    A = growth_factor(M, 1.0)
    return (q_d / (2.0 * A)) ** 2


def tolerance_for_epsilon(epsilon: float, M: float) -> float:
    """Inverse of :func:`epsilon_for_tolerance`."""
    return 2.0 * growth_factor(M, 1.0) * math.sqrt(epsilon)


@dataclass(frozen=True)
class DeviationReport:
    per_step_error: np.ndarray  # |x_ref(t_k) - x_spec_k|
    spec_deviation: np.ndarray  # |x_spec_k - x_euler_k|
    euler_error: np.ndarray  # |x_ref(t_k) - x_euler_k|
    dim: int
    scale: float = 1.0  # largest state norm seen, sets the round-off floor

    @property
    def noise_floor(self) -> float:
        return ROUNDOFF * max(1.0, self.scale)

    @property
    def max_error(self) -> float:
        return float(np.max(self.per_step_error))

    @property
    def final_error(self) -> float:
        return float(self.per_step_error[-1])

    @property
    def max_spec_deviation(self) -> float:
        return float(np.max(self.spec_deviation))

    @property
    def final_spec_deviation(self) -> float:
        return float(self.spec_deviation[-1])

    def to_dict(self) -> dict:
        return {
            "per_step_error": self.per_step_error.tolist(),
            "spec_deviation": self.spec_deviation.tolist(),
            "euler_error": self.euler_error.tolist(),
            "max_error": self.max_error,
            "final_error": self.final_error,
            "max_spec_deviation": self.max_spec_deviation,
            "final_spec_deviation": self.final_spec_deviation,
        }


def deviation_report(spec: Trajectory, euler: Trajectory, reference: Trajectory) -> DeviationReport:
    if not (spec.grid == euler.grid == reference.grid):
        raise ValueError("deviation_report: trajectories are on different grids")
    if not (spec.dim == euler.dim == reference.dim):
        raise ValueError("deviation_report: trajectories have different dimensions")
    return DeviationReport(
        per_step_error=np.linalg.norm(reference.states - spec.states, axis=1),
        spec_deviation=np.linalg.norm(spec.states - euler.states, axis=1),
        euler_error=np.linalg.norm(reference.states - euler.states, axis=1),
        dim=spec.dim,
        scale=float(max(np.abs(spec.states).max(), np.abs(reference.states).max()) * math.sqrt(spec.dim)),
    )


@dataclass(frozen=True)
class BoundReport:
    times: np.ndarray
    per_step_bound: np.ndarray
    empirical: DeviationReport
    tightness_ratio: np.ndarray  # inf where the empirical error is zero
    regularity: FieldRegularity
    h: float
    p: float
    epsilon: float
    velocity_radius: float  # sqrt(d * eps): norm radius of accepted velocity errors
    dim: int

    @property
    def bound_holds(self) -> bool:
        slack = self.empirical.noise_floor
        return bool(np.all(self.empirical.per_step_error <= self.per_step_bound + slack))

    @property
    def advisory(self) -> bool:
        """True when the bound rests on an estimated Lipschitz constant."""
        return self.regularity.provenance != "declared"

    @property
    def final_tightness(self) -> float:
        return float(self.tightness_ratio[-1])

    @property
    def max_tightness(self) -> float:
        finite = self.tightness_ratio[np.isfinite(self.tightness_ratio)]
        return float(finite.max()) if finite.size else math.inf

    def to_dict(self) -> dict:
        return {
            "bound_holds": self.bound_holds,
            "guarantee": "advisory" if self.advisory else "rigorous",
            "inputs": {
                "M": self.regularity.M,
                "N": self.regularity.N,
                "h": self.h,
                "p": self.p,
                "epsilon": self.epsilon,
                "dim": self.dim,
                "velocity_radius": self.velocity_radius,
                "provenance": {"M": self.regularity.provenance, "N": self.regularity.n_provenance},
            },
            "times": self.times.tolist(),
            "per_step_bound": self.per_step_bound.tolist(),
            "tightness_ratio": [_ratio_json(r, b) for r, b in zip(self.tightness_ratio, self.per_step_bound)],
            "max_tightness": _ratio_json(self.max_tightness, float(self.per_step_bound.max())),
            "empirical": self.empirical.to_dict(),
        }


def _ratio_json(ratio, bound):
    if math.isfinite(ratio):
        return float(ratio)
    return EXACT_MATCH if bound <= ROUNDOFF else UNBOUNDED


def tightness(bound: np.ndarray, empirical: np.ndarray, floor: float = 0.0) -> np.ndarray:
    """``bound / empirical`` per step; inf where the empirical error is at or below ``floor``."""
    out = np.full(bound.shape, math.inf)
    nz = empirical > floor
    out[nz] = bound[nz] / empirical[nz]
    return out


def bound_check(
    regularity: FieldRegularity,
    grid: TimeGrid,
    stats: RunStats,
    config: SpecConfig,
    deviation: DeviationReport,
    mse_to_norm: bool = True,
) -> BoundReport:
    """Evaluate the global error bound at every grid node against a measured run.

    ``p`` is the realised acceptance fraction. The velocity-error radius fed
    to the bound is ``sqrt(d * epsilon)``; ``mse_to_norm=False`` uses the raw
    threshold instead.
    """
    dim = deviation.dim
    radius_sq = (dim if mse_to_norm else 1) * config.epsilon
    h = grid.h
    p = stats.acceptance_fraction
    times = grid.nodes
    bound = np.array([lemma_bound(regularity.M, regularity.N, h, p, radius_sq, t) for t in times])
    return BoundReport(
        times=times.copy(),
        per_step_bound=bound,
        empirical=deviation,
        tightness_ratio=tightness(bound, deviation.per_step_error, deviation.noise_floor),
        regularity=regularity,
        h=h,
        p=p,
        epsilon=config.epsilon,
        velocity_radius=math.sqrt(radius_sq),
        dim=dim,
    )


def recursion_bound(M: float, N: float, h: float, p: float, epsilon: float, K: int) -> List[float]:
    """Unrolled one-step recursion ``E_{k+1} <= (1 + h M) E_k + h p sqrt(eps) + h^2 N / 2``.

    Never exceeds :func:`lemma_bound` on a uniform grid; used as a cross-check.
    """
    inc = h * p * math.sqrt(epsilon) + 0.5 * h * h * N
    out = [0.0]
    for _ in range(K):
        out.append((1.0 + h * M) * out[-1] + inc)
    return out
