"""Samplers: forward Euler, speculative FlowCast, and an RK4 reference.

FlowCast drafts the remaining trajectory from the current anchor by holding
the anchor velocity constant, verifies every draft in a single batched model
call, and accepts the longest prefix whose velocity MSE against the anchor
velocity stays within ``epsilon``.  On the first rejected index ``j`` the last
accepted draft takes a plain Euler step (its velocity is already known from
verification) and ``j`` becomes the new anchor.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field as dc_field
from typing import List, Optional, Tuple

import numpy as np

from ._backend import kernels
from .core import RunStats, SpecConfig, TimeGrid, VelocityField, as_state, make_uniform_grid

logger = logging.getLogger(__name__)


class IntegrationError(RuntimeError):
    """A sampler produced a non-finite state or could not make progress."""

    def __init__(self, message, step=None, round_index=None):
        super().__init__(message)
        self.step = step
        self.round_index = round_index


@dataclass(frozen=True)
class Trajectory:
    grid: TimeGrid
    states: np.ndarray  # (K + 1, d)

    def __post_init__(self):
        states = np.array(self.states, dtype=np.float64)
        if states.ndim != 2 or states.shape[0] != len(self.grid):
            raise ValueError(f"states shape {states.shape} does not match grid with {len(self.grid)} nodes")
        states.setflags(write=False)
        object.__setattr__(self, "states", states)

    @property
    def final(self) -> np.ndarray:
        return self.states[-1]

    @property
    def dim(self) -> int:
        return self.states.shape[1]


@dataclass
class RoundRecord:
    """One verification round.

    ``outcome`` is ``"all_accepted"`` or ``"rejected"``; for a rejection
    ``rejected_at`` is the grid index ``j`` of the first draft with error above
    epsilon.
    """

    anchor_index: int
    anchor_time: float
    anchor_state: np.ndarray
    anchor_velocity: np.ndarray
    drafted_indices: List[int]
    drafted_states: np.ndarray
    verification_errors: np.ndarray
    outcome: str
    rejected_at: Optional[int] = None

    def to_dict(self) -> dict:
        return {
            "anchor_index": self.anchor_index,
            "anchor_time": self.anchor_time,
            "anchor_state": self.anchor_state.tolist(),
            "anchor_velocity": self.anchor_velocity.tolist(),
            "drafted_indices": list(self.drafted_indices),
            "drafted_states": self.drafted_states.tolist(),
            "verification_errors": self.verification_errors.tolist(),
            "outcome": self.outcome,
            "rejected_at": self.rejected_at,
        }


@dataclass
class SpecTrace:
    epsilon: float
    rounds: List[RoundRecord] = dc_field(default_factory=list)

    def anchor_indices(self) -> List[int]:
        return [r.anchor_index for r in self.rounds]

    def to_dict(self) -> dict:
        return {"epsilon": self.epsilon, "rounds": [r.to_dict() for r in self.rounds]}


def _finite_or_raise(state, what, step, round_index=None):
    if not np.all(np.isfinite(state)):
        where = f"step {step}" if round_index is None else f"round {round_index}, index {step}"
        raise IntegrationError(f"non-finite {what} at {where}", step=step, round_index=round_index)


def full_euler(field: VelocityField, grid: TimeGrid, x0) -> Tuple[Trajectory, RunStats]:
    """Forward Euler with one model call per step."""
    x = as_state(x0, field.dim, name="x0")
    nodes = grid.nodes
    steps = grid.steps
    states = np.empty((grid.K + 1, field.dim))
    states[0] = x
    for k in range(grid.K):
        v = field.eval(states[k], nodes[k])
        states[k + 1] = states[k] + steps[k] * v
        _finite_or_raise(states[k + 1], "state", k + 1)
    stats = RunStats(
        K=grid.K, rounds=grid.K, total_evals=grid.K, accepted_draft_steps=0, correction_rounds=0, rounds_strict=grid.K
    )
    return Trajectory(grid, states), stats


def flowcast(
    field: VelocityField, grid: TimeGrid, x0, config: SpecConfig
) -> Tuple[Trajectory, RunStats, SpecTrace]:
    """Speculative sampling with constant-velocity drafts.

    Cost accounting: the initial anchor evaluation is one round, and each
    verification batch is one round.  After a rejection the new anchor needs a
    fresh velocity before drafting; ``RunStats.rounds`` folds that call into the
    following verification round, ``RunStats.rounds_strict`` charges it
    separately.  ``accepted_draft_steps`` counts grid steps taken with a reused
    (not freshly evaluated) velocity, so a fully accepted draft from anchor
    ``m`` contributes ``K - m - 1`` steps.

    With ``config.literal_reanchor`` the anchor moves to ``j - 1`` instead of
    ``j`` and its velocity is recomputed there.  That variant stalls when the
    very first draft is rejected; it is kept for comparison and stops with an
    :class:`IntegrationError` once ``max_rounds`` is exhausted.
    """
    x = as_state(x0, field.dim, name="x0")
    K = grid.K
    nodes = grid.nodes
    eps = float(config.epsilon)
    cap = config.round_cap(K)

    states = np.empty((K + 1, field.dim))
    states[0] = x
    trace = SpecTrace(eps)

    m = 0
    v_m = np.asarray(field.eval(states[0], nodes[0]), dtype=np.float64)
    _finite_or_raise(v_m, "velocity", 0, 1)
    rounds = 1
    strict = 1
    evals = 1
    accepted = 0
    corrections = 0

    while m < K:
        if rounds >= cap:
            raise IntegrationError(f"max_rounds={cap} exceeded at anchor {m}", step=m, round_index=rounds)
        idx = np.arange(m + 1, K + 1)
        drafts = kernels.extrapolate(states[m], v_m, nodes[m + 1 :], float(nodes[m]))
        for row, k in enumerate(idx):
            _finite_or_raise(drafts[row], "draft state", int(k), rounds + 1)
        vel = np.ascontiguousarray(field.eval_many(drafts, nodes[m + 1 :]), dtype=np.float64)
        errors = kernels.anchor_mse(v_m, vel)
        rounds += 1
        strict += 1
        evals += idx.size
        first = kernels.first_exceeding(errors, eps)

        record = RoundRecord(
            anchor_index=m,
            anchor_time=float(nodes[m]),
            anchor_state=states[m].copy(),
            anchor_velocity=v_m.copy(),
            drafted_indices=idx.tolist(),
            drafted_states=drafts,
            verification_errors=errors,
            outcome="all_accepted" if first < 0 else "rejected",
            rejected_at=None if first < 0 else int(m + 1 + first),
        )
        trace.rounds.append(record)

        if first < 0:
            states[m + 1 :] = drafts
            accepted += K - m - 1
            m = K
            break

        j = m + 1 + first
        corrections += 1
        # drafts m+1 .. j-1 are accepted as they stand
        states[m + 1 : j] = drafts[: j - m - 1]
        accepted += max(0, j - m - 2)
        # last accepted point steps with its own verified velocity
        v_prev = v_m if j - 1 == m else vel[j - m - 2]
        states[j] = states[j - 1] + (nodes[j] - nodes[j - 1]) * v_prev
        _finite_or_raise(states[j], "corrected state", j, rounds)

        if config.literal_reanchor:
            m = j - 1
        else:
            m = j
        if m == K:
            break
        v_m = np.asarray(field.eval(states[m], nodes[m]), dtype=np.float64)
        _finite_or_raise(v_m, "anchor velocity", m, rounds + 1)
        evals += 1
        strict += 1

    stats = RunStats(
        K=K,
        rounds=rounds,
        total_evals=evals,
        accepted_draft_steps=accepted,
        correction_rounds=corrections,
        rounds_strict=strict,
    )
    return Trajectory(grid, states), stats, trace


def _rk4(field, x, t, h):
    k1 = field.eval(x, t)
    k2 = field.eval(x + 0.5 * h * k1, t + 0.5 * h)
    k3 = field.eval(x + 0.5 * h * k2, t + 0.5 * h)
    k4 = field.eval(x + h * k3, t + h)
    return x + (h / 6.0) * (k1 + 2.0 * k2 + 2.0 * k3 + k4)


def reference_solution(field: VelocityField, x0, fine_steps: int, grid: Optional[TimeGrid] = None) -> Trajectory:
    """Classical RK4 on a uniform grid of ``fine_steps`` steps.

    With ``grid`` the result is restricted to its nodes; ``grid`` must be
    uniform with ``fine_steps`` a multiple of its ``K``.
    """
    if fine_steps < 1:
        raise ValueError("fine_steps must be positive")
    if grid is not None:
        if fine_steps % grid.K:
            raise ValueError(f"fine_steps={fine_steps} is not a multiple of K={grid.K}")
        if not grid.is_uniform():
            raise ValueError("reference restriction needs a uniform target grid")
    x = as_state(x0, field.dim, name="x0")
    fine = make_uniform_grid(fine_steps)
    h = 1.0 / fine_steps
    states = np.empty((fine_steps + 1, field.dim))
    states[0] = x
    for i in range(fine_steps):
        states[i + 1] = _rk4(field, states[i], fine.nodes[i], h)
        _finite_or_raise(states[i + 1], "reference state", i + 1)
    traj = Trajectory(fine, states)
    if grid is None:
        return traj
    return restrict(traj, grid)


def restrict(traj: Trajectory, grid: TimeGrid) -> Trajectory:
    """Sub-sample a fine uniform trajectory on the nodes of a coarser uniform grid."""
    stride, rem = divmod(traj.grid.K, grid.K)
    if rem:
        raise ValueError(f"fine grid K={traj.grid.K} is not divisible by target K={grid.K}")
    return Trajectory(grid, traj.states[::stride])
