"""Concrete velocity fields and regularity estimators.

Analytic families (constant, linear, rotation, Gaussian bridge) carry closed
form Lipschitz and curvature constants. :class:`TabulatedField` and
:class:`TinyMLPField` are loaded from JSON field files.
"""

from __future__ import annotations

import json
import math
from pathlib import Path
from typing import Optional, Sequence

import numpy as np

from ._backend import kernels
from .core import FieldRegularity, VelocityField, as_state


class FieldFileError(ValueError):
    """Raised when a field file cannot be parsed or violates the schema."""


def _readonly(a) -> np.ndarray:
    a = np.array(a, dtype=np.float64)
    a.setflags(write=False)
    return a


class ConstantField(VelocityField):
    """``v(x, t) = c``. Euler is exact and speculative drafts are never wrong."""

    def __init__(self, c):
        self.c = as_state(c, name="c")
        self.dim = self.c.size
        self.name = "constant"

    def eval(self, x, t):
        self._check(x, t)
        return self.c.copy()

    def eval_many(self, xs, ts):
        return np.tile(self.c, (len(xs), 1))

    def declared_regularity(self):
        return FieldRegularity(0.0, 0.0)

    def to_json(self):
        return {"kind": "analytic", "variant": "constant", "c": self.c.tolist()}


class LinearField(VelocityField):
    """``v(x, t) = A x + b``.

    ``M`` is the spectral norm of ``A``. Along any trajectory ``x'' = A (A x + b)``,
    so ``N = |A| (|A| R + |b|)`` holds while the trajectory stays in the ball of
    radius ``domain_radius``.
    """

    def __init__(self, A, b=None, domain_radius: float = 1.0):
        A = np.array(A, dtype=np.float64)
        if A.ndim == 0:
            A = A.reshape(1, 1)
        if A.ndim != 2 or A.shape[0] != A.shape[1]:
            raise ValueError(f"A must be square, got shape {A.shape}")
        self.A = _readonly(A)
        self.dim = A.shape[0]
        self.b = as_state(np.zeros(self.dim) if b is None else b, self.dim, name="b")
        if not domain_radius > 0:
            raise ValueError("domain_radius must be positive")
        self.domain_radius = float(domain_radius)
        self.name = "linear"

    def eval(self, x, t):
        x = self._check(x, t)
        return self.A @ x + self.b

    def eval_many(self, xs, ts):
        # row-wise so batch results match eval exactly
        return np.array([self.A @ x + self.b for x in xs]).reshape(len(xs), self.dim)

    def declared_regularity(self):
        M = float(np.linalg.norm(self.A, 2))
        N = M * (M * self.domain_radius + float(np.linalg.norm(self.b)))
        return FieldRegularity(M, N)

    def to_json(self):
        return {
            "kind": "analytic",
            "variant": "linear",
            "A": self.A.tolist(),
            "b": self.b.tolist(),
            "domain_radius": self.domain_radius,
        }


class RotationField(VelocityField):
    """Planar rotation ``v(x, t) = omega * (-x_2, x_1)``; orbits are circles."""

    def __init__(self, omega: float, domain_radius: float = 1.0):
        self.omega = float(omega)
        if not math.isfinite(self.omega):
            raise ValueError("omega must be finite")
        self.dim = 2
        self.domain_radius = float(domain_radius)
        self.name = "rotation"

    def eval(self, x, t):
        x = self._check(x, t)
        return np.array([-self.omega * x[1], self.omega * x[0]])

    def eval_many(self, xs, ts):
        xs = np.asarray(xs, dtype=np.float64).reshape(-1, 2)
        return np.stack([-self.omega * xs[:, 1], self.omega * xs[:, 0]], axis=1)

    def declared_regularity(self):
        w = abs(self.omega)
        return FieldRegularity(w, w * w * self.domain_radius)

    def to_json(self):
        return {"kind": "analytic", "variant": "rotation", "omega": self.omega, "domain_radius": self.domain_radius}


class GaussianBridgeField(VelocityField):
    """Marginal flow-matching field between ``N(0, s0^2 I)`` and ``N(mu, s1^2 I)``.

    For the independent linear interpolant ``x_t = (1-t) x_0 + t x_1`` the
    conditional expectation of ``x_1 - x_0`` given ``x_t = x`` is
    ``a(t) (x - t mu) + mu`` with ``a(t) = (t s1^2 - (1-t) s0^2) / var_t`` and
    ``var_t = (1-t)^2 s0^2 + t^2 s1^2``.
    """

    def __init__(self, mu, sigma0: float, sigma1: float, domain_radius: Optional[float] = None):
        self.mu = as_state(mu, name="mu")
        self.dim = self.mu.size
        if not (sigma0 > 0 and sigma1 > 0):
            raise ValueError("sigma0 and sigma1 must be positive")
        self.sigma0 = float(sigma0)
        self.sigma1 = float(sigma1)
        # ball of initial states for the declared N; default covers 4 sigma
        self.domain_radius = float(domain_radius) if domain_radius is not None else 4.0 * self.sigma0
        self.name = "gaussian_bridge"

    def var(self, t):
        return (1.0 - t) ** 2 * self.sigma0**2 + t**2 * self.sigma1**2

    def gain(self, t):
        return (t * self.sigma1**2 - (1.0 - t) * self.sigma0**2) / self.var(t)

    def eval(self, x, t):
        x = self._check(x, t)
        t = float(t)
        return self.gain(t) * (x - t * self.mu) + self.mu

    def eval_many(self, xs, ts):
        xs = np.asarray(xs, dtype=np.float64).reshape(-1, self.dim)
        ts = np.asarray(ts, dtype=np.float64)
        # python floats in gain() match eval; keep the scalar path per row
        gains = np.array([self.gain(float(t)) for t in ts])
        return gains[:, None] * (xs - ts[:, None] * self.mu[None, :]) + self.mu[None, :]

    def _profile(self, n=200_001):
        t = np.linspace(0.0, 1.0, n)
        g = self.var(t)
        dg = -2.0 * (1.0 - t) * self.sigma0**2 + 2.0 * t * self.sigma1**2
        ddg = 2.0 * (self.sigma0**2 + self.sigma1**2)
        # second derivative of sqrt(var_t)
        s2 = (2.0 * g * ddg - dg**2) / (4.0 * g**1.5)
        return t, np.abs(self.gain(t)), np.abs(s2)

    def declared_regularity(self):
        # trajectories are x(t) = t mu + x0 sqrt(var_t) / s0, so x'' = x0 (sqrt var)'' / s0
        _, gain, s2 = self._profile()
        M = float(gain.max())
        N = self.domain_radius * float(s2.max()) / self.sigma0
        return FieldRegularity(M, N)

    def exact_solution(self, x0, t):
        """Closed-form trajectory through ``x0`` at time ``t``."""
        x0 = np.asarray(x0, dtype=np.float64)
        return t * self.mu + x0 * math.sqrt(self.var(t)) / self.sigma0

    def to_json(self):
        return {
            "kind": "analytic",
            "variant": "gaussian_bridge",
            "mu": self.mu.tolist(),
            "sigma0": self.sigma0,
            "sigma1": self.sigma1,
            "domain_radius": self.domain_radius,
        }


class TabulatedField(VelocityField):
    """Velocity sampled on a rectilinear grid over ``R^d x [0, 1]``.

    ``axes`` holds one strictly increasing node array per state coordinate
    followed by the time axis. ``values`` has shape ``(n_1, ..., n_d, n_t, d)``.
    Evaluation is multilinear; queries outside the box are clamped to it.
    """

    def __init__(self, axes: Sequence, values):
        axes = [np.array(a, dtype=np.float64).reshape(-1) for a in axes]
        if len(axes) < 2:
            raise FieldFileError("tabulated field needs at least one state axis and a time axis")
        for i, ax in enumerate(axes):
            if ax.size < 2:
                raise FieldFileError(f"axes[{i}] needs at least 2 nodes, got {ax.size}")
            if not np.all(np.isfinite(ax)):
                raise FieldFileError(f"axes[{i}] contains non-finite nodes")
            bad = np.flatnonzero(np.diff(ax) <= 0)
            if bad.size:
                raise FieldFileError(
                    f"axes[{i}] is not strictly increasing at index {bad[0] + 1} "
                    f"({ax[bad[0]]} -> {ax[bad[0] + 1]})"
                )
        dim = len(axes) - 1
        values = np.array(values, dtype=np.float64)
        expected = tuple(ax.size for ax in axes) + (dim,)
        if values.shape != expected:
            raise FieldFileError(f"values has shape {values.shape}, expected {expected}")
        if not np.all(np.isfinite(values)):
            raise FieldFileError("values contains non-finite entries")
        self.axes = [_readonly(ax) for ax in axes]
        self.values = _readonly(values)
        self.dim = dim
        self.name = "tabulated"

    def eval(self, x, t):
        x = self._check(x, t)
        point = np.append(x, float(t))[None, :]
        return kernels.multilinear(self.axes, self.values, point)[0]

    def eval_many(self, xs, ts):
        xs = np.asarray(xs, dtype=np.float64).reshape(-1, self.dim)
        points = np.column_stack([xs, np.asarray(ts, dtype=np.float64)])
        return kernels.multilinear(self.axes, self.values, points)

    def batch_eval(self, pairs):
        pairs = list(pairs)
        if not pairs:
            return []
        xs = np.array([self._check(x, t) for x, t in pairs])
        return list(self.eval_many(xs, [t for _, t in pairs]))

    def to_json(self):
        return {"kind": "tabulated", "axes": [ax.tolist() for ax in self.axes], "values": self.values.tolist()}

    @classmethod
    def from_field(cls, field: VelocityField, axes: Sequence) -> "TabulatedField":
        """Sample ``field`` on the nodes of ``axes`` (state axes then time)."""
        axes = [np.asarray(a, dtype=np.float64) for a in axes]
        if len(axes) != field.dim + 1:
            raise ValueError(f"need {field.dim + 1} axes for a {field.dim}-d field, got {len(axes)}")
        mesh = np.meshgrid(*axes, indexing="ij")
        pts = np.stack([m.reshape(-1) for m in mesh], axis=1)
        vals = field.eval_many(pts[:, :-1], pts[:, -1])
        return cls(axes, vals.reshape(tuple(a.size for a in axes) + (field.dim,)))


_ACTIVATIONS = ("tanh", "identity")


class TinyMLPField(VelocityField):
    """Small fully connected network on the input ``x`` concatenated with ``t``.

    ``layers`` is a list of ``(weights, bias, activation)`` with weights of shape
    ``(out, in)``. The last layer must use the identity activation.
    """

    def __init__(self, layers):
        parsed = []
        prev = None
        for i, (w, b, act) in enumerate(layers):
            w = np.array(w, dtype=np.float64)
            b = np.array(b, dtype=np.float64).reshape(-1)
            if w.ndim != 2:
                raise FieldFileError(f"layers[{i}].weights must be 2-D, got shape {w.shape}")
            if b.shape != (w.shape[0],):
                raise FieldFileError(f"layers[{i}].bias has length {b.size}, expected {w.shape[0]}")
            if prev is not None and w.shape[1] != prev:
                raise FieldFileError(f"layers[{i}].weights expects {w.shape[1]} inputs, previous layer gives {prev}")
            if act not in _ACTIVATIONS:
                raise FieldFileError(f"layers[{i}].activation {act!r} not in {_ACTIVATIONS}")
            if not (np.all(np.isfinite(w)) and np.all(np.isfinite(b))):
                raise FieldFileError(f"layers[{i}] contains non-finite parameters")
            parsed.append((_readonly(w), _readonly(b), act))
            prev = w.shape[0]
        if not parsed:
            raise FieldFileError("mlp needs at least one layer")
        if parsed[-1][2] != "identity":
            raise FieldFileError("final mlp layer must use the identity activation")
        dim = parsed[-1][0].shape[0]
        if parsed[0][0].shape[1] != dim + 1:
            raise FieldFileError(f"first layer expects {parsed[0][0].shape[1]} inputs, state+time is {dim + 1}")
        self.layers = parsed
        self.dim = dim
        self.name = "mlp"

    def _forward(self, h):
        # explicit accumulation over inputs: independent of batch size, unlike BLAS
        for w, b, act in self.layers:
            out = np.broadcast_to(b, (h.shape[0], b.size)).copy()
            for j in range(w.shape[1]):
                out += h[:, j : j + 1] * w[:, j][None, :]
            h = np.tanh(out) if act == "tanh" else out
        return h

    def eval(self, x, t):
        x = self._check(x, t)
        return self._forward(np.append(x, float(t))[None, :])[0]

    def eval_many(self, xs, ts):
        xs = np.asarray(xs, dtype=np.float64).reshape(-1, self.dim)
        return self._forward(np.column_stack([xs, np.asarray(ts, dtype=np.float64)]))

    def batch_eval(self, pairs):
        pairs = list(pairs)
        if not pairs:
            return []
        xs = np.array([self._check(x, t) for x, t in pairs])
        return list(self.eval_many(xs, [t for _, t in pairs]))

    def to_json(self):
        return {
            "kind": "mlp",
            "layers": [{"weights": w.tolist(), "bias": b.tolist(), "activation": a} for w, b, a in self.layers],
        }

    @classmethod
    def random(cls, dim: int, hidden: int = 16, scale: float = 0.5, seed: int = 0) -> "TinyMLPField":
        rng = np.random.Generator(np.random.PCG64(seed))
        w1 = rng.normal(0.0, scale, (hidden, dim + 1))
        w2 = rng.normal(0.0, scale, (dim, hidden))
        return cls([(w1, rng.normal(0.0, scale, hidden), "tanh"), (w2, rng.normal(0.0, scale, dim), "identity")])


# -- field files -----------------------------------------------------------


def _require(obj, key, where):
    if key not in obj:
        raise FieldFileError(f"{where}: missing key {key!r}")
    return obj[key]


def field_from_dict(data: dict) -> VelocityField:
    """Build a field from the parsed JSON object of a field file."""
    if not isinstance(data, dict):
        raise FieldFileError("field file must contain a JSON object")
    kind = _require(data, "kind", "field")
    if kind == "tabulated":
        axes = _require(data, "axes", "tabulated")
        values = _require(data, "values", "tabulated")
        if not isinstance(axes, list) or not all(isinstance(a, list) for a in axes):
            raise FieldFileError("tabulated: 'axes' must be a list of node arrays")
        try:
            values = np.array(values, dtype=np.float64)
        except (TypeError, ValueError) as exc:
            raise FieldFileError(f"tabulated: 'values' is not a rectangular numeric array ({exc})") from None
        return TabulatedField(axes, values)
    if kind == "mlp":
        layers = _require(data, "layers", "mlp")
        if not isinstance(layers, list):
            raise FieldFileError("mlp: 'layers' must be a list")
        parsed = []
        for i, layer in enumerate(layers):
            where = f"mlp.layers[{i}]"
            if not isinstance(layer, dict):
                raise FieldFileError(f"{where} must be an object")
            try:
                w = np.array(_require(layer, "weights", where), dtype=np.float64)
                b = np.array(_require(layer, "bias", where), dtype=np.float64)
            except (TypeError, ValueError) as exc:
                raise FieldFileError(f"{where}: non-numeric or ragged parameters ({exc})") from None
            parsed.append((w, b, _require(layer, "activation", where)))
        return TinyMLPField(parsed)
    if kind == "analytic":
        variant = _require(data, "variant", "analytic")
        try:
            if variant == "constant":
                return ConstantField(_require(data, "c", "analytic.constant"))
            if variant == "linear":
                return LinearField(
                    _require(data, "A", "analytic.linear"), data.get("b"), data.get("domain_radius", 1.0)
                )
            if variant == "rotation":
                return RotationField(_require(data, "omega", "analytic.rotation"), data.get("domain_radius", 1.0))
            if variant == "gaussian_bridge":
                return GaussianBridgeField(
                    _require(data, "mu", "analytic.gaussian_bridge"),
                    _require(data, "sigma0", "analytic.gaussian_bridge"),
                    _require(data, "sigma1", "analytic.gaussian_bridge"),
                    data.get("domain_radius"),
                )
        except FieldFileError:
            raise
        except (TypeError, ValueError) as exc:
            raise FieldFileError(f"analytic.{variant}: {exc}") from None
        raise FieldFileError(f"analytic: unknown variant {variant!r}")
    raise FieldFileError(f"unknown field kind {kind!r}")


def load_field(path) -> VelocityField:
    path = Path(path)
    try:
        text = path.read_text(encoding="utf-8")
    except FileNotFoundError:
        raise FieldFileError(f"field file not found: {path}") from None
    try:
        data = json.loads(text)
    except json.JSONDecodeError as exc:
        raise FieldFileError(f"{path}: invalid JSON ({exc})") from None
    return field_from_dict(data)


def load_tabulated(path) -> TabulatedField:
    field = load_field(path)
    if not isinstance(field, TabulatedField):
        raise FieldFileError(f"{path}: expected kind 'tabulated', got {field.to_json()['kind']!r}")
    return field


def save_field(field: VelocityField, path) -> None:
    Path(path).write_text(json.dumps(field.to_json()) + "\n", encoding="utf-8")


# -- built-in aliases ------------------------------------------------------

FIELD_ALIASES = {
    "constant2d": lambda: ConstantField([1.0, -1.0]),
    "linear-contract": lambda: LinearField(-np.eye(2), np.zeros(2), domain_radius=1.0),
    "rotation": lambda: RotationField(1.0, domain_radius=1.0),
    "gauss-bridge": lambda: GaussianBridgeField([3.0, 0.0], 1.0, 1.0),
    "gauss-bridge-complex": lambda: GaussianBridgeField([3.0, 0.0], 1.0, 0.1),
}


def resolve_field(ref: str) -> VelocityField:
    """Resolve an alias name, ``tabulated:<path>``, ``mlp:<path>`` or a file path."""
    if ref in FIELD_ALIASES:
        return FIELD_ALIASES[ref]()
    for prefix in ("tabulated:", "mlp:", "file:"):
        if ref.startswith(prefix):
            field = load_field(ref[len(prefix) :])
            if prefix != "file:" and field.to_json()["kind"] != prefix[:-1]:
                raise FieldFileError(f"{ref}: file holds a {field.to_json()['kind']!r} field")
            return field
    if Path(ref).suffix == ".json":
        return load_field(ref)
    raise FieldFileError(f"unknown field {ref!r}; aliases are {', '.join(sorted(FIELD_ALIASES))}")


# -- regularity estimation -------------------------------------------------


def estimate_lipschitz(field: VelocityField, box, samples: int, rng_seed: int, rel_step: float = 1e-3) -> float:
    """Sampled lower estimate of the Lipschitz constant of ``v`` in ``x``.

    Draws ``samples`` points uniformly in ``box = (lo, hi)`` and times in
    ``[0, 1]``, perturbs each by a random direction of length ``rel_step``
    times the box diagonal, and returns the largest secant slope.  Secant
    slopes never exceed the true constant on a convex domain.
    """
    if samples < 2:
        raise ValueError("estimate_lipschitz needs samples >= 2")
    lo = np.asarray(box[0], dtype=np.float64).reshape(-1)
    hi = np.asarray(box[1], dtype=np.float64).reshape(-1)
    if lo.shape != (field.dim,) or hi.shape != (field.dim,):
        raise ValueError(f"box bounds must have dimension {field.dim}")
    if np.any(hi <= lo):
        raise ValueError("degenerate box: every side must have positive length")
    rng = np.random.Generator(np.random.PCG64(rng_seed))
    x = lo + (hi - lo) * rng.random((samples, field.dim))
    t = rng.random(samples)
    direction = rng.normal(size=(samples, field.dim))
    direction /= np.linalg.norm(direction, axis=1, keepdims=True)
    step = rel_step * float(np.linalg.norm(hi - lo))
    x2 = x + step * direction
    delta = np.linalg.norm(x2 - x, axis=1)
    dv = np.linalg.norm(field.eval_many(x2, t) - field.eval_many(x, t), axis=1)
    return float(np.max(dv / delta))


def estimate_curvature(field: VelocityField, x0, resolution: int) -> float:
    """Estimate ``max |x''(t)|`` along the trajectory through ``x0``.

    The trajectory comes from an RK4 reference with ``resolution`` steps; the
    second derivative is a finite difference of ``v(x(t), t)`` (central in the
    interior, second-order one-sided at the ends).
    """
    from .integrator import reference_solution

    if resolution < 8:
        raise ValueError("estimate_curvature needs resolution >= 8")
    traj = reference_solution(field, x0, resolution)
    ts = traj.grid.nodes
    vel = field.eval_many(traj.states, ts)
    h = 1.0 / resolution
    acc = np.empty_like(vel)
    acc[1:-1] = (vel[2:] - vel[:-2]) / (2.0 * h)
    acc[0] = (-3.0 * vel[0] + 4.0 * vel[1] - vel[2]) / (2.0 * h)
    acc[-1] = (3.0 * vel[-1] - 4.0 * vel[-2] + vel[-3]) / (2.0 * h)
    return float(np.max(np.linalg.norm(acc, axis=1)))
