"""The compiled kernels and the numpy fallback must agree."""

import numpy as np
import pytest

from flowcast import _backend, _kernels_py

compiled = _backend.available_backends().get("compiled")
needs_compiled = pytest.mark.skipif(compiled is None, reason="compiled kernels not built")


def test_backend_selected():
    assert _backend.BACKEND in ("python", "compiled")
    assert _backend.kernels is _backend.available_backends()[_backend.BACKEND]


def test_mse_kernels(kernel_backend, rng):
    a, b = rng.normal(size=7), rng.normal(size=7)
    assert kernel_backend.mse(a, b) == pytest.approx(np.mean((a - b) ** 2), rel=1e-14)


def test_anchor_mse_and_first_exceeding(kernel_backend, rng):
    anchor = rng.normal(size=3)
    vel = np.ascontiguousarray(anchor + rng.normal(scale=[[0.01], [0.02], [0.5], [0.01]], size=(4, 3)))
    errs = kernel_backend.anchor_mse(anchor, vel)
    np.testing.assert_allclose(errs, np.mean((vel - anchor) ** 2, axis=1), rtol=1e-14)
    assert kernel_backend.first_exceeding(errs, 0.01) == 2
    assert kernel_backend.first_exceeding(errs, 10.0) == -1
    assert kernel_backend.first_exceeding(np.zeros(3), 0.0) == -1


def test_extrapolate_is_fixed_velocity_euler(kernel_backend, rng):
    x, v = rng.normal(size=4), rng.normal(size=4)
    times = np.linspace(0.3, 1.0, 8)
    out = kernel_backend.extrapolate(x, v, times, 0.2)
    prev, t_prev = x, 0.2
    for i, t in enumerate(times):
        prev = prev + (t - t_prev) * v
        t_prev = t
        np.testing.assert_array_equal(out[i], prev)
        np.testing.assert_allclose(out[i], x + (t - 0.2) * v, rtol=0, atol=1e-14)


def _grid_case(rng, ndim=3, out=2):
    axes = [np.sort(rng.uniform(-2, 2, size=int(n))) for n in rng.integers(2, 6, size=ndim)]
    values = rng.normal(size=tuple(a.size for a in axes) + (out,))
    return axes, values


def test_multilinear_node_exact(kernel_backend, rng):
    axes, values = _grid_case(rng)
    mesh = np.meshgrid(*axes, indexing="ij")
    pts = np.stack([m.reshape(-1) for m in mesh], axis=1)
    got = kernel_backend.multilinear(axes, values, pts)
    np.testing.assert_array_equal(got, values.reshape(-1, values.shape[-1]))


@needs_compiled
def test_multilinear_backends_agree(rng):
    for _ in range(20):
        axes, values = _grid_case(rng)
        pts = rng.uniform(-2.5, 2.5, size=(50, len(axes)))
        np.testing.assert_allclose(
            compiled.multilinear(axes, values, pts), _kernels_py.multilinear(axes, values, pts), rtol=0, atol=1e-13
        )


@needs_compiled
def test_scalar_kernels_backends_agree(rng):
    anchor = rng.normal(size=5)
    vel = np.ascontiguousarray(rng.normal(size=(30, 5)))
    np.testing.assert_allclose(compiled.anchor_mse(anchor, vel), _kernels_py.anchor_mse(anchor, vel), rtol=1e-14)
    times = np.linspace(0.0, 1.0, 30)
    np.testing.assert_array_equal(
        compiled.extrapolate(anchor, vel[0], times, 0.1), _kernels_py.extrapolate(anchor, vel[0], times, 0.1)
    )
