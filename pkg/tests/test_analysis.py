import json
import math

import mpmath
import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from conftest import SHIPPED
from flowcast.analysis import (
    bound_check,
    deviation_report,
    epsilon_for_tolerance,
    growth_factor,
    lemma_bound,
    recursion_bound,
    tightness,
    tolerance_for_epsilon,
)
from flowcast.core import FieldRegularity, SpecConfig, make_uniform_grid
from flowcast.fields import ConstantField, LinearField
from flowcast.integrator import flowcast, full_euler, reference_solution

mpmath.mp.dps = 50


def oracle_bound(M, N, h, p, eps, t):
    M, N, h, p, eps, t = map(mpmath.mpf, (M, N, h, p, eps, t))
    g = t if M == 0 else mpmath.expm1(M * t) / M
    return float(g / 2 * (h * N + 2 * p * mpmath.sqrt(eps)))


def oracle_eps(q, M):
    q, M = mpmath.mpf(q), mpmath.mpf(M)
    A = 1 if M == 0 else mpmath.expm1(M) / M
    return float((q / (2 * A)) ** 2)


@pytest.mark.parametrize(
    "M,N,h,p,eps,t",
    [
        (1.0, 2.0, 0.02, 0.5, 1e-3, 1.0),
        (0.0, 1.0, 0.1, 0.0, 0.0, 1.0),
        (0.0, 3.0, 0.01, 1.0, 1e-2, 0.5),
        (5.0, 10.0, 1e-3, 0.9, 1e-6, 0.3),
        (1e-9, 1.0, 0.1, 0.1, 1e-4, 1.0),
        (2.5, 0.0, 0.05, 0.7, 0.04, 1.0),
    ],
)
def test_lemma_bound_matches_oracle(M, N, h, p, eps, t):
    assert lemma_bound(M, N, h, p, eps, t) == pytest.approx(oracle_bound(M, N, h, p, eps, t), rel=1e-12, abs=1e-300)


def test_lemma_bound_hand_example():
    # M = 1, t = 1: (e - 1)/2 * (0.1 * 2 + 2 * 0.5 * 0.1)
    assert lemma_bound(1.0, 2.0, 0.1, 0.5, 0.01, 1.0) == pytest.approx((math.e - 1) / 2 * 0.3, rel=1e-12)
    assert lemma_bound(0.0, 4.0, 0.5, 0.0, 0.0, 1.0) == 1.0
    assert lemma_bound(3.0, 1.0, 0.1, 1.0, 1.0, 0.0) == 0.0


@pytest.mark.parametrize("q,M", [(0.1, 1.0), (0.2, 0.0), (1e-3, 3.0), (0.5, 1e-10), (2.0, 10.0)])
def test_epsilon_for_tolerance_matches_oracle(q, M):
    assert epsilon_for_tolerance(q, M) == pytest.approx(oracle_eps(q, M), rel=1e-12)


def test_epsilon_for_tolerance_examples():
    assert epsilon_for_tolerance(0.2, 0.0) == pytest.approx(0.01, rel=1e-15)
    assert epsilon_for_tolerance(0.1, 1.0) == pytest.approx((0.05 / (math.e - 1)) ** 2, rel=1e-14)


@pytest.mark.parametrize("bad", [0.0, -1.0, float("nan")])
def test_epsilon_for_tolerance_rejects_bad_tolerance(bad):
    with pytest.raises(ValueError):
        epsilon_for_tolerance(bad, 1.0)


def test_epsilon_for_tolerance_rejects_negative_M():
    with pytest.raises(ValueError):
        epsilon_for_tolerance(0.1, -0.5)


@given(q=st.floats(1e-6, 10.0), M=st.floats(0.0, 20.0), c=st.floats(0.1, 10.0))
def test_epsilon_scales_quadratically_in_tolerance(q, M, c):
    assert epsilon_for_tolerance(c * q, M) == pytest.approx(c * c * epsilon_for_tolerance(q, M), rel=1e-12)


@given(q=st.floats(1e-6, 10.0), M1=st.floats(0.0, 20.0), M2=st.floats(0.0, 20.0))
def test_epsilon_non_increasing_in_M(q, M1, M2):
    lo, hi = sorted((M1, M2))
    assert epsilon_for_tolerance(q, hi) <= epsilon_for_tolerance(q, lo) * (1 + 1e-12)


@given(q=st.floats(1e-6, 10.0), M=st.floats(0.0, 20.0), p=st.floats(0.0, 1.0))
def test_threshold_keeps_speculative_term_within_tolerance(q, M, p):
    eps = epsilon_for_tolerance(q, M)
    assert growth_factor(M, 1.0) * p * math.sqrt(eps) <= q / 2 * (1 + 1e-12)
    assert tolerance_for_epsilon(eps, M) == pytest.approx(q, rel=1e-12)


@given(q=st.floats(1e-4, 1.0))
def test_threshold_continuous_at_zero_M(q):
    assert epsilon_for_tolerance(q, 1e-12) == pytest.approx(epsilon_for_tolerance(q, 0.0), rel=1e-10)


@settings(max_examples=200)
@given(
    M=st.floats(0.0, 10.0),
    N=st.floats(0.0, 100.0),
    h=st.floats(1e-4, 1.0),
    p=st.floats(0.0, 1.0),
    eps=st.floats(0.0, 1.0),
    t1=st.floats(0.0, 1.0),
    t2=st.floats(0.0, 1.0),
)
def test_lemma_bound_monotone(M, N, h, p, eps, t1, t2):
    lo, hi = sorted((t1, t2))
    b = lemma_bound(M, N, h, p, eps, lo)
    assert b >= 0
    assert b <= lemma_bound(M, N, h, p, eps, hi) * (1 + 1e-12)
    assert b <= lemma_bound(M, N * 2, h, p, eps, lo) * (1 + 1e-12)
    assert b <= lemma_bound(M + 1, N, h, p, eps, lo) * (1 + 1e-12) + 1e-300


@given(M=st.floats(0.0, 5.0), N=st.floats(0.0, 10.0), p=st.floats(0.0, 1.0), eps=st.floats(0.0, 0.1), K=st.integers(1, 200))
def test_recursion_never_exceeds_closed_form(M, N, p, eps, K):
    h = 1.0 / K
    rec = recursion_bound(M, N, h, p, eps, K)
    for k, e in enumerate(rec):
        closed = lemma_bound(M, N, h, p, eps, k * h)
        assert e <= closed * (1 + 1e-9) + 1e-15


def test_tightness_handles_zero_error():
    r = tightness(np.array([1.0, 2.0, 0.0]), np.array([0.5, 0.0, 0.0]))
    assert r[0] == 2.0 and math.isinf(r[1]) and math.isinf(r[2])
    r = tightness(np.array([1.0]), np.array([1e-14]), floor=1e-12)
    assert math.isinf(r[0])


# -- deviation and bound reports -----------------------------------------


@pytest.fixture(scope="module")
def decay_run():
    f = LinearField([[-1.0]])
    grid = make_uniform_grid(50)
    spec, stats, _ = flowcast(f, grid, [1.0], SpecConfig(1e-4))
    euler, _ = full_euler(f, grid, [1.0])
    ref = reference_solution(f, [1.0], 5000, grid=grid)
    return f, grid, spec, stats, euler, ref


def test_deviation_report_scalar_decay(decay_run):
    f, grid, spec, stats, euler, ref = decay_run
    dev = deviation_report(euler, euler, ref)
    expected = abs(math.exp(-1) - 0.98**50)
    assert dev.euler_error[-1] == pytest.approx(expected, rel=1e-6)
    assert expected == pytest.approx(3.7098e-3, rel=1e-4)
    assert dev.max_spec_deviation == 0.0
    np.testing.assert_array_equal(dev.per_step_error, dev.euler_error)


def test_deviation_report_rejects_mismatched_grids(decay_run):
    f, grid, spec, stats, euler, ref = decay_run
    other = reference_solution(f, [1.0], 100)
    with pytest.raises(ValueError, match="grids"):
        deviation_report(spec, euler, other)


def test_bound_report_holds_on_decay(decay_run):
    f, grid, spec, stats, euler, ref = decay_run
    reg = f.declared_regularity()
    rep = bound_check(reg, grid, stats, SpecConfig(1e-4), deviation_report(spec, euler, ref))
    assert rep.bound_holds
    assert not rep.advisory
    assert rep.velocity_radius == pytest.approx(1e-2)
    expected = [lemma_bound(reg.M, reg.N, 0.02, stats.acceptance_fraction, 1e-4, t) for t in grid.nodes]
    np.testing.assert_allclose(rep.per_step_bound, expected, rtol=1e-13)
    assert 1.0 <= rep.final_tightness < 100.0


def test_bound_report_fails_with_understated_regularity(decay_run):
    f, grid, spec, stats, euler, ref = decay_run
    rep = bound_check(FieldRegularity(0.0, 0.0), grid, stats, SpecConfig(0.0), deviation_report(spec, euler, ref))
    assert not rep.bound_holds


def test_mse_to_norm_conversion_uses_dimension():
    f = SHIPPED["linear"]
    grid = make_uniform_grid(20)
    x0 = [0.5, 0.5]
    spec, stats, _ = flowcast(f, grid, x0, SpecConfig(1e-3))
    euler, _ = full_euler(f, grid, x0)
    dev = deviation_report(spec, euler, reference_solution(f, x0, 2000, grid=grid))
    reg = f.declared_regularity()
    norm = bound_check(reg, grid, stats, SpecConfig(1e-3), dev)
    raw = bound_check(reg, grid, stats, SpecConfig(1e-3), dev, mse_to_norm=False)
    assert norm.velocity_radius == pytest.approx(math.sqrt(2e-3))
    assert raw.velocity_radius == pytest.approx(math.sqrt(1e-3))
    assert np.all(norm.per_step_bound >= raw.per_step_bound)


def test_constant_field_report_serializes_exact_sentinel():
    f = ConstantField([1.0, -1.0])
    grid = make_uniform_grid(10)
    x0 = [0.0, 0.0]
    spec, stats, _ = flowcast(f, grid, x0, SpecConfig(1e-2))
    euler, _ = full_euler(f, grid, x0)
    dev = deviation_report(spec, euler, reference_solution(f, x0, 100, grid=grid))
    rep = bound_check(FieldRegularity(0.0, 0.0), grid, stats, SpecConfig(0.0), dev)
    assert rep.bound_holds
    d = json.loads(json.dumps(rep.to_dict()))
    assert d["max_tightness"] == "exact"
    assert set(d["tightness_ratio"]) == {"exact"}
    assert d["guarantee"] == "rigorous"
    assert d["inputs"]["provenance"] == {"M": "declared", "N": "declared"}


def test_report_json_advisory_and_unbounded():
    f = SHIPPED["linear"]
    grid = make_uniform_grid(10)
    x0 = [1.0, 1.0]
    spec, stats, _ = flowcast(f, grid, x0, SpecConfig(0.0))
    euler, _ = full_euler(f, grid, x0)
    dev = deviation_report(spec, euler, euler)
    reg = FieldRegularity(1.0, 1.0, provenance="estimated")
    d = bound_check(reg, grid, stats, SpecConfig(0.0), dev).to_dict()
    assert d["guarantee"] == "advisory"
    assert d["tightness_ratio"][0] == "exact"
    assert d["tightness_ratio"][-1] == "unbounded"


@pytest.mark.parametrize("M", [5e-324, 1e-310, 1e-200, 1e-9])
def test_growth_factor_tiny_M_matches_limit(M):
    for t in (0.25, 1.0):
        assert growth_factor(M, t) == pytest.approx(oracle_bound(M, 2.0, 1.0, 0.0, 0.0, t), rel=1e-12)
