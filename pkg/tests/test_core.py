import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

from flowcast.core import FieldRegularity, RunStats, SpecConfig, TimeGrid, as_state, make_uniform_grid, mse


def scalar_mse(a, b):
    total = 0.0
    for x, y in zip(a, b):
        total += (float(x) - float(y)) ** 2
    return total / len(a)


def test_mse_identity():
    assert mse([1.0, 2.0, 3.0], [1.0, 2.0, 3.0]) == 0.0


def test_mse_hand_value():
    assert mse([0.0, 0.0], [2.0, 0.0]) == 2.0


def test_mse_matches_scalar_loop(rng):
    for _ in range(100):
        d = int(rng.integers(1, 17))
        a, b = rng.normal(size=d), rng.normal(size=d)
        expected = scalar_mse(a, b)
        assert mse(a, b) == pytest.approx(expected, rel=1e-12, abs=0.0)


def test_mse_dimension_mismatch():
    with pytest.raises(ValueError, match="mismatch"):
        mse([1.0, 2.0], [1.0])


finite = st.floats(min_value=-1e6, max_value=1e6, allow_nan=False)


@settings(max_examples=200, deadline=None)
@given(st.integers(1, 16).flatmap(lambda d: st.tuples(arrays(np.float64, d, elements=finite), arrays(np.float64, d, elements=finite))))
def test_mse_symmetric_and_zero_on_diagonal(pair):
    a, b = pair
    assert mse(a, b) == mse(b, a)
    assert mse(a, a) == 0.0
    assert mse(a, b) >= 0.0


@pytest.mark.parametrize(
    "K, nodes",
    [(1, [0.0, 1.0]), (4, [0.0, 0.25, 0.5, 0.75, 1.0])],
)
def test_uniform_grid_small(K, nodes):
    grid = make_uniform_grid(K)
    np.testing.assert_array_equal(grid.nodes, nodes)
    assert grid.K == K


def test_uniform_grid_fifty():
    grid = make_uniform_grid(50)
    assert len(grid) == 51
    assert grid.h == pytest.approx(0.02, abs=1e-15)


@pytest.mark.parametrize("K", [0, -3, 2.5])
def test_uniform_grid_rejects_bad_K(K):
    with pytest.raises(ValueError):
        make_uniform_grid(K)


@settings(max_examples=60, deadline=None)
@given(st.integers(1, 10_000))
def test_uniform_grid_invariants(K):
    grid = make_uniform_grid(K)
    assert grid.nodes[0] == 0.0 and grid.nodes[-1] == 1.0
    assert grid.K == K
    assert np.all(grid.steps > 0)
    assert grid.h == pytest.approx(1.0 / K, rel=1e-9)


@pytest.mark.parametrize(
    "nodes",
    [[0.0], [0.1, 1.0], [0.0, 0.9], [0.0, 0.5, 0.5, 1.0], [0.0, 0.6, 0.4, 1.0]],
)
def test_grid_invariant_violations(nodes):
    with pytest.raises(ValueError):
        TimeGrid(np.array(nodes))


def test_nonuniform_grid_h():
    grid = TimeGrid(np.array([0.0, 0.1, 0.5, 1.0]))
    assert grid.h == 0.5
    assert not grid.is_uniform()


def test_grid_is_immutable():
    grid = make_uniform_grid(3)
    with pytest.raises(ValueError):
        grid.nodes[1] = 0.5


def test_as_state_rejects_non_finite():
    with pytest.raises(ValueError, match="non-finite"):
        as_state([1.0, np.nan])
    with pytest.raises(ValueError, match="dimension"):
        as_state([1.0, 2.0], dim=3)


def test_runstats_invariants():
    stats = RunStats(K=10, rounds=3, total_evals=12, accepted_draft_steps=5, correction_rounds=1, rounds_strict=4)
    assert stats.acceptance_fraction == 0.5
    assert stats.speedup_rounds == 10 / 3
    with pytest.raises(ValueError):
        RunStats(K=10, rounds=3, total_evals=2, accepted_draft_steps=0, correction_rounds=0, rounds_strict=3)
    with pytest.raises(ValueError):
        RunStats(K=10, rounds=0, total_evals=0, accepted_draft_steps=0, correction_rounds=0, rounds_strict=0)


def test_spec_config_and_regularity_validation():
    assert SpecConfig(0.0).round_cap(50) == 200
    with pytest.raises(ValueError):
        SpecConfig(-1e-3)
    with pytest.raises(ValueError):
        FieldRegularity(-1.0, 0.0)
