import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from icd_sim.domain import BoxSet, ConfigurationError
from icd_sim.objectives import (GradientObjective, QuadraticObjective, compute_bounds, evaluate_sum,
                                gradient, split_quadratic)

coord = st.floats(-10, 10, allow_nan=False)


def test_gradient_examples(box):
    assert gradient(QuadraticObjective([2.0]), np.array([10.0]))[0] == 16
    assert gradient(QuadraticObjective([1.0]), np.array([1.0]))[0] == 0
    g = gradient(QuadraticObjective([3.0]), np.array([-10.0]))[0]
    assert g == -26
    assert compute_bounds(QuadraticObjective([3.0]), box).grad_bounds[0] == 26


def test_gradient_dimension_mismatch():
    with pytest.raises(ConfigurationError):
        gradient(QuadraticObjective([1.0, 2.0]), np.array([1.0]))


def test_bounds_single(box):
    b = compute_bounds(QuadraticObjective([1.0]), box)
    assert b.grad_bounds == (22.0,) and b.lipschitz == (2.0,)


def test_bounds_aggregate(box, three_quadratics):
    b = compute_bounds(three_quadratics, box)
    assert b.grad_bounds == (22.0, 24.0, 26.0)
    assert b.L_sum == 72 and b.N_sum == 6


def test_bounds_unit_box():
    b = compute_bounds(QuadraticObjective([0.0]), BoxSet.cube(-1, 1, 1))
    assert b.L_sum == 2 and b.N_sum == 2


def test_declared_bound_below_sup_rejected(box, three_quadratics):
    with pytest.raises(ConfigurationError, match="L_2"):
        compute_bounds(three_quadratics, box, declared_L=[22, 20, 26])
    compute_bounds(three_quadratics, box, declared_L=[30, 30, 30])


def test_scale_must_be_positive():
    with pytest.raises(ConfigurationError):
        QuadraticObjective([0.0], scale=0.0)


def test_evaluate_sum(three_quadratics):
    assert evaluate_sum(three_quadratics, np.array([2.0])) == 2
    assert evaluate_sum(three_quadratics, np.array([0.0])) == 14
    with pytest.raises(ConfigurationError):
        evaluate_sum([], np.array([0.0]))


def test_grid_argmin(three_quadratics):
    grid = np.linspace(-10, 10, 2001)[:, None]
    vals = sum(f.value(grid) for f in three_quadratics)
    assert abs(grid[np.argmin(vals), 0] - 2.0) <= 0.01


def test_closure_objective_bound_checked(box):
    f = GradientObjective(lambda x: float(x @ x), lambda x: 2 * x, 1, grad_bound=5.0, lipschitz=2.0)
    with pytest.raises(ConfigurationError):
        compute_bounds(f, box)
    f = GradientObjective(lambda x: float(x @ x), lambda x: 2 * x, 1, grad_bound=20.0, lipschitz=2.0)
    assert compute_bounds(f, box).L_sum == 20.0


def test_split_preserves_gradient_sum():
    f = QuadraticObjective([1.5, -2.0], scale=3.0)
    parts = split_quadratic(f, 4, np.random.default_rng(1))
    x = np.array([0.3, 0.7])
    assert np.allclose(sum(p.grad(x) for p in parts), f.grad(x), atol=1e-12)


@given(coord, coord, st.floats(0.1, 5), coord)
def test_finite_differences(c, x, a, _):
    f = QuadraticObjective([c], a)
    eps = 1e-4
    fd = (f.value(np.array([x + eps])) - f.value(np.array([x - eps]))) / (2 * eps)
    assert abs(fd - f.grad(np.array([x]))[0]) <= 1e-6 * max(1.0, abs(fd))


@given(st.lists(coord, min_size=2, max_size=2), st.lists(coord, min_size=2, max_size=2),
       st.lists(coord, min_size=2, max_size=2), st.floats(0.1, 5))
def test_lipschitz_and_convexity(c, x, y, a):
    f = QuadraticObjective(c, a)
    x, y = np.array(x), np.array(y)
    assert np.linalg.norm(f.grad(x) - f.grad(y)) <= f.lipschitz * np.linalg.norm(x - y) + 1e-9
    assert f.value(y) >= f.value(x) + f.grad(x) @ (y - x) - 1e-9
