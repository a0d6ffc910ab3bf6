import math

import numpy as np
import pytest

from lqmfg import (AsymmetryDrift, MatrixPath, NonFiniteField, TimeGrid,
                   integrate_backward, integrate_forward)
from lqmfg.ode import BlowUpReport

from helpers import riccati_closed_form


def test_zero_field_keeps_terminal():
    grid = TimeGrid(M=16, T=1.0)
    term = np.array([[1.0, 2.0], [3.0, 4.0]])
    path = integrate_backward(lambda t, w: np.zeros_like(w), term, grid)
    assert isinstance(path, MatrixPath)
    assert np.array_equal(path.at(grid.M), term)
    assert np.array_equal(path.at(0), term)


def test_linear_field_matches_exponential():
    c = 0.9
    grid = TimeGrid(M=200, T=1.0)
    term = np.array([2.0])
    path = integrate_backward(lambda t, w: c * w, term, grid)
    for j in (0, 50, 123):
        t = grid.nodes[j]
        expected = 2.0 * math.exp(c * (t - 1.0))
        assert path.at(j)[0] == pytest.approx(expected, abs=1e-9)


def test_terminal_is_stored_exactly():
    grid = TimeGrid(M=10, T=1.0)
    term = np.array([1.0 / 3.0, 2.0 / 7.0])
    path = integrate_backward(lambda t, w: np.sin(w), term, grid)
    assert np.array_equal(path.at(grid.M), term)


def test_quadratic_blowup_detected_before_half():
    # dp/d(T-t) = p^2 from p(T)=2 gives p = 2/(1-2(T-t)): pole at T-t=0.5.
    grid = TimeGrid(M=1000, T=1.0)
    res = integrate_backward(lambda t, w: -w * w, np.array([2.0]), grid)
    assert isinstance(res, BlowUpReport)
    t_escape = grid.nodes[res.escape_node]
    # the discrete state crosses the threshold within a node or two of the
    # pole, possibly one step past it
    assert abs(t_escape - 0.5) <= 2 * grid.h
    assert res.norm_at_escape > res.threshold


def test_threshold_is_configurable():
    grid = TimeGrid(M=100, T=1.0)
    res = integrate_backward(lambda t, w: -w, np.array([2.0]), grid,
                             threshold=2.5)
    assert isinstance(res, BlowUpReport)
    assert res.threshold == 2.5


def test_fourth_order_convergence_against_closed_form():
    a, b, r, q, qf, rho, T = 0.4, 1.0, 0.5, 0.8, 1.5, 0.2, 1.0
    exact = riccati_closed_form(a, b, r, q, qf, rho, T)(0.0)

    def field(t, w):
        p = w[0]
        return np.array([rho * p - 2.0 * a * p + (b * b / r) * p * p - q])

    errors = []
    for M in (25, 50, 100):
        grid = TimeGrid(M=M, T=T)
        path = integrate_backward(field, np.array([qf]), grid)
        errors.append(abs(path.at(0)[0] - exact))
    for coarse, fine in zip(errors, errors[1:]):
        assert 12.0 <= coarse / fine <= 20.0


def test_backward_then_forward_round_trip():
    def field(t, w):
        return np.array([0.3 * w[0] + math.sin(t), -0.2 * w[1]])

    grid = TimeGrid(M=200, T=1.0)
    back = integrate_backward(field, np.array([1.0, -0.5]), grid)
    fwd = integrate_forward(field, back.at(0), grid)
    assert np.abs(fwd.at(grid.M) - back.at(grid.M)).max() < 1e-8


def test_integration_is_deterministic():
    def field(t, w):
        return np.tanh(w) * 0.7

    grid = TimeGrid(M=100, T=1.0)
    a = integrate_backward(field, np.array([0.3, 0.9]), grid)
    b = integrate_backward(field, np.array([0.3, 0.9]), grid)
    assert np.array_equal(a.values, b.values)


def test_non_finite_field_raises():
    grid = TimeGrid(M=10, T=1.0)
    with pytest.raises(NonFiniteField):
        integrate_backward(lambda t, w: np.full_like(w, np.nan),
                           np.array([1.0]), grid)


def test_asymmetric_field_with_projection_raises_drift():
    grid = TimeGrid(M=10, T=1.0)
    skew = np.array([[0.0, 1.0], [-1.0, 0.0]])

    def sym(w):
        return (w + w.T) / 2.0

    with pytest.raises(AsymmetryDrift):
        integrate_backward(lambda t, w: skew, np.eye(2), grid,
                           symmetrize=sym)


def test_symmetric_projection_accepts_symmetric_field():
    grid = TimeGrid(M=50, T=1.0)

    def field(t, w):
        return -(w + w.T) / 2.0 * 0.4

    def sym(w):
        return (w + w.T) / 2.0

    path = integrate_backward(field, np.eye(2), grid, symmetrize=sym)
    assert isinstance(path, MatrixPath)
    assert np.allclose(path.at(0), path.at(0).T)


def test_matrix_path_interp_is_linear():
    grid = TimeGrid(M=4, T=1.0)
    vals = np.arange(5.0).reshape(5, 1)
    path = MatrixPath(grid, vals)
    assert path.interp(0.0)[0] == 0.0
    assert path.interp(1.0)[0] == 4.0
    assert path.interp(0.375)[0] == pytest.approx(1.5)


def test_matrix_path_rejects_wrong_node_count():
    grid = TimeGrid(M=4, T=1.0)
    with pytest.raises(ValueError):
        MatrixPath(grid, np.zeros((4, 1)))


def test_matrix_path_rejects_non_finite():
    grid = TimeGrid(M=1, T=1.0)
    with pytest.raises(ValueError):
        MatrixPath(grid, np.array([[np.inf], [0.0]]))


def test_forward_matches_closed_form():
    grid = TimeGrid(M=100, T=2.0)
    path = integrate_forward(lambda t, w: -0.5 * w, np.array([3.0]), grid)
    assert path.at(grid.M)[0] == pytest.approx(3.0 * math.exp(-1.0), abs=1e-9)
