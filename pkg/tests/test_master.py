import dataclasses

import numpy as np
import pytest

from lqmfg import (GridMismatch, IndexOutOfRange, TimeGrid, TimeOutOfRange,
                   compare_nce_master, lift_pi, master_feedback,
                   master_residual, nce_feedback, residual_sample,
                   solve_master, solve_nce)
from lqmfg.ode import BlowUpReport, MatrixPath

from helpers import decoupled_scalar, zero_weight


def test_terminal_pins(scalar_master, scalar_model, scalar_grid):
    lifted = lift_pi(scalar_model)
    M = scalar_grid.M
    assert np.array_equal(scalar_master.Pd0.at(M), lifted.Q0f_pi)
    assert np.array_equal(scalar_master.sd0.at(M), -lifted.eta0f_pi)
    e0, ef = scalar_model.eta0f, scalar_model.etaf
    assert scalar_master.rd0.at(M) == e0 @ scalar_model.Q0f @ e0
    assert scalar_master.rd.at(M)[0] == ef @ scalar_model.Qf @ ef


def test_matches_nce_at_every_node(scalar_nce, scalar_master):
    report = compare_nce_master(scalar_nce, scalar_master, tol=1e-9)
    assert report.passed, report.summary()
    assert set(report.diffs) == {"P0", "s0", "P1", "s1", "Abar", "Gbar",
                                 "mbar"}


def test_matches_nce_two_dimensional(twodim_model, twodim_nce, scalar_grid):
    master = solve_master(twodim_model, scalar_grid)
    report = compare_nce_master(twodim_nce, master, tol=1e-9)
    assert report.passed, report.summary()


def test_compare_rejects_mismatched_grids(scalar_nce, scalar_model):
    other = solve_master(scalar_model, TimeGrid(M=200, T=1.0))
    with pytest.raises(GridMismatch):
        compare_nce_master(scalar_nce, other)


def test_residual_small_on_solved_model(scalar_model, scalar_master):
    rng = np.random.default_rng(42)
    worst = 0.0
    for _ in range(50):
        t = float(rng.uniform(0.05, 0.95))
        kappa = int(rng.integers(0, scalar_model.K + 1))
        s = residual_sample(scalar_model, scalar_master, t,
                            rng.normal(size=1), rng.normal(size=1),
                            rng.normal(size=1), kappa)
        worst = max(worst, abs(s.residual))
    assert worst <= 1e-6


def test_residual_detects_corrupted_kernel(scalar_model, scalar_master):
    rng = np.random.default_rng(7)
    samples = [(float(rng.uniform(0.1, 0.9)), rng.normal(size=1),
                rng.normal(size=1), rng.normal(size=1),
                int(rng.integers(0, 2))) for _ in range(40)]

    def worst(sol):
        return max(abs(master_residual(scalar_model, sol,
                                       (t, x0, zk, zbar, kappa)))
                   for t, x0, zk, zbar, kappa in samples)

    clean = worst(scalar_master)
    bad = scalar_master.Pd0.values.copy()
    bad[:, 0, 0] += 0.01
    corrupted = dataclasses.replace(
        scalar_master, Pd0=MatrixPath(scalar_master.grid, bad))
    assert worst(corrupted) >= 100.0 * max(clean, 1e-12)


def test_residual_argument_validation(scalar_model, scalar_master):
    x = np.array([0.1])
    with pytest.raises(TimeOutOfRange):
        master_residual(scalar_model, scalar_master, (0.0, x, x, x, 0))
    with pytest.raises(TimeOutOfRange):
        master_residual(scalar_model, scalar_master, (1.0, x, x, x, 0))
    with pytest.raises(IndexOutOfRange):
        master_residual(scalar_model, scalar_master, (0.5, x, x, x, 2))


def test_feedback_agrees_with_nce_route(scalar_model, scalar_nce,
                                        scalar_master):
    rng = np.random.default_rng(3)
    for _ in range(25):
        t = float(rng.uniform(0.0, 1.0))
        x0, zk, zbar = rng.normal(size=(3, 1))
        a0, a1 = nce_feedback(scalar_nce, scalar_model, t, x0, zk, zbar, 1)
        b0, b1 = master_feedback(scalar_master, scalar_model, t, x0, zk,
                                 zbar, 1)
        assert np.abs(a0 - b0).max() < 1e-10
        assert np.abs(a1 - b1).max() < 1e-10


def test_zero_weight_constant_term_vanishes():
    model = zero_weight()
    grid = TimeGrid(M=100, T=1.0)
    sol = solve_master(model, grid)
    assert not sol.rd0.values.any()
    assert not sol.rd.values.any()


def test_constant_term_collects_noise_for_pure_terminal():
    # Decoupled scalar model, running weights removed: the only sources for
    # the constant term are the Brownian trace terms, so
    # r0(t) = D0^2 * int_t^T exp(-rho (u - t)) P0,11(u) du.
    base = decoupled_scalar(rho=0.0)
    grid = TimeGrid(M=800, T=1.0)
    sol = solve_master(base, grid)
    p11 = sol.Pd0.values[:, 0, 0]
    d0sq = base.D0[0, 0] ** 2
    # trapezoid on the solved path, backward cumulative
    h = grid.h
    integral = np.concatenate(
        [((p11[1:] + p11[:-1]) * 0.5 * h)[::-1].cumsum()[::-1], [0.0]])
    expected = d0sq * integral
    # eta terms vanish; compare on every node
    assert np.abs(sol.rd0.values - expected).max() < 1e-5

    # decoupling kills the minor kernel's x0 block, so only its own noise
    # accumulates
    q11 = sol.Pd.values[:, 0, 0, 0]
    dsq = base.D[0, 0] ** 2
    minor_int = np.concatenate(
        [((q11[1:] + q11[:-1]) * 0.5 * h)[::-1].cumsum()[::-1], [0.0]])
    assert np.abs(sol.rd.values[:, 0] - dsq * minor_int).max() < 1e-5


def test_blowup_matches_nce_verdict(blowup_models, scalar_grid):
    for model in blowup_models.values():
        a = solve_nce(model, scalar_grid)
        b = solve_master(model, scalar_grid)
        assert isinstance(a, BlowUpReport)
        assert isinstance(b, BlowUpReport)
        assert abs(a.escape_node - b.escape_node) <= 2
