import numpy as np
import pytest

from phaseless.elliptic import (VolumeGrid, discrete_laplacian, poisson_solve_ball,
                                residual_check)
from phaseless.errors import ConfigError, ConvergenceError, ShapeMismatchError
from phaseless.geometry import BallConfig
from phaseless.phantom import eval_beta, eval_laplacian_beta, single_bump


def _manufactured(pts):
    """beta = sin(pi |x|^2) vanishes on the unit sphere; returns (beta, lap beta)."""
    r2 = np.sum(pts ** 2, axis=-1)
    beta = np.where(r2 < 1, np.sin(np.pi * r2), 0.0)
    lap = np.where(r2 < 1, 6 * np.pi * np.cos(np.pi * r2) - 4 * np.pi ** 2 * r2 * np.sin(np.pi * r2),
                   0.0)
    return beta, lap


def _solve_manufactured(n):
    cfg = BallConfig(1.0, 0.8, n)
    q = VolumeGrid.from_function(lambda p: _manufactured(p)[1], cfg)
    beta = poisson_solve_ball(q, cfg, rtol=1e-10, warn_outside=False)
    ref = _manufactured(q.points())[0]
    return beta, q, ref, cfg


def test_second_order_convergence():
    errs = []
    for n in (16, 32, 64):
        beta, q, ref, cfg = _solve_manufactured(n)
        assert residual_check(q, beta, cfg) <= 1e-8
        errs.append(np.max(np.abs(beta.values - ref)))
    assert errs[0] / errs[1] >= 3.0
    assert errs[1] / errs[2] >= 3.0


def test_quadratic_converges_at_second_order():
    errs = []
    for n in (16, 32, 64):
        cfg = BallConfig(1.0, 0.8, n)
        q = VolumeGrid.from_function(lambda p: np.full(p.shape[:-1], -6.0), cfg)
        beta = poisson_solve_ball(q, cfg, rtol=1e-12, warn_outside=False)
        inside = q.mask(1.0)
        errs.append(np.max(np.abs(beta.values - (1.0 - q.radius() ** 2))[inside]))
        assert np.all(beta.values[~inside] == 0.0)
    assert errs[0] / errs[1] >= 3.0 and errs[1] / errs[2] >= 3.0


def test_zero_source_gives_zero():
    cfg = BallConfig(1.0, 0.8, 16)
    beta = poisson_solve_ball(VolumeGrid.empty(cfg), cfg)
    assert np.all(beta.values == 0.0)
    assert residual_check(VolumeGrid.empty(cfg), beta, cfg) == 0.0


def test_maximum_principle():
    # lap beta >= 0 with zero boundary values forces beta <= 0
    cfg = BallConfig(1.0, 0.8, 24)
    q = VolumeGrid.from_function(lambda p: np.exp(-8 * np.sum((p - 0.2) ** 2, axis=-1)), cfg)
    q.values[~q.mask(0.8)] = 0.0
    beta = poisson_solve_ball(q, cfg)
    assert np.max(beta.values) <= 1e-14
    assert np.min(beta.values) < 0


def test_bump_recovered_from_its_laplacian():
    cfg = BallConfig(1.0, 0.8, 48)
    p = single_bump(cfg, center=(0.1, -0.05, 0.05))
    q = VolumeGrid.from_function(lambda x: eval_laplacian_beta(p, x), cfg)
    beta = poisson_solve_ball(q, cfg)
    ref = eval_beta(p, q.points())
    assert np.linalg.norm(beta.values - ref) / np.linalg.norm(ref) < 0.02
    hist = beta.meta["residual_history"]
    assert hist[-1] <= 1e-8 and len(hist) > 1
    np.testing.assert_allclose(discrete_laplacian(beta, cfg)[q.mask(0.95)],
                               q.values[q.mask(0.95)], atol=1e-6 * np.abs(q.values).max())


def test_failures_are_typed():
    cfg = BallConfig(1.0, 0.8, 16)
    q = VolumeGrid.from_function(lambda p: _manufactured(p)[1], cfg)
    q.values[~q.mask(0.8)] = 0.0
    with pytest.raises(ConvergenceError) as exc:
        poisson_solve_ball(q, cfg, max_iter=3)
    assert len(exc.value.history) == 3
    bad = q.like(q.values.copy())
    bad.values[3, 3, 3] = np.nan
    with pytest.raises(ConfigError):
        poisson_solve_ball(bad, cfg)
    with pytest.raises(ShapeMismatchError):
        residual_check(q, VolumeGrid.empty(BallConfig(1.0, 0.8, 8)), cfg)


def test_warns_on_source_outside_support():
    cfg = BallConfig(1.0, 0.5, 16)
    q = VolumeGrid.from_function(lambda p: np.ones(p.shape[:-1]), cfg)
    with pytest.warns(UserWarning, match="outside the support"):
        poisson_solve_ball(q, cfg)


def test_volume_grid_basics():
    cfg = BallConfig(2.0, 1.0, 8)
    g = VolumeGrid.empty(cfg)
    assert g.spacing == 0.5 and g.origin == (-1.75, -1.75, -1.75)
    assert g.points().shape == (8, 8, 8, 3)
    assert g.same_grid(g.like(np.ones(g.shape)))
    with pytest.raises(ConfigError):
        VolumeGrid(np.zeros((4, 4)), 0.1, (0, 0, 0))
    with pytest.raises(ConfigError):
        VolumeGrid(np.zeros((4, 4, 4)), 0.0, (0, 0, 0))


def test_convergence_is_judged_on_the_true_residual():
    cfg = BallConfig(1.0, 0.8, 16)
    q = VolumeGrid.from_function(lambda p: eval_laplacian_beta(single_bump(cfg), p), cfg)
    with pytest.raises(ConvergenceError):
        poisson_solve_ball(q, cfg, rtol=1e-30, max_iter=200)
    beta = poisson_solve_ball(q, cfg, rtol=1e-12)
    assert residual_check(q, beta, cfg) <= 1e-12
