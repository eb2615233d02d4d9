"""Volume grids and the Dirichlet problem ``lap(beta) = q`` in the ball ``|x| < B``.

The Laplacian uses the 7-point stencil on voxel centres.  Where a
neighbour falls outside the ball, the boundary is located at fraction
``theta`` of the spacing along that axis and the flux to it is
``(u_i - 0) / (theta h)``; this keeps the matrix symmetric positive
definite and the solution second-order accurate.  The system is solved
matrix-free by Jacobi-preconditioned conjugate gradients.
"""

from __future__ import annotations

import warnings
from dataclasses import dataclass, field

import numpy as np

from .errors import ConfigError, ConvergenceError, ShapeMismatchError


@dataclass
class VolumeGrid:
    """Scalar field on the voxel centres ``origin + i * spacing``.

    Parameters
    ----------
    values : ndarray, shape (n, n, n)
        Indexed ``[ix, iy, iz]``.
    spacing : float
    origin : tuple of float
        Centre of voxel ``(0, 0, 0)``.
    """

    values: np.ndarray
    spacing: float
    origin: tuple
    meta: dict = field(default_factory=dict)

    def __post_init__(self):
        self.values = np.asarray(self.values, dtype=float)
        self.origin = tuple(float(o) for o in self.origin)
        if self.values.ndim != 3:
            raise ConfigError("volume values must be 3-D")
        if not self.spacing > 0:
            raise ConfigError("spacing must be positive")

    @classmethod
    def empty(cls, cfg, n=None):
        """Zero volume with ``n`` voxels per axis spanning ``[-B, B]^3``."""
        n = int(cfg.grid_n if n is None else n)
        h = 2.0 * cfg.B / n
        o = -cfg.B + 0.5 * h
        return cls(np.zeros((n, n, n)), h, (o, o, o))

    @classmethod
    def from_function(cls, func, cfg, n=None):
        g = cls.empty(cfg, n)
        g.values = np.asarray(func(g.points()), dtype=float)
        return g

    @property
    def shape(self):
        return self.values.shape

    def axis(self, i):
        return self.origin[i] + self.spacing * np.arange(self.values.shape[i])

    def points(self):
        """Voxel-centre coordinates, shape (n, n, n, 3)."""
        return np.stack(np.meshgrid(self.axis(0), self.axis(1), self.axis(2),
                                    indexing="ij"), axis=-1)

    def radius(self):
        x, y, z = (self.axis(i) for i in range(3))
        return np.sqrt(x[:, None, None] ** 2 + y[None, :, None] ** 2 + z[None, None, :] ** 2)

    def mask(self, radius):
        return self.radius() < radius

    def like(self, values):
        return VolumeGrid(values, self.spacing, self.origin, dict(self.meta))

    def same_grid(self, other):
        return (self.shape == other.shape and np.isclose(self.spacing, other.spacing)
                and np.allclose(self.origin, other.origin))


def _shift(u, axis, sign):
    """Neighbour values ``u[i + sign]`` along ``axis`` with zero fill."""
    out = np.zeros_like(u)
    src = [slice(None)] * 3
    dst = [slice(None)] * 3
    if sign > 0:
        src[axis], dst[axis] = slice(1, None), slice(None, -1)
    else:
        src[axis], dst[axis] = slice(None, -1), slice(1, None)
    out[tuple(dst)] = u[tuple(src)]
    return out


class BallLaplacian:
    """Matrix-free ``-lap_h`` with homogeneous Dirichlet data on ``|x| = B``."""

    def __init__(self, grid, B, theta_min=1e-3):
        self.grid = grid
        self.B = float(B)
        self.inside = grid.mask(B)
        h = grid.spacing
        pts = [grid.axis(i) for i in range(3)]
        coords = np.meshgrid(*pts, indexing="ij")
        r2 = sum(c * c for c in coords)
        self.links = []
        diag = np.zeros(grid.shape)
        for ax in range(3):
            for sign in (1, -1):
                nb_in = _shift(self.inside.astype(float), ax, sign) > 0.5
                cut = self.inside & ~nb_in
                # distance to the sphere along the axis, in units of h
                b = sign * coords[ax]
                theta = (-b + np.sqrt(np.clip(b * b - (r2 - self.B ** 2), 0.0, None))) / h
                theta = np.clip(theta, theta_min, 1.0)
                diag += np.where(self.inside & nb_in, 1.0, 0.0)
                diag += np.where(cut, 1.0 / theta, 0.0)
                here = [slice(None)] * 3
                there = [slice(None)] * 3
                here[ax] = slice(None, -1) if sign > 0 else slice(1, None)
                there[ax] = slice(1, None) if sign > 0 else slice(None, -1)
                w = (self.inside & nb_in).astype(float) / (h * h)
                self.links.append((tuple(here), tuple(there), w[tuple(here)]))
        self.diag = diag / (h * h)

    def apply(self, u):
        # diag and link weights vanish outside the ball, so the result does too
        out = self.diag * u
        for here, there, w in self.links:
            out[here] -= w * u[there]
        return out


def poisson_solve_ball(q, cfg, rtol=1e-8, max_iter=None, warn_outside=True):
    """Solve ``lap(beta) = q`` in ``|x| < B`` with ``beta = 0`` on the sphere.

    Parameters
    ----------
    q : VolumeGrid
    cfg : BallConfig

    Returns
    -------
    VolumeGrid
        ``beta``; ``meta['residual_history']`` holds the relative residuals.

    Raises
    ------
    ConvergenceError
        Residual above ``rtol`` after ``max_iter`` iterations.
    """
    if not np.all(np.isfinite(q.values)):
        raise ConfigError("q contains non-finite values")
    op = BallLaplacian(q, cfg.B)
    if warn_outside:
        out = ~q.mask(cfg.R * (1 + 1e-9)) & op.inside
        if np.any(q.values[out] != 0.0):
            mass = np.abs(q.values[out]).sum() / max(np.abs(q.values).sum(), 1e-300)
            if mass > 1e-3:
                warnings.warn(f"{mass:.2%} of |q| lies outside the support ball", stacklevel=2)
    b = np.where(op.inside, -q.values, 0.0)
    bnorm = np.linalg.norm(b)
    x = np.zeros_like(b)
    history = []
    if bnorm == 0.0:
        return q.like(x)
    max_iter = int(max_iter or 20 * max(q.shape))
    minv = np.where(op.inside, 1.0 / np.where(op.diag > 0, op.diag, 1.0), 0.0)
    r = b.copy()
    z = minv * r
    p = z.copy()
    rz = np.vdot(r, z)
    for _ in range(max_iter):
        ap = op.apply(p)
        step = rz / np.vdot(p, ap)
        x += step * p
        r -= step * ap
        res = np.linalg.norm(r) / bnorm
        if res <= rtol:
            # the recursive residual drifts from b - A x near round-off
            r = b - op.apply(x)
            res = np.linalg.norm(r) / bnorm
            if res <= rtol:
                history.append(float(res))
                out = q.like(x)
                out.meta["residual_history"] = history
                return out
            history.append(float(res))
            z = minv * r
            rz = np.vdot(r, z)
            p = z.copy()
            continue
        history.append(float(res))
        z = minv * r
        rz_new = np.vdot(r, z)
        p = z + (rz_new / rz) * p
        rz = rz_new
    raise ConvergenceError(f"CG did not reach rtol={rtol} in {max_iter} iterations "
                           f"(residual {history[-1]:.3e})", residual=history[-1], history=history)


def discrete_laplacian(beta, cfg):
    """``lap_h(beta)`` with the solver's operator (zero outside the ball)."""
    return -BallLaplacian(beta, cfg.B).apply(beta.values)


def residual_check(q, beta, cfg=None):
    """``||lap_h beta - q|| / ||q||`` over the ball; 0 when both vanish."""
    if not q.same_grid(beta):
        raise ShapeMismatchError("q and beta live on different grids")
    # the grid spans [-B, B] per axis unless told otherwise
    B = cfg.B if cfg is not None else 0.5 * q.shape[0] * q.spacing
    op = BallLaplacian(q, B)
    r = np.where(op.inside, -op.apply(beta.values) - q.values, 0.0)
    qn = np.linalg.norm(np.where(op.inside, q.values, 0.0))
    rn = np.linalg.norm(r)
    if qn == 0.0:
        return 0.0 if rn == 0.0 else float("inf")
    return float(rn / qn)
