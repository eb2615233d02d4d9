"""Two-point ray tracing in the metric ``n(x) |dx|``.

Rays are integrated with classical RK4 using the projection
``l = <x - x_start, e>`` onto the chord direction ``e`` as the independent
variable, so every ray ends exactly on the plane through the target and a
fixed step count makes travel times smooth functions of the endpoints (the
amplitude needs second differences of them).  The launch direction is
found by damped Newton shooting on the 2-D transverse miss vector.
"""

from __future__ import annotations

import numpy as np

from .errors import CausticError, ConvergenceError, DegenerateChordError
from .phantom import eval_beta, eval_grad_beta


def _medium(p, x):
    n = np.sqrt(1.0 + eval_beta(p, x))
    return n, eval_grad_beta(p, x) / (2.0 * n[..., None])


def _rhs(p, x, mom, e):
    n, gn = _medium(p, x)
    t = mom / np.linalg.norm(mom, axis=-1, keepdims=True)
    q = np.sum(t * e, axis=-1, keepdims=True)
    return t / q, gn / q, n / q[..., 0]


def _trace(p, x0, mom0, e, length, n_steps):
    """Integrate rays from ``x0`` until their projection on ``e`` reaches
    ``length``.  Returns end point, end momentum and accumulated time."""
    h = (length / n_steps)[..., None]
    x, mom = x0.copy(), mom0.copy()
    tau = np.zeros(x.shape[:-1])
    for _ in range(n_steps):
        k1x, k1p, k1t = _rhs(p, x, mom, e)
        k2x, k2p, k2t = _rhs(p, x + 0.5 * h * k1x, mom + 0.5 * h * k1p, e)
        k3x, k3p, k3t = _rhs(p, x + 0.5 * h * k2x, mom + 0.5 * h * k2p, e)
        k4x, k4p, k4t = _rhs(p, x + h * k3x, mom + h * k3p, e)
        x = x + h / 6.0 * (k1x + 2 * k2x + 2 * k3x + k4x)
        mom = mom + h / 6.0 * (k1p + 2 * k2p + 2 * k3p + k4p)
        tau = tau + h[..., 0] / 6.0 * (k1t + 2 * k2t + 2 * k3t + k4t)
    return x, mom, tau


def _frame(e):
    helper = np.where(np.abs(e[:, :1]) < 0.9, np.array([[1.0, 0, 0]]), np.array([[0, 1.0, 0]]))
    e1 = np.cross(e, helper)
    e1 /= np.linalg.norm(e1, axis=1, keepdims=True)
    return e1, np.cross(e, e1)


def default_steps(p, dist):
    """Fixed RK4 step count: arc-length step ``a_min / 50``."""
    return int(np.ceil(np.max(dist) / (p.a_min / 50.0)))


def shoot(p, x, y, n_steps=None, tol=1e-10, max_iter=50, fd=1e-7):
    """Solve the two-point ray problem for many endpoint pairs.

    Parameters
    ----------
    x, y : ndarray, shape (m, 3)
    n_steps : int, optional
        RK4 steps per ray; defaults to :func:`default_steps`.
    tol : float
        Convergence threshold on the miss distance, in units of ``B``.

    Returns
    -------
    tau : ndarray, shape (m,)
        Travel times, first-order corrected for the residual miss.
    info : dict
        ``iterations``, ``miss`` and the launch directions.
    """
    x = np.atleast_2d(np.asarray(x, dtype=float))
    y = np.atleast_2d(np.asarray(y, dtype=float))
    d = np.linalg.norm(y - x, axis=1)
    if np.any(d == 0):
        raise DegenerateChordError("coincident endpoints")
    if n_steps is None:
        n_steps = default_steps(p, d)
    e = (y - x) / d[:, None]
    e1, e2 = _frame(e)
    n0 = np.sqrt(1.0 + eval_beta(p, x))
    m = x.shape[0]
    B = p.cfg.B

    def launch(a, rows):
        t = e[rows] + a[:, :1] * e1[rows] + a[:, 1:] * e2[rows]
        t /= np.linalg.norm(t, axis=1, keepdims=True)
        return n0[rows, None] * t

    def run(a, rows):
        xe, pe, te = _trace(p, x[rows], launch(a, rows), e[rows], d[rows], n_steps)
        r = xe - y[rows]
        miss = np.stack([np.sum(r * e1[rows], 1), np.sum(r * e2[rows], 1)], axis=1)
        return miss, xe, pe, te

    a = np.zeros((m, 2))
    all_rows = np.arange(m)
    miss, xe, pe, te = run(a, all_rows)
    iters = np.zeros(m, dtype=int)
    active = np.linalg.norm(miss, axis=1) >= tol * B
    for _ in range(max_iter):
        if not np.any(active):
            break
        rows = np.flatnonzero(active)
        ar = a[rows]
        jac = np.empty((rows.size, 2, 2))
        for j in range(2):
            da = ar.copy()
            da[:, j] += fd
            mj = run(da, rows)[0]
            jac[:, :, j] = (mj - miss[rows]) / fd
        step = -np.linalg.solve(jac, miss[rows][..., None])[..., 0]
        old = np.linalg.norm(miss[rows], axis=1)
        lam = np.ones(rows.size)
        pending = np.ones(rows.size, dtype=bool)
        new_a = ar.copy()
        new = (miss[rows].copy(), xe[rows].copy(), pe[rows].copy(), te[rows].copy())
        for _ in range(8):
            if not np.any(pending):
                break
            sub = np.flatnonzero(pending)
            trial = ar[sub] + lam[sub, None] * step[sub]
            res = run(trial, rows[sub])
            better = np.linalg.norm(res[0], axis=1) < old[sub]
            acc = sub[better]
            new_a[acc] = trial[better]
            for buf, val in zip(new, res):
                buf[acc] = val[better]
            pending[acc] = False
            lam[sub[~better]] *= 0.5
        a[rows] = new_a
        miss[rows], xe[rows], pe[rows], te[rows] = new
        iters[rows] += 1
        active = np.linalg.norm(miss, axis=1) >= tol * B
    if np.any(active):
        worst = float(np.max(np.linalg.norm(miss[active], axis=1)))
        raise ConvergenceError(f"ray shooting did not converge in {max_iter} iterations; "
                               f"miss distance {worst:.3e}", residual=worst)
    n_end = np.sqrt(1.0 + eval_beta(p, y))
    t_end = pe / np.linalg.norm(pe, axis=1, keepdims=True)
    tau = te + n_end * np.sum(t_end * (y - xe), axis=1)
    return tau, {"iterations": iters, "miss": np.linalg.norm(miss, axis=1),
                 "direction": launch(a, all_rows) / n0[:, None], "n_steps": n_steps}


def tau_geodesic(p, x, y, n_steps=None, tol=1e-10, max_iter=50):
    """Riemannian length of the ray joining ``x`` and ``y``."""
    x = np.asarray(x, dtype=float)
    y = np.asarray(y, dtype=float)
    shape = np.broadcast_shapes(x.shape, y.shape)[:-1]
    xb = np.broadcast_to(x, shape + (3,)).reshape(-1, 3)
    yb = np.broadcast_to(y, shape + (3,)).reshape(-1, 3)
    tau, _ = shoot(p, xb, yb, n_steps, tol, max_iter)
    tau = tau.reshape(shape)
    return float(tau) if tau.ndim == 0 else tau


def amplitude_geodesic(p, x, y, step=None, n_steps=None, return_jacobian=False):
    """Amplitude ``n(y)^2 sqrt(J) / (4 pi n(x) tau)`` from ray tracing.

    ``zeta(x, y) = -grad_y tau^2 / (2 n(y)^2)`` and ``J = det(d zeta / d x)``
    are both formed by central differences with step ``step``
    (default ``1e-4 * B``).  All rays share one RK4 step count so the
    differences see a smooth travel-time function.
    """
    x = np.asarray(x, dtype=float)
    y = np.asarray(y, dtype=float)
    h = 1e-4 * p.cfg.B if step is None else float(step)
    if n_steps is None:
        n_steps = default_steps(p, np.linalg.norm(x - y))
    eye = np.eye(3)
    xs, ys = [], []
    for j in range(3):
        for sx in (1.0, -1.0):
            for k in range(3):
                for sy in (1.0, -1.0):
                    xs.append(x + sx * h * eye[j])
                    ys.append(y + sy * h * eye[k])
    xs.append(x)
    ys.append(y)
    tau, _ = shoot(p, np.array(xs), np.array(ys), n_steps=n_steps)
    t2 = (tau[:-1] ** 2).reshape(3, 2, 3, 2)
    ny2 = 1.0 + float(eval_beta(p, y))
    nx = np.sqrt(1.0 + float(eval_beta(p, x)))
    grad_y = (t2[..., 0] - t2[..., 1]) / (2.0 * h)
    zeta = -grad_y / (2.0 * ny2)
    dzeta = (zeta[:, 0, :] - zeta[:, 1, :]) / (2.0 * h)
    jac = float(np.linalg.det(dzeta.T))
    if not jac > 0:
        raise CausticError(f"geodesic Jacobian J={jac:.3e} <= 0 (caustic or step-size breakdown)")
    amp = ny2 * np.sqrt(jac) / (4.0 * np.pi * nx * tau[-1])
    return (amp, jac) if return_jacobian else amp
