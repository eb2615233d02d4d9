"""Inversion of the weighted ray transform by angular modes and a
Volterra equation of the second kind.

On a slice with circle radius ``B_z`` the amplitude data give, per chord,

    g(x, y) = -16 pi A(x, y) + 4 / |x - y| = |x - y| int_0^1 q(y + t (x - y)) t (1 - t) dt

with ``q = lap(beta)``.  Writing the chord as ``<r, nu(alpha)> = s`` and
``d = |x - y| = 2 sqrt(B_z^2 - s^2)``, the weight ``t (1 - t)`` equals
``(B_z^2 - |xi|^2) / d^2`` along the chord, so ``G = d^2 g`` is the plain
line integral of ``w = q (B_z^2 - r^2)``.  With angular modes
``G = sum G_n(s) e^{i n alpha}`` and ``p_n(r) = w_n(r) r``:

    L(G_n)(s) = (1/pi) int_s^rho0 G_n(rho) rho d rho / sqrt(rho^2 - s^2)
              = int_s^rho0 Q_n(r, s) p_n(r) dr,
    p_n(s) - int_s^rho0 T_n(r, s) p_n(r) dr = -d/ds L(G_n)(s),

with ``T_n = dQ_n/ds``.  Both kernels depend on ``t = s / r`` only:
``Q_n(r, s) = Qh_n(t)`` and ``T_n(r, s) = Th_n(t) / sqrt(r^2 - s^2)``,

    Qh_n(t) = (1/pi) int_0^pi T_n(u) d theta,
    Th_n(t) = (n t sqrt(1 - t^2) / pi) int_0^pi U_{n-1}(u) (1 - cos theta) / (2 u) d theta,
    u = sqrt(cos^2(theta/2) + t^2 sin^2(theta/2)),

where ``T_n, U_n`` are Chebyshev polynomials.  The theta integrands are
analytic and periodic in ``theta`` with a branch point at distance about
``2 t`` from the real axis, so the midpoint rule with ``O(1/t)`` nodes is
exponentially accurate.
"""

from __future__ import annotations

import warnings
from dataclasses import dataclass, field
from functools import lru_cache

import numpy as np
from scipy.interpolate import CubicSpline
from scipy.linalg import solve_triangular

from .errors import (ConvergenceError, DegenerateChordError, DomainError,
                     ResolutionError)
from .geometry import TWO_PI, slice_radius, support_radius
from .quadrature import gauss_chebyshev_theta, gauss_legendre
from .radon import Sinogram, SliceImage, map_slices, slice_table, stack_slices


# -- kernels ---------------------------------------------------------------

def _nodes_for(t, n_max):
    return int(np.ceil(20.0 / max(float(t), 1e-6))) + 2 * int(n_max) + 16


def _kernel_block(t, n_max, m):
    """Qh_n(t) and Th_n(t), n = 0..n_max, for one node count ``m``."""
    theta, _ = gauss_chebyshev_theta(m)
    ct = np.cos(theta)[None, :]
    t = np.asarray(t, dtype=float)[:, None]
    u = np.sqrt(0.5 * (1.0 + t * t) + 0.5 * (1.0 - t * t) * ct)
    wt = (1.0 - ct) / (2.0 * u)
    pref = t[:, 0] * np.sqrt(np.clip(1.0 - t[:, 0] ** 2, 0.0, None))
    q = np.empty((n_max + 1, t.shape[0]))
    th = np.empty((n_max + 1, t.shape[0]))
    tc_prev, tc = np.ones_like(u), u.copy()          # T_0, T_1
    uc_prev, uc = np.zeros_like(u), np.ones_like(u)  # U_{-1}, U_0
    q[0] = 1.0
    th[0] = 0.0
    for n in range(1, n_max + 1):
        q[n] = tc.mean(axis=1)
        th[n] = n * pref * (uc * wt).mean(axis=1)
        tc_prev, tc = tc, 2.0 * u * tc - tc_prev
        uc_prev, uc = uc, 2.0 * u * uc - uc_prev
    return q, th


def kernel_tables(t, n_max):
    """``(Qh, Th)`` of shape ``(n_max + 1, len(t))`` for ``0 < t <= 1``.

    Values of ``t`` are bucketed by the node count they need (rounded up
    to a power of two) so each bucket is one vectorized pass.
    """
    t = np.asarray(t, dtype=float).reshape(-1)
    if np.any(t <= 0) or np.any(t > 1):
        raise DomainError("kernel tables need 0 < s/r <= 1")
    need = np.array([_nodes_for(v, n_max) for v in t]) if t.size < 64 else \
        np.ceil(20.0 / t).astype(int) + 2 * n_max + 16
    bucket = 1 << np.ceil(np.log2(need)).astype(int)
    q = np.empty((n_max + 1, t.size))
    th = np.empty((n_max + 1, t.size))
    for m in np.unique(bucket):
        idx = np.flatnonzero(bucket == m)
        step = max(1, int(4_000_000 // (int(m) * (n_max + 4))))
        for start in range(0, idx.size, step):
            sel = idx[start:start + step]
            q[:, sel], th[:, sel] = _kernel_block(t[sel], n_max, int(m))
    return q, th


def _check_rs(r, s, strict):
    r = np.asarray(r, dtype=float)
    s = np.asarray(s, dtype=float)
    if np.any(s <= 0):
        raise DomainError("kernels need s > 0")
    bad = (s >= r) if strict else (s > r)
    if np.any(bad):
        raise DomainError("kernels need s < r" if strict else "kernels need s <= r")
    return np.broadcast_arrays(r, s)


def kernel_Q(n, r, s):
    """``Q_n(r, s)`` for ``0 < s <= r`` (dimensionless, ``Q_n(s, s) = 1``)."""
    r, s = _check_rs(r, s, strict=False)
    q, _ = kernel_tables((s / r).ravel(), int(n))
    out = q[int(n)].reshape(r.shape)
    return float(out) if out.ndim == 0 else out


def kernel_T_tilde(n, r, s):
    """Regular factor ``Th_n(s/r) = T_n(r, s) sqrt(r^2 - s^2)``; continuous
    up to ``s = r`` where it vanishes."""
    r, s = _check_rs(r, s, strict=False)
    _, th = kernel_tables((s / r).ravel(), int(n))
    out = th[int(n)].reshape(r.shape)
    return float(out) if out.ndim == 0 else out


def kernel_T(n, r, s):
    """``T_n(r, s) = dQ_n/ds`` for ``0 < s < r`` (units 1/length)."""
    r, s = _check_rs(r, s, strict=True)
    _, th = kernel_tables((s / r).ravel(), int(n))
    out = (th[int(n)].reshape(r.shape)) / np.sqrt(r * r - s * s)
    return float(out) if out.ndim == 0 else out


# -- Volterra operator -----------------------------------------------------

@lru_cache(maxsize=8)
def _product_weights(M):
    """Hat-function weights of ``int_{s_i}^{1} f(r) / sqrt(r^2 - s_i^2) dr``
    on the unit grid ``r_k = k / M`` (strictly, weights for nodes k >= i).

    Scale invariant: the same weights serve any ``rho0``.
    """
    r = np.arange(M + 1) / M
    s = r[:, None]
    rr = r[None, :]
    valid = rr >= s
    root = np.sqrt(np.where(valid, rr * rr - s * s, 0.0))
    with np.errstate(divide="ignore"):
        f0 = np.where(valid, np.log(rr + root), 0.0)
    p0 = f0[:, 1:] - f0[:, :-1]
    p1 = root[:, 1:] - root[:, :-1]
    panel = valid[:, :-1]          # panel [r_k, r_{k+1}] lies right of s_i
    h = 1.0 / M
    with np.errstate(invalid="ignore"):
        wa = np.where(panel, (rr[:, 1:] * p0 - p1) / h, 0.0)
        wb = np.where(panel, (p1 - rr[:, :-1] * p0) / h, 0.0)
    w = np.zeros((M + 1, M + 1))
    w[:, :-1] += wa
    w[:, 1:] += wb
    w[0] = 0.0                     # row s = 0: kernel vanishes (factor t)
    return w


@lru_cache(maxsize=8)
def _ratio_tables(M, n_max):
    """``Th_n(i / k)`` on the index grid, shape ``(n_max + 1, M + 1, M + 1)``
    (zero where ``i >= k`` or ``i == 0``)."""
    i, k = np.meshgrid(np.arange(M + 1), np.arange(M + 1), indexing="ij")
    upper = (i >= 1) & (k > i)
    num, den = i[upper], k[upper]
    g = np.gcd(num, den)
    keys = (num // g) * (M + 1) + den // g
    uniq, inv = np.unique(keys, return_inverse=True)
    t = (uniq // (M + 1)) / (uniq % (M + 1))
    _, th = kernel_tables(t, n_max)
    out = np.zeros((n_max + 1, M + 1, M + 1))
    out[:, upper] = th[:, inv]
    return out


def volterra_matrix(n, M, n_max=None):
    """Discrete operator ``(K p)_i ~ int_{s_i}^{rho0} T_n(r, s_i) p(r) dr`` on
    ``s_j = j rho0 / M``; strictly upper triangular, independent of ``rho0``."""
    n_max = max(int(n), 8) if n_max is None else max(int(n_max), int(n))
    return _product_weights(int(M)) * _ratio_tables(int(M), n_max)[int(n)]


def volterra_solve(n, rhs, method="iterate", tol=1e-10, max_iter=None, n_max=None,
                   return_info=False):
    """Solve ``p - K_n p = rhs`` on the uniform grid ``s_j = j rho0 / M``.

    Parameters
    ----------
    rhs : array_like, shape (M + 1,)
        Samples at ``s_0 = 0, ..., s_M = rho0`` (real or complex).
    method : {"iterate", "dense"}
        Successive approximation ``p <- rhs + K p`` until the max-norm
        change is below ``tol``, or a triangular solve.

    Raises
    ------
    ConvergenceError
        The iteration did not settle in ``max_iter`` sweeps (default M + 2;
        the discrete operator is nilpotent so M + 1 sweeps are exact).
    """
    rhs = np.asarray(rhs)
    M = rhs.size - 1
    K = volterra_matrix(n, M, n_max)
    if method == "dense":
        p = solve_triangular(np.eye(M + 1) - K, rhs, lower=False)
        return (p, {"iterations": 0, "residual": 0.0}) if return_info else p
    if method != "iterate":
        raise ValueError(f"unknown method {method!r}")
    max_iter = M + 2 if max_iter is None else int(max_iter)
    p = rhs.copy()
    history = []
    for it in range(1, max_iter + 1):
        nxt = rhs + K @ p
        diff = float(np.max(np.abs(nxt - p)))
        p = nxt
        history.append(diff)
        if diff < tol:
            info = {"iterations": it, "residual": diff, "history": history}
            return (p, info) if return_info else p
    raise ConvergenceError(f"Volterra iteration for n={n} did not settle in {max_iter} sweeps "
                           f"(last change {history[-1]:.3e})", residual=history[-1],
                           history=history)


# -- Abel operator and right-hand side ---------------------------------------

def abel_L(h, s, rho0, order=64, panels=2):
    """``L(h)(s) = (1/pi) int_s^rho0 h(rho) rho d rho / sqrt(rho^2 - s^2)``.

    With ``rho = sqrt(s^2 + u^2)`` and ``u = U sin(phi)``,
    ``U = sqrt(rho0^2 - s^2)``, this is
    ``(1/pi) int_0^{pi/2} h(sqrt(s^2 + U^2 sin^2 phi)) U cos(phi) d phi``:
    no singularity at ``rho = s``, and a square-root edge ``h ~ sqrt(rho0 - rho)``
    becomes smooth.  Composite Gauss-Legendre in ``phi``.

    Parameters
    ----------
    h : callable
        Vectorized function of ``rho``.
    s : float or array_like
        Points in ``[0, rho0)``.
    """
    s = np.asarray(s, dtype=float)
    if np.any(s >= rho0) or np.any(s < 0):
        raise DomainError(f"abel_L needs 0 <= s < rho0 = {rho0}")
    x, w = gauss_legendre(order)
    edges = np.linspace(0.0, 0.5 * np.pi, panels + 1)
    phi = (edges[:-1, None] + np.diff(edges)[:, None] * x[None, :]).ravel()
    ww = (np.tile(w, panels) * (0.5 * np.pi / panels)) * np.cos(phi)
    U = np.sqrt(rho0 * rho0 - s * s)[..., None]
    u = U * np.sin(phi)
    vals = h(np.sqrt(s[..., None] ** 2 + u * u))
    out = np.sum(vals * ww, axis=-1) * U[..., 0] / np.pi
    return float(out) if out.ndim == 0 else out


def mode_spline(rho, G, rho0, n):
    """Interpolant of ``G_n`` on ``[-rho0, rho0]`` built from samples on
    ``rho > 0`` using the parity ``G_n(-rho) = (-1)^n G_n(rho)`` and
    ``G_n(+-rho0) = 0``."""
    rho = np.asarray(rho, dtype=float)
    G = np.asarray(G)
    sign = -1.0 if n % 2 else 1.0
    xs = np.concatenate([[-rho0], -rho[::-1], rho, [rho0]])
    ys = np.concatenate([[0.0], sign * G[::-1], G, [0.0]])
    return CubicSpline(xs, ys)


def rhs_from_mode(rho, G, rho0, n, M, refine=4, order=64):
    """``-d/ds L(G_n)(s)`` on ``s_j = j rho0 / M``.

    ``G`` is either samples at radii ``rho`` (interpolated by
    :func:`mode_spline`) or a callable of ``rho``.  ``L`` is evaluated on a
    grid ``refine`` times finer and differentiated by central differences
    (``L`` is even in ``s``; a 3-point one-sided formula at ``rho0``).
    """
    if callable(G):
        spl = G
        dtype = np.result_type(G(np.array([0.5 * rho0])), float)
    else:
        spl = mode_spline(rho, G, rho0, n)
        dtype = np.result_type(np.asarray(G), float)
    fine = np.arange(refine * M + 1) * (rho0 / (refine * M))
    Lf = np.zeros(fine.size, dtype=dtype)
    inner = fine < rho0
    Lf[inner] = abel_L(spl, fine[inner], rho0, order)
    h = fine[1] - fine[0]
    d = np.empty_like(Lf)
    d[1:-1] = (Lf[2:] - Lf[:-2]) / (2.0 * h)
    d[0] = 0.0
    d[-1] = (3.0 * Lf[-1] - 4.0 * Lf[-2] + Lf[-3]) / (2.0 * h)
    return -d[::refine]


# -- data assembly and modes -----------------------------------------------

def assemble_g(table, z):
    """Sinogram of ``g = -16 pi A_hat + 4 / |x - y|`` for slice ``z``."""
    alphas, svals, index = slice_table(table, z)
    if np.any(index < 0):
        raise ResolutionError(f"slice z={z}: amplitude data missing for some chords")
    dist = table.dist[index]
    if np.any(dist <= 0):
        raise DegenerateChordError("chord with zero length")
    data = -16.0 * np.pi * table.A_hat[index] + 4.0 / dist
    return Sinogram(float(z), alphas, svals, data, "g")


def to_midpoint_polar(sg):
    """``(rho, alpha_mid, g)`` of each sample, with the chord midpoint at
    polar radius ``|s|`` and angle ``alpha`` (``alpha + pi`` when ``s < 0``)."""
    a, s = np.meshgrid(sg.alphas, sg.s_values, indexing="ij")
    return np.abs(s), np.where(s < 0, np.mod(a + np.pi, TWO_PI), a), sg.data


@dataclass
class ModeTable:
    """Angular Fourier coefficients ``n = -N..N`` on a radial grid.

    ``coeffs[n + N, j]`` belongs to mode ``n`` and radius ``rho[j]``.
    ``kind`` is ``"G"`` for data modes ``G_n = (d^2 g)_n`` or ``"p"`` for
    solved ``p_n``.
    """

    z: float
    n_modes: int
    rho: np.ndarray
    coeffs: np.ndarray
    rho0: float
    kind: str = "G"
    meta: dict = field(default_factory=dict)

    def __post_init__(self):
        self.rho = np.asarray(self.rho, dtype=float)
        self.coeffs = np.asarray(self.coeffs, dtype=complex)
        if self.coeffs.shape != (2 * self.n_modes + 1, self.rho.size):
            raise ResolutionError("mode table shape mismatch")

    def mode(self, n):
        return self.coeffs[n + self.n_modes]


def fourier_modes(sg, N, weighted=True):
    """Angular modes of ``G = d^2 g`` (or of the raw data when
    ``weighted=False``) at the positive offsets of ``sg``.

    ``alpha_m = 2 pi (m + 1) / M`` so the DFT picks up ``e^{-i n 2 pi / M}``.
    The weights need ``sg.meta["B_z"]``; ``sg.meta["rho0"]`` sets the
    support radius (default ``max |s|``).
    When the offset grid is symmetric, samples at ``-rho`` are folded in via
    ``G_n(-rho) = (-1)^n G_n(rho)`` and averaged.

    Raises
    ------
    ResolutionError
        ``n_alpha < 4 N + 2``.
    """
    sg.check_uniform()
    M = sg.alphas.size
    if M < 4 * N + 2:
        raise ResolutionError(f"n_alpha={M} cannot carry {N} modes (need >= {4 * N + 2})")
    data = sg.data
    if weighted:
        bz = sg.meta.get("B_z")
        if bz is None:
            raise ResolutionError("sinogram lacks the slice radius needed for d^2 weights")
        data = data * 4.0 * (bz * bz - sg.s_values[None, :] ** 2)
    spectrum = np.fft.fft(data, axis=0) / M
    ns = np.arange(-N, N + 1)
    coeffs = spectrum[np.mod(ns, M)] * np.exp(-1j * ns * TWO_PI / M)[:, None]
    pos = sg.s_values > 0
    rho = sg.s_values[pos]
    out = coeffs[:, pos]
    neg = sg.s_values < 0
    if np.count_nonzero(neg) == rho.size and np.allclose(-sg.s_values[neg][::-1], rho,
                                                         rtol=0, atol=1e-12):
        parity = np.where(ns % 2 == 0, 1.0, -1.0)[:, None]
        out = 0.5 * (out + parity * coeffs[:, neg][:, ::-1])
    return ModeTable(sg.z, N, rho, out, sg.meta.get("rho0", float(np.max(np.abs(sg.s_values)))),
                     "G")


# -- modes to q ------------------------------------------------------------

MAX_DEFAULT_MODES = 12


def default_modes(n_alpha):
    """Default mode cutoff: the largest ``N`` with ``4 N + 2 <= n_alpha``,
    capped at :data:`MAX_DEFAULT_MODES`.

    High modes are amplified by the inversion (errors grow quickly with
    ``n`` and with radial refinement), so the cap trades truncation for
    stability.
    """
    return max(0, min((int(n_alpha) - 2) // 4, MAX_DEFAULT_MODES))

def solve_modes(modes, M, method="iterate", tol=1e-10):
    """``p_n`` on ``s_j = j rho0 / M`` for every mode of ``modes``."""
    N = modes.n_modes
    s = np.arange(M + 1) * (modes.rho0 / M)
    coeffs = np.zeros((2 * N + 1, M + 1), dtype=complex)
    sweeps = []
    for n in range(N + 1):
        rhs = rhs_from_mode(modes.rho, modes.mode(n), modes.rho0, n, M)
        scale = max(1.0, float(np.max(np.abs(rhs))))
        p, info = volterra_solve(n, rhs, method, tol * scale, n_max=N, return_info=True)
        sweeps.append(info["iterations"])
        coeffs[n + N] = p
        if n:
            coeffs[N - n] = np.conj(p)
    return ModeTable(modes.z, N, s, coeffs, modes.rho0, "p", {"sweeps": sweeps})


def modes_to_q(pt, B_z, coords, r_min=None, fill="zero", warn=True):
    """Resum ``q_n = p_n / ((B_z^2 - r^2) r)`` onto a Cartesian slice grid.

    Radii below ``r_min`` (default two radial grid steps) are unobservable
    from ``p_n``; they are set to 0 (``fill="zero"``) or to the value at
    ``r_min`` (``fill="hold"``).  Radii beyond ``rho0`` are 0.
    """
    r = pt.rho
    dr = r[1] - r[0]
    r_min = 2.0 * dr if r_min is None else float(r_min)
    N = pt.n_modes
    ok = r >= r_min
    qn = np.zeros_like(pt.coeffs)
    qn[:, ok] = pt.coeffs[:, ok] / ((B_z * B_z - r[ok] ** 2) * r[ok])[None, :]
    if fill == "hold":
        first = np.argmax(ok)
        qn[:, ~ok] = qn[:, first:first + 1]
    elif fill != "zero":
        raise ValueError("fill must be 'zero' or 'hold'")
    xx, yy = np.meshgrid(coords, coords, indexing="ij")
    rr = np.hypot(xx, yy)
    ph = np.arctan2(yy, xx)
    # linear interpolation in r, zero beyond rho0
    t = rr / dr
    j = np.clip(np.floor(t).astype(int), 0, r.size - 2)
    w = np.clip(t - j, 0.0, 1.0)
    inside = rr <= r[-1]
    vals = (1.0 - w) * qn[N, j].real + w * qn[N, j + 1].real
    e1 = np.exp(1j * ph)
    en = np.ones_like(e1)
    for n in range(1, N + 1):
        en = en * e1
        cn = (1.0 - w) * qn[N + n, j] + w * qn[N + n, j + 1]
        vals = vals + 2.0 * (cn * en).real
    vals = np.where(inside, vals, 0.0)
    if fill == "zero":
        masked = rr < r_min
        if warn and np.any(masked):
            warnings.warn(f"{np.count_nonzero(masked)} pixels inside r_min={r_min:.3g} set to 0",
                          stacklevel=2)
        vals = np.where(masked, 0.0, vals)
    return SliceImage(pt.z, coords, vals)


def reconstruct_q_slice(table, z, cfg, coords, N=None, M=None, method="iterate",
                        fill="zero"):
    """``q = lap(beta)`` on one slice from amplitude data."""
    sg = assemble_g(table, z)
    sg.meta.update(B_z=slice_radius(z, cfg), rho0=support_radius(z, cfg))
    n_alpha, n_s = sg.data.shape
    N = default_modes(n_alpha) if N is None else int(N)
    M = max(n_s // 2, 8) if M is None else int(M)
    modes = fourier_modes(sg, N)
    pt = solve_modes(modes, M, method)
    img = modes_to_q(pt, sg.meta["B_z"], coords, fill=fill, warn=False)
    return img, pt


def reconstruct_q_abel(table, cfg, n=None, N=None, M=None, method="iterate", fill="zero",
                       return_slices=False, workers=1):
    """Volume of ``q`` from an observables table, slice by slice."""
    from .elliptic import VolumeGrid
    grid = VolumeGrid.empty(cfg, n)
    coords = grid.axis(0)
    zs = table.slices
    done = map_slices(lambda z: reconstruct_q_slice(table, z, cfg, coords, N, M, method, fill),
                      zs, workers)
    images = [d[0] for d in done]
    tables = [d[1] for d in done]
    vol = stack_slices([im.values for im in images], zs, cfg, grid.shape[0])
    vol.meta["method"] = "abel-q"
    return (vol, images, tables) if return_slices else vol


def reconstruct_beta_abel(table, cfg, n=None, N=None, M=None, method="iterate",
                          fill="zero", rtol=1e-8, workers=1):
    """``beta`` by the Poisson solve of the reconstructed ``q``.

    Returns
    -------
    beta, q : VolumeGrid
    """
    from .elliptic import poisson_solve_ball
    q = reconstruct_q_abel(table, cfg, n, N, M, method, fill, workers=workers)
    # the z-interpolated q may spill a few voxels past R; that is expected here
    beta = poisson_solve_ball(q, cfg, rtol=rtol, warn_outside=False)
    beta.meta["method"] = "abel"
    return beta, q
