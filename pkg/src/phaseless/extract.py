"""Travel time and amplitude from sampled intensity sweeps.

For a chord with ``c = 1/(4 pi |x - y|)`` and delay ``delta = tau - |x - y|``
the scattered intensity is ``f1(k) = A^2 + c^2 - 2 A c cos(k delta)``.  Its
maxima equal ``(A + c)^2`` and sit ``2 pi / delta`` apart, which gives

    A   = sqrt(max f1) - c
    tau = |x - y| + 2 pi / (k3 - k2)

with ``k2 < k3`` successive maxima.  Peak positions come from the discrete
argmax of each lobe refined by a 3-point parabola; with more than two
maxima the period is a least-squares fit of all positions.

When the sweep holds less than one period (delays below
``2 pi / span``) no maxima can be paired.  :func:`fit_f1_model` then fits
the two-parameter model directly, which is well posed because ``c`` is
known from the chord length.

Resolvable delays: a grid with spacing ``dk`` and span ``K`` resolves
``delta`` by peak pairing when ``4 pi / K <= delta <= 2 pi / (20 dk)``.
"""

from __future__ import annotations

import io
from dataclasses import dataclass

import numpy as np
from scipy import ndimage

from .errors import (ConfigError, DegenerateDataError, FormatError,
                     InconsistentDataError, IndeterminateError, MissingSliceError,
                     SpanError)
from .forward import FOUR_PI, KSeries

DEFAULT_LOS_TOL = 1e-6


def los_tolerance(noise=0.0, n_k=None):
    """Line-of-sight threshold on the relative spread of a sweep.

    ``1e-6`` for noiseless data.  With relative noise ``noise`` it is three
    times the noise level, widened by ``sqrt(2 ln n_k)`` because the spread
    (max - min) of ``n_k`` Gaussian samples grows like that factor.
    """
    if not noise:
        return DEFAULT_LOS_TOL
    widen = np.sqrt(2.0 * np.log(max(int(n_k), 2))) if n_k else 1.0
    return max(DEFAULT_LOS_TOL, 3.0 * float(noise) * widen)


@dataclass(frozen=True)
class ExtractionResult:
    A_hat: float
    tau_hat: float
    line_of_sight: bool
    quality: float
    dist: float = float("nan")

    @property
    def delay(self):
        return self.tau_hat - self.dist


def _c(dist):
    return 1.0 / (FOUR_PI * dist)


def _require(series, kind):
    if not isinstance(series, KSeries):
        raise ConfigError("expected a KSeries")
    if series.kind != kind:
        raise ConfigError(f"expected a {kind} series, got {series.kind}")
    if not np.isfinite(series.dist) or series.dist <= 0:
        raise ConfigError("series needs a positive chord length")


def _oscillation(v, dist, tol):
    """(is_constant, scale) for rows of ``v``; scale is ``max(max v, 4 c^2)``,
    the peak intensity ``(A + c)^2`` of a weakly perturbed chord."""
    vmax = v.max(axis=-1)
    scale = np.maximum(vmax, 4.0 * _c(dist) ** 2)
    return (vmax - v.min(axis=-1)) <= tol * scale, scale


def _crossings(v, band=None):
    """Crossings of the mid level ``(max + min) / 2`` per row.

    With ``band`` (per row), a crossing needs a move from above
    ``mid + band`` to below ``mid - band`` or back, so noise around a flat
    sweep does not count.
    """
    v = np.atleast_2d(v)
    mid = 0.5 * (v.max(axis=-1, keepdims=True) + v.min(axis=-1, keepdims=True))
    if band is None:
        above = v > mid
        return np.count_nonzero(above[:, 1:] != above[:, :-1], axis=-1)
    b = np.asarray(band, dtype=float).reshape(-1, 1)
    state = np.where(v > mid + b, 1, np.where(v < mid - b, -1, 0))
    # carry the last definite state forward through the band
    idx = np.where(state != 0, np.arange(v.shape[1]), 0)
    np.maximum.accumulate(idx, axis=1, out=idx)
    held = np.take_along_axis(state, idx, axis=1)
    return np.count_nonzero((held[:, 1:] != held[:, :-1]) & (held[:, :-1] != 0), axis=-1)


def detect_line_of_sight(series, tol=DEFAULT_LOS_TOL, strict=True):
    """True when the F1 sweep does not oscillate, i.e. ``tau == |x - y|``.

    The relative spread ``(max - min)`` is compared with ``tol`` times
    ``max(max f1, 4 c^2)``; the floor keeps the all-zero sweep of an
    unperturbed chord (``A == c``) classified as line of sight.

    Raises
    ------
    DegenerateDataError
        All-zero sweep without a usable chord length.
    IndeterminateError
        ``strict`` and the sweep varies but crosses its mid level fewer
        than twice (less than one period: no oscillation can be confirmed).
    """
    if series.kind != "F1":
        raise ConfigError("line-of-sight detection needs an F1 series")
    v = series.values
    if not (np.isfinite(series.dist) and series.dist > 0):
        if not np.any(v > 0):
            raise DegenerateDataError("all-zero sweep and no chord length")
        return bool(v.max() - v.min() <= tol * v.max())
    const, _ = _oscillation(v, series.dist, tol)
    if const:
        return True
    if strict and _crossings(v) < 2:
        raise IndeterminateError("sweep covers less than one oscillation period; "
                                 "widen the k span (need span >= 2*2*pi/delay)")
    return False


def _parabola(fm, f0, fp):
    den = fm - 2.0 * f0 + fp
    with np.errstate(divide="ignore", invalid="ignore"):
        off = np.where(den < 0, 0.5 * (fm - fp) / den, 0.0)
    return off, f0 - 0.25 * (fm - fp) * off


def _cosine_vertex(fm, f0, fp, theta):
    """Exact vertex of ``a + b cos(theta (j - t))`` through samples at
    ``j = -1, 0, 1``: returns offset ``t`` and peak value ``a + |b|``."""
    ct, st = np.cos(theta), np.sin(theta)
    a = (fm + fp - 2.0 * ct * f0) / (2.0 - 2.0 * ct)
    bc = f0 - a
    bs = (fp - fm) / (2.0 * st)
    return np.arctan2(bs, bc) / theta, a + np.hypot(bc, bs)


def find_maxima(k, v, period=None):
    """Refined maxima of one sweep.

    Each lobe (run above the mid level reaching the top quarter of the
    range) contributes its argmax refined by a parabola through the
    neighbouring samples.  A lobe touching the end of
    the grid is refined one-sidedly and kept only when the vertex lies
    within half a step of the sampled span.  Given a ``period`` estimate,
    the three samples are fitted by a cosine of that period instead, which
    is exact for the F1 model.

    Returns
    -------
    pos, val : ndarray
        Peak positions in ``k`` and refined peak values.
    """
    v = np.asarray(v, dtype=float)
    n = v.size
    dk = k[1] - k[0]
    theta = None if period is None else 2.0 * np.pi * dk / period
    mid = 0.5 * (v.max() + v.min())
    labels, count = ndimage.label(v > mid)
    if count == 0 or n < 3:
        return np.empty(0), np.empty(0)
    idx = np.asarray(ndimage.maximum_position(v, labels, np.arange(1, count + 1)))[:, 0]
    # noise near the mid level cuts off slivers; a true lobe rises into the top quarter
    idx = idx[v[idx] >= mid + 0.5 * (v.max() - mid)]
    pos, val = [], []
    for i in idx:
        j = min(max(i, 1), n - 2)
        fm, f0, fp = v[j - 1], v[j], v[j + 1]
        if fm - 2.0 * f0 + fp >= 0:
            continue
        if theta is not None and 0 < theta < np.pi:
            off, peak = _cosine_vertex(fm, f0, fp, theta)
        else:
            off, peak = _parabola(fm, f0, fp)
        vertex = j + off
        if j != i and not -0.5 <= vertex <= n - 0.5:
            continue
        pos.append(k[0] + vertex * dk)
        val.append(peak)
    return np.asarray(pos, dtype=float), np.asarray(val, dtype=float)


def lobe_fit(k, v, pos, period, min_samples=5, passes=2):
    """Least-squares fit of ``a + b cos(w (k - pos)) + c sin(w (k - pos))``
    over the half period centred on each peak.

    Exact for the noiseless F1 model and averages noise over the lobe.
    Peaks whose window is cut by the end of the grid, or holds fewer than
    ``min_samples`` samples, keep their input position and get a NaN value.

    Returns
    -------
    pos, val : ndarray
        Refined positions and peak values ``a + sqrt(b^2 + c^2)``.
    """
    w = 2.0 * np.pi / period
    p = np.array(pos, dtype=float)
    val = np.full(p.size, np.nan)
    dk = k[1] - k[0]
    offs = np.arange(-int(np.floor(0.25 * period / dk)), int(np.floor(0.25 * period / dk)) + 1)
    alive = np.ones(p.size, dtype=bool)
    for _ in range(passes):
        idx = np.rint((p - k[0]) / dk).astype(int)[:, None] + offs[None, :]
        inside = (idx >= 0) & (idx < k.size)
        alive &= inside.all(axis=1) & (offs.size >= min_samples)
        if not np.any(alive):
            break
        idc = np.clip(idx, 0, k.size - 1)
        ph = w * (k[idc] - p[:, None])
        X = np.stack([np.ones_like(ph), np.cos(ph), np.sin(ph)], axis=1) * inside[:, None, :]
        gram = X @ np.swapaxes(X, 1, 2)
        rhs = X @ v[idc][:, :, None]
        gram[~alive] = np.eye(3)
        sol = np.linalg.solve(gram, rhs)[..., 0]
        a, b, c = sol[:, 0], sol[:, 1], sol[:, 2]
        p = np.where(alive, p + np.arctan2(c, b) / w, p)
        val = np.where(alive, a + np.hypot(b, c), val)
    return p, val


def refined_maxima(k, v, sweeps=2):
    """Maxima and period: parabolic pass, cosine re-refinement using the
    fitted period, then a least-squares lobe fit (:func:`lobe_fit`).

    The period is ``None`` with fewer than two peaks.
    """
    pos, val = find_maxima(k, v)
    period = None
    for _ in range(sweeps):
        if pos.size < 2:
            break
        period = fit_period(pos)
        pos, val = find_maxima(k, v, period)
    if pos.size >= 2:
        period = fit_period(pos)
        lpos, lval = lobe_fit(k, v, pos, period)
        good = np.isfinite(lval)
        if np.count_nonzero(good) >= 2:
            # peaks cut by the grid ends are the least reliable; drop them
            pos, val = lpos[good], lval[good]
        else:
            pos, val = np.where(good, lpos, pos), np.where(good, lval, val)
        period = fit_period(pos)
    return pos, val, period


def fit_period(pos):
    """Least-squares period of peak positions assumed ``k0 + j P``."""
    pos = np.sort(np.asarray(pos, dtype=float))
    if pos.size < 2:
        raise SpanError("fewer than two maxima in the sampled span")
    p_med = float(np.median(np.diff(pos)))
    if not p_med > 0:
        raise SpanError("coincident maxima")
    j = np.round((pos - pos[0]) / p_med)
    if pos.size == 2 or np.ptp(j) == 0:
        return float((pos[-1] - pos[0]) / max(j[-1], 1.0))
    slope = np.polyfit(j, pos, 1)[0]
    return float(slope)


def extract_A_from_f1(series, tol=DEFAULT_LOS_TOL):
    """Amplitude from the maximum of an F1 sweep.

    A line-of-sight sweep is the constant ``(A - c)^2`` and cannot fix the
    sign of ``A - c``; the root ``A = c + sqrt(mean f1)`` is returned, which
    is ``c`` exactly for an unperturbed chord.
    """
    _require(series, "F1")
    c = _c(series.dist)
    v = series.values
    if detect_line_of_sight(series, tol, strict=False):
        return c + float(np.sqrt(max(v.mean(), 0.0)))
    _, val, _ = refined_maxima(series.grid.k, v)
    return _amplitude_from_peaks(val, c)


def _amplitude_from_peaks(val, c):
    if val.size == 0:
        raise SpanError("no interior maximum in the sampled span")
    # averaging the peaks (rather than taking the largest) removes the
    # upward bias of a maximum over noisy samples
    fstar = float(np.mean(val))
    if fstar < 0:
        raise InconsistentDataError("negative peak intensity")
    A = np.sqrt(fstar) - c
    if not A > 0:
        raise InconsistentDataError(f"sqrt(f1*) = {np.sqrt(fstar):.6g} below c = {c:.6g}")
    return float(A)


def extract_tau(series, tol=DEFAULT_LOS_TOL):
    """Travel time from the spacing of successive maxima of an F1 sweep."""
    _require(series, "F1")
    if detect_line_of_sight(series, tol, strict=False):
        return float(series.dist)
    _, _, period = refined_maxima(series.grid.k, series.values)
    if period is None:
        raise SpanError("fewer than two maxima in the sampled span")
    return float(series.dist + 2.0 * np.pi / period)


def extract_A_from_f2(series, noise_floor=0.0):
    """Amplitude from the tail (last quarter) of an F2 sweep."""
    _require(series, "F2")
    v = series.values
    if np.any(v < -abs(noise_floor)):
        raise InconsistentDataError("negative intensities below the noise floor")
    tail = v[-max(1, v.size // 4):]
    m = float(tail.mean())
    if not m > 0:
        raise DegenerateDataError("F2 tail is not positive")
    return float(np.sqrt(m))


def _quality(v, A, delay, dist, k):
    c = _c(dist)[..., None]
    model = A[..., None] ** 2 + c * c - 2.0 * A[..., None] * c * np.cos(k * delay[..., None])
    scale = (A + c[..., 0]) ** 2
    return np.sqrt(np.mean((v - model) ** 2, axis=-1)) / scale


def extract_series(series, tol=DEFAULT_LOS_TOL, fallback=True):
    """Full extraction for one F1 sweep.

    Uses peak pairing when two maxima are available and the model fit of
    :func:`fit_f1_model` otherwise (if ``fallback``).
    """
    _require(series, "F1")
    k = series.grid.k
    v = series.values
    d = float(series.dist)
    if detect_line_of_sight(series, tol, strict=not fallback):
        A = extract_A_from_f1(series, tol)
        q = float(_quality(v, np.array(A), np.array(0.0), np.array(d), k))
        return ExtractionResult(A, d, True, q, d)
    try:
        A = extract_A_from_f1(series, tol)
        tau = extract_tau(series, tol)
    except SpanError:
        if not fallback:
            raise
        A, delay, _ = fit_f1_model(v[None], k, np.array([d]))
        A, tau = float(A[0]), d + float(delay[0])
    q = float(_quality(v, np.array(A), np.array(tau - d), np.array(d), k))
    return ExtractionResult(A, tau, False, q, d)


# -- model fit for sweeps shorter than a period --------------------------

def _amplitude_given_delay(v, k, c, delay):
    """Least-squares ``A >= 0`` of ``v = A^2 + c^2 - 2 A c cos(k delay)``.

    The objective ``P(A) = sum (A^2 - A b_j - r_j)^2`` with
    ``b_j = 2 c cos(k_j delay)`` and ``r_j = v_j - c^2`` is a quartic, so
    its stationary points are the roots of a cubic built from five row
    sums.  Tying ``A^2`` to ``A`` stays well conditioned when ``k delay``
    is small and ``cos`` is nearly constant.
    """
    b = 2.0 * c[:, None] * np.cos(k * delay[:, None])
    r = v - (c * c)[:, None]
    n = float(k.size)
    sb, sbb, sr = b.sum(1), (b * b).sum(1), r.sum(1)
    srb, srr = (r * b).sum(1), (r * r).sum(1)
    # P'(A)/2 = 2n A^3 - 3 sb A^2 + (sbb - 2 sr) A + srb
    comp = np.zeros((v.shape[0], 3, 3))
    comp[:, 0, 0] = 1.5 * sb / n
    comp[:, 0, 1] = -(sbb - 2.0 * sr) / (2.0 * n)
    comp[:, 0, 2] = -srb / (2.0 * n)
    comp[:, 1, 0] = 1.0
    comp[:, 2, 1] = 1.0
    roots = np.linalg.eigvals(comp)
    cand = np.where(np.abs(roots.imag) <= 1e-9 * np.abs(roots), roots.real, np.nan)
    cand = np.where(cand >= 0, cand, np.nan)
    cand = np.concatenate([cand, np.zeros((v.shape[0], 1))], axis=1)

    def cost(A):
        return (n * A ** 4 - 2.0 * A ** 3 * sb[:, None] + A ** 2 * (sbb - 2.0 * sr)[:, None]
                + 2.0 * A * srb[:, None] + srr[:, None])

    vals = np.where(np.isfinite(cand), cost(np.nan_to_num(cand)), np.inf)
    return np.take_along_axis(cand, np.argmin(vals, axis=1)[:, None], axis=1)[:, 0]


def _prony_delay(v, dk):
    """Delay from the three-term recurrence of uniformly sampled cosines.

    First differences ``d_j`` of ``a + b cos(j theta)`` satisfy
    ``d_{j+1} - 2 d_j + d_{j-1} = -theta^2_eff d_j`` with
    ``theta^2_eff = 2 - 2 cos theta``.
    """
    d = np.diff(v, axis=1)
    dd = d[:, 2:] - 2.0 * d[:, 1:-1] + d[:, :-2]
    num = -np.sum(d[:, 1:-1] * dd, axis=1)
    den = np.sum(d[:, 1:-1] ** 2, axis=1)
    with np.errstate(divide="ignore", invalid="ignore"):
        t2 = num / den
    theta = 2.0 * np.arcsin(np.sqrt(np.clip(t2, 0.0, 4.0)) / 2.0)
    ok = np.isfinite(t2) & (t2 > 0) & (den > 0)
    return np.where(ok, theta / dk, np.nan)


def _grid_delay(v, k, c, delays, chunk=512):
    """Best delay on a grid by least squares with ``A`` profiled out."""
    best = np.zeros(v.shape[0])
    best_cost = np.full(v.shape[0], np.inf)
    for start in range(0, delays.size, chunk):
        dg = delays[start:start + chunk]
        for j, dj in enumerate(dg):
            dl = np.full(v.shape[0], dj)
            A = _amplitude_given_delay(v, k, c, dl)
            cst = _cost(v, k, c, A, dl)
            better = cst < best_cost
            best[better], best_cost[better] = dj, cst[better]
    return best


def _fft_delay(v, k, c, n_cand=8, chunk=64):
    """Grid search over delays in ``(0, pi / dk]`` for a uniform ``k``.

    The linear fit ``v ~ a + b cos(k delay)`` is profiled on the grid
    ``delay_m = 2 pi m / (L dk)`` in one zero-padded FFT per row; its row
    sums have closed forms.  The ``n_cand`` best local minima, and every
    delay below one period over ``k_max``, are then ranked by the exact
    cost with ``A`` profiled out.
    """
    n = k.size
    dk = k[1] - k[0]
    L = 1 << int(np.ceil(np.log2(16.0 * k[-1] / dk)))
    m = np.arange(1, L // 2 + 1)
    delays = 2.0 * np.pi * m / (L * dk)
    e = np.fft.ifft(np.ones(n), L) * L             # sum_j exp(i j theta_m)
    ph = np.exp(1j * k[0] * delays)
    s_c = (ph * e[m]).real
    s_cc = 0.5 * n + 0.5 * (ph * ph * e[(2 * m) % L]).real
    det = n * s_cc - s_c ** 2
    ok = det > 1e-9 * n * n
    small = np.flatnonzero(delays * k[-1] <= 2.0 * np.pi)
    best = np.zeros(v.shape[0])
    for start in range(0, v.shape[0], chunk):
        blk = v[start:start + chunk]
        s_v = blk.sum(axis=1)[:, None]
        s_vc = ((np.fft.ifft(blk, L, axis=1) * L)[:, m] * ph).real
        with np.errstate(divide="ignore", invalid="ignore"):
            gain = (s_cc * s_v ** 2 - 2.0 * s_c * s_v * s_vc + n * s_vc ** 2) / det
        gain = np.where(ok, gain, -np.inf)
        # local maxima of the explained energy, best first
        peak = np.zeros_like(gain, dtype=bool)
        peak[:, 1:-1] = (gain[:, 1:-1] >= gain[:, :-2]) & (gain[:, 1:-1] >= gain[:, 2:])
        score = np.where(peak, gain, -np.inf)
        cand = np.argsort(-score, axis=1)[:, :n_cand]
        rows = np.arange(blk.shape[0])
        valid = np.isfinite(score[rows[:, None], cand])
        # the linear fit cannot tell small delays apart, so score them all
        cand = np.concatenate([cand, np.broadcast_to(small, (blk.shape[0], small.size))], axis=1)
        valid = np.concatenate([valid, np.ones((blk.shape[0], small.size), dtype=bool)], axis=1)
        cc = c[start:start + chunk]
        costs = np.empty(cand.shape)
        for j in range(cand.shape[1]):
            dl = delays[cand[:, j]]
            costs[:, j] = _cost(blk, k, cc, _amplitude_given_delay(blk, k, cc, dl), dl)
        costs = np.where(valid, costs, np.inf)
        best[start:start + chunk] = delays[cand[rows, np.argmin(costs, axis=1)]]
    return best


def _cost(v, k, c, A, delay):
    model = A[:, None] ** 2 + (c * c)[:, None] - 2.0 * A[:, None] * c[:, None] * np.cos(k * delay[:, None])
    return np.sum((v - model) ** 2, axis=1)


def _levenberg(v, k, c, A, delay, iters):
    """Levenberg-Marquardt on ``(A, delay)``; steps that raise the cost
    are rejected and the damping increased."""
    lam = np.full(v.shape[0], 1e-3)
    cost = _cost(v, k, c, A, delay)
    for _ in range(iters):
        ck = np.cos(k * delay[:, None])
        sk = np.sin(k * delay[:, None])
        model = A[:, None] ** 2 + (c * c)[:, None] - 2.0 * A[:, None] * c[:, None] * ck
        r = v - model
        jA = 2.0 * A[:, None] - 2.0 * c[:, None] * ck
        jD = 2.0 * A[:, None] * c[:, None] * k * sk
        a11, a12, a22 = (jA * jA).sum(1), (jA * jD).sum(1), (jD * jD).sum(1)
        b1, b2 = (jA * r).sum(1), (jD * r).sum(1)
        a11d, a22d = a11 * (1.0 + lam), a22 * (1.0 + lam)
        det = a11d * a22d - a12 * a12
        with np.errstate(divide="ignore", invalid="ignore"):
            dA = np.nan_to_num((a22d * b1 - a12 * b2) / det)
            dD = np.nan_to_num((a11d * b2 - a12 * b1) / det)
        A1, D1 = A + dA, np.abs(delay + dD)
        c1 = _cost(v, k, c, A1, D1)
        ok = c1 <= cost
        A, delay, cost = np.where(ok, A1, A), np.where(ok, D1, delay), np.where(ok, c1, cost)
        lam = np.where(ok, lam * 0.3, lam * 10.0)
    return A, delay


def fit_f1_model(v, k, dist, iters=4, accept=1e-6):
    """Fit ``A`` and the delay to F1 sweeps row by row.

    The delay is initialized from the cosine recurrence (exact on noiseless
    data).  Rows where that fails, or leaves a relative rms misfit above
    ``accept``, get a profiled least-squares grid search over delays in
    ``(0, pi / dk]``.  All rows are polished by Levenberg-Marquardt.

    Returns
    -------
    A, delay, rms : ndarray
    """
    v = np.atleast_2d(np.asarray(v, dtype=float))
    k = np.asarray(k, dtype=float)
    dist = np.asarray(dist, dtype=float).reshape(-1)
    c = _c(dist)
    delay = _prony_delay(v, k[1] - k[0])
    bad = ~np.isfinite(delay) | (delay * k[-1] > 0.5 * np.pi * k.size)
    if np.any(~bad):
        A0 = _amplitude_given_delay(v[~bad], k, c[~bad], delay[~bad])
        q = _quality(v[~bad], A0, delay[~bad], dist[~bad], k)
        bad[np.flatnonzero(~bad)[~(q <= accept)]] = True
    if np.any(bad):
        # phase step of at most pi/8 at k_max, up to the Nyquist delay pi / dk
        dk = np.diff(k)
        if k.size >= 8 and np.allclose(dk, dk[0], rtol=1e-9, atol=0.0):
            delay[bad] = _fft_delay(v[bad], k, c[bad])
        else:
            step = np.pi / (8.0 * k[-1])
            grid = np.arange(1, int(np.pi / dk[0] / step) + 1) * step
            delay[bad] = _grid_delay(v[bad], k, c[bad], grid)
    A = _amplitude_given_delay(v, k, c, delay)
    A, delay = _levenberg(v, k, c, A, delay, iters)
    return A, delay, _quality(v, A, delay, dist, k)


def extract_observables(values, grid, dist, tol=DEFAULT_LOS_TOL, fallback=True, chunk=65536):
    """Vectorized extraction for many F1 sweeps.

    Rows whose sweep shows at least two maxima use peak pairing; the
    remaining oscillating rows use :func:`fit_f1_model` when ``fallback``.

    Returns
    -------
    dict with arrays ``A_hat``, ``tau_hat``, ``line_of_sight``, ``quality``
    """
    values = np.atleast_2d(np.asarray(values, dtype=float))
    dist = np.asarray(dist, dtype=float).reshape(-1)
    k = grid.k
    m = values.shape[0]
    A = np.empty(m)
    tau = np.empty(m)
    los = np.zeros(m, dtype=bool)
    for start in range(0, m, chunk):
        sl = slice(start, min(m, start + chunk))
        v, d = values[sl], dist[sl]
        c = _c(d)
        const, scale = _oscillation(v, d, tol)
        a_blk = c + np.sqrt(np.clip(v.mean(axis=1), 0.0, None))
        t_blk = d.copy()
        rest = np.flatnonzero(~const)
        cross = _crossings(v[rest], tol * scale[rest])
        fit_rows = []
        for i, cr in zip(rest, cross):
            if cr >= 3:
                _, val, period = refined_maxima(k, v[i])
                if period is not None:
                    try:
                        a_blk[i] = _amplitude_from_peaks(val, c[i])
                        t_blk[i] = d[i] + 2.0 * np.pi / period
                        continue
                    except (SpanError, InconsistentDataError):
                        pass
            fit_rows.append(i)
        fit_rows = np.asarray(fit_rows, dtype=int)
        if fit_rows.size:
            if not fallback:
                raise IndeterminateError(f"{fit_rows.size} sweeps hold fewer than two maxima")
            fa, fd, _ = fit_f1_model(v[fit_rows], k, d[fit_rows], accept=max(tol, 1e-6))
            a_blk[fit_rows] = fa
            t_blk[fit_rows] = d[fit_rows] + fd
        A[sl], tau[sl], los[sl] = a_blk, t_blk, const
    quality = np.empty(m)
    for start in range(0, m, chunk):
        sl = slice(start, min(m, start + chunk))
        quality[sl] = _quality(values[sl], A[sl], tau[sl] - dist[sl], dist[sl], k)
    return {"A_hat": A, "tau_hat": tau, "line_of_sight": los, "quality": quality}


# -- observables table ----------------------------------------------------

OBS_COLUMNS = ("z", "alpha", "s", "dist", "A_hat", "tau_hat", "line_of_sight", "quality")


@dataclass
class ObservablesTable:
    """Per-chord extracted observables (the ``.pkobs`` CSV)."""

    z: np.ndarray
    alpha: np.ndarray
    s: np.ndarray
    dist: np.ndarray
    A_hat: np.ndarray
    tau_hat: np.ndarray
    line_of_sight: np.ndarray
    quality: np.ndarray

    def __post_init__(self):
        for name in OBS_COLUMNS:
            dtype = bool if name == "line_of_sight" else float
            setattr(self, name, np.asarray(getattr(self, name), dtype=dtype).reshape(-1))
        n = self.z.size
        if any(getattr(self, c).size != n for c in OBS_COLUMNS):
            raise ConfigError("observables columns differ in length")

    def __len__(self):
        return self.z.size

    @classmethod
    def from_chords(cls, chords, tau, A, line_of_sight=None, quality=None):
        n = len(chords)
        los = np.zeros(n, bool) if line_of_sight is None else line_of_sight
        q = np.zeros(n) if quality is None else quality
        return cls(chords.z, chords.alpha, chords.s, chords.dist, A, tau, los, q)

    @property
    def slices(self):
        return np.unique(self.z)

    def rows_for_slice(self, z, atol=1e-9):
        idx = np.flatnonzero(np.abs(self.z - z) <= atol)
        if idx.size == 0:
            raise MissingSliceError(f"no observables for slice z={z}")
        return idx

    def to_csv(self):
        buf = io.StringIO()
        buf.write(",".join(OBS_COLUMNS) + "\n")
        for row in zip(*(getattr(self, c) for c in OBS_COLUMNS)):
            buf.write(",".join(str(int(v)) if isinstance(v, np.bool_) else repr(float(v))
                               for v in row) + "\n")
        return buf.getvalue()

    @classmethod
    def from_csv(cls, text):
        lines = text.splitlines()
        if not lines or tuple(lines[0].strip().split(",")) != OBS_COLUMNS:
            raise FormatError(f"observables header must be {','.join(OBS_COLUMNS)} (byte offset 0)")
        offset = len(lines[0]) + 1
        cols = [[] for _ in OBS_COLUMNS]
        for line in lines[1:]:
            parts = line.split(",")
            if len(parts) != len(OBS_COLUMNS):
                raise FormatError(f"malformed observables row at byte offset {offset}")
            try:
                for j, p in enumerate(parts):
                    cols[j].append(float(p))
            except ValueError as exc:
                raise FormatError(f"bad number at byte offset {offset}: {exc}") from exc
            offset += len(line) + 1
        arrs = {c: np.asarray(v) for c, v in zip(OBS_COLUMNS, cols)}
        arrs["line_of_sight"] = arrs["line_of_sight"] != 0
        return cls(**arrs)

    def save(self, path):
        with open(path, "w", newline="") as fh:
            fh.write(self.to_csv())

    @classmethod
    def load(cls, path):
        with open(path, newline="") as fh:
            return cls.from_csv(fh.read())
