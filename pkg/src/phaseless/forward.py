"""Synthetic travel times, amplitudes and phaseless intensity sweeps.

Linearized observables use the first-order index perturbation
``n - 1 = beta/2 + O(beta^2)`` (``n^2 = 1 + beta``):

    tau(x, y) = |x - y| + (1/2) int_L beta
    A(x, y)   = (1 / (4 pi |x - y|)) * (1 - (|x - y|^2 / 4) int_0^1 lap(beta)(y + s(x - y)) s (1 - s) ds)

These agree with ray-traced (geodesic) values up to O(beta^2); see
:mod:`phaseless.geodesic`.
"""

from __future__ import annotations

from dataclasses import dataclass
from functools import lru_cache

import numpy as np
from scipy.interpolate import CubicSpline

from .errors import ConfigError, DegenerateChordError
from .phantom import _profile
from .quadrature import _panel_rule, ball_clip, segment_integral

FOUR_PI = 4.0 * np.pi


def _pairs(x, y):
    x = np.asarray(x, dtype=float)
    y = np.asarray(y, dtype=float)
    shape = np.broadcast_shapes(x.shape, y.shape)[:-1]
    x2 = np.broadcast_to(x, shape + (3,)).reshape(-1, 3)
    y2 = np.broadcast_to(y, shape + (3,)).reshape(-1, 3)
    d = np.linalg.norm(x2 - y2, axis=-1)
    if np.any(d == 0.0):
        raise DegenerateChordError("coincident chord endpoints")
    return x2, y2, d, shape


def _shaped(v, shape):
    v = v.reshape(shape)
    return float(v) if v.ndim == 0 else v


def free_space_amplitude(dist):
    return 1.0 / (FOUR_PI * np.asarray(dist, dtype=float))


@lru_cache(maxsize=1)
def _impact_tables(n=4097, panels=64, order=16):
    """Splines in ``v = (b/a)^2`` of the unit-bump chord integrals.

    ``F0 = int phi``, ``G0 = int lap``, ``G2 = int t^2 lap`` over the chord at
    normalized impact parameter ``b/a``, with ``t`` the normalized arc
    length from the closest point and ``lap = 4 u phi'' + 6 phi'``.
    """
    v = np.linspace(0.0, 1.0, n)
    half = np.sqrt(1.0 - v)
    tt, ww = _panel_rule(np.zeros(n), half, panels, order)
    phi, d1, d2 = _profile(v[:, None] + tt * tt)
    u = v[:, None] + tt * tt
    lap = 4.0 * u * d2 + 6.0 * d1
    f0 = 2.0 * np.sum(phi * ww, axis=1)
    g0 = 2.0 * np.sum(lap * ww, axis=1)
    g2 = 2.0 * np.sum(tt * tt * lap * ww, axis=1)
    return tuple(CubicSpline(v, f) for f in (f0, g0, g2))


def _sw(s):
    return s * (1.0 - s)


def _bump_moments(p, x, y, d):
    """Per chord: ``int_L beta`` (arc length) and
    ``int_0^1 lap(beta)(y + s(x - y)) s (1 - s) ds``."""
    f0, g0, g2 = _impact_tables()
    h = np.zeros(x.shape[0])
    m = np.zeros(x.shape[0])
    e = (x - y) / d[:, None]
    for b in p.bumps:
        a, eps = b.radius, b.amplitude
        w = np.asarray(b.center) - y
        along = np.sum(w * e, axis=1)
        v = np.clip((np.sum(w * w, axis=1) - along ** 2) / a ** 2, 0.0, None)
        sc = along / d
        outside = (np.sum(w * w, axis=1) >= a * a) & \
            (np.sum((np.asarray(b.center) - x) ** 2, axis=1) >= a * a)
        full = outside & (sc >= 0.0) & (sc <= 1.0) & (v < 1.0)
        if np.any(full):
            vf, scf, df = v[full], sc[full], d[full]
            h[full] += eps * a * f0(vf)
            m[full] += (eps / (a * df)) * (scf * (1.0 - scf) * g0(vf)
                                           - (a / df) ** 2 * g2(vf))
        part = ~outside
        if np.any(part):
            lo, hi = ball_clip(x[part], y[part], b.center, a)
            h[part] += d[part] * segment_integral(b.value, x[part], y[part], lo, hi)
            m[part] += segment_integral(b.laplacian, x[part], y[part], lo, hi, _sw)
    return h, m


def line_integral_beta(p, x, y):
    """Arc-length integral of beta along the straight segment [y, x]."""
    x2, y2, d, shape = _pairs(x, y)
    return _shaped(_bump_moments(p, x2, y2, d)[0], shape)


def tau_linearized(p, x, y):
    """Straight-ray travel time to first order in beta."""
    x2, y2, d, shape = _pairs(x, y)
    return _shaped(d + 0.5 * _bump_moments(p, x2, y2, d)[0], shape)


def laplacian_moment(p, x, y):
    """``int_0^1 lap(beta)(y + s(x - y)) s (1 - s) ds`` per chord."""
    x2, y2, d, shape = _pairs(x, y)
    return _shaped(_bump_moments(p, x2, y2, d)[1], shape)


def amplitude_linearized(p, x, y):
    """Leading-order amplitude of the point-source field, linearized in beta."""
    x2, y2, d, shape = _pairs(x, y)
    m = _bump_moments(p, x2, y2, d)[1]
    return _shaped(free_space_amplitude(d) * (1.0 - 0.25 * d * d * m), shape)


def weighted_line_integral(qfield, x, y, rtol=1e-10):
    """``|x - y| int_0^1 q(y + s(x - y)) s (1 - s) ds`` for a callable field.

    Adaptive Gauss-Legendre over the whole segment; used as the forward
    oracle of the weighted ray transform.
    """
    x2, y2, d, shape = _pairs(x, y)
    return _shaped(d * segment_integral(qfield, x2, y2, weight=_sw, rtol=rtol), shape)


@dataclass(frozen=True)
class KGrid:
    """Uniform frequency grid ``k0, k0 + dk, ..., k_max``."""

    k0: float
    k_max: float
    n_k: int

    def __post_init__(self):
        if not self.k0 > 0:
            raise ConfigError("k0 must be positive")
        if int(self.n_k) < 16:
            raise ConfigError("n_k must be >= 16")
        if not self.k_max > self.k0:
            raise ConfigError("k_max must exceed k0")

    @classmethod
    def from_step(cls, k0, k_max, dk):
        n = int(round((k_max - k0) / dk)) + 1
        return cls(float(k0), float(k0 + (n - 1) * dk), n)

    @property
    def dk(self):
        return (self.k_max - self.k0) / (self.n_k - 1)

    @property
    def k(self):
        return np.linspace(self.k0, self.k_max, self.n_k)

    @property
    def span(self):
        return self.k_max - self.k0

    def min_resolvable_delay(self, periods=2.0):
        """Smallest ``tau - |x - y|`` with ``periods`` full periods in span."""
        return periods * 2.0 * np.pi / self.span

    def to_dict(self):
        return {"k0": self.k0, "k_max": self.k_max, "n_k": self.n_k}

    @classmethod
    def from_dict(cls, d):
        return cls(float(d["k0"]), float(d["k_max"]), int(d["n_k"]))


@dataclass(frozen=True)
class ChordObservables:
    tau: float
    A: float
    dist: float

    def __post_init__(self):
        if self.dist <= 0:
            raise DegenerateChordError("dist must be positive")
        if self.tau < self.dist * (1 - 1e-14):
            raise ConfigError("tau must be >= |x - y|")
        if self.A <= 0:
            raise ConfigError("A must be positive")


@dataclass
class KSeries:
    grid: KGrid
    values: np.ndarray
    kind: str = "F1"
    dist: float = float("nan")
    chord: object = None

    def __post_init__(self):
        self.values = np.asarray(self.values, dtype=float)
        if self.kind not in ("F1", "F2"):
            raise ConfigError(f"unknown series kind {self.kind!r}")
        if self.values.shape[-1] != self.grid.n_k:
            raise ConfigError("series length does not match grid")


def f1_values(A, tau, dist, k, noise=0.0, remainder=0.0, rng=None):
    """Intensity of the scattered field, one row per chord.

    ``A^2 + c^2 - 2 A c cos(k (tau - dist))`` with ``c = 1/(4 pi dist)``,
    an optional ``remainder / k`` term and additive Gaussian noise of
    standard deviation ``noise * (A + c)^2`` clipped at zero.
    """
    A = np.asarray(A, dtype=float)[..., None]
    dist = np.asarray(dist, dtype=float)[..., None]
    delay = np.asarray(tau, dtype=float)[..., None] - dist
    c = free_space_amplitude(dist)
    k = np.asarray(k, dtype=float)
    v = A * A + c * c - 2.0 * A * c * np.cos(k * delay)
    if remainder:
        v = v + remainder / k
    if noise:
        rng = np.random.default_rng() if rng is None else rng
        v = v + rng.normal(scale=1.0, size=v.shape) * (noise * (A + c) ** 2)
    return np.clip(v, 0.0, None)


def f2_values(A, k, noise=0.0, remainder=0.0, rng=None):
    """Intensity of the full field: ``A^2`` plus optional ``remainder / k``."""
    A = np.asarray(A, dtype=float)[..., None]
    k = np.asarray(k, dtype=float)
    v = np.broadcast_to(A * A, A.shape[:-1] + k.shape).copy()
    if remainder:
        v = v + remainder / k
    if noise:
        rng = np.random.default_rng() if rng is None else rng
        v = v + rng.normal(size=v.shape) * (noise * A * A)
    return np.clip(v, 0.0, None)


def synth_f1(obs, grid, noise=0.0, remainder=0.0, rng=None, chord=None):
    vals = f1_values(obs.A, obs.tau, obs.dist, grid.k, noise, remainder, rng)
    return KSeries(grid, vals, "F1", obs.dist, chord)


def synth_f2(obs, grid, noise=0.0, remainder=0.0, rng=None, chord=None):
    vals = f2_values(obs.A, grid.k, noise, remainder, rng)
    return KSeries(grid, vals, "F2", obs.dist, chord)


def linearized_observables(p, x, y):
    """``(tau, A, dist)`` arrays for many chords in the linearized model."""
    x2, y2, d, _ = _pairs(x, y)
    h, m = _bump_moments(p, x2, y2, d)
    return d + 0.5 * h, free_space_amplitude(d) * (1.0 - 0.25 * d * d * m), d
