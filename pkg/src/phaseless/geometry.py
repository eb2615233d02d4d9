"""Measurement sphere, slice circles and chord parametrization.

A chord of the slice circle ``S_z`` (the intersection of the sphere
``|x| = B`` with the plane ``x3 = z``) is identified by ``(z, alpha, s)``:
the line is ``<r, nu(alpha)> = s`` in the slice plane with
``nu(alpha) = (cos alpha, sin alpha)``.

Endpoint order convention: the first endpoint sits at polar angle
``alpha + arccos(s / B_z)``, the second at ``alpha - arccos(s / B_z)``.
With this order the map between ordered endpoint pairs and ``(alpha, s)``
is one-to-one; swapping the endpoints gives the equivalent parameters
``(alpha + pi, -s)`` of the same line (see :meth:`ChordParam.canonical`).
"""

from __future__ import annotations

import io
import json
from dataclasses import dataclass, field

import numpy as np

from .errors import (ChordMissError, ConfigError, DegenerateChordError,
                     EmptySliceError, NonCoplanarError)

TWO_PI = 2.0 * np.pi


def wrap_angle(alpha):
    """Map angles into ``(0, 2*pi]``."""
    a = np.mod(alpha, TWO_PI)
    return np.where(a <= 0.0, TWO_PI, a) if np.ndim(a) else (TWO_PI if a <= 0.0 else float(a))


@dataclass(frozen=True)
class BallConfig:
    """Radii of the measurement sphere ``B`` and the support ball ``R``."""

    B: float = 1.0
    R: float = 0.8
    grid_n: int = 64

    def __post_init__(self):
        if not (0.0 < self.R < self.B):
            raise ConfigError(f"need 0 < R < B, got R={self.R}, B={self.B}")
        if int(self.grid_n) < 8:
            raise ConfigError(f"grid_n must be >= 8, got {self.grid_n}")

    def to_dict(self):
        return {"B": self.B, "R": self.R, "grid_n": self.grid_n}

    @classmethod
    def from_dict(cls, d):
        return cls(B=float(d["B"]), R=float(d["R"]), grid_n=int(d.get("grid_n", 64)))


def slice_radius(z, cfg):
    """Radius ``B_z = sqrt(B^2 - z^2)`` of the slice circle at height z."""
    z = np.asarray(z, dtype=float)
    if np.any(np.abs(z) >= cfg.B):
        raise EmptySliceError(f"slice |z| >= B={cfg.B} does not meet the ball")
    r = np.sqrt(cfg.B ** 2 - z ** 2)
    return float(r) if r.ndim == 0 else r


def support_radius(z, cfg):
    """Radius ``rho_0 = sqrt(R^2 - z^2)`` of the support disk (0 outside)."""
    z = np.asarray(z, dtype=float)
    r = np.sqrt(np.clip(cfg.R ** 2 - z ** 2, 0.0, None))
    return float(r) if r.ndim == 0 else r


@dataclass(frozen=True)
class ChordParam:
    z: float
    alpha: float
    s: float

    def canonical(self, atol=1e-12):
        """Equivalent parameters of the same line with ``s >= 0``.

        For diameters (``s == 0``) the angle is folded into ``(0, pi]``.
        """
        if self.s < -atol or (abs(self.s) <= atol and self.alpha > np.pi + atol):
            return ChordParam(self.z, wrap_angle(self.alpha + np.pi), -self.s)
        return self

    def same_line(self, other, tol=1e-10):
        a, b = self.canonical(), other.canonical()
        dalpha = abs(np.angle(np.exp(1j * (a.alpha - b.alpha))))
        return abs(a.z - b.z) <= tol and abs(a.s - b.s) <= tol and dalpha <= tol


def endpoints_from_chord(c, cfg):
    """Endpoints ``(x, y)`` of chord ``c`` on the slice circle, ordered
    per the module convention."""
    bz = slice_radius(c.z, cfg)
    if abs(c.s) >= bz:
        raise ChordMissError(f"|s|={abs(c.s)} >= B_z={bz}: line misses the circle")
    gamma = np.arccos(c.s / bz)
    a1, a2 = c.alpha + gamma, c.alpha - gamma
    x = np.array([bz * np.cos(a1), bz * np.sin(a1), c.z])
    y = np.array([bz * np.cos(a2), bz * np.sin(a2), c.z])
    return x, y


def chord_from_endpoints(x, y, atol=1e-12):
    """Inverse of :func:`endpoints_from_chord`.

    Raises if the points are not in a common horizontal plane or coincide.
    """
    x = np.asarray(x, dtype=float)
    y = np.asarray(y, dtype=float)
    scale = max(np.linalg.norm(x), np.linalg.norm(y), 1.0)
    if abs(x[2] - y[2]) > atol * scale * 1e3:
        raise NonCoplanarError(f"endpoints at different heights {x[2]} and {y[2]}")
    if np.linalg.norm(x - y) <= atol * scale:
        raise DegenerateChordError("coincident endpoints")
    z = 0.5 * (x[2] + y[2])
    phx = np.arctan2(x[1], x[0])
    phy = np.arctan2(y[1], y[0])
    gamma = 0.5 * np.mod(phx - phy, TWO_PI)
    bz = 0.5 * (np.hypot(x[0], x[1]) + np.hypot(y[0], y[1]))
    alpha = wrap_angle(phy + gamma)
    return ChordParam(float(z), float(alpha), float(bz * np.cos(gamma)))


@dataclass
class ChordSet:
    """Slice-wise chord family.

    Arrays are flat and ordered slice-major, then alpha, then s, so one
    slice reshapes to ``(n_alpha, n_s)``.
    """

    cfg: BallConfig
    z_values: np.ndarray
    n_alpha: int
    n_s: int
    z: np.ndarray
    alpha: np.ndarray
    s: np.ndarray
    x: np.ndarray
    y: np.ndarray
    meta: dict = field(default_factory=dict)

    def __len__(self):
        return self.z.shape[0]

    @property
    def per_slice(self):
        return self.n_alpha * self.n_s

    @property
    def dist(self):
        return np.linalg.norm(self.x - self.y, axis=-1)

    @property
    def chords(self):
        return [ChordParam(float(a), float(b), float(c))
                for a, b, c in zip(self.z, self.alpha, self.s)]

    def slice_index(self, i):
        n = self.per_slice
        return slice(i * n, (i + 1) * n)

    def alphas(self):
        return TWO_PI * np.arange(1, self.n_alpha + 1) / self.n_alpha

    def s_values(self, i):
        return self.s[self.slice_index(i)][: self.n_s].copy()

    # -- serialization: one JSON header line, then CSV rows ----------------
    COLUMNS = ("z", "alpha", "s", "x1", "x2", "x3", "y1", "y2", "y3")

    def to_text(self):
        header = {"format": "pkchord", "version": 1, **self.cfg.to_dict(),
                  "n_z": int(len(self.z_values)), "n_alpha": int(self.n_alpha),
                  "n_s": int(self.n_s), "z_values": [float(v) for v in self.z_values],
                  "columns": list(self.COLUMNS)}
        buf = io.StringIO()
        buf.write(json.dumps(header) + "\n")
        buf.write(",".join(self.COLUMNS) + "\n")
        rows = np.column_stack([self.z, self.alpha, self.s, self.x, self.y])
        np.savetxt(buf, rows, delimiter=",", fmt="%.17g")
        return buf.getvalue()

    def save(self, path):
        with open(path, "w") as fh:
            fh.write(self.to_text())

    @classmethod
    def from_text(cls, text):
        from .errors import FormatError
        lines = text.splitlines()
        try:
            header = json.loads(lines[0])
        except (json.JSONDecodeError, IndexError) as exc:
            raise FormatError(f"bad chord-set header: {exc}") from exc
        if header.get("format") != "pkchord":
            raise FormatError("not a pkchord file")
        cfg = BallConfig.from_dict(header)
        rows = np.loadtxt(io.StringIO("\n".join(lines[2:])), delimiter=",", ndmin=2)
        return cls(cfg=cfg, z_values=np.asarray(header["z_values"], dtype=float),
                   n_alpha=int(header["n_alpha"]), n_s=int(header["n_s"]),
                   z=rows[:, 0], alpha=rows[:, 1], s=rows[:, 2],
                   x=rows[:, 3:6], y=rows[:, 6:9])

    @classmethod
    def load(cls, path):
        with open(path) as fh:
            return cls.from_text(fh.read())


def chord_grid(cfg, n_z, n_alpha, n_s, z_values=None):
    """Uniform slice-wise chord family covering the support ball.

    Slices are cell-centred in ``(-R, R)``; angles are ``2*pi*j/n_alpha``,
    ``j = 1..n_alpha``; offsets are cell-centred in ``(-rho_0, rho_0)``
    with ``rho_0 = sqrt(R^2 - z^2)``, so every chord meets the support disk
    and never grazes the slice circle.
    """
    for name, v in (("n_z", n_z), ("n_alpha", n_alpha), ("n_s", n_s)):
        if int(v) < 1:
            raise ConfigError(f"{name} must be positive")
    if z_values is None:
        z_values = -cfg.R + (np.arange(n_z) + 0.5) * (2.0 * cfg.R / n_z)
    z_values = np.asarray(z_values, dtype=float)
    if np.any(np.abs(z_values) >= cfg.R):
        raise ConfigError("slice heights must lie in (-R, R)")
    alphas = TWO_PI * np.arange(1, n_alpha + 1) / n_alpha
    u = -1.0 + (np.arange(n_s) + 0.5) * (2.0 / n_s)

    zz, aa, uu = np.meshgrid(z_values, alphas, u, indexing="ij")
    rho0 = np.sqrt(cfg.R ** 2 - zz ** 2)
    ss = uu * rho0
    bz = np.sqrt(cfg.B ** 2 - zz ** 2)
    gamma = np.arccos(ss / bz)
    a1, a2 = aa + gamma, aa - gamma
    x = np.stack([bz * np.cos(a1), bz * np.sin(a1), zz], axis=-1).reshape(-1, 3)
    y = np.stack([bz * np.cos(a2), bz * np.sin(a2), zz], axis=-1).reshape(-1, 3)
    return ChordSet(cfg=cfg, z_values=z_values, n_alpha=int(n_alpha), n_s=int(n_s),
                    z=zz.ravel(), alpha=aa.ravel(), s=ss.ravel(), x=x, y=y)
