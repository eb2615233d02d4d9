"""Analytic media ``n(x)^2 = 1 + beta(x)`` built from smooth bumps.

Each bump contributes ``eps * exp(1 - 1/(1 - u))`` with
``u = |x - c|^2 / a^2`` inside its ball and zero outside.  The profile is
C-infinity with compact support, so gradients and Laplacians are available
in closed form.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field

import numpy as np

from .errors import ConfigError, SmallnessError
from .geometry import BallConfig


def _profile(u):
    """phi(u), phi'(u), phi''(u) of exp(1 - 1/(1-u)); zero for u >= 1."""
    inside = u < 1.0
    w = np.where(inside, 1.0 - u, 1.0)
    phi = np.where(inside, np.exp(1.0 - 1.0 / w), 0.0)
    d1 = -phi / w ** 2
    d2 = phi * (2.0 * u - 1.0) / w ** 4
    return phi, np.where(inside, d1, 0.0), np.where(inside, d2, 0.0)


@dataclass(frozen=True)
class Bump:
    center: tuple
    radius: float
    amplitude: float

    def __post_init__(self):
        object.__setattr__(self, "center", tuple(float(c) for c in self.center))
        if len(self.center) != 3:
            raise ConfigError("bump center must be a 3-vector")
        if self.radius <= 0:
            raise ConfigError("bump radius must be positive")
        if self.amplitude < 0:
            raise ConfigError("bump amplitude must be >= 0 (beta >= 0)")

    def _u(self, x):
        d = np.asarray(x, dtype=float) - np.asarray(self.center)
        return d, np.sum(d * d, axis=-1) / self.radius ** 2

    def value(self, x):
        _, u = self._u(x)
        return self.amplitude * _profile(u)[0]

    def grad(self, x):
        d, u = self._u(x)
        d1 = _profile(u)[1]
        return (self.amplitude * 2.0 / self.radius ** 2) * d1[..., None] * d

    def laplacian(self, x):
        _, u = self._u(x)
        _, d1, d2 = _profile(u)
        return self.amplitude / self.radius ** 2 * (4.0 * u * d2 + 6.0 * d1)

    def to_dict(self):
        return {"center": list(self.center), "radius": self.radius,
                "amplitude": self.amplitude}


# max over u in [0,1) of |4 u phi'' + 6 phi'|, used by the smallness gate
_U = np.linspace(0.0, 1.0, 20001)[:-1]
_LAP_PEAK = float(np.max(np.abs(4.0 * _U * _profile(_U)[2] + 6.0 * _profile(_U)[1])))


@dataclass(frozen=True)
class Phantom:
    """Sum of bumps inside the support ball ``|x| < R``."""

    bumps: tuple = ()
    cfg: BallConfig = field(default_factory=BallConfig)

    def __post_init__(self):
        object.__setattr__(self, "bumps", tuple(self.bumps))
        for b in self.bumps:
            if np.linalg.norm(b.center) + b.radius > self.cfg.R * (1 + 1e-12):
                raise ConfigError(f"bump {b} leaves the support ball R={self.cfg.R}")

    @property
    def a_min(self):
        return min((b.radius for b in self.bumps), default=self.cfg.R)

    def scaled(self, factor):
        return Phantom(tuple(Bump(b.center, b.radius, b.amplitude * factor)
                             for b in self.bumps), self.cfg)

    def beta_bound(self):
        """Upper bound on max beta (sum of amplitudes of overlapping bumps)."""
        return sum(b.amplitude for b in self.bumps)

    def laplacian_bound(self):
        return sum(b.amplitude / b.radius ** 2 for b in self.bumps) * _LAP_PEAK

    def check_smallness(self, max_beta=0.05, max_lap_R2=1.0):
        """Refuse media outside the linearization regime."""
        mb = self.beta_bound()
        ml = self.laplacian_bound() * self.cfg.R ** 2
        if mb > max_beta:
            raise SmallnessError(f"max beta bound {mb:.4g} exceeds {max_beta}")
        if ml > max_lap_R2:
            raise SmallnessError(f"max |lap beta| R^2 bound {ml:.4g} exceeds {max_lap_R2}")
        return self

    def to_dict(self):
        return {"ball": self.cfg.to_dict(), "bumps": [b.to_dict() for b in self.bumps]}

    @classmethod
    def from_dict(cls, d):
        cfg = BallConfig.from_dict(d["ball"]) if "ball" in d else BallConfig()
        bumps = [Bump(b["center"], float(b["radius"]), float(b["amplitude"]))
                 for b in d.get("bumps", [])]
        return cls(tuple(bumps), cfg)

    @classmethod
    def load(cls, path):
        with open(path) as fh:
            return cls.from_dict(json.load(fh))

    def save(self, path):
        with open(path, "w") as fh:
            json.dump(self.to_dict(), fh, indent=2)


def eval_beta(p, x):
    x = np.asarray(x, dtype=float)
    out = np.zeros(x.shape[:-1])
    for b in p.bumps:
        out = out + b.value(x)
    return out


def eval_grad_beta(p, x):
    x = np.asarray(x, dtype=float)
    out = np.zeros(x.shape)
    for b in p.bumps:
        out = out + b.grad(x)
    return out


def eval_laplacian_beta(p, x):
    x = np.asarray(x, dtype=float)
    out = np.zeros(x.shape[:-1])
    for b in p.bumps:
        out = out + b.laplacian(x)
    return out


def eval_n(p, x):
    return np.sqrt(1.0 + eval_beta(p, x))


def single_bump(cfg=None, center=(0.0, 0.0, 0.0), radius=0.5, amplitude=0.01):
    cfg = cfg or BallConfig()
    return Phantom((Bump(center, radius, amplitude),), cfg)
