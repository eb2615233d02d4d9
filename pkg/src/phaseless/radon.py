"""Slice-wise inversion of travel-time data by filtered backprojection.

Per slice, ``2 (tau - |x - y|)`` sampled on the chord grid is the 2-D
Radon transform of ``beta`` restricted to the slice (to first order).  The
angles cover ``(0, 2 pi]``, so every line is seen twice and the
backprojection carries a factor 1/2.
"""

from __future__ import annotations

import warnings
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field

import numpy as np

from .elliptic import VolumeGrid
from .errors import ConfigError, UnsupportedGridError
from .geometry import TWO_PI

APODIZATIONS = ("none", "cosine")


@dataclass
class Sinogram:
    """Per-slice data on a uniform ``(alpha, s)`` grid.

    ``data[i, j]`` belongs to angle ``alphas[i]`` and offset ``s_values[j]``.
    """

    z: float
    alphas: np.ndarray
    s_values: np.ndarray
    data: np.ndarray
    kind: str = "h"
    meta: dict = field(default_factory=dict)

    def __post_init__(self):
        self.alphas = np.asarray(self.alphas, dtype=float)
        self.s_values = np.asarray(self.s_values, dtype=float)
        self.data = np.asarray(self.data, dtype=float)
        if self.data.shape != (self.alphas.size, self.s_values.size):
            raise ConfigError(f"sinogram data shape {self.data.shape} does not match "
                              f"({self.alphas.size}, {self.s_values.size})")
        if not np.all(np.isfinite(self.data)):
            raise ConfigError("sinogram data must be finite")

    @property
    def ds(self):
        return float(self.s_values[1] - self.s_values[0])

    def check_uniform(self, rtol=1e-9):
        for name, v in (("alpha", self.alphas), ("s", self.s_values)):
            if v.size < 2:
                raise UnsupportedGridError(f"{name} grid needs at least 2 samples")
            d = np.diff(v)
            if np.any(np.abs(d - d.mean()) > rtol * max(abs(d.mean()), 1e-300)) or d.mean() <= 0:
                raise UnsupportedGridError(f"{name} grid is not uniform and increasing")
        span = self.alphas[1] - self.alphas[0]
        if not np.isclose(span * self.alphas.size, TWO_PI, rtol=1e-9):
            raise UnsupportedGridError("angles must cover (0, 2 pi] uniformly")

    def scaled(self, factor):
        return Sinogram(self.z, self.alphas, self.s_values, self.data * factor, self.kind,
                        dict(self.meta))


@dataclass
class SliceImage:
    """Slice values on the square grid ``coords x coords`` (``[ix, iy]``)."""

    z: float
    coords: np.ndarray
    values: np.ndarray

    def __post_init__(self):
        self.coords = np.asarray(self.coords, dtype=float)
        self.values = np.asarray(self.values, dtype=float)

    def points(self):
        xx, yy = np.meshgrid(self.coords, self.coords, indexing="ij")
        return np.stack([xx, yy, np.full_like(xx, self.z)], axis=-1)


def slice_table(table, z, atol=1e-9):
    """Rows of ``table`` for slice ``z`` reshaped to ``(n_alpha, n_s)``.

    Returns
    -------
    alphas, s_values : ndarray
    index : ndarray of int, shape (n_alpha, n_s)
        Table row per grid cell, ``-1`` where the chord is missing.
    """
    rows = table.rows_for_slice(z, atol)
    alphas = np.unique(np.round(table.alpha[rows], 12))
    svals = np.unique(np.round(table.s[rows], 12))
    ia = np.searchsorted(alphas, np.round(table.alpha[rows], 12))
    js = np.searchsorted(svals, np.round(table.s[rows], 12))
    index = np.full((alphas.size, svals.size), -1, dtype=int)
    index[ia, js] = rows
    return alphas, svals, index


def assemble_h_sinogram(table, z):
    """Sinogram of ``h = 2 (tau_hat - |x - y|)`` for slice ``z``.

    Missing chords are filled with 0 and reported in a warning.
    """
    alphas, svals, index = slice_table(table, z)
    have = index >= 0
    data = np.zeros(index.shape)
    data[have] = 2.0 * (table.tau_hat[index[have]] - table.dist[index[have]])
    if not np.all(have):
        warnings.warn(f"slice z={z}: {np.count_nonzero(~have)} chords missing, filled with 0",
                      stacklevel=2)
    return Sinogram(float(z), alphas, svals, data, "h", {"coverage": float(have.mean())})


def _next_pow2(n):
    return 1 << int(np.ceil(np.log2(max(n, 1))))


def ramp_filter(data, ds, apodization="cosine"):
    """Convolve each row with the band-limited ramp (Ram-Lak) kernel.

    The kernel is sampled in space and transformed, so the zero-frequency
    gain is exact.  Rows are zero-padded to the next power of two of at
    least twice their length.  ``cosine`` apodization multiplies the
    response by ``cos(pi f ds)``.
    """
    if apodization not in APODIZATIONS:
        raise ConfigError(f"apodization must be one of {APODIZATIONS}")
    n = data.shape[-1]
    size = _next_pow2(2 * n)
    idx = np.arange(size)
    idx = np.where(idx < size // 2, idx, idx - size)
    kern = np.zeros(size)
    kern[0] = 1.0 / (4.0 * ds * ds)
    odd = idx % 2 == 1
    kern[odd] = -1.0 / (np.pi * idx[odd] * ds) ** 2
    resp = np.real(np.fft.fft(kern)) * ds
    if apodization == "cosine":
        f = np.fft.fftfreq(size, d=ds)
        resp = resp * np.cos(np.pi * f * ds)
    spectrum = np.fft.fft(data, n=size, axis=-1) * resp
    return np.real(np.fft.ifft(spectrum, axis=-1))[..., :n]


def backproject(filtered, alphas, s_values, xy):
    """Half-weighted backprojection over ``(0, 2 pi]`` onto points ``xy``.

    Linear interpolation in ``s``; offsets outside the sampled range
    contribute 0.
    """
    xy = np.asarray(xy, dtype=float)
    flat = xy.reshape(-1, 2)
    ds = s_values[1] - s_values[0]
    n_s = s_values.size
    out = np.zeros(flat.shape[0])
    for i, a in enumerate(alphas):
        t = (flat[:, 0] * np.cos(a) + flat[:, 1] * np.sin(a) - s_values[0]) / ds
        j = np.floor(t).astype(int)
        w = t - j
        ok = (j >= 0) & (j < n_s - 1)
        jj = np.where(ok, j, 0)
        row = filtered[i]
        out += np.where(ok, (1.0 - w) * row[jj] + w * row[jj + 1], 0.0)
    dalpha = TWO_PI / alphas.size
    return (0.5 * dalpha * out).reshape(xy.shape[:-1])


def inverse_radon_fbp(sg, n=128, extent=None, coords=None, apodization="cosine",
                      min_samples=32):
    """Filtered backprojection of one sinogram.

    Parameters
    ----------
    sg : Sinogram
    n : int
        Image size when ``coords`` is not given; the grid is cell-centred
        on ``[-extent, extent]`` with ``extent`` defaulting to ``max |s|``
        padded by one sample.
    coords : array_like, optional
        Explicit 1-D pixel-centre coordinates shared by both axes.

    Raises
    ------
    UnsupportedGridError
        Non-uniform grids or fewer than ``min_samples`` angles or offsets.
    """
    sg.check_uniform()
    if sg.alphas.size < min_samples or sg.s_values.size < min_samples:
        raise UnsupportedGridError(f"need at least {min_samples} angles and offsets")
    if coords is None:
        ext = float(extent) if extent is not None else float(np.max(np.abs(sg.s_values)) + sg.ds)
        h = 2.0 * ext / n
        coords = -ext + (np.arange(n) + 0.5) * h
    coords = np.asarray(coords, dtype=float)
    filt = ramp_filter(sg.data, sg.ds, apodization)
    xx, yy = np.meshgrid(coords, coords, indexing="ij")
    vals = backproject(filt, sg.alphas, sg.s_values, np.stack([xx, yy], -1))
    return SliceImage(sg.z, coords, vals)


def stack_slices(images, z_values, cfg, n=None, zero_at=None):
    """Linear interpolation of slice images in ``z`` onto the volume grid.

    Slices are padded with zero images at ``z = +-zero_at`` (default ``R``);
    voxels outside ``|x| < B`` or beyond the padded range are 0.
    """
    grid = VolumeGrid.empty(cfg, n)
    zero_at = cfg.R if zero_at is None else zero_at
    order = np.argsort(z_values)
    zs = np.concatenate([[-zero_at], np.asarray(z_values, dtype=float)[order], [zero_at]])
    stack = np.stack([np.zeros_like(images[0])] + [images[i] for i in order]
                     + [np.zeros_like(images[0])], axis=0)
    zg = grid.axis(2)
    j = np.clip(np.searchsorted(zs, zg) - 1, 0, zs.size - 2)
    w = np.clip((zg - zs[j]) / (zs[j + 1] - zs[j]), 0.0, 1.0)
    inside = (zg >= zs[0]) & (zg <= zs[-1])
    vol = (1.0 - w)[None, None, :] * np.moveaxis(stack[j], 0, -1) \
        + w[None, None, :] * np.moveaxis(stack[j + 1], 0, -1)
    vol = np.where(inside[None, None, :], vol, 0.0)
    grid.values = np.where(grid.mask(cfg.B), vol, 0.0)
    return grid


def map_slices(func, zs, workers=1):
    """``[func(z) for z in zs]``, on a thread pool when ``workers > 1``."""
    if workers is None or workers <= 1 or len(zs) < 2:
        return [func(z) for z in zs]
    with ThreadPoolExecutor(max_workers=int(workers)) as pool:
        return list(pool.map(func, zs))


def reconstruct_beta_radon(table, cfg, n=None, apodization="cosine", return_slices=False,
                           workers=1):
    """Volume of ``beta`` from an observables table, slice by slice.

    Each slice is reconstructed on the in-plane voxel centres of the
    ``n^3`` volume grid, then slices are interpolated linearly in ``z``.
    ``workers`` threads share the slices.
    """
    grid = VolumeGrid.empty(cfg, n)
    coords = grid.axis(0)
    zs = table.slices

    def one(z):
        sg = assemble_h_sinogram(table, z)
        return inverse_radon_fbp(sg, coords=coords, apodization=apodization)

    slices = map_slices(one, zs, workers)
    vol = stack_slices([img.values for img in slices], zs, cfg, grid.shape[0])
    vol.meta["method"] = "radon"
    return (vol, slices) if return_slices else vol
