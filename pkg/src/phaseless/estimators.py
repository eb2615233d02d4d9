"""Estimator-style wrappers around the reconstruction stages.

The classes follow the scikit-learn conventions: constructor arguments
are stored untouched, ``fit`` validates input and sets attributes with a
trailing underscore, and ``get_params``/``set_params`` come from
:class:`sklearn.base.BaseEstimator`.

Example
-------
>>> rec = RadonReconstructor(grid_n=64).fit(table)          # doctest: +SKIP
>>> beta_at_points = rec.predict(points)                     # doctest: +SKIP
"""

from __future__ import annotations

import numpy as np
from scipy.interpolate import RegularGridInterpolator
from sklearn.base import BaseEstimator, TransformerMixin
from sklearn.utils.validation import check_is_fitted

from ._validation import check_choice, check_finite_array, check_scalar
from .elliptic import VolumeGrid, poisson_solve_ball
from .errors import ConfigError
from .extract import DEFAULT_LOS_TOL, ObservablesTable, extract_observables
from .forward import KGrid
from .geometry import BallConfig


def _as_table(X):
    if isinstance(X, ObservablesTable):
        return X
    if isinstance(X, str):
        return ObservablesTable.load(X)
    raise ConfigError(f"expected an ObservablesTable or a .pkobs path, got {type(X).__name__}")


class _VolumeMixin:
    """``predict`` by trilinear interpolation of the fitted ``volume_``."""

    def _ball(self):
        check_scalar(self.B, "B", low=0.0, low_inclusive=False)
        check_scalar(self.R, "R", low=0.0, low_inclusive=False)
        check_scalar(self.grid_n, "grid_n", int, low=8)
        return BallConfig(float(self.B), float(self.R), int(self.grid_n))

    def predict(self, X):
        """Values of the fitted volume at points ``X`` of shape (m, 3);
        0 outside the grid."""
        check_is_fitted(self, "volume_")
        pts = check_finite_array(X, "X", ndim=2)
        if pts.shape[1] != 3:
            raise ConfigError(f"points must have 3 columns, got {pts.shape[1]}")
        v = self.volume_
        interp = RegularGridInterpolator(tuple(v.axis(i) for i in range(3)), v.values,
                                         bounds_error=False, fill_value=0.0)
        return interp(pts)

    def transform(self, X=None):
        """The fitted volume as an ``(n, n, n)`` array (``X`` is ignored)."""
        check_is_fitted(self, "volume_")
        return self.volume_.values.copy()


class ObservableExtractor(TransformerMixin, BaseEstimator):
    """Travel time and amplitude from F1 frequency sweeps.

    Parameters
    ----------
    k0, k_max : float
        First and last wavenumber of the sweep.
    tol : float
        Relative tolerance of the line-of-sight test.
    fallback : bool
        Fit the F1 model when a sweep shows fewer than two maxima.

    Notes
    -----
    ``X`` is an ``(n_chords, n_k)`` array of intensities; the chord lengths
    ``dist`` are needed by :meth:`transform`.
    """

    def __init__(self, k0=50.0, k_max=450.0, tol=DEFAULT_LOS_TOL, fallback=True):
        self.k0 = k0
        self.k_max = k_max
        self.tol = tol
        self.fallback = fallback

    def fit(self, X, y=None):
        X = check_finite_array(X, "X", ndim=2)
        check_scalar(self.tol, "tol", low=0.0, low_inclusive=False)
        check_choice(self.fallback, "fallback", (True, False))
        self.grid_ = KGrid(float(self.k0), float(self.k_max), X.shape[1])
        self.n_features_in_ = X.shape[1]
        return self

    def _extract(self, X, dist):
        check_is_fitted(self, "grid_")
        X = check_finite_array(X, "X", ndim=2)
        if X.shape[1] != self.n_features_in_:
            raise ConfigError(f"X has {X.shape[1]} samples per sweep, fitted with "
                              f"{self.n_features_in_}")
        if dist is None:
            raise ConfigError("dist (chord lengths) is required")
        dist = check_finite_array(dist, "dist", ndim=1)
        if dist.size != X.shape[0]:
            raise ConfigError("dist must have one entry per sweep")
        return extract_observables(X, self.grid_, dist, self.tol, self.fallback)

    def transform(self, X, dist=None):
        """``(n_chords, 2)`` array of ``[A_hat, tau_hat]``."""
        res = self._extract(X, dist)
        return np.column_stack([res["A_hat"], res["tau_hat"]])

    def fit_transform(self, X, y=None, dist=None):
        return self.fit(X).transform(X, dist)

    def predict(self, X, dist=None):
        """Line-of-sight flags (``True`` where ``tau = |x - y|``)."""
        return self._extract(X, dist)["line_of_sight"]


class RadonReconstructor(_VolumeMixin, BaseEstimator):
    """``beta`` from travel times by slice-wise filtered backprojection.

    ``fit`` takes an :class:`ObservablesTable` (or a ``.pkobs`` path) and
    stores the volume in ``volume_``.
    """

    def __init__(self, B=1.0, R=0.8, grid_n=128, apodization="cosine", workers=1):
        self.B = B
        self.R = R
        self.grid_n = grid_n
        self.apodization = apodization
        self.workers = workers

    def fit(self, X, y=None):
        from .radon import APODIZATIONS, reconstruct_beta_radon
        table = _as_table(X)
        check_choice(self.apodization, "apodization", APODIZATIONS)
        self.volume_ = reconstruct_beta_radon(table, self._ball(), apodization=self.apodization,
                                              workers=self.workers)
        self.n_slices_ = len(table.slices)
        return self


class AbelReconstructor(_VolumeMixin, BaseEstimator):
    """``beta`` from amplitudes via angular modes, the Volterra solve and
    the Poisson solve.

    Attributes
    ----------
    q_ : VolumeGrid
        Reconstructed ``lap(beta)``.
    volume_ : VolumeGrid
        ``beta``.
    """

    def __init__(self, B=1.0, R=0.8, grid_n=128, n_modes=None, n_radial=None,
                 method="iterate", fill="zero", rtol=1e-8, workers=1):
        self.B = B
        self.R = R
        self.grid_n = grid_n
        self.n_modes = n_modes
        self.n_radial = n_radial
        self.method = method
        self.fill = fill
        self.rtol = rtol
        self.workers = workers

    def fit(self, X, y=None):
        from .abelgeo import reconstruct_beta_abel
        table = _as_table(X)
        check_choice(self.method, "method", ("iterate", "dense"))
        check_choice(self.fill, "fill", ("zero", "hold"))
        check_scalar(self.n_modes, "n_modes", int, low=0, allow_none=True)
        check_scalar(self.n_radial, "n_radial", int, low=8, allow_none=True)
        self.volume_, self.q_ = reconstruct_beta_abel(
            table, self._ball(), N=self.n_modes, M=self.n_radial, method=self.method,
            fill=self.fill, rtol=self.rtol, workers=self.workers)
        self.n_slices_ = len(table.slices)
        return self


class PoissonSolver(_VolumeMixin, BaseEstimator):
    """Dirichlet solve of ``lap(beta) = q`` in the ball ``|x| < B``.

    ``fit`` accepts a :class:`VolumeGrid` or an ``(n, n, n)`` array of ``q``
    on the cell-centred grid spanning ``[-B, B]^3``.
    """

    def __init__(self, B=1.0, R=0.8, rtol=1e-8, max_iter=None):
        self.B = B
        self.R = R
        self.rtol = rtol
        self.max_iter = max_iter

    def _grid(self, X):
        if isinstance(X, VolumeGrid):
            return X
        q = check_finite_array(X, "q", ndim=3)
        if len(set(q.shape)) != 1:
            raise ConfigError(f"q must be a cube, got shape {q.shape}")
        grid = VolumeGrid.empty(BallConfig(float(self.B), float(self.R), max(q.shape[0], 8)),
                                q.shape[0])
        grid.values = q
        return grid

    def fit(self, X, y=None):
        check_scalar(self.rtol, "rtol", low=0.0, low_inclusive=False)
        q = self._grid(X)
        cfg = BallConfig(float(self.B), float(self.R), max(q.shape[0], 8))
        self.volume_ = poisson_solve_ball(q, cfg, rtol=self.rtol, max_iter=self.max_iter)
        self.n_iter_ = len(self.volume_.meta.get("residual_history", []))
        return self

    def fit_transform(self, X, y=None):
        return self.fit(X).transform()
