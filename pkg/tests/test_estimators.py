import numpy as np
import pytest
from sklearn.base import clone
from sklearn.exceptions import NotFittedError

from phaseless.elliptic import VolumeGrid
from phaseless.errors import ConfigError
from phaseless.estimators import (AbelReconstructor, ObservableExtractor, PoissonSolver,
                                  RadonReconstructor)
from phaseless.forward import KGrid, f1_values, free_space_amplitude
from phaseless.geometry import BallConfig
from phaseless.phantom import eval_beta, eval_laplacian_beta


def test_params_round_trip_and_clone():
    est = AbelReconstructor(grid_n=32, n_modes=4)
    assert est.get_params()["n_modes"] == 4
    est.set_params(method="dense")
    twin = clone(est)
    assert twin.get_params() == est.get_params()
    assert "AbelReconstructor" in repr(est)


@pytest.mark.parametrize("est", [RadonReconstructor(), AbelReconstructor(), PoissonSolver()])
def test_unfitted_volume_estimators(est):
    with pytest.raises(NotFittedError):
        est.predict(np.zeros((1, 3)))
    with pytest.raises(NotFittedError):
        est.transform()


def test_extractor_round_trip():
    g = KGrid.from_step(50, 350, 1.0)
    rng = np.random.default_rng(0)
    d = rng.uniform(0.8, 1.8, 20)
    delay = np.where(np.arange(20) % 4 == 0, 0.0, rng.uniform(0.05, 0.3, 20))
    A = free_space_amplitude(d) * np.where(delay > 0, 1.02, 1.0)
    X = f1_values(A, d + delay, d, g.k)
    ext = ObservableExtractor(50.0, 350.0)
    out = ext.fit_transform(X, dist=d)
    np.testing.assert_allclose(out[:, 0], A, rtol=1e-8)
    np.testing.assert_allclose(out[:, 1], d + delay, atol=1e-8)
    np.testing.assert_array_equal(ext.predict(X, d), delay == 0)
    assert ext.n_features_in_ == g.n_k
    with pytest.raises(ConfigError):
        ext.transform(X)
    with pytest.raises(ConfigError):
        ext.transform(X[:, :-1], d)
    with pytest.raises(ConfigError):
        ObservableExtractor(tol=0.0).fit(X)
    with pytest.raises(NotFittedError):
        ObservableExtractor().transform(X, d)


def test_radon_reconstructor(small_table, centred_bump):
    rec = RadonReconstructor(grid_n=32).fit(small_table)
    assert rec.n_slices_ == 8
    assert rec.transform().shape == (32, 32, 32)
    pts = np.array([[0.0, 0.0, 0.0], [0.2, 0.1, -0.1], [0.95, 0.0, 0.0]])
    got = rec.predict(pts)
    np.testing.assert_allclose(got[:2], eval_beta(centred_bump, pts[:2]), atol=1e-3)
    assert abs(got[2]) < 1e-3  # FBP ringing outside the support, ~2.5% of the peak
    with pytest.raises(ConfigError):
        rec.predict(np.zeros((2, 2)))
    with pytest.raises(ConfigError):
        RadonReconstructor(apodization="hann").fit(small_table)
    with pytest.raises(ConfigError):
        RadonReconstructor().fit(np.zeros((3, 3)))


def test_abel_reconstructor(small_table):
    rec = AbelReconstructor(grid_n=24, n_modes=4).fit(small_table)
    assert rec.q_.shape == rec.volume_.shape == (24, 24, 24)
    with pytest.raises(ConfigError):
        AbelReconstructor(fill="nearest").fit(small_table)


def test_poisson_solver_accepts_arrays_and_grids(ball, centred_bump):
    q = VolumeGrid.from_function(lambda p: eval_laplacian_beta(centred_bump, p), ball)
    a = PoissonSolver().fit(q)
    b = PoissonSolver().fit(q.values)
    np.testing.assert_array_equal(a.transform(), b.transform())
    assert a.n_iter_ > 0
    ref = eval_beta(centred_bump, q.points())
    assert np.linalg.norm(a.transform() - ref) / np.linalg.norm(ref) < 0.05
    with pytest.raises(ConfigError):
        PoissonSolver().fit(np.zeros((4, 4, 5)))
    with pytest.raises(ConfigError):
        PoissonSolver(rtol=-1.0).fit(q)
    assert PoissonSolver().fit_transform(q).shape == q.shape
