import numpy as np
import pytest
from scipy import integrate
from scipy.special import ellipe, ellipk

from phaseless.abelgeo import (ModeTable, abel_L, assemble_g, default_modes, fourier_modes,
                               kernel_Q, kernel_T, kernel_T_tilde, kernel_tables, modes_to_q,
                               reconstruct_q_slice, rhs_from_mode, solve_modes, volterra_matrix,
                               volterra_solve)
from phaseless.errors import ConvergenceError, DomainError, ResolutionError
from phaseless.geometry import TWO_PI, BallConfig, support_radius
from phaseless.phantom import eval_laplacian_beta
from phaseless.radon import Sinogram

CFG = BallConfig(1.0, 0.8, 32)


def test_kernel_Q_closed_form_for_first_mode():
    t = np.linspace(0.05, 1.0, 20)
    ref = 2.0 / np.pi * ellipe(1.0 - t * t)
    np.testing.assert_allclose(kernel_Q(1, np.ones_like(t), t), ref, rtol=1e-12)


def test_kernel_T_closed_form_for_first_mode():
    r = 0.7
    t = np.linspace(0.05, 0.95, 19)
    m = 1.0 - t * t
    ref = 2.0 * t / (np.pi * r) * (ellipk(m) - ellipe(m)) / m
    np.testing.assert_allclose(kernel_T(1, r, r * t), ref, rtol=1e-10)


@pytest.mark.parametrize("n", [2, 5, 9])
def test_kernel_T_is_derivative_of_Q(n):
    r, h = 0.6, 1e-6
    s = np.array([0.1, 0.25, 0.4, 0.55])
    fd = (kernel_Q(n, r, s + h) - kernel_Q(n, r, s - h)) / (2 * h)
    np.testing.assert_allclose(kernel_T(n, r, s), fd, rtol=1e-6, atol=1e-8)


def test_kernel_identities_on_diagonal():
    q, th = kernel_tables(np.array([1.0]), 16)
    np.testing.assert_allclose(q[:, 0], 1.0, atol=1e-12)
    np.testing.assert_allclose(th[:, 0], 0.0, atol=1e-12)
    assert np.all(kernel_T(0, 1.0, np.linspace(0.01, 0.99, 50)) == 0.0)
    # T~ vanishes like sqrt(1 - t) at the diagonal, so T stays integrable
    assert abs(kernel_T_tilde(4, 1.0, 1.0 - 1e-8)) < 1e-2


def test_kernel_domain_errors():
    with pytest.raises(DomainError):
        kernel_Q(1, 0.5, 0.6)
    with pytest.raises(DomainError):
        kernel_T(1, 0.5, 0.5)
    with pytest.raises(DomainError):
        kernel_Q(1, 0.5, 0.0)


def test_volterra_matrix_strictly_upper():
    K = volterra_matrix(3, 16)
    assert np.all(np.tril(K) == 0.0)
    assert np.all(volterra_matrix(0, 16) == 0.0)


@pytest.mark.parametrize("n", [1, 4, 8])
def test_iterative_and_dense_agree(n):
    s = np.linspace(0, 1, 65)
    rhs = s * (1 - s) * np.cos(3 * s)
    it, info = volterra_solve(n, rhs, "iterate", tol=1e-13, return_info=True)
    dn = volterra_solve(n, rhs, "dense")
    assert np.max(np.abs(it - dn)) < 1e-10
    assert info["iterations"] <= 66
    np.testing.assert_allclose(dn - volterra_matrix(n, 64) @ dn, rhs, atol=1e-13)


def test_volterra_non_convergence_is_reported():
    rhs = np.linspace(0, 1, 33) ** 2
    with pytest.raises(ConvergenceError) as exc:
        volterra_solve(6, rhs, max_iter=2)
    assert len(exc.value.history) == 2
    with pytest.raises(ValueError):
        volterra_solve(1, rhs, method="lu")


def _continuous_rhs(n, p, rho0, s):
    """p(s) - int_s^rho0 T_n(r, s) p(r) dr by adaptive quadrature."""
    out = []
    for si in s:
        if si == 0.0 or si >= rho0:
            out.append(p(si))
            continue
        f = lambda r: kernel_T_tilde(n, max(r, si), si) * p(r) / np.sqrt(r + si)
        val, _ = integrate.quad(f, si, rho0, weight="alg", wvar=(-0.5, 0.0), limit=200)
        out.append(p(si) - val)
    return np.array(out)


@pytest.mark.parametrize("n, outer", [(1, 0.0), (2, 0.5)])
def test_volterra_discretization_is_first_order(n, outer):
    # regular mode data behave like r^(n+1) at the origin; for n >= 2 the
    # discretization error is amplified towards r = 0, so only the outer
    # part of the radius range is checked there
    rho0 = 0.8
    p = lambda r: r ** (n + 1) * (rho0 ** 2 - r * r)
    errs = []
    for M in (32, 64):
        s = np.arange(M + 1) * rho0 / M
        sol = volterra_solve(n, _continuous_rhs(n, p, rho0, s), "dense")
        keep = s >= outer * rho0
        errs.append(np.max(np.abs(sol - p(s))[keep]) / np.max(p(s)))
    assert errs[0] / errs[1] == pytest.approx(2.0, rel=0.1)
    assert errs[1] < 0.04


def test_abel_operator_closed_forms():
    rho0 = 0.9
    s = np.array([0.0, 0.2, 0.5, 0.85])
    U = np.sqrt(rho0 ** 2 - s ** 2)
    np.testing.assert_allclose(abel_L(lambda r: np.ones_like(r), s, rho0), U / np.pi, rtol=1e-13)
    np.testing.assert_allclose(abel_L(lambda r: r * r, s, rho0),
                               (U ** 3 / 3 + s * s * U) / np.pi, rtol=1e-13)
    with pytest.raises(DomainError):
        abel_L(np.cos, np.array([1.0]), rho0)


def test_radial_mode_chain_recovers_p():
    # w = rho0^2 - r^2 has line integrals G(s) = (4/3)(rho0^2 - s^2)^(3/2)
    rho0, M = 0.8, 64
    G = lambda s: 4.0 / 3.0 * np.clip(rho0 ** 2 - s ** 2, 0, None) ** 1.5
    rhs = rhs_from_mode(None, G, rho0, 0, M)
    s = np.arange(M + 1) * rho0 / M
    np.testing.assert_allclose(rhs, (rho0 ** 2 - s ** 2) * s, atol=2e-4)
    rho = (np.arange(128) + 0.5) * rho0 / 128
    sampled = rhs_from_mode(rho, G(rho), rho0, 0, M)
    np.testing.assert_allclose(sampled, rhs, atol=2e-4)


def _mode_sinogram(n_alpha, n_s, func, bz=1.0, rho0=0.8):
    alphas = TWO_PI * np.arange(1, n_alpha + 1) / n_alpha
    s = -rho0 + (np.arange(n_s) + 0.5) * (2 * rho0 / n_s)
    a, ss = np.meshgrid(alphas, s, indexing="ij")
    sg = Sinogram(0.0, alphas, s, func(a, ss), "g")
    sg.meta.update(B_z=bz, rho0=rho0)
    return sg


def test_fourier_modes_isolate_one_mode_and_are_conjugate_symmetric():
    sg = _mode_sinogram(64, 32, lambda a, s: np.cos(3 * (a - 0.4)) * s ** 3)
    mt = fourier_modes(sg, 8)
    mags = np.max(np.abs(mt.coeffs), axis=1)
    for n in range(-8, 9):
        if abs(n) != 3:
            assert mags[n + 8] < 1e-14
    for n in range(1, 9):
        np.testing.assert_allclose(mt.mode(-n), np.conj(mt.mode(n)), rtol=0, atol=1e-16)
    weight = 4 * (1 - mt.rho ** 2)
    np.testing.assert_allclose(mt.mode(3), 0.5 * np.exp(-3j * 0.4) * mt.rho ** 3 * weight,
                               atol=1e-14)


def test_fourier_modes_rotation_phase():
    f = lambda a, s: (1 + np.cos(a) + 0.3 * np.sin(2 * a)) * (0.64 - s * s)
    step = TWO_PI / 64
    m0 = fourier_modes(_mode_sinogram(64, 16, f), 4)
    m1 = fourier_modes(_mode_sinogram(64, 16, lambda a, s: f(a - step, s)), 4)
    for n in range(-4, 5):
        np.testing.assert_allclose(m1.mode(n), m0.mode(n) * np.exp(-1j * n * step), atol=1e-14)


def test_resolution_guards():
    sg = _mode_sinogram(32, 16, lambda a, s: 0 * s)
    with pytest.raises(ResolutionError):
        fourier_modes(sg, 8)
    sg.meta.pop("B_z")
    with pytest.raises(ResolutionError):
        fourier_modes(sg, 2)
    with pytest.raises(ResolutionError):
        ModeTable(0.0, 2, np.arange(4.0), np.zeros((3, 4)), 1.0)
    assert default_modes(256) == 12
    assert default_modes(32) == 7
    assert default_modes(2) == 0


def test_radial_p_gives_radial_q():
    N, M = 2, 32
    r = np.arange(M + 1) * 0.8 / M
    coeffs = np.zeros((2 * N + 1, M + 1), complex)
    coeffs[N] = r * (0.64 - r * r) * (1 - r * r)
    pt = ModeTable(0.0, N, r, coeffs, 0.8, "p")
    coords = np.linspace(-0.7, 0.7, 15)
    img = modes_to_q(pt, 1.0, coords, warn=False)
    xx, yy = np.meshgrid(coords, coords, indexing="ij")
    rr = np.hypot(xx, yy)
    ok = rr > 2 * r[1]
    ref = np.where(rr <= 0.8, 0.64 - rr * rr, 0.0)
    np.testing.assert_allclose(img.values[ok], ref[ok], atol=2e-3)
    assert np.all(img.values[~ok] == 0.0)
    with pytest.warns(UserWarning, match="r_min"):
        modes_to_q(pt, 1.0, coords)
    held = modes_to_q(pt, 1.0, coords, fill="hold")
    assert np.all(held.values[~ok] > 0.5)
    with pytest.raises(ValueError):
        modes_to_q(pt, 1.0, coords, fill="nearest")


def test_slice_reconstruction_of_centred_bump(small_table, centred_bump):
    z = small_table.slices[3]
    coords = np.linspace(-0.75, 0.75, 41)
    img, pt = reconstruct_q_slice(small_table, z, CFG, coords)
    assert pt.meta["sweeps"][0] == 1
    ref = eval_laplacian_beta(centred_bump, img.points())
    xx, yy = np.meshgrid(coords, coords, indexing="ij")
    keep = np.hypot(xx, yy) >= 2 * pt.rho[1]
    err = np.linalg.norm((img.values - ref)[keep]) / np.linalg.norm(ref[keep])
    assert err < 0.12  # 3.5% at 128 x 128
    empty, _ = reconstruct_q_slice(small_table, small_table.slices[0], CFG, coords)
    assert np.max(np.abs(empty.values)) < 1e-10
    sg = assemble_g(small_table, z)
    assert sg.kind == "g" and sg.data.shape == (64, 64)
    assert support_radius(z, CFG) > np.max(np.abs(sg.s_values))


def test_solve_modes_records_sweeps(offset_table):
    z = offset_table.slices[4]
    sg = assemble_g(offset_table, z)
    sg.meta.update(B_z=np.sqrt(1 - z * z), rho0=support_radius(z, CFG))
    pt = solve_modes(fourier_modes(sg, 4), 24)
    assert pt.kind == "p" and len(pt.meta["sweeps"]) == 5
    np.testing.assert_array_equal(pt.mode(-2), np.conj(pt.mode(2)))
