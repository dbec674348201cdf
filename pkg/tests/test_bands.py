import math

import numpy as np
import pytest
import scipy.linalg as sl
from hypothesis import given, strategies as st
from scipy.special import mathieu_a, mathieu_b

from latticectl.bands import (
    ConvergenceError,
    RangeError,
    compute_band_structure,
    coupling_matrix_elements,
    depth_from_omega01,
    omega01_of_depth,
    transition_data,
    wannier_states,
    write_bands_csv,
    write_omega01_csv,
)
from latticectl.units import experiment_config


def mathieu_edges(U):
    """Band-edge energies from Mathieu characteristic values.

    With z = pi x the Schroedinger equation becomes y'' + (a - 2 s cos 2z) y = 0
    with a = E - U/2 and s = -U/4; for negative s the odd-order a and b swap.
    """
    s = U / 4.0
    return {
        ("E0", 0.0): mathieu_a(0, s) + U / 2,
        ("E1", 0.0): mathieu_b(2, s) + U / 2,
        ("E2", 0.0): mathieu_a(2, s) + U / 2,
        ("E0", 1.0): mathieu_b(1, s) + U / 2,
        ("E1", 1.0): mathieu_a(1, s) + U / 2,
    }


def single_well_oracle(U, L=1.0, n=4001):
    """Lowest three states of one sin^2 well walled at height U, by finite differences."""
    x = np.linspace(-L, L, n)
    h = x[1] - x[0]
    V = np.where(np.abs(x) < 0.5, U * np.sin(np.pi * x) ** 2, U)
    d = 2 / (np.pi**2 * h**2) + V
    e = -np.ones(n - 1) / (np.pi**2 * h**2)
    w, v = sl.eigh_tridiagonal(d, e, select="i", select_range=(0, 2))
    return x, h, w, v / np.sqrt(h)


@pytest.mark.parametrize("U", [2.0, 10.0, 18.0, 40.0])
def test_band_edges_match_mathieu(U):
    spec = compute_band_structure(U, n_q=64)
    q = spec.quasi_momenta
    i0 = int(np.argmin(np.abs(q)))
    iedge = int(np.argmin(np.abs(q + 1.0)))
    for (name, qq), ref in mathieu_edges(U).items():
        n = int(name[1])
        i = i0 if qq == 0.0 else iedge
        assert spec.band_energies[i, n] == pytest.approx(ref, abs=1e-8)


def test_free_particle_limit():
    spec = compute_band_structure(0.0, n_q=64)
    q = spec.quasi_momenta
    i0 = int(np.argmin(np.abs(q)))
    iedge = int(np.argmin(np.abs(q + 1.0)))
    assert spec.band_energies[i0, 0] == pytest.approx(0.0, abs=1e-12)
    assert spec.band_energies[iedge, 1] - spec.band_energies[iedge, 0] == pytest.approx(0.0, abs=1e-12)
    folded = np.sort(np.array([(q + 2 * j) ** 2 for j in range(-4, 5)]).T, axis=1)[:, :6]
    np.testing.assert_allclose(spec.band_energies, folded, atol=1e-12)


def test_reference_anchor_omega01(cfg18):
    w = transition_data(cfg18).omega01
    assert w / (2 * math.pi) == pytest.approx(5007.0, rel=0.03)


def test_harmonic_asymptote_deep_lattice():
    spec = compute_band_structure(200.0)
    assert spec.omega01() == pytest.approx(2 * math.sqrt(200.0), rel=0.05)


@given(st.floats(0.5, 50.0))
def test_cutoff_doubling_spectral_convergence(U):
    a = compute_band_structure(U, n_q=16, cutoff=32, check_convergence=False)
    b = compute_band_structure(U, n_q=16, cutoff=64, check_convergence=False)
    assert np.max(np.abs(a.band_energies[:, :2] - b.band_energies[:, :2])) < 1e-10


@given(st.floats(0.0, 80.0), st.integers(2, 40))
def test_time_reversal_and_ordering(U, half):
    spec = compute_band_structure(U, n_q=2 * half, check_convergence=False)
    E = spec.band_energies
    assert np.all(np.diff(E, axis=1) >= -1e-12)
    q = spec.quasi_momenta
    for i, qq in enumerate(q):
        j = int(np.argmin(np.abs(q + qq) + np.abs(np.abs(q) - 1.0) * (abs(qq) == 1.0)))
        if abs(qq) < 1.0:
            np.testing.assert_allclose(E[i], E[j], atol=1e-10)
    norms = np.sum(np.abs(spec.bloch_coefficients) ** 2, axis=2)
    np.testing.assert_allclose(norms, 1.0, atol=1e-12)


def test_cutoff_too_small_and_convergence_error():
    with pytest.raises(ValueError):
        compute_band_structure(18.0, n_bands=6, cutoff=8)
    with pytest.raises(ConvergenceError):
        compute_band_structure(3000.0, n_bands=6, cutoff=12)


@pytest.mark.parametrize("U", [5.0, 18.0, 25.0])
def test_wannier_orthonormal(U):
    b = wannier_states(compute_band_structure(U))
    G = (np.conj(b.states) @ b.states.T) * b.dx
    np.testing.assert_allclose(G, np.eye(b.n_bands), atol=1e-8)


def test_wannier_parity(basis18):
    w = basis18.states
    x = basis18.grid
    # grid is symmetric about 0 up to its first point
    mirror = w[:, :0:-1]
    core = w[:, 1:]
    assert np.max(np.abs(core[0] - mirror[0])) < 1e-6 * np.max(np.abs(w[0]))
    assert np.max(np.abs(core[1] + mirror[1])) < 1e-6 * np.max(np.abs(w[1]))
    assert x[len(x) // 2] == 0.0


def test_wannier_kohn_phase(basis18):
    c = len(basis18.grid) // 2
    assert basis18.states[0, c] > 0
    assert basis18.states[1, c + 1] - basis18.states[1, c - 1] > 0


def test_wannier_width_single_well_oracle(basis25):
    x, h, _, v = single_well_oracle(25.0)
    width_fd = math.sqrt(np.sum(v[:, 0] ** 2 * x**2) * h)
    assert basis25.rms_width(0) == pytest.approx(width_fd, rel=1e-3)


def test_wannier_width_harmonic_limit():
    U = 60.0
    b = wannier_states(compute_band_structure(U))
    a_ho = 1 / (math.pi * U**0.25)
    assert b.rms_width(0) == pytest.approx(a_ho / math.sqrt(2), rel=0.05)


def test_transition_selection_rules(cfg18):
    tr = transition_data(cfg18)
    X, S = tr.x_matrix_elements, tr.am_matrix_elements
    np.testing.assert_allclose(X, X.T.conj(), atol=1e-14)
    np.testing.assert_allclose(S, S.T.conj(), atol=1e-14)
    # bands far above the depth are delocalised and truncated by the finite ring
    X, S = X[:4, :4], S[:4, :4]
    n = np.arange(4)
    same = (n[:, None] % 2) == (n[None, :] % 2)
    assert np.max(np.abs(X[same])) < 1e-8
    assert np.max(np.abs(S[~same])) < 1e-8
    assert abs(X[0, 0]) < 1e-8 and abs(S[0, 1]) < 1e-8


def test_x01_single_well_oracle(cfg25):
    tr = transition_data(cfg25)
    x, h, _, v = single_well_oracle(25.0)
    x01 = abs(np.sum(v[:, 0] * x * v[:, 1]) * h)
    assert abs(tr.x_matrix_elements[0, 1]) == pytest.approx(x01, rel=1e-3)


def test_x01_harmonic_limit():
    U = 60.0
    tr = transition_data(experiment_config(U))
    a_ho = 1 / (math.pi * U**0.25)
    assert abs(tr.x_matrix_elements[0, 1]) == pytest.approx(a_ho / math.sqrt(2), rel=0.05)


def test_coupling_needs_three_bands(spectrum18, cfg18):
    b = wannier_states(compute_band_structure(18.0, n_bands=3))
    tr = coupling_matrix_elements(b, cfg18)
    assert tr.x_matrix_elements.shape == (3, 3)


@pytest.fixture(scope="module")
def curve():
    return omega01_of_depth(experiment_config(18.0), np.linspace(5.0, 50.0, 46))


def test_omega01_monotone(curve):
    U = np.linspace(5.0, 50.0, 200)
    assert np.all(curve.derivative(U) > 0)


@given(st.floats(10.0, 40.0))
def test_depth_round_trip(curve, U):
    assert depth_from_omega01(curve, float(curve(U))) == pytest.approx(U, rel=1e-3)


def test_reference_frequency_maps_to_18(curve):
    assert depth_from_omega01(curve, 2 * math.pi * 5007.0) == pytest.approx(18.0, rel=0.05)


def test_curve_interpolation_vs_direct(curve, cfg25):
    direct = transition_data(cfg25).omega01
    assert float(curve(25.0)) == pytest.approx(direct, rel=2e-3)


def test_curve_range_error(curve):
    with pytest.raises(RangeError):
        curve.inverse(1.0)
    with pytest.raises(RangeError):
        curve(60.0)


def test_csv_exports(tmp_path, spectrum18, curve):
    write_bands_csv(spectrum18, tmp_path / "b.csv")
    write_omega01_csv(curve, tmp_path / "w.csv")
    b = np.loadtxt(tmp_path / "b.csv", delimiter=",", skiprows=1)
    w = np.loadtxt(tmp_path / "w.csv", delimiter=",", skiprows=1)
    assert b.shape == (64, 7)
    np.testing.assert_allclose(w[:, 1], curve.omega01, rtol=1e-11)
