import math

import numpy as np
import pytest
from hypothesis import assume, given
from hypothesis import strategies as st

from latticectl.bands import compute_band_structure, wannier_states
from latticectl.observables import (
    GridMismatchError,
    Populations,
    RenormalizedPopulations,
    best_transfer,
    branching_ratio,
    merit_report,
    mix_initial,
    normalized_inversion,
    project_populations,
    renormalize,
)
from latticectl.propagator import BandProjector, SpatialGrid, WaveFunction, grid_spectrum, init_state

unit = st.floats(0.0, 1.0, allow_nan=False)


def from_momentum(grid, c):
    return WaveFunction(grid, np.fft.ifft(c) / math.sqrt(grid.dx / grid.total_points))


def bloch_superposition(grid, spectrum, weights):
    """State with plane-wave amplitudes sum_n w[q, n] c_{n,q,j} on the ring."""
    c = np.zeros(grid.total_points, dtype=complex)
    idx = grid.fft_indices()
    nb = weights.shape[1]
    c[idx] = np.einsum("qn,qnj->qj", weights, spectrum.bloch_coefficients[:, :nb, :])
    c /= np.linalg.norm(c)
    return from_momentum(grid, c)


@pytest.fixture(scope="module")
def grid():
    return SpatialGrid()


@pytest.fixture(scope="module")
def ring18(grid):
    return grid_spectrum(grid, 18.0, 3)


class TestPopulations:
    def test_sum_validated(self):
        with pytest.raises(ValueError):
            Populations(0.5, 0.4, 0.2)

    def test_range_validated(self):
        with pytest.raises(ValueError):
            Populations(1.2, -0.2, 0.0)


class TestProjection:
    def test_bloch_state_is_pure_ground(self, grid, ring18):
        w = np.zeros((grid.n_wells, 1), dtype=complex)
        q0 = int(np.argmin(np.abs(ring18.quasi_momenta)))
        w[q0, 0] = 1
        p = project_populations(bloch_superposition(grid, ring18, w), ring18)
        assert np.allclose(p.as_array(), [1, 0, 0], atol=1e-9)

    def test_random_state_complete(self, grid, ring18, rng):
        c = rng.normal(size=grid.total_points) + 1j * rng.normal(size=grid.total_points)
        p = project_populations(from_momentum(grid, c / np.linalg.norm(c)), ring18)
        assert p.p0 + p.p1 + p.p_leak == pytest.approx(1, abs=1e-9)

    @given(st.integers(0, 2**32 - 1))
    def test_basis_complete_on_three_bands(self, seed):
        grid = SpatialGrid(16, 64)
        spec = grid_spectrum(grid, 18.0, 3)
        rng = np.random.default_rng(seed)
        w = rng.normal(size=(16, 3)) + 1j * rng.normal(size=(16, 3))
        psi = bloch_superposition(grid, spec, w)
        two = project_populations(psi, spec, n_bands=2)
        three = project_populations(psi, spec, n_bands=3)
        assert np.allclose(two.as_array(), three.as_array(), atol=1e-9)

    def test_matches_propagator_projector(self, grid, basis18, ring18):
        psi = init_state(grid, basis18, 1)
        a = project_populations(psi, ring18).as_array()
        b = BandProjector(grid, 18.0).populations(psi.momentum_amplitudes())
        assert np.allclose(a, b, atol=1e-12)

    def test_grid_mismatch(self, grid, spectrum18, basis18):
        # 64 quasi-momenta do not match a 32-well ring
        with pytest.raises(GridMismatchError):
            project_populations(init_state(grid, basis18, 0), spectrum18)

    @pytest.mark.parametrize("a", [0.01, 0.02, 0.04])
    def test_coherent_state_oracle(self, a):
        # sudden shift of a deep, nearly harmonic well
        U = 300.0
        grid = SpatialGrid(32, 64)
        psi = init_state(grid, wannier_states(compute_band_structure(U)), 0)
        c = psi.momentum_amplitudes() * np.exp(1j * grid.wavenumbers * a)
        p1 = project_populations(from_momentum(grid, c), grid_spectrum(grid, U, 3)).p1
        a_ho = (math.pi**2 * math.sqrt(U)) ** -0.5  # kinetic term is -d^2/dx^2 / pi^2
        n = a**2 / (2 * a_ho**2)
        assert p1 == pytest.approx(n * math.exp(-n), rel=0.05)


class TestRenormalize:
    def test_no_transfer(self):
        r = renormalize(Populations(0.945, 0.055, 0.0), (0.945, 0.055))
        assert r.p1_tilde == 0.0
        assert r.p0_tilde == pytest.approx(1.0)

    @pytest.mark.parametrize(
        "final,initial,expected",
        [((0.566, 0.434, 0.0), (0.945, 0.055), 0.401), ((0.49, 0.435, 0.075), (0.925, 0.075), 0.389)],
    )
    def test_examples(self, final, initial, expected):
        r = renormalize(Populations(*final), initial)
        assert r.p1_tilde == pytest.approx(expected, abs=5e-4)

    def test_zero_ground_rejected(self):
        with pytest.raises(ValueError):
            renormalize(Populations(0.5, 0.5, 0.0), (0.0, 1.0))

    @given(unit, unit, st.floats(0.5, 1.0))
    def test_affine_and_order_preserving(self, x, y, p0i):
        init = (p0i, 1 - p0i)
        lo, hi = sorted((x, y))

        def p1t(p1):
            return renormalize(Populations(1 - p1, p1, 0.0), init).p1_tilde

        assert p1t(lo) <= p1t(hi)
        mid = 0.5 * (lo + hi)
        assert p1t(mid) == pytest.approx(0.5 * (p1t(lo) + p1t(hi)), abs=1e-12)


class TestMerits:
    def test_symmetric_inversion(self):
        assert normalized_inversion(RenormalizedPopulations(0.4, 0.4, 0.2, (1, 0))) == 0.0

    def test_grape_inversion(self):
        r = RenormalizedPopulations(0.599, 0.401, 0.0, (0.945, 0.055))
        assert normalized_inversion(r) == pytest.approx(-0.198, abs=1e-9)

    def test_best_arp_point_arithmetic(self):
        # the tabulated best-transfer numbers: P1~ 0.389 and leakage 0.187
        p1t, plt = 0.389, 0.187
        r = RenormalizedPopulations(1 - p1t - plt, p1t, plt, (0.925, 0.075))
        assert normalized_inversion(r) == pytest.approx(-0.0431, abs=1e-3)

    @pytest.mark.xfail(strict=True, reason="raw populations of the best-inversion ARP point are not tabulated")
    def test_best_arp_inversion_published(self):
        p1t, plt = 0.389, 0.187
        r = RenormalizedPopulations(1 - p1t - plt, p1t, plt, (0.925, 0.075))
        assert normalized_inversion(r) == pytest.approx(0.21, abs=0.02)

    @given(unit, unit)
    def test_inversion_bounded(self, a, b):
        assume(a + b > 0)
        assert -1 <= normalized_inversion(RenormalizedPopulations(a, b, 0.0, (1, 0))) <= 1

    def test_inversion_undefined(self):
        with pytest.raises(ValueError):
            normalized_inversion(RenormalizedPopulations(0.0, 0.0, 1.0, (1, 0)))

    def test_branching_ratio(self):
        assert branching_ratio(Populations(0.5, 0.34, 0.16)) == pytest.approx(0.34 / 0.16)
        assert math.isinf(branching_ratio(Populations(0.5, 0.5, 0.0)))
        assert merit_report(renormalize(Populations(0.5, 0.5, 0.0), (1, 0)), Populations(0.5, 0.5, 0.0)).to_dict()[
            "branching_ratio"
        ] == "inf"

    def test_best_transfer_ties_resolve_first(self):
        raw = Populations(0.6, 0.4, 0.0)
        pts = [(renormalize(raw, (1, 0)), raw)] * 3
        i, rep = best_transfer(pts)
        assert i == 0
        assert rep.max_p1_tilde == pytest.approx(0.4)

    def test_best_transfer_empty(self):
        with pytest.raises(ValueError):
            best_transfer([])

    def test_mix_initial(self):
        out = mix_initial([1, 0, 0], [0, 1, 0], (0.945, 0.055))
        assert np.allclose(out, [0.945, 0.055, 0])
