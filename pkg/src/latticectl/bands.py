"""Bloch bands, Wannier states and transition matrix elements.

The lattice Hamiltonian ``H = p^2/2m + U sin^2(pi x)`` (natural units) is
diagonalised in the plane-wave basis ``exp(i pi (q + 2j) x)`` with
``j = -M..M``.  In this basis the kinetic term is ``(q + 2j)^2`` and
``sin^2 = 1/2 - (e^{2 i pi x} + e^{-2 i pi x})/4`` gives the familiar
tridiagonal central equation.
"""

from __future__ import annotations

import csv
import logging
import math
from dataclasses import dataclass, field

import numpy as np
from scipy.interpolate import PchipInterpolator

from .units import LatticeConfig

log = logging.getLogger(__name__)

DEFAULT_CUTOFF = 32
DEFAULT_NQ = 64


class ConvergenceError(RuntimeError):
    pass


class RangeError(ValueError):
    pass


@dataclass(frozen=True, eq=False)
class BlochSpectrum:
    """Band energies and Bloch coefficients on a quasi-momentum grid.

    ``bloch_coefficients[iq, n, :]`` holds the plane-wave amplitudes of
    band ``n`` at ``quasi_momenta[iq]`` for orders ``-M..M`` (``M`` is the
    plane-wave cutoff).  Each Bloch function is normalised over one
    lattice cell and carries the Kohn phase convention: even bands are
    real-positive at the well centre, odd bands have a real-positive
    slope there.
    """

    depth_Er: float
    quasi_momenta: np.ndarray
    band_energies: np.ndarray
    bloch_coefficients: np.ndarray
    plane_wave_cutoff: int
    phase_ambiguous: np.ndarray = field(default=None)

    @property
    def n_bands(self) -> int:
        return self.band_energies.shape[1]

    @property
    def n_q(self) -> int:
        return len(self.quasi_momenta)

    @property
    def orders(self) -> np.ndarray:
        M = self.plane_wave_cutoff
        return np.arange(-M, M + 1)

    @property
    def band_averages(self) -> np.ndarray:
        """Mean energy of each band over the q-grid."""
        return self.band_energies.mean(axis=0)

    def omega01(self) -> float:
        """(E1 - E0) in units of omega_r, from band averages."""
        E = self.band_averages
        return float(E[1] - E[0])

    def bloch_function(self, band: int, iq: int, x) -> np.ndarray:
        x = np.asarray(x, dtype=float)
        k = np.pi * (self.quasi_momenta[iq] + 2 * self.orders)
        return np.exp(1j * np.multiply.outer(x, k)) @ self.bloch_coefficients[iq, band]


def central_matrices(depth_Er: float, quasi_momenta, cutoff: int) -> np.ndarray:
    """Stack of central-equation matrices, shape ``(n_q, 2M+1, 2M+1)``."""
    q = np.atleast_1d(np.asarray(quasi_momenta, dtype=float))
    j = np.arange(-cutoff, cutoff + 1)
    n = len(j)
    H = np.zeros((len(q), n, n))
    idx = np.arange(n)
    H[:, idx, idx] = (2 * j[None, :] + q[:, None]) ** 2 + depth_Er / 2.0
    H[:, idx[:-1], idx[1:]] = -depth_Er / 4.0
    H[:, idx[1:], idx[:-1]] = -depth_Er / 4.0
    return H


def default_quasi_momenta(n_q: int) -> np.ndarray:
    """Uniform periodic grid on [-1, 1) in units of hbar k."""
    return -1.0 + 2.0 * np.arange(n_q) / n_q


def _fix_phases(q, orders, vecs, tol=1e-9):
    """Apply the Kohn phase convention in place; return the ambiguity mask."""
    n_q, n_pw, n_b = vecs.shape
    ambiguous = np.zeros((n_q, n_b), dtype=bool)
    k = q[:, None] + 2 * orders[None, :]
    for n in range(n_b):
        c = vecs[:, :, n]
        if n % 2 == 0:
            ref = c.sum(axis=1)
        else:
            ref = 1j * np.pi * (k * c).sum(axis=1)
        mag = np.abs(ref)
        scale = 1.0 if n % 2 == 0 else np.pi * np.sqrt((np.abs(k) ** 2 * np.abs(c) ** 2).sum(axis=1))
        bad = mag < tol * scale
        ambiguous[:, n] = bad
        phase = np.where(bad, 1.0, np.conj(ref) / np.where(bad, 1.0, mag))
        vecs[:, :, n] = c * phase[:, None]
    return ambiguous


def _diagonalise(depth_Er, q, cutoff, n_bands):
    H = central_matrices(depth_Er, q, cutoff)
    w, v = np.linalg.eigh(H)
    return w[:, :n_bands], v[:, :, :n_bands]


def compute_band_structure(
    config: LatticeConfig | float,
    n_bands: int = 6,
    n_q: int = DEFAULT_NQ,
    cutoff: int = DEFAULT_CUTOFF,
    quasi_momenta=None,
    check_convergence: bool = True,
    tol: float = 1e-9,
) -> BlochSpectrum:
    """Diagonalise the central equation on a quasi-momentum grid.

    Parameters
    ----------
    config : LatticeConfig or float
        Lattice, or directly the depth in E_r.
    n_bands : int
        Number of bands kept (at least 3).
    n_q : int
        Size of the uniform q-grid on [-1, 1); ignored when
        ``quasi_momenta`` is given.
    cutoff : int
        Plane-wave orders ``-cutoff..cutoff``; must be >= 2 * n_bands.
    check_convergence : bool
        Re-solve with a doubled cutoff and raise ``ConvergenceError`` if
        any kept energy moves by more than ``tol`` (in E_r).
    """
    depth = config.depth_Er if isinstance(config, LatticeConfig) else float(config)
    if n_bands < 3:
        raise ValueError("n_bands must be >= 3")
    if cutoff < 2 * n_bands:
        raise ValueError(f"cutoff {cutoff} too small for {n_bands} bands (need >= {2 * n_bands})")
    if quasi_momenta is None:
        if n_q < 1:
            raise ValueError("n_q must be >= 1")
        q = default_quasi_momenta(n_q)
    else:
        q = np.atleast_1d(np.asarray(quasi_momenta, dtype=float))

    energies, vecs = _diagonalise(depth, q, cutoff, n_bands)
    if check_convergence:
        e2, _ = _diagonalise(depth, q, 2 * cutoff, n_bands)
        drift = np.max(np.abs(e2 - energies))
        if drift > tol:
            raise ConvergenceError(
                f"band energies moved by {drift:.3e} E_r when doubling cutoff {cutoff}"
            )
    vecs = vecs.astype(complex)
    orders = np.arange(-cutoff, cutoff + 1)
    ambiguous = _fix_phases(q, orders, vecs)
    coeffs = np.ascontiguousarray(np.transpose(vecs, (0, 2, 1)))
    return BlochSpectrum(depth, q, energies, coeffs, cutoff, ambiguous)


@dataclass(frozen=True, eq=False)
class WannierBasis:
    grid: np.ndarray
    states: np.ndarray
    band_average_energies: np.ndarray
    spectrum: BlochSpectrum = field(repr=False)
    norms: np.ndarray = field(repr=False, default=None)
    phase_flagged: bool = False

    @property
    def n_bands(self) -> int:
        return self.states.shape[0]

    @property
    def dx(self) -> float:
        return float(self.grid[1] - self.grid[0])

    def evaluate(self, band: int, x) -> np.ndarray:
        """Wannier function of ``band`` evaluated at arbitrary positions."""
        w = _wannier_values(self.spectrum, band, np.asarray(x, dtype=float)) / self.norms[band]
        return w.real if np.isrealobj(self.states) else w

    def rms_width(self, band: int = 0) -> float:
        """sqrt(<x^2>) of the band's probability density, in d."""
        p = np.abs(self.states[band]) ** 2
        return float(np.sqrt(np.sum(p * self.grid**2) * self.dx))


def _wannier_values(spectrum: BlochSpectrum, band: int, x: np.ndarray) -> np.ndarray:
    k = np.pi * (spectrum.quasi_momenta[:, None] + 2 * spectrum.orders[None, :])
    coeff = spectrum.bloch_coefficients[:, band, :]
    out = np.empty(x.shape, dtype=complex)
    flat_x = x.ravel()
    flat = out.ravel()
    chunk = 4096
    for s in range(0, flat_x.size, chunk):
        xs = flat_x[s : s + chunk]
        phase = np.exp(1j * xs[:, None, None] * k[None, :, :])
        flat[s : s + chunk] = np.einsum("xqj,qj->x", phase, coeff)
    return flat.reshape(x.shape) / spectrum.n_q


def _supercell_wannier(spectrum: BlochSpectrum, points_per_well: int) -> tuple[np.ndarray, np.ndarray]:
    """All Wannier functions on the q-grid supercell via one inverse FFT per band.

    The wavenumbers pi (q + 2j) of a uniform q-grid of size N_q all sit on
    the reciprocal grid of an N_q-cell ring, so the Bloch sum is a plain
    discrete Fourier series.  Orders beyond the FFT bandwidth alias; their
    amplitudes are negligible for any converged spectrum.
    """
    n_q = spectrum.n_q
    q = spectrum.quasi_momenta
    m = np.rint((q + 1.0) * n_q / 2.0).astype(int)
    if not np.allclose(q, -1.0 + 2.0 * m / n_q, atol=1e-12):
        raise ValueError("supercell synthesis needs the uniform q-grid")
    n_pts = n_q * points_per_well
    # signed reciprocal index of exp(i pi (q + 2j) x) on a ring of n_q cells
    lidx = (m[:, None] - n_q // 2) + n_q * spectrum.orders[None, :]
    if n_q % 2:
        raise ValueError("supercell synthesis needs an even q-grid")
    lidx = np.mod(lidx, n_pts)
    x = (np.arange(n_pts) - n_pts // 2) / points_per_well
    states = np.empty((spectrum.n_bands, n_pts), dtype=complex)
    for n in range(spectrum.n_bands):
        spec_k = np.zeros(n_pts, dtype=complex)
        np.add.at(spec_k, lidx.ravel(), spectrum.bloch_coefficients[:, n, :].ravel())
        # grid starts at x0 = -n_q/2: shift theorem
        x0 = x[0]
        kk = 2 * np.pi * np.fft.fftfreq(n_pts, d=1.0 / points_per_well)
        vals = np.fft.ifft(spec_k * np.exp(1j * kk * x0)) * n_pts
        states[n] = vals / n_q
    return x, states


def wannier_states(
    spectrum: BlochSpectrum, grid_points_per_well: int = 64, n_wells: int | None = None
) -> WannierBasis:
    """Well-centred Wannier states built from the Kohn-phased Bloch states.

    The states live on the ring of ``n_q`` cells defined by the q-grid;
    ``n_wells`` optionally keeps only a centred window of that ring.  Each
    state is renormalised on the retained window.
    """
    if spectrum.n_bands < 2:
        raise ValueError("need at least two bands")
    x, raw = _supercell_wannier(spectrum, grid_points_per_well)
    if n_wells is not None and n_wells < spectrum.n_q:
        half = n_wells * grid_points_per_well // 2
        mid = len(x) // 2
        x, raw = x[mid - half : mid + half], raw[:, mid - half : mid + half]
    dx = 1.0 / grid_points_per_well
    norms = np.sqrt(np.sum(np.abs(raw) ** 2, axis=1) * dx)
    states = raw / norms[:, None]
    if np.max(np.abs(states.imag)) < 1e-10 * np.max(np.abs(states.real)):
        states = states.real.copy()
    flagged = bool(spectrum.phase_ambiguous is not None and spectrum.phase_ambiguous.any())
    if flagged:
        log.warning("Wannier phase convention ambiguous for some (band, q); states returned anyway")
    return WannierBasis(x, states, spectrum.band_averages.copy(), spectrum, norms, flagged)


@dataclass(frozen=True)
class TransitionData:
    """Single-well matrix elements between Wannier states."""

    omega01: float
    x_matrix_elements: np.ndarray
    am_matrix_elements: np.ndarray
    depth_Er: float
    energies: np.ndarray

    @property
    def omega01_natural(self):
        return float(self.energies[1] - self.energies[0])


def coupling_matrix_elements(basis: WannierBasis, config: LatticeConfig) -> TransitionData:
    """<n|x|m> (units of d) and <n|sin^2(pi x)|m> by quadrature on the basis grid."""
    if basis.n_bands < 3:
        raise ValueError("need at least three bands")
    w = basis.states
    dx = basis.dx
    x = basis.grid
    X = (np.conj(w) * x) @ w.T * dx
    S = (np.conj(w) * np.sin(np.pi * x) ** 2) @ w.T * dx
    X = 0.5 * (X + np.conj(X.T))
    S = 0.5 * (S + np.conj(S.T))
    if np.isrealobj(w):
        X, S = X.real, S.real
    E = basis.band_average_energies
    return TransitionData(float((E[1] - E[0]) * config.omega_r), X, S, basis.spectrum.depth_Er, E.copy())


def transition_data(config: LatticeConfig, n_bands: int = 6, n_q: int = DEFAULT_NQ) -> TransitionData:
    spec = compute_band_structure(config, n_bands=n_bands, n_q=n_q)
    return coupling_matrix_elements(wannier_states(spec), config)


@dataclass(frozen=True, eq=False)
class Omega01Curve:
    """Tabulated omega01(U); frequencies in rad/s."""

    depths: np.ndarray
    omega01: np.ndarray
    omega_r: float

    def __post_init__(self):
        if np.any(np.diff(self.depths) <= 0):
            raise ValueError("depth grid must be strictly increasing")
        if np.any(np.diff(self.omega01) <= 0):
            raise ValueError("omega01 must be strictly increasing on the tabulated span")
        object.__setattr__(self, "_fwd", PchipInterpolator(self.depths, self.omega01))
        object.__setattr__(self, "_inv", PchipInterpolator(self.omega01, self.depths))

    def __call__(self, depth):
        self._check(depth, self.depths, "depth")
        return self._fwd(depth)

    def derivative(self, depth):
        """d omega01 / dU in rad/s per E_r."""
        self._check(depth, self.depths, "depth")
        return self._fwd.derivative()(depth)

    def inverse(self, omega):
        self._check(omega, self.omega01, "omega01")
        return self._inv(omega)

    @staticmethod
    def _check(v, table, what):
        v = np.asarray(v)
        if np.any(v < table[0] * (1 - 1e-12)) or np.any(v > table[-1] * (1 + 1e-12)):
            raise RangeError(f"{what} outside tabulated range [{table[0]:.6g}, {table[-1]:.6g}]")


def omega01_of_depth(config: LatticeConfig, depth_list, n_q: int = DEFAULT_NQ, cutoff: int = DEFAULT_CUTOFF) -> Omega01Curve:
    """Tabulate omega01 (band-averaged) over ``depth_list`` for the lattice family of ``config``."""
    depths = np.asarray(depth_list, dtype=float)
    q = default_quasi_momenta(n_q)
    om = np.empty_like(depths)
    for i, U in enumerate(depths):
        H = central_matrices(U, q, cutoff)
        E = np.linalg.eigvalsh(H)[:, :2].mean(axis=0)
        om[i] = (E[1] - E[0]) * config.omega_r
    return Omega01Curve(depths, om, config.omega_r)


def depth_from_omega01(curve: Omega01Curve, omega: float) -> float:
    return float(curve.inverse(omega))


def write_bands_csv(spectrum: BlochSpectrum, path) -> None:
    with open(path, "w", newline="") as fh:
        wr = csv.writer(fh)
        wr.writerow(["q"] + [f"E{n}" for n in range(spectrum.n_bands)])
        for q, row in zip(spectrum.quasi_momenta, spectrum.band_energies):
            wr.writerow([f"{q:.10g}"] + [f"{e:.12g}" for e in row])


def write_omega01_csv(curve: Omega01Curve, path) -> None:
    with open(path, "w", newline="") as fh:
        wr = csv.writer(fh)
        wr.writerow(["U", "omega01"])
        for U, w in zip(curve.depths, curve.omega01):
            wr.writerow([f"{U:.10g}", f"{w:.12g}"])
