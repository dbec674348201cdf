"""Split-operator propagation of a single atom in the modulated lattice.

The grid is a ring of ``n_wells`` lattice cells.  Without gravity and in
the lab frame the Hamiltonian is exactly periodic on the ring, which is
then a Born-von Karman model of the infinite lattice sampled at
``n_wells`` quasi-momenta.  Gravity and the lattice-frame inertial force
add a linear potential that is discontinuous at the ring seam; those runs
are guarded against probability reaching the edges.

Natural units throughout (E_r, 1/omega_r, d); the public functions take
seconds and ``LatticeConfig``.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from enum import Enum

import numpy as np

from .bands import BlochSpectrum, WannierBasis, compute_band_structure
from .pulses import Waveform, acceleration_profile
from .units import FORCE_COUPLING, LatticeConfig, gravity_tilt_per_site

DEFAULT_SOLVER_DT = 0.25e-6
NORM_TOL = 1e-8
BOUNDARY_TOL = 1e-6
BOUNDARY_WELLS = 2


class Frame(str, Enum):
    LAB = "lab"
    LATTICE = "lattice"


class InstabilityError(RuntimeError):
    pass


class BoundaryContaminationError(RuntimeError):
    pass


class FrameError(ValueError):
    pass


class AmbiguityError(ValueError):
    pass


@dataclass(frozen=True)
class SpatialGrid:
    n_wells: int = 32
    points_per_well: int = 64

    def __post_init__(self):
        n = self.total_points
        if n & (n - 1) or n < 16:
            raise ValueError(f"total points {n} must be a power of two")
        if self.n_wells % 2:
            raise ValueError("n_wells must be even")

    @property
    def total_points(self) -> int:
        return self.n_wells * self.points_per_well

    @property
    def extent(self) -> float:
        return float(self.n_wells)

    @property
    def dx(self) -> float:
        return 1.0 / self.points_per_well

    @property
    def x(self) -> np.ndarray:
        n = self.total_points
        return (np.arange(n) - n // 2) * self.dx

    @property
    def wavenumbers(self) -> np.ndarray:
        """Angular wavenumbers (1/d) in FFT order."""
        return 2 * np.pi * np.fft.fftfreq(self.total_points, d=self.dx)

    @property
    def momenta(self) -> np.ndarray:
        """Momenta in units of hbar k, FFT order."""
        return self.wavenumbers / np.pi

    @property
    def quasi_momenta(self) -> np.ndarray:
        m = np.arange(-self.n_wells // 2, self.n_wells // 2)
        return 2.0 * m / self.n_wells

    @property
    def plane_wave_cutoff(self) -> int:
        return self.points_per_well // 2 - 1

    def fft_indices(self) -> np.ndarray:
        """FFT index of plane wave (q, j): shape (n_wells, 2M+1)."""
        M = self.plane_wave_cutoff
        m = np.arange(-self.n_wells // 2, self.n_wells // 2)
        j = np.arange(-M, M + 1)
        return np.mod(m[:, None] + self.n_wells * j[None, :], self.total_points)

    def edge_mask(self, wells: int = BOUNDARY_WELLS) -> np.ndarray:
        x = self.x
        half = self.extent / 2
        return np.abs(x) >= half - wells

    def to_dict(self):
        return {"n_wells": self.n_wells, "points_per_well": self.points_per_well}


@dataclass
class WaveFunction:
    grid: SpatialGrid
    amplitudes: np.ndarray

    @property
    def norm(self) -> float:
        return float(np.sum(np.abs(self.amplitudes) ** 2) * self.grid.dx)

    def momentum_amplitudes(self) -> np.ndarray:
        """Unit-norm plane-wave amplitudes in FFT order."""
        g = self.grid
        return np.fft.fft(self.amplitudes) * math.sqrt(g.dx / g.total_points)

    def overlap(self, other: "WaveFunction") -> complex:
        return complex(np.vdot(self.amplitudes, other.amplitudes) * self.grid.dx)


@dataclass
class PropagationResult:
    """Population record of one propagation.

    ``populations[:, 0:3]`` are (P0, P1, PL) at ``times`` (seconds).
    """

    times: np.ndarray
    populations: np.ndarray
    final_state: WaveFunction
    frame_used: Frame
    settings: dict = field(default_factory=dict)

    @property
    def final_populations(self) -> np.ndarray:
        return self.populations[-1]


class BandProjector:
    """Projector onto the lowest bands of the unmodulated, gravity-free lattice.

    Built on the ring's own quasi-momenta and plane-wave orders so that
    Bloch states of the grid Hamiltonian are projected exactly.
    """

    def __init__(self, grid: SpatialGrid, depth_Er: float, n_bands: int = 2):
        self.grid = grid
        self.depth_Er = float(depth_Er)
        self.n_bands = n_bands
        self.spectrum = grid_spectrum(grid, depth_Er, max(n_bands, 3))
        self._idx = grid.fft_indices()
        self._coeff = np.conj(self.spectrum.bloch_coefficients[:, :n_bands, :])

    def band_amplitudes(self, c: np.ndarray) -> np.ndarray:
        """Amplitudes <n, q | psi>, shape (..., n_q, n_bands)."""
        cq = c[..., self._idx]
        return np.einsum("qnj,...qj->...qn", self._coeff, cq)

    def populations(self, c: np.ndarray) -> np.ndarray:
        """(P0, P1, ..., PL) from unit-norm momentum amplitudes ``c``."""
        a = self.band_amplitudes(c)
        p = np.sum(np.abs(a) ** 2, axis=-2)
        total = np.sum(np.abs(c) ** 2, axis=-1)
        leak = np.clip(total - p.sum(axis=-1), 0.0, None)
        return np.concatenate([p, leak[..., None]], axis=-1)


def grid_spectrum(grid: SpatialGrid, depth_Er: float, n_bands: int = 3) -> BlochSpectrum:
    """Band structure on the ring's quasi-momenta with the grid's plane-wave cutoff."""
    return compute_band_structure(
        depth_Er,
        n_bands=n_bands,
        quasi_momenta=grid.quasi_momenta,
        cutoff=grid.plane_wave_cutoff,
        check_convergence=False,
    )


def init_state(grid: SpatialGrid, basis: WannierBasis, band: int) -> WaveFunction:
    """Embed the band-``band`` Wannier state of the centre well on ``grid``.

    The basis lives on a finite ring of wells; outside that window the
    embedded state is zero, so no periodic image is planted on larger grids.
    """
    if not 0 <= band < basis.n_bands:
        raise IndexError(f"band {band} not in basis with {basis.n_bands} bands")
    x = grid.x
    half = 0.5 * (basis.grid[-1] - basis.grid[0] + basis.dx)
    inside = (x >= -half) & (x < half)
    amp = np.zeros(grid.total_points, dtype=complex)
    if abs(basis.dx - grid.dx) < 1e-12:
        idx = np.rint((x[inside] - basis.grid[0]) / grid.dx).astype(int)
        amp[inside] = basis.states[band, idx]
    else:
        amp[inside] = basis.evaluate(band, x[inside])
    amp /= math.sqrt(np.sum(np.abs(amp) ** 2) * grid.dx)
    return WaveFunction(grid, amp)


def _step_times(duration: float, h: float) -> int:
    n = int(round(duration / h))
    if n < 1 or abs(n * h - duration) > 1e-6 * h:
        raise ValueError(f"duration {duration:.6g}s is not a multiple of the solver step {h:.3g}s")
    return n


def _controls_at(waveform: Waveform, h: float, frame: Frame, substeps_ok=True):
    """Midpoint controls for each solver step (theta, eta, accel in SI)."""
    w_dt = waveform.dt
    ratio = w_dt / h
    inv = h / w_dt
    if not (abs(ratio - round(ratio)) < 1e-6 or abs(inv - round(inv)) < 1e-6):
        raise ValueError(f"waveform dt {w_dt:.3g}s and solver step {h:.3g}s are not commensurate")
    n = _step_times(waveform.duration, h)
    t_mid = (np.arange(n) + 0.5) * h
    theta, eta = waveform.sample(t_mid)
    acc = None
    if frame is Frame.LATTICE:
        if not waveform.compliant:
            raise FrameError("lattice-frame propagation needs theta = theta' = 0 at both ends")
        if waveform.accel is None:
            acceleration_profile(waveform)
        acc = waveform.sample_accel(t_mid)
    return n, t_mid, theta, eta, acc


class _Stepper:
    """Batched Strang stepping; rows share the waveform but may differ in depth."""

    def __init__(self, grid: SpatialGrid, depths, config: LatticeConfig, h_nat: float):
        self.grid = grid
        self.depths = np.asarray(depths, dtype=float)
        self.h = h_nat
        p = grid.momenta
        self.k_half = np.exp(-0.5j * h_nat * p**2)
        self.k_full = self.k_half**2
        x = grid.x
        self.cos2 = np.cos(2 * np.pi * x)
        self.sin2 = np.sin(2 * np.pi * x)
        self.x = x
        self.tilt = gravity_tilt_per_site(config)

    def potential(self, theta: float, eta: float, force: float) -> np.ndarray:
        """V for all rows; ``force`` is the extra linear slope (E_r per d)."""
        c, s = math.cos(2 * np.pi * theta), math.sin(2 * np.pi * theta)
        base = 0.5 - 0.5 * (self.cos2 * c - self.sin2 * s)
        V = np.multiply.outer((1.0 + eta) * self.depths, base)
        slope = self.tilt + force
        if slope != 0.0:
            V = V + slope * self.x
        return V

    def energy(self, psi_x: np.ndarray, V: np.ndarray) -> np.ndarray:
        g = self.grid
        c = np.fft.fft(psi_x, axis=-1) * math.sqrt(g.dx / g.total_points)
        kin = np.sum(np.abs(c) ** 2 * g.momenta**2, axis=-1)
        pot = np.sum(np.abs(psi_x) ** 2 * V, axis=-1) * g.dx
        return kin + pot


def _run(
    psi: np.ndarray,
    grid: SpatialGrid,
    depths,
    config: LatticeConfig,
    n_steps: int,
    h: float,
    theta,
    eta,
    force,
    record_steps,
    projectors,
    shift_theta,
    boundary_check: bool,
):
    """Core loop.  ``theta``/``eta``/``force`` are per-step arrays (natural units).

    Returns (populations (B, n_rec, nb+1), final psi (B, N)).
    ``shift_theta[k]`` is the lattice offset used when projecting record k.
    """
    h_nat = config.to_natural_time(h)
    st = _Stepper(grid, depths, config, h_nat)
    N = grid.total_points
    scale = math.sqrt(grid.dx / N)
    kappa = grid.wavenumbers
    edge = grid.edge_mask()
    B = psi.shape[0]
    rec_set = {int(s): i for i, s in enumerate(record_steps)}
    nb = projectors[0].n_bands
    pops = np.zeros((B, len(record_steps), nb + 1))

    def record(i, c):
        if shift_theta[i] != 0.0:
            c = c * np.exp(-1j * kappa * shift_theta[i])
        for b, proj in enumerate(projectors):
            pops[b, i] = proj.populations(c[b])

    psi_k = np.fft.fft(psi, axis=-1)
    if 0 in rec_set:
        record(rec_set[0], psi_k * scale)
    psi_k *= st.k_half
    for k in range(n_steps):
        x_state = np.fft.ifft(psi_k, axis=-1)
        x_state *= np.exp(-1j * h_nat * st.potential(theta[k], eta[k], force[k]))
        psi_k = np.fft.fft(x_state, axis=-1)
        step = k + 1
        if step in rec_set or step == n_steps:
            psi_k *= st.k_half
            c = psi_k * scale
            norm = np.sum(np.abs(c) ** 2, axis=-1)
            drift = np.max(np.abs(norm - 1.0))
            if not drift <= NORM_TOL:
                raise InstabilityError(f"norm drifted by {drift:.3e} at solver step {step}")
            if boundary_check:
                edge_p = np.max(np.sum(np.abs(x_state[:, edge]) ** 2, axis=-1) * grid.dx)
                if edge_p > BOUNDARY_TOL:
                    raise BoundaryContaminationError(
                        f"probability {edge_p:.3e} within {BOUNDARY_WELLS} wells of the grid edge at step {step}"
                    )
            if step in rec_set:
                record(rec_set[step], c)
            if step < n_steps:
                psi_k *= st.k_half
        else:
            psi_k *= st.k_full
    return pops, np.fft.ifft(psi_k, axis=-1)


def _record_steps(n_steps: int, stride: int) -> np.ndarray:
    if stride < 1:
        raise ValueError("record_stride must be >= 1")
    steps = list(range(0, n_steps + 1, stride))
    if steps[-1] != n_steps:
        steps.append(n_steps)
    return np.array(steps)


def _needs_guard(config: LatticeConfig, force) -> bool:
    return config.gravity_enabled or bool(np.any(np.asarray(force) != 0.0))


def propagate_batch(
    states: np.ndarray,
    grid: SpatialGrid,
    waveform: Waveform,
    config: LatticeConfig,
    depths=None,
    frame: Frame | str = Frame.LAB,
    record_stride: int = 100,
    solver_dt: float = DEFAULT_SOLVER_DT,
    projectors=None,
    boundary_check: bool | None = None,
):
    """Propagate several initial states (rows) under one waveform.

    ``depths`` gives a lattice depth per row (default: ``config.depth_Er``).
    Returns ``(times, populations, final_states)`` with populations of
    shape ``(rows, n_records, 3)``.
    """
    frame = Frame(frame)
    states = np.atleast_2d(np.asarray(states, dtype=complex))
    B = states.shape[0]
    depths = np.full(B, config.depth_Er) if depths is None else np.asarray(depths, dtype=float)
    if projectors is None:
        cache = {}
        projectors = []
        for U in depths:
            if U not in cache:
                cache[U] = BandProjector(grid, U)
            projectors.append(cache[U])
    n, t_mid, theta, eta, acc = _controls_at(waveform, solver_dt, frame)
    if frame is Frame.LATTICE:
        force = -FORCE_COUPLING * acc / config.omega_r**2
        theta_pot = np.zeros_like(theta)
    else:
        force = np.zeros_like(theta)
        theta_pot = theta
    steps = _record_steps(n, record_stride)
    times = steps * solver_dt
    if frame is Frame.LAB:
        shift = waveform.sample(times)[0]
    else:
        shift = np.zeros(len(times))
    guard = _needs_guard(config, force) if boundary_check is None else boundary_check
    pops, final = _run(
        states, grid, depths, config, n, solver_dt, theta_pot, eta, force, steps, projectors, shift, guard
    )
    return times, pops, final


def propagate(
    psi0: WaveFunction,
    waveform: Waveform,
    config: LatticeConfig,
    frame: Frame | str = Frame.LAB,
    record_stride: int = 100,
    solver_dt: float = DEFAULT_SOLVER_DT,
    projector: BandProjector | None = None,
    boundary_check: bool | None = None,
) -> PropagationResult:
    """Propagate ``psi0`` under ``waveform`` in the lab or co-moving frame.

    Lab frame: ``V = (1 + eta) U sin^2(pi (x + theta)) + F_g x``.
    Lattice frame: ``V = (1 + eta) U sin^2(pi x) - m theta'' x + F_g x``.
    Populations are projections onto the gravity-free bands of the lattice
    at its instantaneous position.
    """
    frame = Frame(frame)
    grid = psi0.grid
    proj = [projector] if projector is not None else None
    times, pops, final = propagate_batch(
        psi0.amplitudes[None, :],
        grid,
        waveform,
        config,
        frame=frame,
        record_stride=record_stride,
        solver_dt=solver_dt,
        projectors=proj,
        boundary_check=boundary_check,
    )
    settings = {
        "solver_dt": solver_dt,
        "record_stride": record_stride,
        "grid": grid.to_dict(),
        "frame": frame.value,
        "gravity": config.gravity_enabled,
    }
    return PropagationResult(times, pops[0], WaveFunction(grid, final[0]), frame, settings)


def static_scan(
    states: np.ndarray,
    grid: SpatialGrid,
    config: LatticeConfig,
    depths,
    displacement: float,
    delays,
    solver_dt: float = DEFAULT_SOLVER_DT,
    projectors=None,
) -> np.ndarray:
    """Populations after a displace / wait / displace-back sequence for many delays.

    One propagation in the statically displaced lattice serves every delay.
    Returns an array of shape ``(rows, len(delays), 3)``.
    """
    if abs(displacement) >= 0.5:
        raise AmbiguityError("displacement of half a site or more reassigns wells")
    delays = np.asarray(delays, dtype=float)
    steps = np.rint(delays / solver_dt).astype(int)
    if np.any(np.abs(steps * solver_dt - delays) > 1e-6 * solver_dt) or np.any(steps < 0):
        raise ValueError("delays must be non-negative multiples of the solver step")
    order = np.argsort(steps, kind="stable")
    uniq = np.unique(steps)
    states = np.atleast_2d(np.asarray(states, dtype=complex))
    depths = np.asarray(depths, dtype=float)
    if projectors is None:
        projectors = [BandProjector(grid, U) for U in depths]
    n = int(uniq[-1]) if len(uniq) else 0
    if n == 0:
        c = np.fft.fft(states, axis=-1) * math.sqrt(grid.dx / grid.total_points)
        p = np.array([proj.populations(c[b]) for b, proj in enumerate(projectors)])
        return np.repeat(p[:, None, :], len(delays), axis=1)
    theta = np.full(n, float(displacement))
    zeros = np.zeros(n)
    guard = config.gravity_enabled
    pops, _ = _run(
        states, grid, depths, config, n, solver_dt, theta, zeros, zeros, uniq, projectors,
        np.zeros(len(uniq)), guard,
    )
    pos = np.searchsorted(uniq, steps)
    return pops[:, pos, :]


def sudden_displacement_delay(
    psi0: WaveFunction,
    displacement: float,
    delay: float,
    config: LatticeConfig,
    solver_dt: float = DEFAULT_SOLVER_DT,
) -> PropagationResult:
    """Abruptly displace the lattice by ``displacement`` (units of d), wait, displace back."""
    if abs(displacement) >= 0.5:
        raise AmbiguityError("displacement of half a site or more reassigns wells")
    grid = psi0.grid
    proj = BandProjector(grid, config.depth_Er)
    n = _step_times(delay, solver_dt) if delay > 0 else 0
    if n == 0:
        c = psi0.momentum_amplitudes()
        p = proj.populations(c)
        return PropagationResult(np.array([0.0]), p[None, :], psi0, Frame.LAB)
    theta = np.full(n, float(displacement))
    zeros = np.zeros(n)
    steps = np.array([0, n])
    pops, final = _run(
        psi0.amplitudes[None, :], grid, [config.depth_Er], config, n, solver_dt, theta, zeros, zeros,
        steps, [proj], np.zeros(2), config.gravity_enabled,
    )
    return PropagationResult(
        steps * solver_dt, pops[0], WaveFunction(grid, final[0]), Frame.LAB, {"solver_dt": solver_dt}
    )


def energy_expectation(psi: WaveFunction, config: LatticeConfig) -> float:
    """<H> of the static lattice (plus gravity) in E_r."""
    st = _Stepper(psi.grid, [config.depth_Er], config, 0.0)
    V = st.potential(0.0, 0.0, 0.0)
    return float(st.energy(psi.amplitudes[None, :], V)[0])
