"""Three-level model of the driven lattice: dressed states, crossings and chirped passage.

The lowest three vibrational levels are coupled by the phase-modulation
force ``m a omega^2 cos(omega t) x``:

    H(t) = sum_n E_n |n><n| + hbar Omega01 cos(phi) (|0><1| + h.c.)
                            + hbar Omega12 cos(phi) (|1><2| + h.c.)

with ``Omega_nm = m a omega^2 |<n|x|m>| / hbar`` and no direct 0-2 term.
Frequencies are angular (rad/s), times in seconds, level energies in E_r.
"""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass, replace

import numpy as np
from scipy.optimize import minimize_scalar

from .bands import TransitionData
from .units import FORCE_COUPLING, LatticeConfig

DEFAULT_PHOTON_BLOCKS = 6
GAP_TOL = 0.01
MAX_PHASE_PER_STEP = 0.05
CHUNK = 1 << 16


class ConvergenceError(RuntimeError):
    pass


@dataclass(frozen=True)
class ThreeLevelSystem:
    """Energies in E_r; Rabi frequencies in rad/s at ``reference_frequency``.

    ``x01``/``x12`` are the position matrix elements (units of d) used to
    re-evaluate the Rabi frequencies at another drive frequency.
    """

    energies: tuple[float, float, float]
    rabi_01: float
    rabi_12: float
    drive_amplitude: float
    omega_r: float
    reference_frequency: float
    x01: float = 0.0
    x12: float = 0.0

    def __post_init__(self):
        e = self.energies
        if not (e[0] < e[1] < e[2]):
            raise ValueError("energies must be strictly increasing")
        if self.rabi_01 < 0 or self.rabi_12 < 0:
            raise ValueError("Rabi frequencies must be non-negative")

    @property
    def level_frequencies(self) -> np.ndarray:
        """Level energies in rad/s relative to E0."""
        e = np.asarray(self.energies, dtype=float)
        return (e - e[0]) * self.omega_r

    @property
    def omega01(self) -> float:
        return float(self.level_frequencies[1])

    @property
    def omega12(self) -> float:
        w = self.level_frequencies
        return float(w[2] - w[1])

    @property
    def two_photon_frequency(self) -> float:
        return float(self.level_frequencies[2] / 2)

    def coupling_matrix(self) -> np.ndarray:
        return np.array(
            [[0.0, self.rabi_01, 0.0], [self.rabi_01, 0.0, self.rabi_12], [0.0, self.rabi_12, 0.0]]
        )

    def at_frequency(self, omega: float) -> "ThreeLevelSystem":
        """Same drive amplitude with the Rabi frequencies re-evaluated at ``omega``."""
        s = (omega / self.reference_frequency) ** 2
        return replace(
            self, rabi_01=self.rabi_01 * s, rabi_12=self.rabi_12 * s, reference_frequency=float(omega)
        )

    def two_level(self) -> "ThreeLevelSystem":
        """Restriction with the 1-2 coupling switched off."""
        return replace(self, rabi_12=0.0, x12=0.0)

    def scaled(self, factor: float) -> "ThreeLevelSystem":
        """Drive amplitude multiplied by ``factor``."""
        return replace(
            self,
            rabi_01=self.rabi_01 * factor,
            rabi_12=self.rabi_12 * factor,
            drive_amplitude=self.drive_amplitude * factor,
        )

    def to_dict(self):
        return {
            "energies_Er": list(self.energies),
            "rabi_01": self.rabi_01,
            "rabi_12": self.rabi_12,
            "drive_amplitude": self.drive_amplitude,
            "omega_r": self.omega_r,
            "reference_frequency": self.reference_frequency,
            "omega01": self.omega01,
            "omega12": self.omega12,
        }


def rabi_frequency(config: LatticeConfig, x_nm: float, a_pm: float, omega: float) -> float:
    """``m a omega^2 |x_nm| / hbar`` in rad/s; ``a_pm`` and ``x_nm`` in units of d."""
    w = omega / config.omega_r
    return FORCE_COUPLING * a_pm * w**2 * abs(x_nm) * config.omega_r


def reduce_to_three_level(
    config: LatticeConfig,
    transition: TransitionData,
    a_pm: float,
    drive_frequency: float | None = None,
) -> ThreeLevelSystem:
    """Three-level model from band-averaged energies and PM matrix elements.

    ``drive_frequency`` defaults to omega01.
    """
    if a_pm < 0:
        raise ValueError("a_pm must be non-negative")
    if abs(transition.depth_Er - config.depth_Er) > 1e-9:
        raise ValueError("transition data computed at a different depth")
    E = tuple(float(v) for v in transition.energies[:3])
    w = transition.omega01 if drive_frequency is None else float(drive_frequency)
    x01 = float(abs(transition.x_matrix_elements[0, 1]))
    x12 = float(abs(transition.x_matrix_elements[1, 2]))
    return ThreeLevelSystem(
        energies=E,
        rabi_01=rabi_frequency(config, x01, a_pm, w),
        rabi_12=rabi_frequency(config, x12, a_pm, w),
        drive_amplitude=float(a_pm),
        omega_r=config.omega_r,
        reference_frequency=w,
        x01=x01,
        x12=x12,
    )


# --- Floquet picture -------------------------------------------------------


def floquet_matrix(sys: ThreeLevelSystem, omega: float, blocks: int = DEFAULT_PHOTON_BLOCKS) -> np.ndarray:
    """Truncated Floquet Hamiltonian (rad/s); basis index ``3 (m + blocks) + n``."""
    n_m = 2 * blocks + 1
    W = sys.level_frequencies
    V = 0.5 * sys.coupling_matrix()
    F = np.zeros((3 * n_m, 3 * n_m))
    for i, m in enumerate(range(-blocks, blocks + 1)):
        s = slice(3 * i, 3 * i + 3)
        F[s, s] = np.diag(W + m * omega)
        if i + 1 < n_m:
            t = slice(3 * i + 3, 3 * i + 6)
            F[s, t] = V
            F[t, s] = V
    return F


def _basis_index(level: int, photons: int, blocks: int) -> int:
    return 3 * (photons + blocks) + level


@dataclass
class FloquetCurves:
    """Dressed-ladder quasi-energies of |0,0>, |1,-1>, |2,-2> (ascending) versus drive frequency."""

    frequencies: np.ndarray
    quasi_energies: np.ndarray
    blocks: int

    def write_csv(self, path):
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["omega", "E_a", "E_b", "E_c"])
            for om, row in zip(self.frequencies, self.quasi_energies):
                w.writerow([f"{om:.10g}"] + [f"{v:.10g}" for v in row])


_LADDER = ((0, 0), (1, -1), (2, -2))


def _ladder_levels(sys, omega, blocks):
    vals, vecs = np.linalg.eigh(floquet_matrix(sys, omega, blocks))
    idx = [_basis_index(n, m, blocks) for n, m in _LADDER]
    weight = np.sum(np.abs(vecs[idx, :]) ** 2, axis=0)
    top = np.sort(np.argsort(weight)[-3:])
    return np.sort(vals[top])


def floquet_spectrum(sys: ThreeLevelSystem, drive_frequencies, blocks: int = DEFAULT_PHOTON_BLOCKS) -> FloquetCurves:
    """Quasi-energies of the dressed ladder, the adiabatic curves of the three crossings.

    The Rabi frequencies are held at ``sys.reference_frequency``.
    """
    freqs = np.asarray(drive_frequencies, dtype=float)
    out = np.array([_ladder_levels(sys, w, blocks) for w in freqs])
    return FloquetCurves(freqs, out, blocks)


@dataclass(frozen=True)
class CrossingGaps:
    omega_a: float
    omega_b: float
    omega_c: float
    crossing_frequencies: tuple[float, float, float]
    blocks: int

    def to_dict(self):
        return {
            "omega_a": self.omega_a,
            "omega_b": self.omega_b,
            "omega_c": self.omega_c,
            "crossing_frequencies": list(self.crossing_frequencies),
            "photon_blocks": self.blocks,
        }


def _pair_separation(sys, omega, pair, blocks):
    vals, vecs = np.linalg.eigh(floquet_matrix(sys, omega, blocks))
    idx = [_basis_index(n, m, blocks) for n, m in pair]
    weight = np.sum(np.abs(vecs[idx, :]) ** 2, axis=0)
    top = np.argsort(weight)[-2:]
    return abs(vals[top[1]] - vals[top[0]])


def _min_gap(sys, pair, center, half_width, blocks):
    res = minimize_scalar(
        lambda w: _pair_separation(sys, w, pair, blocks),
        bounds=(center - half_width, center + half_width),
        method="bounded",
        options={"xatol": 1e-4 * 1e-3 * center},
    )
    return float(res.fun), float(res.x)


def _gaps(sys, blocks, frozen):
    w01, w12, wa = sys.omega01, sys.omega12, sys.two_photon_frequency
    sep = abs(w01 - w12)
    out = {}
    specs = {
        "c": (((0, 0), (1, -1)), w01, min(0.45 * sep, 5 * sys.rabi_01 + 0.05 * sep)),
        "b": (((1, 0), (2, -1)), w12, min(0.45 * sep, 5 * sys.rabi_12 + 0.05 * sep)),
        "a": (((0, 0), (2, -2)), wa, 0.4 * sep / 2),
    }
    for key, (pair, center, hw) in specs.items():
        s = sys.at_frequency(center) if frozen else sys
        out[key] = _min_gap(s, pair, center, hw, blocks)
    return out


def extract_gaps(
    sys: ThreeLevelSystem,
    blocks: int = DEFAULT_PHOTON_BLOCKS,
    freeze_at_crossings: bool = True,
    tol: float = GAP_TOL,
) -> CrossingGaps:
    """Minimal dressed-level separations at the three avoided crossings.

    Omega_c: |0,0> vs |1,-1> near omega01; Omega_b: |1,0> vs |2,-1> near
    omega12; Omega_a: two-photon |0,0> vs |2,-2> near (E2 - E0)/2.  With
    ``freeze_at_crossings`` the Rabi frequencies are evaluated at each
    crossing's resonance frequency.  Raises ``ConvergenceError`` if two more
    photon blocks move any gap by more than ``tol`` (relative).
    """
    g = _gaps(sys, blocks, freeze_at_crossings)
    g2 = _gaps(sys, blocks + 2, freeze_at_crossings)
    for k in g:
        a, b = g[k][0], g2[k][0]
        if abs(a - b) > tol * max(abs(b), 1e-300):
            raise ConvergenceError(f"gap Omega_{k} changed by {abs(a - b) / b:.2%} with {blocks + 2} blocks")
    return CrossingGaps(
        omega_a=g["a"][0],
        omega_b=g["b"][0],
        omega_c=g["c"][0],
        crossing_frequencies=(g["a"][1], g["b"][1], g["c"][1]),
        blocks=blocks,
    )


# --- Landau-Zener ----------------------------------------------------------


def lz_probability(gap: float, chirp_rate: float, convention: str = "printed") -> float:
    """Diabatic passage probability through an avoided crossing of width ``gap``.

    ``printed``: exp(-gap^2 / (4 |beta|)).
    ``standard``: exp(-pi gap^2 / (2 |beta|)), the exact Landau-Zener result for
    the coupling ``hbar gap cos(phi)`` in the rotating-wave limit (off-diagonal
    element gap/2, detuning rate beta).
    """
    if chirp_rate == 0:
        raise ValueError("chirp rate must be nonzero")
    r = gap**2 / abs(chirp_rate)
    if convention == "printed":
        return math.exp(-0.25 * r)
    if convention == "standard":
        return math.exp(-0.5 * math.pi * r)
    raise ValueError(f"unknown convention {convention!r}")


# --- chirped transfer ------------------------------------------------------


@dataclass
class TransferResult:
    populations: np.ndarray
    beta: float
    span: float
    center: float
    duration: float
    dt: float
    n_steps: int
    initial: int

    def to_dict(self):
        return {
            "populations": self.populations.tolist(),
            "beta": self.beta,
            "span": self.span,
            "center": self.center,
            "duration": self.duration,
            "dt": self.dt,
            "n_steps": self.n_steps,
            "initial": self.initial,
        }


def _step_unitaries(W, K, r, cos_phi, dt):
    """Strang steps exp(-i W dt/2) exp(-i c K dt) exp(-i W dt/2) for many c at once."""
    n = len(cos_phi)
    eye = np.eye(3)
    if r == 0:
        M = np.broadcast_to(eye, (n, 3, 3)).astype(complex)
    else:
        th = cos_phi * dt * r
        K1 = K / r
        K2 = K1 @ K1
        M = (
            eye[None]
            - 1j * np.sin(th)[:, None, None] * K1[None]
            + (np.cos(th) - 1.0)[:, None, None] * K2[None]
        )
    half = np.exp(-0.5j * W * dt)
    return half[None, :, None] * M * half[None, None, :]


def _ordered_product(U):
    """U[n-1] @ ... @ U[1] @ U[0] by pairwise reduction."""
    while len(U) > 1:
        if len(U) % 2:
            last = U[-1:]
            U = U[:-1]
        else:
            last = None
        U = U[1::2] @ U[0::2]
        if last is not None:
            U = np.concatenate([U, last])
    return U[0]


def chirped_transfer(
    sys: ThreeLevelSystem,
    beta: float,
    sweep_span: float,
    initial: int = 0,
    center: float | None = None,
    frequency_dependent: bool = False,
    max_phase: float = MAX_PHASE_PER_STEP,
) -> TransferResult:
    """Final level populations after a linear chirp of the drive frequency.

    The drive phase is ``omega_i t + beta t^2 / 2`` with ``omega_i = center -
    beta T / 2`` and ``T = sweep_span / |beta|`` (``sweep_span`` in rad/s).
    ``center`` defaults to the two-photon frequency, or omega01 when the 1-2
    coupling is off.  Positive ``beta`` is an up chirp.  With
    ``frequency_dependent`` the Rabi frequencies follow the instantaneous
    frequency squared; otherwise they stay at the reference value.
    """
    if beta == 0:
        raise ValueError("beta must be nonzero")
    if initial not in (0, 1, 2):
        raise IndexError("initial level must be 0, 1 or 2")
    if center is None:
        center = sys.omega01 if sys.rabi_12 == 0 else sys.two_photon_frequency
    lo, hi = center - sweep_span / 2, center + sweep_span / 2
    needed = [sys.omega01] if sys.rabi_12 == 0 else [sys.omega12, sys.two_photon_frequency, sys.omega01]
    if lo <= 0 or min(needed) <= lo or max(needed) >= hi:
        raise ValueError("sweep must cover every crossing and stay at positive frequency")
    T = sweep_span / abs(beta)
    W = sys.level_frequencies
    w_max = max(W[-1], hi)
    n = int(math.ceil(T * w_max / max_phase))
    dt = T / n
    w_i = center - beta * T / 2
    K = sys.coupling_matrix()
    r = float(np.sqrt(np.sum(np.triu(K) ** 2)))
    psi = np.zeros(3, dtype=complex)
    psi[initial] = 1.0
    for s in range(0, n, CHUNK):
        t = (np.arange(s, min(s + CHUNK, n)) + 0.5) * dt
        phase = w_i * t + 0.5 * beta * t**2
        c = np.cos(phase)
        if frequency_dependent:
            c = c * ((w_i + beta * t) / sys.reference_frequency) ** 2
        psi = _ordered_product(_step_unitaries(W, K, r, c, dt)) @ psi
    pops = np.abs(psi) ** 2
    return TransferResult(pops, float(beta), float(sweep_span), float(center), T, dt, n, initial)


def write_transfer_csv(results, path):
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["beta", "direction", "P0", "P1", "P2"])
        for r in results:
            d = "up" if r.beta > 0 else "down"
            w.writerow([f"{abs(r.beta):.10g}", d] + [f"{p:.10g}" for p in r.populations])
