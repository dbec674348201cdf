"""Inhomogeneous broadening: depth distributions, Ramsey signals and ensemble averages."""

from __future__ import annotations

import csv
import math
import warnings
from dataclasses import dataclass

import numpy as np
from scipy.integrate import trapezoid
from scipy.optimize import OptimizeWarning, curve_fit

from .bands import Omega01Curve, RangeError, compute_band_structure, omega01_of_depth, wannier_states
from .observables import Populations, mix_initial
from .propagator import (
    DEFAULT_SOLVER_DT,
    BandProjector,
    Frame,
    SpatialGrid,
    init_state,
    propagate_batch,
    static_scan,
)
from .pulses import Waveform
from .units import DomainError, LatticeConfig

DEFAULT_DEPTH_SAMPLES = 21
DEFAULT_SPAN_SIGMAS = 3.0
REFERENCE_RAMSEY_FREQUENCY = 2 * math.pi * 5007.0
REFERENCE_RAMSEY_DECAY = 2910.0


class FitError(RuntimeError):
    pass


@dataclass(frozen=True)
class DepthDistribution:
    """Sampled depth density.

    ``kind="density"``: ``weights`` is rho(U) with trapezoidal integral 1.
    ``kind="discrete"``: ``weights`` are point probabilities summing to 1.
    """

    depths: np.ndarray
    weights: np.ndarray
    kind: str = "density"

    def __post_init__(self):
        U = np.asarray(self.depths, dtype=float)
        w = np.asarray(self.weights, dtype=float)
        object.__setattr__(self, "depths", U)
        object.__setattr__(self, "weights", w)
        if U.shape != w.shape or U.ndim != 1 or len(U) == 0:
            raise ValueError("depths and weights must be equal-length 1-D arrays")
        if np.any(U <= 0):
            raise DomainError("depths must be positive")
        if np.any(np.diff(U) <= 0):
            raise ValueError("depth grid must be strictly increasing")
        if np.any(w < 0):
            raise ValueError("weights must be non-negative")
        if self.kind == "density":
            if len(U) < 2:
                raise ValueError("a density needs at least two samples")
            total = trapezoid(w, U)
        elif self.kind == "discrete":
            total = w.sum()
        else:
            raise ValueError(f"unknown kind {self.kind!r}")
        if abs(total - 1.0) > 1e-9:
            raise ValueError(f"distribution not normalised (integral {total:.12g})")

    @classmethod
    def delta(cls, depth: float) -> "DepthDistribution":
        return cls(np.array([float(depth)]), np.array([1.0]), "discrete")

    @classmethod
    def normalized(cls, depths, weights) -> "DepthDistribution":
        U = np.asarray(depths, dtype=float)
        w = np.asarray(weights, dtype=float)
        return cls(U, w / trapezoid(w, U))

    @property
    def probabilities(self) -> np.ndarray:
        """Quadrature weights summing to one."""
        if self.kind == "discrete":
            return self.weights.copy()
        U, w = self.depths, self.weights
        q = np.zeros_like(U)
        dU = np.diff(U)
        q[:-1] += 0.5 * dU
        q[1:] += 0.5 * dU
        p = q * w
        return p / p.sum()

    @property
    def mean(self) -> float:
        return float(self.probabilities @ self.depths)

    @property
    def std(self) -> float:
        p = self.probabilities
        return float(math.sqrt(p @ (self.depths - self.mean) ** 2))

    def write_csv(self, path):
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["U", "rho"])
            for u, r in zip(self.depths, self.weights):
                w.writerow([f"{u:.12g}", f"{r:.12g}"])

    @classmethod
    def read_csv(cls, path) -> "DepthDistribution":
        data = np.loadtxt(path, delimiter=",", skiprows=1, ndmin=2)
        return cls.normalized(data[:, 0], data[:, 1])


def gaussian_distribution(
    mean: float, sigma: float, n: int = DEFAULT_DEPTH_SAMPLES, span: float = DEFAULT_SPAN_SIGMAS
) -> DepthDistribution:
    """Gaussian rho(U) sampled on ``n`` points over mean +- span sigma, renormalised."""
    if sigma <= 0:
        raise ValueError("sigma must be positive")
    if mean - span * sigma <= 0:
        raise DomainError("distribution support reaches non-positive depths")
    U = np.linspace(mean - span * sigma, mean + span * sigma, n)
    return DepthDistribution.normalized(U, np.exp(-0.5 * ((U - mean) / sigma) ** 2))


def ramsey_width_distribution(
    config: LatticeConfig,
    center: float = REFERENCE_RAMSEY_FREQUENCY,
    gamma: float = REFERENCE_RAMSEY_DECAY,
    gamma_is_angular: bool = True,
    curve: Omega01Curve | None = None,
    n: int = DEFAULT_DEPTH_SAMPLES,
    span: float = DEFAULT_SPAN_SIGMAS,
) -> DepthDistribution:
    """Gaussian depth distribution whose omega01 spread matches a Ramsey decay rate.

    A Gaussian envelope exp(-(gamma t)^2 / 2) comes from a Gaussian spread of
    omega01 with standard deviation gamma (rad/s).  ``gamma_is_angular=False``
    reads ``gamma`` as an ordinary frequency (multiplied by 2 pi).  The spread
    is mapped to depth through the local slope of omega01(U) at ``center``.
    """
    if curve is None:
        curve = omega01_of_depth(config, np.linspace(4.0, 60.0, 57))
    sigma_w = gamma if gamma_is_angular else 2 * math.pi * gamma
    U0 = float(curve.inverse(center))
    sigma_U = sigma_w / float(curve.derivative(U0))
    return gaussian_distribution(U0, sigma_U, n, span)


# --- Ramsey signal ------------------------------------------------------------


@dataclass
class RamseySignal:
    delays: np.ndarray
    p0_values: np.ndarray
    displacement_used: float

    def __post_init__(self):
        self.delays = np.asarray(self.delays, dtype=float)
        self.p0_values = np.asarray(self.p0_values, dtype=float)
        if self.delays.shape != self.p0_values.shape:
            raise ValueError("delays and values differ in length")
        if np.any(self.p0_values < -1e-9) or np.any(self.p0_values > 1 + 1e-9):
            raise ValueError("P0 values must lie in [0, 1]")

    def write_csv(self, path):
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["t", "P0"])
            for t, p in zip(self.delays, self.p0_values):
                w.writerow([f"{t:.12g}", f"{p:.15g}"])

    @classmethod
    def read_csv(cls, path, displacement: float = float("nan")) -> "RamseySignal":
        data = np.loadtxt(path, delimiter=",", skiprows=1, ndmin=2)
        return cls(data[:, 0], data[:, 1], displacement)


def ground_states(grid: SpatialGrid, depths, band: int = 0) -> np.ndarray:
    rows = []
    for U in depths:
        basis = wannier_states(compute_band_structure(float(U), check_convergence=False), grid.points_per_well)
        rows.append(init_state(grid, basis, band).amplitudes)
    return np.array(rows)


def simulate_ramsey(
    dist: DepthDistribution,
    displacement: float,
    delays,
    config: LatticeConfig,
    grid: SpatialGrid | None = None,
    solver_dt: float = DEFAULT_SOLVER_DT,
) -> RamseySignal:
    """Displace, wait, displace back; P0 averaged over the depth distribution."""
    grid = grid or SpatialGrid()
    states = ground_states(grid, dist.depths)
    pops = static_scan(states, grid, config, dist.depths, displacement, delays, solver_dt)
    p0 = dist.probabilities @ pops[:, :, 0]
    return RamseySignal(np.asarray(delays, dtype=float), np.clip(p0, 0.0, 1.0), float(displacement))


# --- fitting ------------------------------------------------------------------


def ramsey_model(t, A, gamma, omega, phi, B):
    return A * np.exp(-0.5 * (gamma * t) ** 2) * np.cos(omega * t + phi) + B


@dataclass
class RamseyFit:
    amplitude: float
    decay_rate: float
    omega: float
    phase: float
    offset: float
    covariance: np.ndarray
    residual_rms: float
    omega_identifiable: bool = True

    @property
    def params(self) -> np.ndarray:
        return np.array([self.amplitude, self.decay_rate, self.omega, self.phase, self.offset])

    def to_dict(self):
        return {
            "amplitude": self.amplitude,
            "decay_rate": self.decay_rate,
            "omega": self.omega,
            "phase": self.phase,
            "offset": self.offset,
            "residual_rms": self.residual_rms,
            "omega_identifiable": self.omega_identifiable,
            "stderr": np.sqrt(np.clip(np.diag(self.covariance), 0, None)).tolist(),
        }


def _fft_peak(t, y):
    """Dominant angular frequency from a zero-padded FFT with parabolic refinement."""
    dt = t[1] - t[0]
    n = 1 << int(math.ceil(math.log2(len(y) * 8)))
    spec = np.abs(np.fft.rfft((y - y.mean()) * np.hanning(len(y)), n))
    spec[0] = 0.0
    k = int(np.argmax(spec))
    if 0 < k < len(spec) - 1:
        a, b, c = spec[k - 1], spec[k], spec[k + 1]
        den = a - 2 * b + c
        k = k + (0.5 * (a - c) / den if den != 0 else 0.0)
    return 2 * math.pi * k / (n * dt)


def _initial_guess(t, y, omega):
    B = float(np.mean(y))
    z = y - B
    # envelope from per-period peak magnitudes, then log-fit against t^2
    period = 2 * math.pi / omega
    edges = np.arange(t[0], t[-1] + period, period)
    tc, env = [], []
    for lo, hi in zip(edges[:-1], edges[1:]):
        m = (t >= lo) & (t < hi)
        if m.sum() >= 3:
            i = np.argmax(np.abs(z[m]))
            tc.append(t[m][i])
            env.append(abs(z[m][i]))
    tc, env = np.array(tc), np.array(env)
    good = env > 1e-3 * env.max() if len(env) else np.array([], dtype=bool)
    gamma = 0.0
    if good.sum() >= 3:
        slope = np.polyfit(tc[good] ** 2, np.log(env[good]), 1)[0]
        gamma = math.sqrt(max(-2 * slope, 0.0))
    # linear least squares for the quadrature amplitudes at fixed omega, gamma
    e = np.exp(-0.5 * (gamma * t) ** 2)
    X = np.column_stack([e * np.cos(omega * t), -e * np.sin(omega * t), np.ones_like(t)])
    (c, s, B), *_ = np.linalg.lstsq(X, y, rcond=None)
    return [math.hypot(c, s), gamma, omega, math.atan2(s, c), B]


def _canonical(p):
    A, g, w, phi, B = p
    if A < 0:
        A, phi = -A, phi + math.pi
    phi = (phi + math.pi) % (2 * math.pi) - math.pi
    return [A, abs(g), w, phi, B]


def fit_ramsey(signal: RamseySignal, restarts: int = 4) -> RamseyFit:
    """Five-parameter least squares of A exp(-(gamma t)^2/2) cos(omega t + phi) + B."""
    t, y = signal.delays, signal.p0_values
    if len(t) < 10 or np.any(np.diff(t) <= 0):
        raise ValueError("need at least 10 strictly increasing delays")
    dt = float(np.mean(np.diff(t)))
    span = t[-1] - t[0]
    if np.ptp(y) < 1e-12:
        return RamseyFit(0.0, 0.0, float("nan"), 0.0, float(np.mean(y)), np.full((5, 5), np.nan), 0.0, False)
    omega = _fft_peak(t, y)
    if omega * span / (2 * math.pi) < 5 or 2 * math.pi / omega / dt < 8:
        raise ValueError("need >= 5 periods sampled at >= 8 points per period")
    p0 = _initial_guess(t, y, omega)
    best = None
    last_err = None
    for k in range(restarts + 1):
        guess = list(p0)
        if k:
            guess[1] *= [0.5, 2.0, 0.25, 4.0][(k - 1) % 4]
            guess[3] += math.pi / 2 * k
        try:
            with warnings.catch_warnings():
                # exact model data leaves no residual to scale the covariance
                warnings.simplefilter("ignore", OptimizeWarning)
                popt, pcov = curve_fit(ramsey_model, t, y, p0=guess, maxfev=20000)
        except (RuntimeError, ValueError) as err:
            last_err = err
            continue
        res = float(np.sqrt(np.mean((ramsey_model(t, *popt) - y) ** 2)))
        if best is None or res < best[2]:
            best = (popt, pcov, res)
        if res < 1e-3 * np.std(y):
            break
    if best is None:
        raise FitError(f"fit did not converge after {restarts + 1} starts: {last_err}; initial guess {p0}")
    popt, pcov, res = best
    A, g, w, phi, B = _canonical(popt)
    identifiable = A > 3 * res and A > 1e-9
    return RamseyFit(A, g, w, phi, B, pcov, res, identifiable)


# --- spectrum inversion ---------------------------------------------------------


@dataclass
class FrequencySpectrum:
    omega: np.ndarray
    density: np.ndarray


def ramsey_spectrum(signal: RamseySignal, offset: float, pad: int = 8) -> FrequencySpectrum:
    """Magnitude spectrum of the detrended, even-extended, Hann-apodised signal."""
    t, y = signal.delays, signal.p0_values - offset
    dt = float(np.mean(np.diff(t)))
    if abs(t[0]) > 1e-9 * dt:
        raise ValueError("delays must start at zero for the even extension")
    sym = np.concatenate([y[:0:-1], y])
    n = len(sym)
    win = np.hanning(n + 2)[1:-1]
    nfft = 1 << int(math.ceil(math.log2(n * pad)))
    spec = np.abs(np.fft.rfft(sym * win, nfft))
    omega = 2 * math.pi * np.fft.rfftfreq(nfft, dt)
    return FrequencySpectrum(omega, spec)


def recover_depth_distribution(
    signal: RamseySignal,
    curve: Omega01Curve,
    fit: RamseyFit | None = None,
    n_depths: int = 201,
    support: float = 1e-3,
) -> DepthDistribution:
    """rho(U) = rho(omega01(U)) d omega01/dU from the Ramsey magnitude spectrum.

    Only the spectral lobe around the fitted oscillation frequency is used;
    its support (where the magnitude exceeds ``support`` of the peak) must lie
    inside the tabulated curve.
    """
    fit = fit or fit_ramsey(signal)
    sp = ramsey_spectrum(signal, fit.offset)
    lobe = (sp.omega > 0.5 * fit.omega) & (sp.omega < 1.5 * fit.omega)
    w, rho_w = sp.omega[lobe], sp.density[lobe]
    peak = int(np.argmax(rho_w))
    thr = support * rho_w[peak]
    lo = peak
    while lo > 0 and rho_w[lo - 1] > thr:
        lo -= 1
    hi = peak
    while hi < len(rho_w) - 1 and rho_w[hi + 1] > thr:
        hi += 1
    w_lo, w_hi = w[lo], w[hi]
    w_min, w_max = float(curve.omega01[0]), float(curve.omega01[-1])
    if w_lo < w_min or w_hi > w_max:
        raise RangeError(
            f"spectral support [{w_lo:.6g}, {w_hi:.6g}] rad/s outside curve range [{w_min:.6g}, {w_max:.6g}]"
        )
    U = np.linspace(float(curve.inverse(w_lo)), float(curve.inverse(w_hi)), n_depths)
    rho = np.interp(curve(U), w, rho_w) * curve.derivative(U)
    return DepthDistribution.normalized(U, rho)


# --- ensemble averaging -------------------------------------------------------------


@dataclass
class EnsembleResult:
    populations: Populations
    per_depth: np.ndarray
    depths: np.ndarray
    probabilities: np.ndarray
    times: np.ndarray
    trajectory: np.ndarray

    def to_dict(self):
        return {
            "populations": self.populations.to_dict(),
            "depths": self.depths.tolist(),
            "probabilities": self.probabilities.tolist(),
            "per_depth": self.per_depth.tolist(),
        }


def ensemble_average(
    waveform: Waveform,
    dist: DepthDistribution,
    initial_weights: tuple[float, float],
    config: LatticeConfig,
    grid: SpatialGrid | None = None,
    solver_dt: float = DEFAULT_SOLVER_DT,
    frame: Frame | str = Frame.LAB,
    record_stride: int = 10**9,
    boundary_check: bool | None = None,
) -> EnsembleResult:
    """Propagate |0> and |1> at every sampled depth, mix by the initial weights, average by rho."""
    p0i, p1i = initial_weights
    if p0i < 0 or p1i < 0 or abs(p0i + p1i - 1.0) > 1e-9:
        raise ValueError("initial weights must be non-negative and sum to 1")
    grid = grid or SpatialGrid()
    U = dist.depths
    rows, depths = [], []
    for u in U:
        basis = wannier_states(compute_band_structure(float(u), check_convergence=False), grid.points_per_well)
        rows += [init_state(grid, basis, 0).amplitudes, init_state(grid, basis, 1).amplitudes]
        depths += [u, u]
    projectors = []
    for u in U:
        pr = BandProjector(grid, u)
        projectors += [pr, pr]
    try:
        times, pops, _ = propagate_batch(
            np.array(rows),
            grid,
            waveform,
            config,
            depths=np.array(depths),
            frame=frame,
            record_stride=record_stride,
            solver_dt=solver_dt,
            projectors=projectors,
            boundary_check=boundary_check,
        )
    except RuntimeError as err:
        raise type(err)(f"ensemble over depths {U.min():.4g}..{U.max():.4g} E_r: {err}") from err
    mixed = mix_initial(pops[0::2], pops[1::2], (p0i, p1i))
    prob = dist.probabilities
    traj = np.einsum("d,dtk->tk", prob, mixed)
    final = traj[-1]
    final = final / final.sum()
    return EnsembleResult(Populations.from_array(final), mixed[:, -1, :], U, prob, times, traj)


def write_ramsey_fit(fit: RamseyFit, path):
    import json

    with open(path, "w") as fh:
        json.dump(fit.to_dict(), fh, indent=2)
