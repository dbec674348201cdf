"""Control waveforms: lattice displacement theta(t) and depth modulation eta(t).

Displacements are in lattice constants, times in seconds, frequencies in
rad/s.  A waveform is a uniformly sampled pair ``(theta, eta)``.
"""

from __future__ import annotations

import csv
import logging
import math
import warnings
from dataclasses import dataclass, field
from enum import Enum

import numpy as np
from scipy.interpolate import CubicSpline

log = logging.getLogger(__name__)

DEFAULT_DT = 1e-6
ENDPOINT_TOL = 1e-9
SAMPLES_PER_CYCLE = 40
REFERENCE_CENTER_FREQUENCY = 2 * math.pi * 5e3
# Gaussian pulses are sampled over this many FWHM so the tails are below ENDPOINT_TOL
GAUSSIAN_WINDOW = 8.0


class Variant(str, Enum):
    STEP = "Step"
    SQUARE = "Square"
    GAUSSIAN = "Gaussian"
    SINE_PM = "SinePM"
    SINE_AM = "SineAM"
    AM_VS_PM = "AmVsPm"
    CHIRP_PM = "ChirpPM"
    PIECEWISE = "PiecewiseConstant"
    EXTERNAL = "External"


HELD_VARIANTS = {Variant.STEP, Variant.SQUARE, Variant.PIECEWISE}
NONCOMPLIANT_VARIANTS = {Variant.STEP, Variant.SQUARE}


class SamplingError(ValueError):
    pass


class DistributionValuedError(ValueError):
    """theta has jumps, so its second derivative is not a function."""


class NonCompliantEndpointsWarning(UserWarning):
    pass


@dataclass(frozen=True)
class PulseSpec:
    """Declarative description of one control pulse.

    Only the fields relevant to ``variant`` are read.  ``chirp_start`` and
    ``chirp_rate`` are the initial angular frequency and the signed chirp
    rate (rad/s^2, positive = up chirp).  ``samples`` holds
    ``(eta_values, theta_values)`` slice tables for piecewise-constant
    pulses.
    """

    variant: Variant
    duration: float
    amplitude_pm: float = 0.0
    amplitude_am: float = 0.0
    frequency: float = 0.0
    chirp_start: float = 0.0
    chirp_rate: float = 0.0
    relative_phase: float = 0.0
    samples: tuple | None = None

    def __post_init__(self):
        object.__setattr__(self, "variant", Variant(self.variant))
        if not self.duration > 0:
            raise ValueError("duration must be positive")
        v = self.variant
        if v in (Variant.SINE_PM, Variant.SINE_AM, Variant.AM_VS_PM) and not self.frequency > 0:
            raise ValueError(f"{v.value} needs a positive frequency")
        if v is Variant.CHIRP_PM and self.chirp_rate == 0:
            raise ValueError("ChirpPM needs a nonzero chirp rate")
        if v is Variant.PIECEWISE and self.samples is None:
            raise ValueError("PiecewiseConstant needs samples")

    def max_frequency(self) -> float:
        v = self.variant
        if v in (Variant.SINE_PM, Variant.SINE_AM):
            return self.frequency
        if v is Variant.AM_VS_PM:
            return 2 * self.frequency
        if v is Variant.CHIRP_PM:
            return max(abs(self.chirp_start), abs(self.chirp_start + self.chirp_rate * self.duration))
        if v is Variant.GAUSSIAN:
            # spectral 1/e^4 point of a Gaussian with this FWHM
            return 4.0 * math.sqrt(4 * math.log(2)) / self.duration
        return 0.0

    def to_dict(self) -> dict:
        d = {
            "variant": self.variant.value,
            "duration": self.duration,
            "amplitude_pm": self.amplitude_pm,
            "amplitude_am": self.amplitude_am,
            "frequency": self.frequency,
            "chirp_start": self.chirp_start,
            "chirp_rate": self.chirp_rate,
            "relative_phase": self.relative_phase,
        }
        if self.samples is not None:
            d["samples"] = [list(map(float, s)) for s in self.samples]
        return d


@dataclass
class Waveform:
    """Uniformly sampled controls.

    ``theta`` is in units of d, ``eta`` is dimensionless, ``accel`` (if
    computed) is theta'' in d/s^2.  ``hold`` marks sample-and-hold
    semantics (value ``theta[i]`` on ``[t_i, t_{i+1})``); otherwise samples
    are linearly interpolated.  ``endpoint_velocity`` carries exact
    theta'(0), theta'(T) when the generator knows them.
    """

    dt: float
    theta: np.ndarray
    eta: np.ndarray
    accel: np.ndarray | None = None
    variant: Variant = Variant.EXTERNAL
    hold: bool = False
    endpoint_velocity: tuple[float, float] | None = None
    meta: dict = field(default_factory=dict)

    def __post_init__(self):
        self.theta = np.asarray(self.theta, dtype=float)
        self.eta = np.asarray(self.eta, dtype=float)
        if self.theta.shape != self.eta.shape or self.theta.ndim != 1:
            raise ValueError("theta and eta must be 1-D arrays of equal length")
        if len(self.theta) < 2:
            raise ValueError("need at least two samples")
        if np.any(self.eta <= -1):
            raise ValueError("eta must stay above -1 (lattice depth must remain positive)")

    @property
    def n_samples(self) -> int:
        return len(self.theta)

    @property
    def duration(self) -> float:
        return (self.n_samples - 1) * self.dt

    @property
    def times(self) -> np.ndarray:
        return np.arange(self.n_samples) * self.dt

    def endpoint_values(self):
        """(theta(0), theta'(0), theta(T), theta'(T)); theta' in d/s."""
        if self.endpoint_velocity is not None:
            v0, v1 = self.endpoint_velocity
        else:
            th, dt = self.theta, self.dt
            if self.n_samples >= 3:
                v0 = (-3 * th[0] + 4 * th[1] - th[2]) / (2 * dt)
                v1 = (3 * th[-1] - 4 * th[-2] + th[-3]) / (2 * dt)
            else:
                v0 = v1 = (th[1] - th[0]) / dt
        return float(self.theta[0]), float(v0), float(self.theta[-1]), float(v1)

    @property
    def compliant(self) -> bool:
        """theta and theta' vanish at both ends (frame-equivalence precondition)."""
        if self.variant in NONCOMPLIANT_VARIANTS:
            return False
        return all(abs(v) < ENDPOINT_TOL for v in self.endpoint_values())

    def _interp(self, values, t):
        # cubic splines keep the between-sample error at O(dt^4); linear
        # interpolation would bias the drive amplitude by ~(omega dt)^2 / 12
        if self.n_samples < 4 or not np.all(np.isfinite(values)):
            return np.interp(t, self.times, values)
        return CubicSpline(self.times, values)(t)

    def sample(self, t):
        """(theta, eta) at arbitrary times inside the window."""
        t = np.asarray(t, dtype=float)
        if self.hold:
            idx = np.clip(np.floor(t / self.dt + 1e-9).astype(int), 0, self.n_samples - 1)
            return self.theta[idx], self.eta[idx]
        return self._interp(self.theta, t), self._interp(self.eta, t)

    def sample_accel(self, t):
        if self.accel is None:
            raise ValueError("acceleration profile not computed")
        return self._interp(self.accel, np.asarray(t, dtype=float))


def chirp_rate(t_p: float, delta_f: float) -> float:
    """|beta| = 2 pi delta_f / t_p in rad/s^2 (delta_f in Hz, t_p in s)."""
    if not (t_p > 0 and delta_f > 0):
        raise ValueError("t_p and delta_f must be positive")
    return 2 * math.pi * delta_f / t_p


def chirp_spec(
    amplitude_pm: float,
    t_p: float,
    delta_f: float,
    direction: int = +1,
    center: float = REFERENCE_CENTER_FREQUENCY,
) -> PulseSpec:
    """Linear chirp sweeping ``center +- pi delta_f`` over ``t_p``; direction +1 is up."""
    beta = math.copysign(chirp_rate(t_p, delta_f), direction)
    return PulseSpec(
        Variant.CHIRP_PM,
        duration=t_p,
        amplitude_pm=amplitude_pm,
        chirp_start=center - beta * t_p / 2,
        chirp_rate=beta,
    )


def instantaneous_frequency(spec: PulseSpec, t):
    return spec.chirp_start + spec.chirp_rate * np.asarray(t)


def synthesize(spec: PulseSpec, dt: float = DEFAULT_DT) -> Waveform:
    """Sample ``spec`` on a uniform grid of step ``dt``."""
    w_max = spec.max_frequency()
    if w_max > 0 and dt > 2 * math.pi / w_max / SAMPLES_PER_CYCLE * (1 + 1e-9):
        raise SamplingError(
            f"dt={dt:.3g}s gives fewer than {SAMPLES_PER_CYCLE} samples per cycle at {w_max:.4g} rad/s"
        )
    v = spec.variant
    T = spec.duration * (GAUSSIAN_WINDOW if v is Variant.GAUSSIAN else 1.0)
    n = int(round(T / dt))
    if abs(n * dt - T) > 1e-9 * T:
        raise SamplingError(f"duration {T:.6g}s is not a multiple of dt={dt:.3g}s")
    t = np.arange(n + 1) * dt
    a, w = spec.amplitude_pm, spec.frequency
    theta = np.zeros_like(t)
    eta = np.zeros_like(t)
    vel = None
    acc = None

    if v is Variant.STEP:
        theta[:] = a
    elif v is Variant.SQUARE:
        theta[:-1] = a
    elif v is Variant.GAUSSIAN:
        tc = T / 2
        theta = a * np.exp(-4 * math.log(2) * ((t - tc) / spec.duration) ** 2)
        g = lambda s: -8 * math.log(2) * (s - tc) / spec.duration**2 * a * math.exp(
            -4 * math.log(2) * ((s - tc) / spec.duration) ** 2
        )
        vel = (g(0.0), g(T))
        c = 4 * math.log(2) / spec.duration**2
        acc = theta * (4 * c**2 * (t - tc) ** 2 - 2 * c)
    elif v is Variant.SINE_PM:
        theta = a * (1 - np.cos(w * t))
        vel = (0.0, a * w * math.sin(w * T))
        acc = a * w**2 * np.cos(w * t)
    elif v is Variant.SINE_AM:
        eta = spec.amplitude_am * np.sin(w * t + spec.relative_phase)
        vel = (0.0, 0.0)
        acc = np.zeros_like(t)
    elif v is Variant.AM_VS_PM:
        theta = a * (1 - np.cos(w * t))
        eta = spec.amplitude_am * np.sin(2 * w * t + spec.relative_phase)
        vel = (0.0, a * w * math.sin(w * T))
        acc = a * w**2 * np.cos(w * t)
    elif v is Variant.CHIRP_PM:
        phase = spec.chirp_start * t + 0.5 * spec.chirp_rate * t**2
        theta = a * (1 - np.cos(phase))
        w_end = spec.chirp_start + spec.chirp_rate * T
        vel = (0.0, a * w_end * math.sin(phase[-1]))
        rate = spec.chirp_start + spec.chirp_rate * t
        acc = a * (spec.chirp_rate * np.sin(phase) + rate**2 * np.cos(phase))
    elif v is Variant.PIECEWISE:
        eta_s, theta_s = (np.asarray(s, dtype=float) for s in spec.samples)
        n_slices = len(eta_s)
        idx = np.minimum((t / T * n_slices + 1e-9).astype(int), n_slices - 1)
        eta, theta = eta_s[idx], theta_s[idx]

    if v in NONCOMPLIANT_VARIANTS:
        warnings.warn(
            f"{v.value} pulse has non-compliant endpoints; lab-frame propagation only",
            NonCompliantEndpointsWarning,
            stacklevel=2,
        )
    # analytic theta'' where known; acceleration_profile() falls back to finite differences
    wf = Waveform(dt, theta, eta, accel=acc, variant=v, hold=v in HELD_VARIANTS, endpoint_velocity=vel)
    wf.meta["spec"] = spec.to_dict()
    return wf


def acceleration_profile(waveform: Waveform) -> np.ndarray:
    """theta'' by second-order finite differences, stored on the waveform.

    Central differences inside, second-order one-sided stencils at the
    endpoints.  Waveforms with jumps are refused.
    """
    if waveform.variant in NONCOMPLIANT_VARIANTS or waveform.hold:
        warnings.warn("theta'' of a jump waveform is distribution-valued", stacklevel=2)
        raise DistributionValuedError(
            f"{waveform.variant.value}: numerical differentiation refused; propagate in the lab frame"
        )
    th, dt = waveform.theta, waveform.dt
    if len(th) < 4:
        raise ValueError("need at least 4 samples")
    acc = np.empty_like(th)
    acc[1:-1] = (th[2:] - 2 * th[1:-1] + th[:-2]) / dt**2
    acc[0] = (2 * th[0] - 5 * th[1] + 4 * th[2] - th[3]) / dt**2
    acc[-1] = (2 * th[-1] - 5 * th[-2] + 4 * th[-3] - th[-4]) / dt**2
    waveform.accel = acc
    return acc


def zero_waveform(duration: float, dt: float = DEFAULT_DT) -> Waveform:
    n = int(round(duration / dt))
    return Waveform(dt, np.zeros(n + 1), np.zeros(n + 1), variant=Variant.EXTERNAL, endpoint_velocity=(0.0, 0.0))


def write_waveform_csv(waveform: Waveform, path) -> None:
    with open(path, "w", newline="") as fh:
        wr = csv.writer(fh)
        wr.writerow(["t", "theta", "eta"])
        for t, th, e in zip(waveform.times, waveform.theta, waveform.eta):
            wr.writerow([f"{t:.12g}", f"{th:.17g}", f"{e:.17g}"])


def read_waveform_csv(path, hold: bool = False) -> Waveform:
    """Load a (t, theta, eta) table; the time column must be uniform."""
    data = np.loadtxt(path, delimiter=",", skiprows=1, ndmin=2)
    t = data[:, 0]
    dts = np.diff(t)
    dt = float(dts.mean())
    if np.max(np.abs(dts - dt)) > 1e-6 * dt:
        raise ValueError(f"{path}: time column is not uniformly sampled")
    if abs(t[0]) > 1e-6 * dt:
        raise ValueError(f"{path}: time column must start at 0")
    return Waveform(dt, data[:, 1], data[:, 2], variant=Variant.EXTERNAL, hold=hold)
