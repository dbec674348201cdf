"""Band populations, initial-population renormalisation and figures of merit."""

from __future__ import annotations

import math
from dataclasses import asdict, dataclass

import numpy as np

from .bands import BlochSpectrum
from .propagator import WaveFunction

SUM_TOL = 1e-9


class GridMismatchError(ValueError):
    pass


@dataclass(frozen=True)
class Populations:
    p0: float
    p1: float
    p_leak: float

    def __post_init__(self):
        for name in ("p0", "p1", "p_leak"):
            v = getattr(self, name)
            if not -SUM_TOL <= v <= 1 + SUM_TOL:
                raise ValueError(f"{name}={v} outside [0, 1]")
        if abs(self.p0 + self.p1 + self.p_leak - 1.0) > SUM_TOL:
            raise ValueError("populations must sum to 1")

    @classmethod
    def from_array(cls, p) -> "Populations":
        p = np.asarray(p, dtype=float)
        return cls(float(p[0]), float(p[1]), float(p[-1]))

    def as_array(self) -> np.ndarray:
        return np.array([self.p0, self.p1, self.p_leak])

    def to_dict(self):
        return asdict(self)


def _grid_indices(psi: WaveFunction, spectrum: BlochSpectrum) -> np.ndarray:
    grid = psi.grid
    nw, N = grid.n_wells, grid.total_points
    m = spectrum.quasi_momenta * nw / 2
    if np.max(np.abs(m - np.rint(m))) > 1e-9 or len(np.unique(np.rint(m))) != nw:
        raise GridMismatchError(
            f"spectrum quasi-momenta must be the {nw} ring momenta 2m/{nw} of the grid"
        )
    if spectrum.plane_wave_cutoff > grid.points_per_well // 2 - 1:
        raise GridMismatchError(
            f"plane-wave cutoff {spectrum.plane_wave_cutoff} exceeds grid bandwidth "
            f"({grid.points_per_well // 2 - 1})"
        )
    j = spectrum.orders
    return np.mod(np.rint(m).astype(int)[:, None] + nw * j[None, :], N)


def project_populations(psi: WaveFunction, spectrum: BlochSpectrum, n_bands: int = 2) -> Populations:
    """P_n = sum_q |<n, q | psi>|^2 for the lowest ``n_bands`` bands, PL the remainder.

    ``spectrum`` must be computed on the grid's ring quasi-momenta.  With
    ``n_bands > 2`` the extra bands are projected explicitly and folded into
    the leakage.
    """
    idx = _grid_indices(psi, spectrum)
    c = psi.momentum_amplitudes()
    coeff = spectrum.bloch_coefficients[:, :n_bands, :]
    amps = np.einsum("qnj,qj->qn", np.conj(coeff), c[idx])
    p = np.sum(np.abs(amps) ** 2, axis=0)
    total = float(np.sum(np.abs(c) ** 2))
    p0, p1 = float(p[0]) / total, float(p[1]) / total
    leak = max(1.0 - p0 - p1, 0.0)
    return Populations(p0, p1, leak)


@dataclass(frozen=True)
class RenormalizedPopulations:
    p0_tilde: float
    p1_tilde: float
    p_leak_tilde: float
    initial: tuple[float, float]

    def to_dict(self):
        return {
            "p0_tilde": self.p0_tilde,
            "p1_tilde": self.p1_tilde,
            "p_leak_tilde": self.p_leak_tilde,
            "initial": list(self.initial),
        }


def renormalize(final: Populations, initial: tuple[float, float]) -> RenormalizedPopulations:
    """Correct for imperfect preparation: only the change in P1 counts, all scaled by P0^i."""
    p0i, p1i = (float(v) for v in initial)
    if not p0i > 0:
        raise ValueError("initial ground-state population must be positive")
    return RenormalizedPopulations(
        final.p0 / p0i,
        (final.p1 - p1i) / p0i,
        final.p_leak / p0i,
        (p0i, p1i),
    )


@dataclass(frozen=True)
class MeritReport:
    inversion: float
    branching_ratio: float
    max_p1_tilde: float
    leak_at_max: float

    def to_dict(self):
        br = self.branching_ratio
        return {
            "inversion": self.inversion,
            "branching_ratio": "inf" if math.isinf(br) else br,
            "max_p1_tilde": self.max_p1_tilde,
            "leak_at_max": self.leak_at_max,
        }


def normalized_inversion(renorm: RenormalizedPopulations) -> float:
    s = renorm.p0_tilde + renorm.p1_tilde
    if not s > 0:
        raise ValueError("inversion undefined when P0~ + P1~ <= 0")
    return (renorm.p1_tilde - renorm.p0_tilde) / s


def branching_ratio(raw: Populations) -> float:
    """P1 / PL on raw populations; +inf when nothing leaks."""
    return math.inf if raw.p_leak <= 0 else raw.p1 / raw.p_leak


def merit_report(renorm: RenormalizedPopulations, raw: Populations) -> MeritReport:
    return MeritReport(
        inversion=normalized_inversion(renorm),
        branching_ratio=branching_ratio(raw),
        max_p1_tilde=renorm.p1_tilde,
        leak_at_max=renorm.p_leak_tilde,
    )


def best_transfer(points) -> tuple[int, MeritReport]:
    """Index and merits of the point with the largest P1~ among ``(renorm, raw)`` pairs.

    Ties resolve to the earliest point.
    """
    best = None
    for i, (renorm, raw) in enumerate(points):
        if best is None or renorm.p1_tilde > best[1].p1_tilde:
            best = (i, renorm, raw)
    if best is None:
        raise ValueError("no points")
    i, renorm, raw = best
    return i, merit_report(renorm, raw)


def mix_initial(pop0, pop1, initial: tuple[float, float]) -> np.ndarray:
    """Weight the results from |0> and |1> starts by the initial populations."""
    w0, w1 = initial
    s = w0 + w1
    return (w0 * np.asarray(pop0) + w1 * np.asarray(pop1)) / s
