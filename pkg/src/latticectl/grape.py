"""Gradient-ascent design of piecewise-constant lattice controls.

The optimisation model works in the frame moving with the lattice, in the
velocity gauge.  With the lattice at position theta(t) and velocity
v = theta', the Hamiltonian per quasi-momentum q is

    H_q = diag(E_n(q)) + eta U <n|sin^2(pi x)|m> + pi v <n|p|m>

(natural units, p in hbar k).  Translations commute with the lattice
momentum, so q is conserved exactly and each q is an independent member of
the ensemble.  The two controls per slice are (eta, v); the displacement
theta = integral of v is reconstructed at export, and the force m theta''
appears only as the jumps of v between slices.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field

import numpy as np

from .bands import BlochSpectrum, compute_band_structure
from .pulses import Variant, Waveform
from .units import LatticeConfig

DEFAULT_BOUNDS = (0.3, 0.5)
EXPORT_TOL = 0.10


class DegenerateSeedError(RuntimeError):
    pass


class ExportError(RuntimeError):
    pass


def ensemble_quasi_momenta(n: int) -> np.ndarray:
    """Midpoints of ``n`` equal cells of the Brillouin zone; ``n = 1`` gives q = 0."""
    if n < 1:
        raise ValueError("need at least one member")
    return -1.0 + (2.0 * np.arange(n) + 1.0) / n


def _member_operators(spectrum: BlochSpectrum, n_levels: int):
    """Band energies, sin^2 and momentum matrices per q (natural units)."""
    c = spectrum.bloch_coefficients[:, :n_levels, :]
    q = spectrum.quasi_momenta
    k = q[:, None] + 2.0 * spectrum.orders[None, :]
    P = np.einsum("qnj,qj,qmj->qnm", c.conj(), k, c)
    # sin^2(pi x) = 1/2 - (e^{2 pi i x} + e^{-2 pi i x}) / 4 shifts the order by one
    shifted = np.zeros_like(c)
    shifted[:, :, 1:] += c[:, :, :-1]
    shifted[:, :, :-1] += c[:, :, 1:]
    S = 0.5 * np.einsum("qnj,qmj->qnm", c.conj(), c) - 0.25 * np.einsum("qnj,qmj->qnm", c.conj(), shifted)
    E = spectrum.band_energies[:, :n_levels]
    P = 0.5 * (P + np.conj(np.swapaxes(P, 1, 2)))
    S = 0.5 * (S + np.conj(np.swapaxes(S, 1, 2)))
    return E, S, P


@dataclass
class ControlProblem:
    """q-ensemble control problem in natural units.

    ``drift`` is (M, L) band energies, ``controls`` is (2, M, L, L): the AM
    operator U sin^2 and the velocity-gauge operator pi p.
    """

    config: LatticeConfig
    quasi_momenta: np.ndarray
    drift: np.ndarray
    control_ops: np.ndarray
    duration: float
    n_slices: int
    bounds: tuple[float, float]
    objective: str = "state"
    weights: np.ndarray | None = None

    def __post_init__(self):
        if self.n_slices < 10:
            raise ValueError("need at least 10 slices")
        if min(self.bounds) <= 0:
            raise ValueError("bounds must be positive")
        if self.objective not in ("state", "gate"):
            raise ValueError("objective must be 'state' or 'gate'")
        for op in self.control_ops:
            if np.max(np.abs(op - np.conj(np.swapaxes(op, 1, 2)))) > 1e-12:
                raise ValueError("control operators must be Hermitian")
        if self.weights is None:
            self.weights = np.full(self.n_members, 1.0 / self.n_members)

    @property
    def n_members(self) -> int:
        return self.drift.shape[0]

    @property
    def n_levels(self) -> int:
        return self.drift.shape[1]

    @property
    def slice_time(self) -> float:
        """Slice length in natural time units."""
        return self.config.to_natural_time(self.duration) / self.n_slices

    def hamiltonians(self, controls: np.ndarray) -> np.ndarray:
        """(M, N, L, L) slice Hamiltonians."""
        u = np.asarray(controls, dtype=float)
        H = np.einsum("nk,kmab->mnab", u, self.control_ops).astype(complex)
        idx = np.arange(self.n_levels)
        H[:, :, idx, idx] += self.drift[:, None, :]
        return H

    def restrict(self, members) -> "ControlProblem":
        members = np.atleast_1d(members)
        w = self.weights[members]
        return ControlProblem(
            self.config,
            self.quasi_momenta[members],
            self.drift[members],
            self.control_ops[:, members],
            self.duration,
            self.n_slices,
            self.bounds,
            self.objective,
            w / w.sum(),
        )

    def settings(self) -> dict:
        return {
            "depth_Er": self.config.depth_Er,
            "quasi_momenta": self.quasi_momenta.tolist(),
            "n_levels": self.n_levels,
            "duration": self.duration,
            "n_slices": self.n_slices,
            "bounds": {"eta": self.bounds[0], "velocity_d_per_recoil_time": self.bounds[1]},
            "objective": self.objective,
        }


def build_problem(
    config: LatticeConfig,
    spectrum: BlochSpectrum | None = None,
    n_levels: int = 6,
    n_q_ensemble: int = 9,
    T: float = 1e-3,
    N: int = 100,
    bounds: tuple[float, float] = DEFAULT_BOUNDS,
    objective: str = "state",
) -> ControlProblem:
    """Members at the midpoints of ``n_q_ensemble`` Brillouin-zone cells.

    ``spectrum`` fixes the plane-wave cutoff and caps ``n_levels``; the
    member Bloch states are recomputed at the member quasi-momenta.
    """
    if n_levels < 4:
        raise ValueError("need at least 4 levels so leakage is represented")
    cutoff = 32
    if spectrum is not None:
        if n_levels > spectrum.n_bands:
            raise ValueError(f"n_levels={n_levels} exceeds the {spectrum.n_bands} computed bands")
        if abs(spectrum.depth_Er - config.depth_Er) > 1e-12:
            raise ValueError("spectrum depth differs from config depth")
        cutoff = spectrum.plane_wave_cutoff
    q = ensemble_quasi_momenta(n_q_ensemble)
    members = compute_band_structure(
        config.depth_Er, n_bands=max(n_levels, 3), quasi_momenta=q, cutoff=cutoff, check_convergence=False
    )
    E, S, P = _member_operators(members, n_levels)
    ops = np.stack([config.depth_Er * S, np.pi * P])
    return ControlProblem(config, q, E, ops, T, N, tuple(bounds), objective)


# --- fidelity and gradient -------------------------------------------------


def _targets(problem: ControlProblem):
    """(inputs, outputs, coefficients) with amplitude A = sum c_k <out_k|U|in_k>."""
    if problem.objective == "state":
        return [0], [1], np.array([1.0])
    return [0, 1], [1, 0], np.array([0.5, 0.5])


def _slice_propagators(H, dt, exact=True):
    lam, W = np.linalg.eigh(H)
    ph = np.exp(-1j * lam * dt)
    U = np.einsum("...ab,...b,...cb->...ac", W, ph, W.conj())
    return U, lam, W, ph


def fidelity_and_gradient(problem: ControlProblem, controls: np.ndarray, gradient: str = "exact"):
    """Ensemble-mean fidelity and its gradient with respect to the (N, 2) controls.

    ``gradient="exact"`` differentiates each slice exponential through its
    eigen-decomposition; ``"first-order"`` uses dU = -i dt H_k U.
    Returns ``(phi, grad, member_fidelities)``.
    """
    u = np.asarray(controls, dtype=float)
    dt = problem.slice_time
    H = problem.hamiltonians(u)
    M, N, L, _ = H.shape
    U, lam, W, ph = _slice_propagators(H, dt)
    ins, outs, coef = _targets(problem)
    K = len(ins)
    # forward states psi[j] = U_j ... U_1 |in>, stored before each slice
    fwd = np.zeros((N + 1, M, L, K), dtype=complex)
    fwd[0, :, ins, range(K)] = 1.0
    for j in range(N):
        fwd[j + 1] = U[:, j] @ fwd[j]
    bwd = np.zeros((N + 1, M, L, K), dtype=complex)
    bwd[N, :, outs, range(K)] = 1.0
    for j in range(N - 1, -1, -1):
        bwd[j] = np.conj(np.swapaxes(U[:, j], -1, -2)) @ bwd[j + 1]
    amp = np.einsum("k,mk->m", coef, np.einsum("mlk,mlk->mk", bwd[N].conj(), fwd[N]))
    fid = np.abs(amp) ** 2
    phi = float(problem.weights @ fid)

    # dA/du_{j,c} = sum_k c_k <bwd_{j+1}| dU_j/du |fwd_j>
    ops = problem.control_ops  # (C, M, L, L)
    if gradient == "exact":
        dl = lam[..., :, None] - lam[..., None, :]
        dph = ph[..., :, None] - ph[..., None, :]
        close = np.abs(dl) < 1e-10
        G = np.where(close, -1j * dt * ph[..., :, None], dph / np.where(close, 1.0, dl))
        # eigenbasis images of the slice states
        f_e = np.einsum("mnba,nmbk->mnak", W.conj(), fwd[:-1])
        b_e = np.einsum("mnba,nmbk->mnak", W.conj(), bwd[1:])
        grad = np.zeros((N, 2))
        for c in range(ops.shape[0]):
            Hc = np.einsum("mnba,mbd,mnde->mnae", W.conj(), ops[c], W)
            D = G * Hc
            dA = np.einsum("k,mnak,mnab,mnbk->mn", coef, b_e.conj(), D, f_e)
            g = 2.0 * np.real(np.conj(amp)[:, None] * dA)
            grad[:, c] = problem.weights @ g
    elif gradient == "first-order":
        grad = np.zeros((N, 2))
        for c in range(ops.shape[0]):
            post = np.einsum("mnab,nmbk->mnak", U, fwd[:-1])
            dA = -1j * dt * np.einsum("k,nmak,mab,mnbk->mn", coef, bwd[1:].conj(), ops[c], post)
            g = 2.0 * np.real(np.conj(amp)[:, None] * dA)
            grad[:, c] = problem.weights @ g
    else:
        raise ValueError(f"unknown gradient mode {gradient!r}")
    return phi, grad, fid


def final_populations(problem: ControlProblem, controls: np.ndarray, initial: int = 0) -> np.ndarray:
    """Per-member level populations after the pulse, shape (M, L)."""
    H = problem.hamiltonians(controls)
    U, *_ = _slice_propagators(H, problem.slice_time)
    M, N, L, _ = H.shape
    psi = np.zeros((M, L), dtype=complex)
    psi[:, initial] = 1.0
    for j in range(N):
        psi = np.einsum("mab,mb->ma", U[:, j], psi)
    return np.abs(psi) ** 2


# --- constraints and optimisation -------------------------------------------


def _free_mask(n: int) -> np.ndarray:
    m = np.ones(n, dtype=bool)
    m[0] = m[-1] = False
    return m


def _project(controls: np.ndarray, bounds, iters: int = 20) -> np.ndarray:
    """Clip to bounds; velocity zero in the end slices and summing to zero."""
    u = np.array(controls, dtype=float)
    free = _free_mask(len(u))
    u[~free, 1] = 0.0
    u[:, 0] = np.clip(u[:, 0], -bounds[0], bounds[0])
    for _ in range(iters):
        v = u[free, 1]
        v -= v.mean()
        v = np.clip(v, -bounds[1], bounds[1])
        u[free, 1] = v
        if abs(v.sum()) < 1e-14 * len(v):
            break
    return u


def _project_gradient(grad: np.ndarray) -> np.ndarray:
    g = grad.copy()
    free = _free_mask(len(g))
    g[~free, 1] = 0.0
    g[free, 1] -= g[free, 1].mean()
    return g


def smooth_seed(problem: ControlProblem, seed: int = 0, harmonics: int = 3, scale: float = 0.1) -> np.ndarray:
    """Band-limited random controls: at most ``harmonics`` Fourier modes of 1/T at 10% of bounds."""
    rng = np.random.default_rng(seed)
    N = problem.n_slices
    t = (np.arange(N) + 0.5) / N
    u = np.zeros((N, 2))
    for c in range(2):
        a = rng.normal(size=harmonics)
        b = rng.normal(size=harmonics)
        k = np.arange(1, harmonics + 1)[:, None]
        s = a @ np.sin(2 * np.pi * k * t) + b @ np.cos(2 * np.pi * k * t)
        s /= np.max(np.abs(s)) or 1.0
        u[:, c] = scale * problem.bounds[c] * s
    return _project(u, problem.bounds)


@dataclass
class OptimizationTrace:
    fidelity: list = field(default_factory=list)
    grad_norm: list = field(default_factory=list)
    step: list = field(default_factory=list)
    final_controls: np.ndarray | None = None
    member_fidelities: np.ndarray | None = None
    stop_reason: str = ""

    @property
    def iterations(self) -> int:
        return max(len(self.fidelity) - 1, 0)

    def to_dict(self):
        return {
            "fidelity": self.fidelity,
            "grad_norm": self.grad_norm,
            "step": self.step,
            "iterations": self.iterations,
            "stop_reason": self.stop_reason,
            "member_fidelities": None if self.member_fidelities is None else self.member_fidelities.tolist(),
            "final_controls": None if self.final_controls is None else self.final_controls.tolist(),
        }

    def write_json(self, path):
        with open(path, "w") as fh:
            json.dump(self.to_dict(), fh, indent=2)


@dataclass
class OptimizerOptions:
    max_iters: int = 500
    grad_tol: float = 1e-7
    plateau_tol: float = 1e-10
    plateau_window: int = 10
    initial_step: float = 0.1
    min_step: float = 1e-14
    armijo: float = 1e-4
    gradient: str = "exact"


def optimize(
    problem: ControlProblem,
    init=0,
    options: OptimizerOptions | None = None,
):
    """Projected gradient ascent with backtracking; accepted steps never lower the fidelity.

    ``init`` is an (N, 2) control array or an integer seed for
    :func:`smooth_seed`.  Returns ``(controls, trace)``.
    """
    opt = options or OptimizerOptions()
    if isinstance(init, (int, np.integer)):
        u = smooth_seed(problem, int(init))
    else:
        u = _project(np.asarray(init, dtype=float), problem.bounds)
    phi, grad, fid = fidelity_and_gradient(problem, u, opt.gradient)
    g = _project_gradient(grad)
    gn = float(np.linalg.norm(g))
    trace = OptimizationTrace([phi], [gn], [0.0])
    if gn == 0.0:
        raise DegenerateSeedError("zero gradient at the initial controls; choose a different seed")
    step = opt.initial_step
    for it in range(opt.max_iters):
        if gn < opt.grad_tol:
            trace.stop_reason = "grad_tol"
            break
        accepted = False
        while step > opt.min_step:
            trial = _project(u + step * g, problem.bounds)
            p_new, grad_new, fid_new = fidelity_and_gradient(problem, trial, opt.gradient)
            gain = float(np.sum(g * (trial - u)))
            if p_new >= phi + opt.armijo * gain and p_new >= phi:
                accepted = True
                break
            step *= 0.5
        if not accepted:
            if it == 0 and phi == trace.fidelity[0] and len(trace.fidelity) == 1:
                trace.stop_reason = "no_ascent"
            else:
                trace.stop_reason = "line_search"
            break
        u, phi, fid = trial, p_new, fid_new
        g = _project_gradient(grad_new)
        gn = float(np.linalg.norm(g))
        trace.fidelity.append(phi)
        trace.grad_norm.append(gn)
        trace.step.append(step)
        step *= 2.0
        w = opt.plateau_window
        if len(trace.fidelity) > w and trace.fidelity[-1] - trace.fidelity[-1 - w] < opt.plateau_tol:
            trace.stop_reason = "plateau"
            break
    else:
        trace.stop_reason = "max_iters"
    trace.final_controls = u
    trace.member_fidelities = fid
    return u, trace


# --- export -----------------------------------------------------------------


def controls_to_theta(problem: ControlProblem, controls: np.ndarray, dt: float):
    """Displacement at the midpoints of ``dt`` samples and the ramp correction used.

    Velocities are in d per natural time; theta in d.  Returns
    ``(t_mid_seconds, theta_mid, eta_mid, correction)``.
    """
    u = np.asarray(controls, dtype=float)
    N = problem.n_slices
    T = problem.duration
    n = int(round(T / dt))
    if abs(n * dt - T) > 1e-9 * T or n % N:
        raise ExportError("export step must divide every slice evenly")
    per = n // N
    omega_r = problem.config.omega_r
    v = u[:, 1].copy()
    free = _free_mask(N)
    slice_t = T / N
    drift = float(np.sum(v) * slice_t * omega_r)
    if drift != 0.0:
        v[free] -= drift / (free.sum() * slice_t * omega_r)
    theta_edges = np.concatenate([[0.0], np.cumsum(v * slice_t * omega_r)])
    t_mid = (np.arange(n) + 0.5) * dt
    j = np.minimum((t_mid / slice_t).astype(int), N - 1)
    theta = theta_edges[j] + v[j] * omega_r * (t_mid - j * slice_t)
    eta = u[j, 0]
    return t_mid, theta, eta, drift


def export_waveform(problem: ControlProblem, controls: np.ndarray, dt: float = 0.25e-6) -> Waveform:
    """Sample-and-hold waveform holding the midpoint value of each ``dt`` interval.

    With the solver step equal to ``dt`` the lab-frame propagation sees the
    exact piecewise-linear displacement at every step midpoint.
    """
    t_mid, theta, eta, drift = controls_to_theta(problem, controls, dt)
    peak = float(np.max(np.abs(theta))) if len(theta) else 0.0
    if peak > 0 and abs(drift) > EXPORT_TOL * peak:
        raise ExportError(f"net displacement {drift:.3e} d exceeds {EXPORT_TOL:.0%} of peak theta {peak:.3e} d")
    theta = np.append(theta, 0.0)
    eta = np.append(eta, 0.0)
    wf = Waveform(dt, theta, eta, variant=Variant.PIECEWISE, hold=True, endpoint_velocity=(0.0, 0.0))
    wf.meta["grape"] = problem.settings()
    wf.meta["ramp_correction_d"] = drift
    return wf


def write_controls_csv(controls: np.ndarray, path) -> None:
    u = np.asarray(controls)
    with open(path, "w") as fh:
        fh.write("slice,eta,velocity\n")
        for i, (e, v) in enumerate(u):
            fh.write(f"{i},{e:.17g},{v:.17g}\n")


def read_controls_csv(path) -> np.ndarray:
    data = np.loadtxt(path, delimiter=",", skiprows=1, ndmin=2)
    return data[:, 1:3]
