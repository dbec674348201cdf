"""Declarative scenario runner.

    latticectl run <config.yaml> [--out DIR] [--threads N] [--seed S]
    latticectl compare <summary.json>... [--out DIR]

Exit codes: 0 success, 2 configuration error, 3 physics or solver error,
4 file I/O error.  Failures write ``error.json`` (when the output directory
is writable) and echo the same record on stderr.
"""

from __future__ import annotations

import argparse
import csv
import hashlib
import json
import logging
import math
import sys
import time
import traceback
import warnings
from concurrent.futures import ThreadPoolExecutor
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np
import yaml

from . import __version__
from .bands import compute_band_structure, omega01_of_depth, transition_data, wannier_states
from .ensemble import (
    DepthDistribution,
    RamseySignal,
    ensemble_average,
    fit_ramsey,
    gaussian_distribution,
    ramsey_width_distribution,
    recover_depth_distribution,
    simulate_ramsey,
)
from .grape import OptimizerOptions, build_problem, export_waveform, final_populations, optimize
from .observables import (
    Populations,
    merit_report,
    normalized_inversion,
    renormalize,
)
from .plotting import write_svg
from .propagator import DEFAULT_SOLVER_DT, SpatialGrid, init_state, propagate
from .pulses import (
    PulseSpec,
    chirp_spec,
    read_waveform_csv,
    synthesize,
    write_waveform_csv,
)
from .three_level import chirped_transfer, extract_gaps, floquet_spectrum, reduce_to_three_level
from .units import LatticeConfig, gravity_tilt_per_site

log = logging.getLogger("latticectl")

SCHEMA_VERSION = 1
SCENARIOS = ("bands", "ramsey", "arp-sweep", "arp-3level", "grape-design", "simulate-pulse", "depth-scan", "compare")
TOP_KEYS = {
    "scenario", "lattice", "pulse", "distribution", "sweep", "solver", "params", "output", "seed", "threads", "initial",
}
DEFAULT_TP = [0.4e-3, 0.6e-3, 0.8e-3, 1e-3, 2e-3, 3e-3, 4e-3, 5e-3]
DEFAULT_DF = [3.6e3, 4.8e3, 6e3, 7.2e3, 9e3]
DEFAULT_SOLVER = {
    "waveform_dt": 1e-6,
    "solver_dt": DEFAULT_SOLVER_DT,
    "n_wells": 32,
    "points_per_well": 64,
    "frame": "lab",
    "boundary_check": None,
    "record_stride": 100,
}
DEFAULT_PARAMS = {
    "bands": {"n_bands": 6, "n_q": 64, "cutoff": 32},
    "depth-scan": {},
    "ramsey": {"displacement": 0.05, "t_max": 6e-3, "delay_step": 5e-6},
    "arp-sweep": {"directions": ["up", "down"], "center_frequency": 2 * math.pi * 5e3},
    "arp-3level": {"a_pm": 1 / 36, "betas": None, "span": None, "directions": ["up", "down"], "n_floquet": 201},
    "grape-design": {
        "duration": 1e-3,
        "n_slices": 100,
        "n_q": 9,
        "n_levels": 6,
        "max_iters": 1500,
        "objective": "state",
        "validate": True,
    },
    "simulate-pulse": {},
    "compare": {"inputs": []},
}


class ConfigError(ValueError):
    """Malformed or inconsistent configuration (exit 2)."""


class InputFileError(OSError):
    """A referenced input file is missing or unreadable (exit 4)."""


# --- configuration ----------------------------------------------------------


@dataclass
class ScenarioConfig:
    scenario: str
    lattice: dict
    pulse: dict | str | None = None
    distribution: dict | str | None = None
    sweep: dict = field(default_factory=dict)
    solver: dict = field(default_factory=dict)
    params: dict = field(default_factory=dict)
    initial: list = field(default_factory=lambda: [1.0, 0.0])
    output: str = "out"
    seed: int = 0
    threads: int = 1
    base_dir: Path = field(default=Path("."), repr=False)

    def resolved(self) -> dict:
        d = asdict(self)
        d.pop("base_dir")
        return _builtin(d)

    def path(self, p) -> Path:
        p = Path(p)
        return p if p.is_absolute() else self.base_dir / p

    def lattice_config(self) -> LatticeConfig:
        return LatticeConfig(**self.lattice)

    def grid(self) -> SpatialGrid:
        return SpatialGrid(int(self.solver["n_wells"]), int(self.solver["points_per_well"]))


def _builtin(obj):
    """Plain JSON types; numpy scalars and arrays converted, non-finite floats as strings."""
    if isinstance(obj, dict):
        return {str(k): _builtin(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_builtin(v) for v in obj]
    if isinstance(obj, np.ndarray):
        return _builtin(obj.tolist())
    if isinstance(obj, (np.floating, float)):
        v = float(obj)
        return v if math.isfinite(v) else str(v)
    if isinstance(obj, (np.integer,)):
        return int(obj)
    if isinstance(obj, (np.bool_,)):
        return bool(obj)
    if isinstance(obj, Path):
        return str(obj)
    return obj


def parse_config(data, base_dir: Path = Path(".")) -> ScenarioConfig:
    if not isinstance(data, dict):
        raise ConfigError("configuration must be a mapping")
    unknown = set(data) - TOP_KEYS
    if unknown:
        raise ConfigError(f"unknown top-level keys: {sorted(unknown)}")
    sc = data.get("scenario")
    if sc not in SCENARIOS:
        raise ConfigError(f"scenario must be one of {SCENARIOS}, got {sc!r}")
    lattice = dict(data.get("lattice") or {})
    lattice.setdefault("depth_Er", 18.0)
    try:
        LatticeConfig(**lattice)
    except TypeError as err:
        raise ConfigError(f"lattice: {err}") from err
    except ValueError as err:
        raise ConfigError(f"lattice: {err}") from err
    solver = dict(DEFAULT_SOLVER)
    extra = set(data.get("solver") or {}) - set(DEFAULT_SOLVER)
    if extra:
        raise ConfigError(f"unknown solver keys: {sorted(extra)}")
    solver.update(data.get("solver") or {})
    params = dict(DEFAULT_PARAMS[sc])
    params.update(data.get("params") or {})
    sweep = dict(data.get("sweep") or {})
    if sc == "arp-sweep":
        sweep.setdefault("t_p", DEFAULT_TP)
        sweep.setdefault("delta_f", DEFAULT_DF)
        sweep.setdefault("a_pm", [1 / 36])
    if sc == "depth-scan":
        sweep.setdefault("depths", list(np.linspace(5.0, 40.0, 36)))
    for k, v in sweep.items():
        if not isinstance(v, list) or len(v) == 0:
            raise ConfigError(f"sweep grid {k!r} must be a non-empty list")
    initial = data.get("initial", [1.0, 0.0])
    if (
        not isinstance(initial, (list, tuple))
        or len(initial) != 2
        or min(initial) < 0
        or abs(sum(initial) - 1.0) > 1e-9
    ):
        raise ConfigError("initial must be two non-negative weights summing to 1")
    try:
        seed = int(data.get("seed", 0))
        threads = int(data.get("threads", 1))
    except (TypeError, ValueError) as err:
        raise ConfigError(f"seed/threads must be integers: {err}") from err
    if threads < 1:
        raise ConfigError("threads must be >= 1")
    if solver["frame"] not in ("lab", "lattice"):
        raise ConfigError("solver.frame must be 'lab' or 'lattice'")
    cfg = ScenarioConfig(
        scenario=sc,
        lattice=lattice,
        pulse=data.get("pulse"),
        distribution=data.get("distribution"),
        sweep=sweep,
        solver=solver,
        params=params,
        initial=[float(v) for v in initial],
        output=str(data.get("output", "out")),
        seed=seed,
        threads=threads,
        base_dir=base_dir,
    )
    for ref in _referenced_files(cfg):
        if not cfg.path(ref).is_file():
            raise InputFileError(f"referenced file not found: {ref}")
    return cfg


def _referenced_files(cfg: ScenarioConfig):
    out = []
    for item in (cfg.pulse, cfg.distribution):
        if isinstance(item, str):
            out.append(item)
        elif isinstance(item, dict) and "file" in item:
            out.append(item["file"])
    for inp in cfg.params.get("inputs", []) if cfg.scenario == "compare" else []:
        if isinstance(inp, str):
            out.append(inp)
    return out


def load_config(path) -> ScenarioConfig:
    path = Path(path)
    try:
        text = path.read_text()
    except OSError as err:
        raise InputFileError(f"cannot read config {path}: {err}") from err
    try:
        data = yaml.safe_load(text)
    except yaml.YAMLError as err:
        raise ConfigError(f"{path}: {err}") from err
    return parse_config(data, path.parent)


# --- artifacts --------------------------------------------------------------


class Artifacts:
    def __init__(self, outdir: Path):
        self.outdir = Path(outdir)
        self.outdir.mkdir(parents=True, exist_ok=True)
        self.files: list[str] = []

    def _track(self, name):
        if name not in self.files:
            self.files.append(name)
        return self.outdir / name

    def csv(self, name, header, rows):
        with open(self._track(name), "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(header)
            for r in rows:
                w.writerow([_cell(v) for v in r])

    def json(self, name, obj):
        with open(self._track(name), "w") as fh:
            json.dump(_builtin(obj), fh, indent=2, sort_keys=True)
            fh.write("\n")

    def svg(self, name, series, **kw):
        write_svg(self._track(name), series, **kw)

    def adopt(self, name):
        return self._track(name)

    def manifest(self):
        out = []
        for name in self.files:
            data = (self.outdir / name).read_bytes()
            out.append({"file": name, "sha256": hashlib.sha256(data).hexdigest(), "bytes": len(data)})
        return out


def _cell(v):
    if isinstance(v, (float, np.floating)):
        return f"{float(v):.12g}"
    return v


# --- helpers ----------------------------------------------------------------


def _distribution(cfg: ScenarioConfig, lattice: LatticeConfig) -> DepthDistribution:
    d = cfg.distribution
    if d is None:
        return DepthDistribution.delta(lattice.depth_Er)
    if isinstance(d, str):
        return DepthDistribution.read_csv(cfg.path(d))
    if "file" in d:
        return DepthDistribution.read_csv(cfg.path(d["file"]))
    n = int(d.get("n", 21))
    span = float(d.get("span", 3.0))
    if "ramsey_width" in d:
        rw = d["ramsey_width"] or {}
        kw = {k: rw[k] for k in ("center", "gamma") if k in rw}
        return ramsey_width_distribution(
            lattice, gamma_is_angular=bool(rw.get("angular", True)), n=n, span=span, **kw
        )
    if "sigma" in d:
        return gaussian_distribution(float(d.get("mean", lattice.depth_Er)), float(d["sigma"]), n, span)
    raise ConfigError("distribution needs 'sigma', 'ramsey_width' or 'file'")


def _waveform(cfg: ScenarioConfig):
    p = cfg.pulse
    if p is None:
        raise ConfigError(f"scenario {cfg.scenario} needs a pulse")
    if isinstance(p, str):
        return read_waveform_csv(cfg.path(p))
    if "file" in p:
        return read_waveform_csv(cfg.path(p["file"]), hold=bool(p.get("hold", False)))
    try:
        spec = PulseSpec(**p)
    except TypeError as err:
        raise ConfigError(f"pulse: {err}") from err
    return synthesize(spec, float(cfg.solver["waveform_dt"]))


def _raw_and_renorm(pops, initial):
    raw = Populations.from_array(np.asarray(pops) / np.sum(pops))
    ren = renormalize(raw, tuple(initial))
    return raw, ren


def _renorm_block(label, raw: Populations, initial):
    return {"label": label, "final": raw.to_dict(), "initial": list(initial)}


def _pmap(fn, items, threads):
    if threads <= 1:
        return [fn(x) for x in items]
    with ThreadPoolExecutor(max_workers=threads) as ex:
        return list(ex.map(fn, items))


# --- scenarios --------------------------------------------------------------


def scenario_bands(cfg, art):
    lat = cfg.lattice_config()
    p = cfg.params
    spec = compute_band_structure(lat, n_bands=int(p["n_bands"]), n_q=int(p["n_q"]), cutoff=int(p["cutoff"]))
    tr = transition_data(lat, n_bands=max(int(p["n_bands"]), 3))
    nb = spec.n_bands
    art.csv(
        "bands.csv",
        ["q"] + [f"E{n}" for n in range(nb)],
        [[q] + list(row) for q, row in zip(spec.quasi_momenta, spec.band_energies)],
    )
    art.svg(
        "bands.svg",
        [(f"band {n}", spec.quasi_momenta, spec.band_energies[:, n]) for n in range(nb)],
        xlabel="q (hbar k)",
        ylabel="E (E_r)",
    )
    return {
        "omega01": tr.omega01,
        "omega01_hz": tr.omega01 / (2 * math.pi),
        "band_averages_Er": spec.band_averages,
        "x_matrix_elements": tr.x_matrix_elements[:3, :3],
        "gravity_tilt_per_site_Er": gravity_tilt_per_site(lat),
        "omega_r": lat.omega_r,
    }


def scenario_depth_scan(cfg, art):
    lat = cfg.lattice_config()
    depths = np.asarray(sorted(float(u) for u in cfg.sweep["depths"]))
    curve = omega01_of_depth(lat, depths)
    art.csv("omega01.csv", ["U", "omega01", "omega01_hz"], zip(depths, curve.omega01, curve.omega01 / (2 * math.pi)))
    art.svg("omega01.svg", [("omega01 / 2pi", depths, curve.omega01 / (2 * math.pi))], xlabel="U (E_r)", ylabel="Hz")
    return {"depths": depths, "omega01": curve.omega01}


def scenario_ramsey(cfg, art):
    lat = cfg.lattice_config()
    p = cfg.params
    dist = _distribution(cfg, lat)
    step = float(p["delay_step"])
    delays = np.arange(int(round(float(p["t_max"]) / step)) + 1) * step
    sig = simulate_ramsey(
        dist, float(p["displacement"]), delays, lat, cfg.grid(), float(cfg.solver["solver_dt"])
    )
    sig.write_csv(art.adopt("ramsey.csv"))
    fit = fit_ramsey(sig)
    lo, hi = dist.depths.min(), dist.depths.max()
    width = hi - lo
    curve = omega01_of_depth(lat, np.linspace(max(lo - 2 * width, 1.0), hi + 2 * width, 81))
    rec = recover_depth_distribution(sig, curve, fit)
    art.csv("recovered_distribution.csv", ["U", "rho"], zip(rec.depths, rec.weights))
    art.csv("input_distribution.csv", ["U", "rho"], zip(dist.depths, dist.weights))
    model = fit.amplitude * np.exp(-0.5 * (fit.decay_rate * delays) ** 2) * np.cos(fit.omega * delays + fit.phase)
    art.svg(
        "ramsey.svg",
        [("P0", delays * 1e3, sig.p0_values), ("fit", delays * 1e3, model + fit.offset)],
        xlabel="delay (ms)",
        ylabel="P0",
    )
    art.svg(
        "distribution.svg",
        [("input", dist.depths, dist.weights), ("recovered", rec.depths, rec.weights)],
        xlabel="U (E_r)",
        ylabel="rho",
    )
    return {
        "fit": fit.to_dict(),
        "input_mean": dist.mean,
        "input_std": dist.std,
        "recovered_mean": rec.mean,
        "recovered_std": rec.std,
    }


def scenario_arp_sweep(cfg, art):
    lat = cfg.lattice_config()
    dist = _distribution(cfg, lat)
    grid = cfg.grid()
    s = cfg.solver
    dirs = [{"up": 1, "down": -1}[d] for d in cfg.params["directions"]]
    center = float(cfg.params["center_frequency"])
    points = [
        (float(a), float(tp), float(df), d)
        for a in cfg.sweep["a_pm"]
        for tp in cfg.sweep["t_p"]
        for df in cfg.sweep["delta_f"]
        for d in dirs
    ]

    def one(pt):
        a, tp, df, d = pt
        wf = synthesize(chirp_spec(a, tp, df, d, center), float(s["waveform_dt"]))
        res = ensemble_average(
            wf,
            dist,
            tuple(cfg.initial),
            lat,
            grid,
            float(s["solver_dt"]),
            frame=s["frame"],
            boundary_check=s["boundary_check"],
        )
        return res.populations

    results = _pmap(one, points, cfg.threads)
    rows, table = [], {}
    for (a, tp, df, d), pop in zip(points, results):
        raw = pop
        ren = renormalize(raw, tuple(cfg.initial))
        table[(a, tp, df, d)] = (raw, ren)
        rows.append(
            [a, tp, df, "up" if d > 0 else "down", raw.p0, raw.p1, raw.p_leak, ren.p0_tilde, ren.p1_tilde, ren.p_leak_tilde]
        )
    art.csv("arp_sweep.csv", ["a_pm", "t_p", "delta_f", "direction", "P0", "P1", "PL", "P0t", "P1t", "PLt"], rows)
    summary = {}
    best_overall = None
    for a in cfg.sweep["a_pm"]:
        a = float(a)
        entry = {}
        for d, name in ((1, "up"), (-1, "down")):
            pts = [(k, v) for k, v in table.items() if k[0] == a and k[3] == d]
            if not pts:
                continue
            k, (raw, ren) = max(pts, key=lambda kv: kv[1][0].p1)
            entry[f"max_p1_{name}"] = raw.p1
            entry[f"best_{name}"] = {"t_p": k[1], "delta_f": k[2], "merit": merit_report(ren, raw).to_dict()}
            if best_overall is None or ren.p1_tilde > best_overall[1].p1_tilde:
                best_overall = (raw, ren, k)
        dp0 = [
            abs(table[(a, tp, df, 1)][0].p0 - table[(a, tp, df, -1)][0].p0)
            for (aa, tp, df, d) in table
            if aa == a and d == 1 and (a, tp, df, -1) in table
        ]
        if dp0:
            entry["max_delta_p0"] = max(dp0)
        summary[f"{a:.6g}"] = entry
        for df in cfg.sweep["delta_f"]:
            series = []
            for d, name in ((1, "up"), (-1, "down")):
                tps = [float(tp) for tp in cfg.sweep["t_p"] if (a, float(tp), float(df), d) in table]
                if tps:
                    inv_beta = [tp / (2 * math.pi * float(df)) for tp in tps]
                    series.append((name, inv_beta, [table[(a, tp, float(df), d)][0].p1 for tp in tps]))
            if series:
                art.svg(
                    f"p1_a{a:.4g}_df{float(df):g}.svg",
                    series,
                    xlabel="1/|beta| (s^2)",
                    ylabel="P1",
                    title=f"a={a:.4g} d, delta_f={float(df):g} Hz",
                )
    raw, ren, k = best_overall
    return {
        "per_amplitude": summary,
        "distribution": {"mean": dist.mean, "std": dist.std, "n": len(dist.depths)},
        "renormalization": _renorm_block(f"ARP a={k[0]:.4g} t_p={k[1]:g} df={k[2]:g}", raw, cfg.initial),
    }


def scenario_arp_3level(cfg, art):
    lat = cfg.lattice_config()
    p = cfg.params
    sys3 = reduce_to_three_level(lat, transition_data(lat), float(p["a_pm"]))
    gaps = extract_gaps(sys3)
    sep = sys3.omega01 - sys3.omega12
    big = max(gaps.omega_b, gaps.omega_c)
    span = float(p["span"]) if p["span"] else sep + 10 * big
    betas = p["betas"] or list(np.geomspace(gaps.omega_a**2, gaps.omega_c**2, 5))
    freqs = np.linspace(sys3.omega12 - 0.3 * sep, sys3.omega01 + 0.3 * sep, int(p["n_floquet"]))
    fl = floquet_spectrum(sys3, freqs)
    fl.write_csv(art.adopt("floquet.csv"))
    art.svg(
        "floquet.svg",
        [(n, freqs / (2 * math.pi), fl.quasi_energies[:, i] / (2 * math.pi)) for i, n in enumerate("abc")],
        xlabel="drive (Hz)",
        ylabel="quasi-energy (Hz)",
    )
    dirs = [{"up": 1, "down": -1}[d] for d in p["directions"]]
    jobs = [(float(b) * d) for b in betas for d in dirs]
    res = _pmap(lambda b: chirped_transfer(sys3, b, span), jobs, cfg.threads)
    rows = [[abs(r.beta), "up" if r.beta > 0 else "down", *r.populations] for r in res]
    art.csv("transfer.csv", ["beta", "direction", "P0", "P1", "P2"], rows)
    series = []
    for d, name in ((1, "up"), (-1, "down")):
        sel = [r for r in res if np.sign(r.beta) == d]
        if sel:
            series.append((f"P1 {name}", [1 / abs(r.beta) for r in sel], [r.populations[1] for r in sel]))
            series.append((f"P2 {name}", [1 / abs(r.beta) for r in sel], [r.populations[2] for r in sel]))
    art.svg("transfer.svg", series, xlabel="1/|beta| (s^2)", ylabel="population", logx=True)
    return {"system": sys3.to_dict(), "gaps": gaps.to_dict(), "span": span, "transfers": [r.to_dict() for r in res]}


def scenario_grape(cfg, art):
    lat = cfg.lattice_config()
    p = cfg.params
    pb = build_problem(
        lat, n_levels=int(p["n_levels"]), n_q_ensemble=int(p["n_q"]), T=float(p["duration"]), N=int(p["n_slices"]),
        objective=p["objective"],
    )
    u, trace = optimize(pb, cfg.seed, OptimizerOptions(max_iters=int(p["max_iters"])))
    art.csv("controls.csv", ["slice", "eta", "velocity"], [[i, e, v] for i, (e, v) in enumerate(u)])
    trace.write_json(art.adopt("trace.json"))
    sdt = float(cfg.solver["solver_dt"])
    wf = export_waveform(pb, u, sdt)
    write_waveform_csv(wf, art.adopt("waveform.csv"))
    art.svg("fidelity.svg", [("Phi", np.arange(len(trace.fidelity)), trace.fidelity)], xlabel="iteration", ylabel="fidelity")
    art.svg(
        "controls.svg",
        [("eta", wf.times * 1e3, wf.eta), ("theta (d)", wf.times * 1e3, wf.theta)],
        xlabel="t (ms)",
        ylabel="control",
    )
    out = {
        "fidelity": trace.fidelity[-1],
        "iterations": trace.iterations,
        "stop_reason": trace.stop_reason,
        "member_fidelities": trace.member_fidelities,
        "ensemble_populations": final_populations(pb, u).mean(axis=0),
        "ramp_correction_d": wf.meta["ramp_correction_d"],
    }
    if p["validate"]:
        grid = cfg.grid()
        basis = wannier_states(compute_band_structure(lat.depth_Er, check_convergence=False), grid.points_per_well)
        r = propagate(init_state(grid, basis, 0), wf, lat, solver_dt=sdt, record_stride=10**9)
        raw = Populations.from_array(r.final_populations)
        out["full_grid"] = raw.to_dict()
        if cfg.distribution is not None:
            ens = ensemble_average(wf, _distribution(cfg, lat), tuple(cfg.initial), lat, grid, sdt)
            out["ensemble"] = ens.populations.to_dict()
            out["renormalization"] = _renorm_block("GRAPE", ens.populations, cfg.initial)
        else:
            out["renormalization"] = _renorm_block("GRAPE", raw, [1.0, 0.0])
    return out


def scenario_simulate(cfg, art):
    lat = cfg.lattice_config()
    wf = _waveform(cfg)
    dist = _distribution(cfg, lat)
    s = cfg.solver
    res = ensemble_average(
        wf,
        dist,
        tuple(cfg.initial),
        lat,
        cfg.grid(),
        float(s["solver_dt"]),
        frame=s["frame"],
        record_stride=int(s["record_stride"]),
        boundary_check=s["boundary_check"],
    )
    art.csv("trajectory.csv", ["t", "P0", "P1", "PL"], [[t, *row] for t, row in zip(res.times, res.trajectory)])
    write_waveform_csv(wf, art.adopt("waveform.csv"))
    art.svg(
        "trajectory.svg",
        [(n, res.times * 1e3, res.trajectory[:, i]) for i, n in enumerate(("P0", "P1", "PL"))],
        xlabel="t (ms)",
        ylabel="population",
    )
    raw = res.populations
    ren = renormalize(raw, tuple(cfg.initial))
    out = {"final": raw.to_dict(), "renormalized": ren.to_dict(), "merit": merit_report(ren, raw).to_dict()}
    label = cfg.params.get("label") or (wf.variant.value if hasattr(wf.variant, "value") else "pulse")
    out["renormalization"] = _renorm_block(label, raw, cfg.initial)
    return out


# --- comparison -------------------------------------------------------------


def _entry_from(item, base: Path):
    if isinstance(item, dict):
        return item
    path = Path(item)
    if not path.is_absolute():
        path = base / path
    with open(path) as fh:
        summ = json.load(fh)
    block = (summ.get("outputs") or {}).get("renormalization")
    if block is None:
        raise ConfigError(f"{item}: summary has no renormalization block")
    return block


def compare_entries(entries):
    """Scatter data and a ranking by max P1~; ties keep input order.

    Entries without a leakage value are dropped with a warning.
    """
    rows = []
    for i, e in enumerate(entries):
        fin = e.get("final") or {}
        if fin.get("p_leak") is None:
            warnings.warn(f"entry {i} ({e.get('label', '?')}) has no leakage value; excluded", stacklevel=2)
            continue
        if e.get("initial") is None:
            raise ValueError(f"entry {i} ({e.get('label', '?')}) missing initial populations")
        p0, p1 = float(fin["p0"]), float(fin["p1"])
        pl = float(fin["p_leak"])
        raw = Populations.from_array(np.array([p0, p1, pl]) / (p0 + p1 + pl))
        ren = renormalize(raw, tuple(e["initial"]))
        rows.append(
            {
                "index": i,
                "label": e.get("label", f"entry{i}"),
                "p1_tilde": ren.p1_tilde,
                "p_leak_tilde": ren.p_leak_tilde,
                "inversion": normalized_inversion(ren),
            }
        )
    ranking = sorted(rows, key=lambda r: -r["p1_tilde"])
    for k, r in enumerate(ranking):
        r["rank"] = k + 1
    return rows, ranking


def scenario_compare(cfg, art, inputs=None):
    items = inputs if inputs is not None else cfg.params["inputs"]
    if len(items) < 2:
        raise ConfigError("compare needs at least two inputs")
    base = cfg.base_dir if cfg is not None else Path(".")
    entries = [_entry_from(it, base) for it in items]
    rows, ranking = compare_entries(entries)
    art.csv(
        "compare.csv",
        ["index", "label", "P1t", "PLt", "inversion"],
        [[r["index"], r["label"], r["p1_tilde"], r["p_leak_tilde"], r["inversion"]] for r in rows],
    )
    art.csv("ranking.csv", ["rank", "label", "P1t", "PLt"], [[r["rank"], r["label"], r["p1_tilde"], r["p_leak_tilde"]] for r in ranking])
    art.svg(
        "pl_vs_p1.svg",
        [(r["label"], [r["p1_tilde"]], [r["p_leak_tilde"]]) for r in rows],
        xlabel="P1~",
        ylabel="PL~",
        scatter=True,
    )
    art.svg(
        "pl_vs_inversion.svg",
        [(r["label"], [r["inversion"]], [r["p_leak_tilde"]]) for r in rows],
        xlabel="inversion",
        ylabel="PL~",
        scatter=True,
    )
    return {"points": rows, "ranking": [r["label"] for r in ranking]}


HANDLERS = {
    "bands": scenario_bands,
    "depth-scan": scenario_depth_scan,
    "ramsey": scenario_ramsey,
    "arp-sweep": scenario_arp_sweep,
    "arp-3level": scenario_arp_3level,
    "grape-design": scenario_grape,
    "simulate-pulse": scenario_simulate,
    "compare": scenario_compare,
}


def run(cfg: ScenarioConfig, out: str | Path | None = None) -> dict:
    """Execute a scenario and write its artifacts plus ``summary.json``."""
    outdir = Path(out) if out is not None else cfg.path(cfg.output)
    try:
        art = Artifacts(outdir)
    except OSError as err:
        raise InputFileError(f"cannot create output directory {outdir}: {err}") from err
    t0 = time.perf_counter()
    np.random.seed(cfg.seed)
    outputs = HANDLERS[cfg.scenario](cfg, art)
    wall = time.perf_counter() - t0
    summary = {
        "schema_version": SCHEMA_VERSION,
        "package_version": __version__,
        "scenario": cfg.scenario,
        "inputs": cfg.resolved(),
        "solver": dict(cfg.solver),
        "outputs": outputs,
        "manifest": art.manifest(),
    }
    summary = _builtin(summary)
    with open(outdir / "summary.json", "w") as fh:
        json.dump(summary, fh, indent=2, sort_keys=True)
        fh.write("\n")
    with open(outdir / "timing.json", "w") as fh:
        json.dump({"wall_time_s": wall, "finished_unix": time.time()}, fh, indent=2)
        fh.write("\n")
    summary["timing"] = {"wall_time_s": wall}
    return summary


# --- entry point ------------------------------------------------------------


def _exit_code(err: BaseException) -> int:
    if isinstance(err, ConfigError):
        return 2
    if isinstance(err, OSError):
        return 4
    return 3


def _fail(err: BaseException, outdir: Path | None) -> int:
    code = _exit_code(err)
    record = {
        "error": type(err).__name__,
        "message": str(err),
        "exit_code": code,
        "category": {2: "config", 3: "physics", 4: "io"}[code],
    }
    if log.isEnabledFor(logging.DEBUG):
        record["traceback"] = traceback.format_exception(err)
    text = json.dumps(record, indent=2)
    print(text, file=sys.stderr)
    if outdir is not None:
        try:
            outdir.mkdir(parents=True, exist_ok=True)
            (outdir / "error.json").write_text(text + "\n")
        except OSError:
            pass
    return code


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="latticectl", description="Vibrational-state control in a 1-D optical lattice")
    ap.add_argument("-v", "--verbose", action="store_true")
    sub = ap.add_subparsers(dest="command", required=True)
    r = sub.add_parser("run", help="run a scenario from a YAML config")
    r.add_argument("config")
    r.add_argument("--out", default=None)
    r.add_argument("--threads", type=int, default=None)
    r.add_argument("--seed", type=int, default=None)
    c = sub.add_parser("compare", help="rank summaries by renormalized transfer")
    c.add_argument("summaries", nargs="+")
    c.add_argument("--out", default="compare_out")
    return ap


def main(argv=None) -> int:
    ap = build_parser()
    args = ap.parse_args(argv)
    logging.basicConfig(level=logging.DEBUG if args.verbose else logging.INFO, format="%(levelname)s %(message)s")
    outdir = Path(args.out) if getattr(args, "out", None) else None
    try:
        if args.command == "run":
            cfg = load_config(args.config)
            if args.threads is not None:
                if args.threads < 1:
                    raise ConfigError("--threads must be >= 1")
                cfg.threads = args.threads
            if args.seed is not None:
                cfg.seed = args.seed
            outdir = outdir or cfg.path(cfg.output)
            summary = run(cfg, outdir)
        else:
            cfg = ScenarioConfig("compare", {"depth_Er": 18.0}, params={"inputs": list(args.summaries)})
            summary = run(cfg, outdir)
    except Exception as err:  # noqa: BLE001 - mapped to exit codes
        return _fail(err, outdir)
    log.info("%s finished in %.2f s -> %s", summary["scenario"], summary["timing"]["wall_time_s"], outdir)
    return 0


if __name__ == "__main__":
    sys.exit(main())
