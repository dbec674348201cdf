"""Ramsey round trip: Gaussian depth spread -> simulated P0(t) -> fit -> recovered distribution."""

import argparse

import numpy as np

from latticectl.bands import omega01_of_depth
from latticectl.ensemble import fit_ramsey, gaussian_distribution, recover_depth_distribution, simulate_ramsey
from latticectl.units import experiment_config


def main():
    ap = argparse.ArgumentParser(description=__doc__)
    ap.add_argument("--mean", type=float, default=18.0)
    ap.add_argument("--sigma", type=float, default=1.5)
    ap.add_argument("--displacement", type=float, default=0.05, help="units of d")
    ap.add_argument("--t-max", type=float, default=6e-3, help="seconds")
    args = ap.parse_args()
    cfg = experiment_config(args.mean)
    delays = np.arange(int(round(args.t_max / 5e-6)) + 1) * 5e-6
    sig = simulate_ramsey(gaussian_distribution(args.mean, args.sigma), args.displacement, delays, cfg)
    fit = fit_ramsey(sig)
    curve = omega01_of_depth(cfg, np.linspace(4.0, 40.0, 73))
    rec = recover_depth_distribution(sig, curve, fit)
    print("fit:", {k: round(v, 6) if isinstance(v, float) else v for k, v in fit.to_dict().items()})
    print(f"input     mean {args.mean:.3f}  sigma {args.sigma:.3f}")
    print(f"recovered mean {rec.mean:.3f}  sigma {rec.std:.3f}")


if __name__ == "__main__":
    main()
