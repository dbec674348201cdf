"""Two-level chirped transfer against both Landau-Zener closed forms.

Prints the simulated diabatic probability next to exp(-Omega^2/(4|beta|))
and exp(-pi Omega^2/(2|beta|)) over Omega^2/|beta| in [0.1, 10].
"""

import math

import numpy as np

from latticectl.bands import transition_data
from latticectl.three_level import chirped_transfer, lz_probability, reduce_to_three_level
from latticectl.units import experiment_config


def main():
    cfg = experiment_config(18.0)
    sys3 = reduce_to_three_level(cfg, transition_data(cfg), 1 / 36)
    two = sys3.two_level().scaled(0.005 * sys3.omega01 / sys3.rabi_01)
    gap = two.rabi_01
    print(f"{'Omega^2/|beta|':>15s} {'simulated':>10s} {'printed':>10s} {'standard':>10s}")
    for r in np.geomspace(0.1, 10, 9):
        beta = gap**2 / r
        span = min(150 * max(gap, math.sqrt(beta)), 1.6 * two.omega01)
        p = chirped_transfer(two, beta, span).populations[0]
        print(f"{r:15.3g} {p:10.4f} {lz_probability(gap, beta):10.4f} {lz_probability(gap, beta, 'standard'):10.4f}")


if __name__ == "__main__":
    main()
