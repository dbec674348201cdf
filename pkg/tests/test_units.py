import math

import pytest
from hypothesis import given, strategies as st

from latticectl.units import (
    HBAR,
    PLANCK,
    RB85_MASS,
    STANDARD_GRAVITY,
    DomainError,
    LatticeConfig,
    gravity_tilt_per_site,
    experiment_config,
    recoil_frequency,
)

TWO_PI = 2 * math.pi


def test_recoil_frequency_reference_geometry():
    w = recoil_frequency(0.923e-6, RB85_MASS)
    assert w / TWO_PI == pytest.approx(685.0, rel=0.01)


def test_recoil_frequency_one_micron():
    # h / (8 m d^2) evaluated by hand: 6.62607015e-34 / (8 * 1.40999e-25 * 1e-12)
    assert recoil_frequency(1e-6, RB85_MASS) / TWO_PI == pytest.approx(587.4, rel=2e-3)


@given(st.floats(1e-7, 1e-5), st.floats(1e-27, 1e-24))
def test_recoil_frequency_inverse_square_scaling(d, m):
    assert recoil_frequency(2 * d, m) == pytest.approx(recoil_frequency(d, m) / 4, rel=1e-14)


@pytest.mark.parametrize("d, m", [(0.0, RB85_MASS), (-1e-6, RB85_MASS), (1e-6, 0.0), (1e-6, -1.0), (float("nan"), 1.0)])
def test_recoil_frequency_rejects_bad_input(d, m):
    with pytest.raises(DomainError):
        recoil_frequency(d, m)


def test_gravity_tilt_reference_value():
    assert gravity_tilt_per_site(experiment_config(18.0, gravity=True)) == pytest.approx(2.86, rel=0.02)


def test_gravity_tilt_disabled_is_zero():
    assert gravity_tilt_per_site(experiment_config(18.0, gravity=False)) == 0.0


def test_gravity_tilt_one_micron_closed_form():
    cfg = LatticeConfig(18.0, lattice_constant=1e-6, gravity_enabled=True)
    # E_r = h^2 / (8 m d^2)  =>  m g d / E_r = 8 m^2 g d^3 / h^2
    expected = 8 * RB85_MASS**2 * STANDARD_GRAVITY * 1e-18 / PLANCK**2
    assert gravity_tilt_per_site(cfg) == pytest.approx(expected, rel=1e-12)
    assert gravity_tilt_per_site(cfg) == pytest.approx(3.5525, abs=5e-4)


@pytest.mark.parametrize(
    "kwargs",
    [
        {"depth_Er": 0.0},
        {"depth_Er": -3.0},
        {"depth_Er": 10.0, "lattice_constant": 0.0},
        {"depth_Er": 10.0, "atom_mass": -1.0},
        {"depth_Er": 10.0, "gravity_accel": -9.8},
    ],
)
def test_config_validation(kwargs):
    with pytest.raises(DomainError):
        LatticeConfig(**kwargs)


@given(st.floats(0.1, 500.0), st.floats(2e-7, 5e-6))
def test_natural_units_pure_and_consistent(U, d):
    a = LatticeConfig(U, lattice_constant=d)
    b = LatticeConfig(U, lattice_constant=d)
    assert a.units == b.units
    u = a.units
    assert u.recoil_energy == HBAR * u.recoil_angular_frequency
    k = math.pi / d
    assert u.recoil_energy * k**-2 * 2 * a.atom_mass / HBAR**2 == pytest.approx(1.0, rel=1e-12)
    assert u.harmonic_length > 0


@given(st.floats(1e-6, 1e-2))
def test_time_round_trip(t):
    cfg = experiment_config()
    assert cfg.to_seconds(cfg.to_natural_time(t)) == pytest.approx(t, rel=1e-14)


def test_with_depth_and_gravity_copy():
    cfg = experiment_config(18.0)
    deeper = cfg.with_depth(25.0)
    assert deeper.depth_Er == 25.0 and cfg.depth_Er == 18.0
    assert deeper.omega_r == cfg.omega_r
    assert cfg.with_gravity().gravity_enabled
