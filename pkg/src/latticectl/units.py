"""Physical constants, natural units and the lattice configuration.

Everything downstream works in lattice natural units:

* energies in recoil energies E_r = hbar^2 k^2 / 2m with k = pi/d,
* times in 1/omega_r where omega_r = E_r / hbar,
* lengths in lattice constants d.

SI quantities only appear at the API boundary (``LatticeConfig`` fields,
seconds and rad/s arguments of the public functions).
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field, replace

from scipy import constants as _c

HBAR = _c.hbar
PLANCK = _c.h
ATOMIC_MASS = _c.atomic_mass
STANDARD_GRAVITY = _c.g

RB85_MASS = 84.911789738 * ATOMIC_MASS

# omega_r = 2 pi x 685 Hz for rubidium-85 fixes d = sqrt(h / (8 m 685 Hz))
REFERENCE_RECOIL_HZ = 685.0
REFERENCE_LATTICE_CONSTANT = math.sqrt(PLANCK / (8.0 * RB85_MASS * REFERENCE_RECOIL_HZ))

# kinetic prefactor and force coupling in natural units:
#   p^2/2m -> -(1/pi^2) d^2/dx^2,   m * accel * x -> (pi^2 / 2) * accel * x
FORCE_COUPLING = 0.5 * math.pi**2


class DomainError(ValueError):
    """Raised when a physical argument is outside its domain."""


def _positive(name, value):
    if not (value > 0) or not math.isfinite(value):
        raise DomainError(f"{name} must be a positive finite number, got {value!r}")


def recoil_frequency(lattice_constant: float, atom_mass: float) -> float:
    """Recoil angular frequency ``omega_r = 2 pi h / (8 m d^2)`` in rad/s."""
    _positive("lattice_constant", lattice_constant)
    _positive("atom_mass", atom_mass)
    return 2.0 * math.pi * PLANCK / (8.0 * atom_mass * lattice_constant**2)


@dataclass(frozen=True)
class NaturalUnits:
    recoil_energy: float
    recoil_angular_frequency: float
    harmonic_length: float

    @property
    def time(self) -> float:
        """One natural time unit, 1/omega_r, in seconds."""
        return 1.0 / self.recoil_angular_frequency


@dataclass(frozen=True)
class LatticeConfig:
    """Static lattice parameters.

    ``depth_Er`` is the lattice depth U in recoil energies, the remaining
    fields are SI.
    """

    depth_Er: float
    lattice_constant: float = REFERENCE_LATTICE_CONSTANT
    atom_mass: float = RB85_MASS
    gravity_enabled: bool = False
    gravity_accel: float = STANDARD_GRAVITY
    _units: NaturalUnits = field(init=False, repr=False, compare=False)

    def __post_init__(self):
        _positive("depth_Er", self.depth_Er)
        _positive("lattice_constant", self.lattice_constant)
        _positive("atom_mass", self.atom_mass)
        if self.gravity_accel < 0 or not math.isfinite(self.gravity_accel):
            raise DomainError(f"gravity_accel must be >= 0, got {self.gravity_accel!r}")
        object.__setattr__(self, "_units", _derive_units(self))

    @property
    def units(self) -> NaturalUnits:
        return self._units

    @property
    def omega_r(self) -> float:
        return self._units.recoil_angular_frequency

    @property
    def recoil_energy(self) -> float:
        return self._units.recoil_energy

    @property
    def wavevector(self) -> float:
        return math.pi / self.lattice_constant

    def with_depth(self, depth_Er: float) -> "LatticeConfig":
        return replace(self, depth_Er=float(depth_Er))

    def with_gravity(self, enabled: bool = True) -> "LatticeConfig":
        return replace(self, gravity_enabled=bool(enabled))

    # SI <-> natural conversions
    def to_natural_time(self, seconds):
        return seconds * self.omega_r

    def to_seconds(self, tau):
        return tau / self.omega_r

    def to_natural_frequency(self, omega):
        return omega / self.omega_r

    def to_angular_frequency(self, nu):
        return nu * self.omega_r

    def to_natural_length(self, meters):
        return meters / self.lattice_constant

    def to_meters(self, xi):
        return xi * self.lattice_constant

    def to_dict(self) -> dict:
        return {
            "depth_Er": self.depth_Er,
            "lattice_constant": self.lattice_constant,
            "atom_mass": self.atom_mass,
            "gravity_enabled": self.gravity_enabled,
            "gravity_accel": self.gravity_accel,
        }


def _derive_units(config: LatticeConfig) -> NaturalUnits:
    omega_r = recoil_frequency(config.lattice_constant, config.atom_mass)
    e_r = HBAR * omega_r
    # harmonic approximation of the well bottom: hbar omega_ho = 2 sqrt(U E_r)
    omega_ho = 2.0 * math.sqrt(config.depth_Er) * omega_r
    a_ho = math.sqrt(HBAR / (config.atom_mass * omega_ho))
    return NaturalUnits(e_r, omega_r, a_ho)


def gravity_tilt_per_site(config: LatticeConfig) -> float:
    """Gravitational energy drop across one lattice site, ``m g d / E_r``."""
    if not config.gravity_enabled:
        return 0.0
    return config.atom_mass * config.gravity_accel * config.lattice_constant / config.recoil_energy


def experiment_config(depth_Er: float = 18.0, gravity: bool = False) -> LatticeConfig:
    """Rubidium-85 lattice with omega_r = 2 pi x 685 Hz."""
    return LatticeConfig(depth_Er=depth_Er, gravity_enabled=gravity)
