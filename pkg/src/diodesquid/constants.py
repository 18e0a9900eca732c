"""Physical constants used throughout the package."""

from dataclasses import dataclass

from scipy import constants as _sc

FLUX_QUANTUM = 2.067833848e-15  # Wb
ELEMENTARY_CHARGE = _sc.e
HBAR = _sc.hbar
REDUCED_FLUX_QUANTUM = FLUX_QUANTUM / (2.0 * _sc.pi)


@dataclass(frozen=True)
class PhysicalConstants:
    flux_quantum: float = FLUX_QUANTUM
    elementary_charge: float = ELEMENTARY_CHARGE
    hbar: float = HBAR

    @property
    def reduced_flux_quantum(self) -> float:
        return self.flux_quantum / (2.0 * _sc.pi)


DEFAULT_CONSTANTS = PhysicalConstants()
