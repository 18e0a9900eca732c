"""Parameter containers for the constriction, circuit and pump."""

from __future__ import annotations

import math
from dataclasses import dataclass, fields

from .constants import FLUX_QUANTUM
from .errors import NonFinite, ValidationError


def _check_finite(obj) -> None:
    for f in fields(obj):
        value = getattr(obj, f.name)
        if isinstance(value, (int, float)) and not math.isfinite(value):
            raise NonFinite(f"{type(obj).__name__}.{f.name} is not finite: {value!r}")


def _check_positive(obj, *names: str, allow_zero: bool = False) -> None:
    for name in names:
        value = getattr(obj, name)
        if value < 0 or (value == 0 and not allow_zero):
            raise ValidationError(f"{type(obj).__name__}.{name} must be positive, got {value!r}")


@dataclass(frozen=True)
class HomogeneousCprParams:
    """Sinusoidal supercurrent in series with a linear inductance."""

    I0: float
    L_lin: float = 0.0

    def __post_init__(self):
        _check_finite(self)
        _check_positive(self, "I0")
        _check_positive(self, "L_lin", allow_zero=True)

    @property
    def josephson_inductance(self) -> float:
        return FLUX_QUANTUM / (2.0 * math.pi * self.I0)

    @property
    def screening(self) -> float:
        """Dimensionless linear-inductance parameter 2 pi L_lin I0 / flux quantum."""
        return 2.0 * math.pi * self.L_lin * self.I0 / FLUX_QUANTUM


@dataclass(frozen=True)
class DiodeModelParams:
    """Normalized parameters of the width-resolved constriction model.

    ``delta_B`` is the field-induced phase across the constriction width,
    ``delta_ell`` the normalized linear inductance, ``epsilon`` the linear
    current-density gradient and ``b`` the field-penetration asymmetry.
    """

    I00: float
    epsilon: float = 0.0
    b: float = 0.0
    delta_B: float = 0.0
    delta_ell: float = 0.0

    def __post_init__(self):
        _check_finite(self)
        _check_positive(self, "I00")
        _check_positive(self, "delta_ell", allow_zero=True)
        for name in ("epsilon", "b"):
            value = getattr(self, name)
            if not 0.0 <= value <= 1.0:
                raise ValidationError(f"{name} must lie in [0, 1], got {value!r}")

    @classmethod
    def from_homogeneous(cls, params: HomogeneousCprParams) -> "DiodeModelParams":
        return cls(I00=params.I0, delta_ell=params.screening)

    def replace(self, **changes) -> "DiodeModelParams":
        values = {f.name: getattr(self, f.name) for f in fields(self)}
        values.update(changes)
        return DiodeModelParams(**values)


def field_phase(B: float, l_eff: float, length: float) -> float:
    """Phase accumulated across the constriction width by a parallel field."""
    return 2.0 * math.pi * B * l_eff * length / FLUX_QUANTUM


def normalized_inductance(j0: float, ell_lin: float) -> float:
    return 2.0 * math.pi * j0 * ell_lin / FLUX_QUANTUM


@dataclass(frozen=True)
class CircuitParams:
    """Lumped resonator and SQUID-loop parameters (angular frequencies in rad/s)."""

    omega_0b: float
    L_b: float
    L_loop: float
    C_tot: float = 592e-15
    kappa: float = 2 * math.pi * 22e6
    kappa_ext: float = 2 * math.pi * 4.7e6
    kappa_nl: float = 0.0
    field: float = 0.0

    def __post_init__(self):
        _check_finite(self)
        _check_positive(self, "omega_0b", "L_b", "C_tot", "kappa")
        _check_positive(self, "L_loop", "kappa_ext", "kappa_nl", allow_zero=True)
        if self.kappa_ext > self.kappa:
            raise ValidationError("kappa_ext cannot exceed the total linewidth kappa")

    @property
    def L_arm(self) -> float:
        return self.L_loop / 3.0

    def replace(self, **changes) -> "CircuitParams":
        values = {f.name: getattr(self, f.name) for f in fields(self)}
        values.update(changes)
        return CircuitParams(**values)


PUMP_REFERENCE_OMEGA = 2 * math.pi * 10.25e9


@dataclass(frozen=True)
class PumpParams:
    """Pump tone: generator power in W, angular frequency and line attenuation."""

    omega_p: float
    P_sg: float
    zeta0: float = 1.0
    zeta1: float = 0.0
    omega_ref: float = PUMP_REFERENCE_OMEGA

    def __post_init__(self):
        _check_finite(self)
        _check_positive(self, "omega_p", "zeta0")
        _check_positive(self, "P_sg", allow_zero=True)

    @property
    def attenuation(self) -> float:
        return attenuation(self.omega_p, self.zeta0, self.zeta1, self.omega_ref)

    @property
    def power_at_device(self) -> float:
        return self.attenuation * self.P_sg


def attenuation(omega_p, zeta0: float, zeta1: float = 0.0, omega_ref: float = PUMP_REFERENCE_OMEGA):
    """Power attenuation of the drive line, linear in pump frequency."""
    return zeta0 * (1.0 + zeta1 * (omega_p - omega_ref))


def attenuation_db(zeta: float) -> float:
    return -10.0 * math.log10(zeta)
