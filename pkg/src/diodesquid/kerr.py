"""Kerr anharmonicity of the SQUID-loaded resonator.

The closed form below follows from expanding the inductive energy of the
circuit (resonator inductance in series with the two SQUID arms) to fourth
order in the total phase across the capacitor.  :func:`total_circuit_energy`
evaluates that energy directly and serves as an independent check through
finite differences.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .constants import DEFAULT_CONSTANTS, FLUX_QUANTUM, REDUCED_FLUX_QUANTUM, PhysicalConstants
from .cpr import CprTable
from .errors import CapExceeded, ConstraintFailure, DegenerateSlope, NonPhysical, ValidationError


@dataclass(frozen=True)
class KerrTerms:
    g1: float
    g2: float
    g3: float
    L_c: float
    L_total: float
    participation: float


def kerr_terms(table: CprTable, circuit, delta_c: float) -> KerrTerms:
    """Normalized CPR derivatives ``g_k = (2 pi / flux_quantum) L_arm I^(k)``."""
    L_arm = circuit.L_arm
    scale = L_arm / REDUCED_FLUX_QUANTUM
    s1, s2, s3 = (float(table.derivative(delta_c, k)) for k in (1, 2, 3))
    g1, g2, g3 = scale * s1, scale * s2, scale * s3
    if abs(s1) < 1e-12 or abs(1.0 + g1) < 1e-12:
        raise DegenerateSlope("CPR slope is too small for the Kerr expansion")
    L_c = REDUCED_FLUX_QUANTUM / s1
    L_total = circuit.L_b + 0.5 * L_c
    if L_total <= 0:
        raise NonPhysical("total inductance L_b + L_c/2 must be positive")
    p = 0.5 * (L_arm + L_c) / L_total
    return KerrTerms(g1=g1, g2=g2, g3=g3, L_c=L_c, L_total=L_total, participation=p)


def kerr_anharmonicity(table: CprTable, circuit, delta_c: float,
                       constants: PhysicalConstants = DEFAULT_CONSTANTS) -> float:
    """Kerr coefficient (rad/s) at the operating point ``delta_c``."""
    t = kerr_terms(table, circuit, delta_c)
    charging = constants.elementary_charge**2 / (2.0 * constants.hbar * circuit.C_tot)
    shape = (3.0 * t.g2**2 - t.g3 * (1.0 + t.g1)) / (t.g1 * (1.0 + t.g1) ** 4)
    return -charging * t.participation**3 * shape


def kerr_along(table: CprTable, circuit, delta_c, constants: PhysicalConstants = DEFAULT_CONSTANTS):
    """Vectorized :func:`kerr_anharmonicity`; degenerate points become NaN."""
    d = np.atleast_1d(np.asarray(delta_c, dtype=float))
    out = np.empty_like(d)
    for i, x in enumerate(d):
        try:
            out[i] = kerr_anharmonicity(table, circuit, x, constants)
        except (DegenerateSlope, NonPhysical):
            out[i] = np.nan
    return out if np.ndim(delta_c) else float(out[0])


# ---------------------------------------------------------------- energy route


def resonator_inductance(circuit) -> float:
    """Series inductance outside the SQUID arms, ``L_b - L_arm / 2``."""
    return circuit.L_b - 0.5 * circuit.L_arm


def external_phase(table: CprTable, circuit, delta_c: float) -> float:
    """Loop phase from the applied flux that equilibrates both constrictions at ``delta_c``."""
    g = circuit.L_arm * float(table.evaluate(delta_c)) / REDUCED_FLUX_QUANTUM
    return -2.0 * (delta_c + g)


class CircuitEnergy:
    """Inductive energy of the circuit as a function of the total phase.

    The two arms each hold a constriction (phase ``x_i``) in series with the
    arm inductance ``L_arm`` (phase ``L_arm I(x_i) / reduced flux quantum``);
    the resonator current ``I_1 - I_2`` flows through the remaining series
    inductance.  For a total phase ``delta_total`` the arm phases are fixed by
    fluxoid quantization around the loop and by the phase drop across the
    resonator branch.
    """

    def __init__(self, table: CprTable, circuit, delta_ext: float, seed: float):
        self.table = table
        self.L_arm = circuit.L_arm
        self.L_r = resonator_inductance(circuit)
        if self.L_arm <= 0 or self.L_r <= 0:
            raise NonPhysical("arm and resonator inductances must be positive")
        self.delta_ext = delta_ext
        self.E_arm = REDUCED_FLUX_QUANTUM**2 / self.L_arm
        self.E_r = REDUCED_FLUX_QUANTUM**2 / self.L_r
        self.rho = self.L_r / self.L_arm
        self._scale = self.L_arm / REDUCED_FLUX_QUANTUM
        self._seed = np.array([seed, seed], dtype=float)

    def _arm(self, x):
        I = np.asarray(self.table.evaluate(x))
        dI = np.asarray(self.table.derivative(x, 1))
        return self._scale * I, self._scale * dI

    def phases(self, delta_total: float, start=None) -> np.ndarray:
        x = self._seed.copy() if start is None else np.array(start, dtype=float)
        for _ in range(60):
            g, dg = self._arm(x)
            f = x + g
            df = 1.0 + dg
            F = np.array([
                f[0] + f[1] + self.delta_ext,
                self.rho * (g[0] - g[1]) + 0.5 * (f[0] - f[1]) - delta_total,
            ])
            J = np.array([
                [df[0], df[1]],
                [self.rho * dg[0] + 0.5 * df[0], -self.rho * dg[1] - 0.5 * df[1]],
            ])
            step = np.linalg.solve(J, F)
            x = x - step
            if np.max(np.abs(step)) < 1e-15 * max(1.0, np.max(np.abs(x))):
                break
        else:
            raise ConstraintFailure("loop constraint did not converge")
        g, _ = self._arm(x)
        resid = abs(x[0] + g[0] + x[1] + g[1] + self.delta_ext)
        if not np.isfinite(resid) or resid > 1e-10:
            raise ConstraintFailure("loop constraint violated after the solve")
        return x

    def __call__(self, delta_total: float, start=None) -> float:
        x = self.phases(delta_total, start)
        g, _ = self._arm(x)
        delta_r = self.rho * (g[0] - g[1])
        E_c = np.asarray(self.table.energy(x))
        return float(E_c[0] + E_c[1] + 0.5 * self.E_arm * (g[0] ** 2 + g[1] ** 2) + 0.5 * self.E_r * delta_r**2)


def total_circuit_energy(table: CprTable, circuit, delta_ext: float, delta_total: float,
                         seed: float | None = None) -> float:
    """Inductive energy (J) at total phase ``delta_total`` for loop phase ``delta_ext``."""
    if seed is None:
        seed = _equilibrium_phase(table, circuit, delta_ext)
    return CircuitEnergy(table, circuit, delta_ext, seed)(delta_total)


def _equilibrium_phase(table, circuit, delta_ext):
    from scipy.optimize import brentq

    lo, hi = table.delta_c_range
    f = lambda d: external_phase(table, circuit, d) - delta_ext
    grid = np.linspace(lo + 1e-9, hi - 1e-9, 801)
    vals = np.array([f(d) for d in grid])
    idx = np.flatnonzero(np.signbit(vals[:-1]) != np.signbit(vals[1:]))
    if idx.size == 0:
        raise ConstraintFailure("no equilibrium phase for the given loop phase")
    i = idx[np.argmin(np.abs(grid[idx]))]
    return brentq(f, grid[i], grid[i + 1], xtol=1e-15)


_D2 = np.array([2.0, -27.0, 270.0, -490.0, 270.0, -27.0, 2.0]) / 180.0
_D3 = np.array([1.0, -8.0, 13.0, 0.0, -13.0, 8.0, -1.0]) / 8.0
_D4 = np.array([-1.0, 12.0, -39.0, 56.0, -39.0, 12.0, -1.0]) / 6.0


def energy_expansion(table: CprTable, circuit, delta_c: float, step: float = 0.5):
    """Taylor coefficients ``(c2, c3, c4)`` of the energy around equilibrium.

    Central seven-point stencils in the total phase with one Richardson
    refinement (steps ``step`` and ``step / 2``).
    """
    delta_ext = external_phase(table, circuit, delta_c)
    energy = CircuitEnergy(table, circuit, delta_ext, delta_c)

    def stencil(h):
        offsets = np.arange(-3, 4) * h
        values = np.empty(7)
        start = None
        # walk outward from the centre so each solve starts next to the previous one
        for i in (3, 4, 5, 6):
            values[i] = energy(offsets[i], start)
            start = energy.phases(offsets[i], start)
        start = None
        for i in (2, 1, 0):
            values[i] = energy(offsets[i], start)
            start = energy.phases(offsets[i], start)
        values = values - values[3]
        return (_D2 @ values / h**2, _D3 @ values / h**3, _D4 @ values / h**4)

    coarse = np.array(stencil(step))
    fine = np.array(stencil(0.5 * step))
    # all three stencils have leading error of order h^4 (h^6 for c2)
    orders = np.array([6.0, 4.0, 4.0])
    refined = fine + (fine - coarse) / (2.0**orders - 1.0)
    return tuple(float(v) for v in refined)


def kerr_from_energy(table: CprTable, circuit, delta_c: float, step: float = 0.5,
                     constants: PhysicalConstants = DEFAULT_CONSTANTS) -> float:
    """Kerr coefficient from finite differences of the circuit energy."""
    c2, _, c4 = energy_expansion(table, circuit, delta_c, step)
    charging = constants.elementary_charge**2 / (2.0 * constants.hbar * circuit.C_tot)
    return charging * c4 / c2


def quadratic_coefficient(circuit, L_c: float) -> float:
    """Closed-form curvature of the energy, ``(flux_quantum/2pi)^2 / (L_r + (L_arm + L_c)/2)``."""
    return REDUCED_FLUX_QUANTUM**2 / (resonator_inductance(circuit) + 0.5 * (circuit.L_arm + L_c))


def kerr_bimodality(table: CprTable, circuit, omega_target: float, branch_segment,
                    constants: PhysicalConstants = DEFAULT_CONSTANTS) -> tuple[float, float, float]:
    """Kerr coefficients on both sides of the sweetspot at equal resonance frequency.

    Returns ``(K_left, K_right, |K_left / K_right|)``.
    """
    from scipy.optimize import brentq

    from .squid import _frequency_or_nan

    def omega(d):
        return _frequency_or_nan(circuit.omega_0b, circuit.L_b, np.asarray(table.derivative(d, 1)))[1]

    ss = branch_segment.sweetspot
    out = []
    for end in (branch_segment.delta_lo, branch_segment.delta_hi):
        x = np.linspace(ss, end, 2001)
        w = omega(x) - omega_target
        idx = np.flatnonzero(np.signbit(w[:-1]) != np.signbit(w[1:]))
        if idx.size == 0:
            raise NonPhysical("target frequency is not reached on both sides of the sweetspot")
        i = idx[0]
        d = brentq(lambda t: float(omega(t)) - omega_target, x[i], x[i + 1], xtol=1e-14)
        out.append(kerr_anharmonicity(table, circuit, d, constants))
    return out[0], out[1], abs(out[0] / out[1])


# ---------------------------------------------------------------- CPR micro-correction

CORRECTION_POWERS = (1, 3, 8, 9)
DEFAULT_CORRECTION_CAP = 100e-9


@dataclass(frozen=True)
class PolynomialCorrection:
    """``Delta I = J (q1 x + q3 x^3 + q8 x^8 + q9 x^9)`` with ``x = delta_c - anchor_phase``.

    ``J`` is the maximum slope of the uncorrected CPR, reached at ``anchor_phase``.
    """

    q1: float = 0.0
    q3: float = 0.0
    q8: float = 0.0
    q9: float = 0.0
    J: float = 1.0
    anchor_phase: float = 0.0

    @classmethod
    def anchored(cls, table: CprTable, q=(0.0, 0.0, 0.0, 0.0)) -> "PolynomialCorrection":
        phase, slope = table.max_slope()
        return cls(*(float(v) for v in q), J=float(slope), anchor_phase=float(phase))

    @property
    def coefficients(self) -> tuple[float, float, float, float]:
        return (self.q1, self.q3, self.q8, self.q9)

    def with_coefficients(self, q) -> "PolynomialCorrection":
        return PolynomialCorrection(*(float(v) for v in q), J=self.J, anchor_phase=self.anchor_phase)

    def __call__(self, delta_c, order: int = 0):
        """Correction current (or its ``order``-th derivative) at ``delta_c``."""
        x = np.asarray(delta_c, dtype=float) - self.anchor_phase
        out = np.zeros_like(x)
        for q, k in zip(self.coefficients, CORRECTION_POWERS):
            if q == 0.0 or order > k:
                continue
            out = out + q * (math.factorial(k) // math.factorial(k - order)) * x ** (k - order)
        out = self.J * out
        return out if np.ndim(out) else float(out)

    def magnitude(self, delta_lo: float, delta_hi: float, samples: int = 2001) -> float:
        """Largest ``|Delta I|`` over ``[delta_lo, delta_hi]``."""
        return float(np.max(np.abs(self(np.linspace(delta_lo, delta_hi, samples)))))


def apply_correction(table: CprTable, corr: PolynomialCorrection, arc_range=None,
                     cap: float = DEFAULT_CORRECTION_CAP) -> CprTable:
    """CPR table of ``I + Delta I``, re-interpolated on the nodes of ``table``.

    The zero shift is recomputed, so phases of the new table differ from the
    old ones by the change of the zero crossing.  With ``arc_range`` given
    (phases of the uncorrected table) the correction must stay below ``cap``
    there.
    """
    if arc_range is not None:
        size = corr.magnitude(*arc_range)
        if size > cap:
            raise CapExceeded(f"CPR correction reaches {size:.3g} A over the arc range (cap {cap:.3g} A)")
    if all(q == 0.0 for q in corr.coefficients):
        return table
    if not np.isfinite(corr.J) or not all(np.isfinite(corr.coefficients)):
        raise ValidationError("correction coefficients must be finite")
    delta_c = table.delta0 - table.zero_shift
    current = np.asarray(table.current) + np.asarray(corr(delta_c))
    return CprTable.from_samples(table.delta0.copy(), current, scale=table.scale, label=table.label + "+corr")


def corrected_phase(old: CprTable, new: CprTable, delta_c):
    """Phase in ``new`` of the point that has phase ``delta_c`` in ``old``."""
    return np.asarray(delta_c) + old.zero_shift - new.zero_shift
