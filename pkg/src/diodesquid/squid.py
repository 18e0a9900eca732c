"""Static response of the constriction SQUID embedded in the resonator.

The loop flux obeys ``Phi = Phi_b - L_loop I(delta_c)`` with
``Phi = flux_quantum * delta_c / pi``; each constriction contributes the
inductance ``(flux_quantum / 2 pi) / I'(delta_c)`` which pulls the resonance
below its bare value ``omega_0b``.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np
from scipy.optimize import brentq

from .constants import FLUX_QUANTUM, REDUCED_FLUX_QUANTUM
from .cpr import CprTable
from .errors import (
    BranchTerminated,
    NoStableBranch,
    NonPhysical,
    SingularInductance,
    ValidationError,
)
from .params import CircuitParams

SLOPE_FLOOR = 1e-12  # A/rad
_EDGE = 1e-9  # keep derivative queries strictly inside the table range


# ---------------------------------------------------------------- elementary relations


def bias_flux(table: CprTable, L_loop: float, delta_c, branch: int = 0):
    """Applied flux that holds the constrictions at ``delta_c`` on fluxoid ``branch``."""
    d = np.asarray(delta_c, dtype=float)
    out = FLUX_QUANTUM * d / math.pi + L_loop * np.asarray(table.evaluate(d)) + branch * FLUX_QUANTUM
    return out if np.ndim(out) else float(out)


def constriction_inductance(table: CprTable, delta_c):
    slope = np.asarray(table.derivative(delta_c, 1), dtype=float)
    if np.any(np.abs(slope) < SLOPE_FLOOR):
        raise SingularInductance("CPR slope vanishes; the constriction inductance diverges")
    out = REDUCED_FLUX_QUANTUM / slope
    return out if np.ndim(out) else float(out)


def resonance_frequency(omega_0b, L_b, L_c):
    """Resonance of the bare resonator loaded by two constrictions in parallel."""
    ratio = 1.0 + np.asarray(L_c, dtype=float) / (2.0 * np.asarray(L_b, dtype=float))
    if np.any(ratio <= 0):
        raise NonPhysical("1 + L_c / (2 L_b) must be positive")
    out = np.asarray(omega_0b) / np.sqrt(ratio)
    return out if np.ndim(out) else float(out)


def _frequency_or_nan(omega_0b, L_b, slope):
    with np.errstate(divide="ignore", invalid="ignore"):
        L_c = np.where(np.abs(slope) >= SLOPE_FLOOR, REDUCED_FLUX_QUANTUM / slope, np.nan)
        ratio = 1.0 + L_c / (2.0 * L_b)
        omega = np.where(ratio > 0, omega_0b / np.sqrt(np.where(ratio > 0, ratio, 1.0)), np.nan)
    return L_c, omega


# ---------------------------------------------------------------- switching rules


@dataclass(frozen=True)
class FoldPoint:
    """Switch where the branch folds back (``dPhi_b/ddelta_c = 0``) or ends."""


@dataclass(frozen=True)
class FixedPhase:
    """Switch when ``delta_c`` reaches ``delta_plus`` (up) or ``delta_minus`` (down)."""

    delta_plus: float
    delta_minus: float

    def __post_init__(self):
        if not self.delta_minus < self.delta_plus:
            raise ValidationError("FixedPhase requires delta_minus < delta_plus")


@dataclass(frozen=True)
class FixedCurrent:
    """Switch when the circulating current reaches ``I_plus`` (up) or ``I_minus`` (down)."""

    I_plus: float
    I_minus: float

    def __post_init__(self):
        if not self.I_minus < self.I_plus:
            raise ValidationError("FixedCurrent requires I_minus < I_plus")


SwitchingRule = FoldPoint | FixedPhase | FixedCurrent


@dataclass(frozen=True)
class BranchSegment:
    """Phase interval of a branch between its two switching points."""

    delta_lo: float
    delta_hi: float
    sweetspot: float


def sweetspot(table: CprTable) -> float:
    """Phase ``delta_c`` of maximal CPR slope (maximal resonance frequency)."""
    return table.max_slope()[0]


def fold_segment(table: CprTable, L_loop: float) -> BranchSegment:
    """Connected interval around the sweetspot where ``dPhi_b/ddelta_c > 0``."""
    lo, hi = table.delta_c_range
    lo, hi = lo + _EDGE, hi - _EDGE
    ss = sweetspot(table)
    g = lambda d: FLUX_QUANTUM / math.pi + L_loop * table.derivative(d, 1)
    if g(ss) <= 0:
        raise NoStableBranch("flux response is not increasing at the sweetspot")
    ends = []
    for end in (hi, lo):
        x = np.linspace(ss, end, 2001)
        gx = g(x)
        neg = np.flatnonzero(gx <= 0)
        if neg.size == 0:
            ends.append(end)
        else:
            i = neg[0]
            ends.append(brentq(g, x[i - 1], x[i], xtol=1e-14))
    return BranchSegment(delta_lo=float(ends[1]), delta_hi=float(ends[0]), sweetspot=float(ss))


def switching_segment(table: CprTable, L_loop: float, rule: SwitchingRule = FoldPoint()) -> BranchSegment:
    """Interval of the branch that is traversed before switching under ``rule``."""
    seg = fold_segment(table, L_loop)
    if isinstance(rule, FoldPoint):
        return seg
    if isinstance(rule, FixedPhase):
        lo, hi = max(seg.delta_lo, rule.delta_minus), min(seg.delta_hi, rule.delta_plus)
    elif isinstance(rule, FixedCurrent):
        hi = _current_crossing(table, seg.sweetspot, seg.delta_hi, rule.I_plus, rising=True)
        lo = _current_crossing(table, seg.sweetspot, seg.delta_lo, rule.I_minus, rising=False)
    else:
        raise ValidationError(f"unknown switching rule {rule!r}")
    if not lo < seg.sweetspot < hi:
        raise NoStableBranch("switching rule leaves no interval around the sweetspot")
    return BranchSegment(delta_lo=float(lo), delta_hi=float(hi), sweetspot=seg.sweetspot)


def proportional_switching(table: CprTable, fraction: float) -> FixedCurrent:
    """Premature switching a fixed fraction of the way from the sweetspot current
    to each critical current."""
    if not 0.0 < fraction <= 1.0:
        raise ValidationError("fraction must lie in (0, 1]")
    I_plus, I_minus = table.critical_currents()
    I_ss = float(table.evaluate(sweetspot(table)))
    return FixedCurrent(I_ss + fraction * (I_plus - I_ss), I_ss + fraction * (I_minus - I_ss))


def _current_crossing(table, start, end, level, rising):
    x = np.linspace(start, end, 4001)
    I = np.asarray(table.evaluate(x))
    hit = np.flatnonzero(I >= level) if rising else np.flatnonzero(I <= level)
    if hit.size == 0:
        return end
    i = hit[0]
    if i == 0:
        return start
    return brentq(lambda d: table.evaluate(d) - level, x[i - 1], x[i], xtol=1e-14)


# ---------------------------------------------------------------- branch inversion


class BranchInverse:
    """Maps applied flux to ``delta_c`` on one monotonic segment of a branch."""

    def __init__(self, table: CprTable, L_loop: float, segment: BranchSegment, samples: int = 4001):
        self.table = table
        self.L_loop = L_loop
        self.segment = segment
        self._d = np.linspace(segment.delta_lo, segment.delta_hi, samples)
        self._phi = bias_flux(table, L_loop, self._d)
        if np.any(np.diff(self._phi) <= 0):
            raise NoStableBranch("bias flux is not monotonic on the branch segment")

    @property
    def flux_range(self) -> tuple[float, float]:
        return float(self._phi[0]), float(self._phi[-1])

    def __call__(self, phi_b, branch: int = 0, clamp: bool = False, polish: int = 3):
        target = np.asarray(phi_b, dtype=float) - branch * FLUX_QUANTUM
        lo, hi = self.flux_range
        if not clamp and np.any((target < lo - 1e-12 * FLUX_QUANTUM) | (target > hi + 1e-12 * FLUX_QUANTUM)):
            raise BranchTerminated("applied flux lies beyond the switching points of the branch")
        target_c = np.clip(target, lo, hi)
        d = np.interp(target_c, self._phi, self._d)
        a, b = self.segment.delta_lo, self.segment.delta_hi
        inner = _EDGE
        for _ in range(polish):
            dq = np.clip(d, a + inner, b - inner)
            f = bias_flux(self.table, self.L_loop, dq) - target_c
            fp = FLUX_QUANTUM / math.pi + self.L_loop * np.asarray(self.table.derivative(dq, 1))
            ok = fp > 0
            d = np.where(ok, dq - f / np.where(ok, fp, 1.0), dq)
            d = np.clip(d, a, b)
        return d if np.ndim(d) else float(d)


def delta_c_of_bias(table: CprTable, L_loop: float, phi_b, branch: int = 0,
                    rule: SwitchingRule = FoldPoint()):
    """Constriction phase on fluxoid ``branch`` for the applied flux ``phi_b``.

    The solution is taken on the segment of the branch through the sweetspot
    that is monotonic in flux, so it never hops between branches.
    """
    seg = switching_segment(table, L_loop, rule)
    return BranchInverse(table, L_loop, seg)(phi_b, branch=branch)


# ---------------------------------------------------------------- flux arcs


@dataclass
class FluxArc:
    """One resonance-frequency arc, sampled in ``delta_c``."""

    delta_c: np.ndarray
    bias_flux: np.ndarray
    current: np.ndarray
    L_c: np.ndarray
    omega_0: np.ndarray
    stable_mask: np.ndarray
    accessible_mask: np.ndarray
    ground_mask: np.ndarray
    sweetspot: float
    switch_points: tuple
    branch: int
    table: CprTable = field(repr=False)
    circuit: CircuitParams = field(repr=False)


def flux_arc(table: CprTable, circuit: CircuitParams, rule: SwitchingRule = FoldPoint(),
             n_points: int = 2001, branch: int = 0) -> FluxArc:
    """Resonance frequency along one fluxoid branch.

    Samples the full valid phase range of the CPR.  ``stable_mask`` marks the
    monotonic flux segment around the sweetspot, ``accessible_mask`` the part
    reached before switching under ``rule`` and ``ground_mask`` the stable
    points whose energy is not above that of a neighbouring branch at the same
    applied flux.
    """
    if n_points < 3:
        raise ValidationError("n_points must be at least 3")
    lo, hi = table.delta_c_range
    d = np.linspace(lo + _EDGE, hi - _EDGE, n_points)
    current = np.asarray(table.evaluate(d))
    slope = np.asarray(table.derivative(d, 1))
    phi = FLUX_QUANTUM * d / math.pi + circuit.L_loop * current
    L_c, omega = _frequency_or_nan(circuit.omega_0b, circuit.L_b, slope)

    fold = fold_segment(table, circuit.L_loop)
    seg = switching_segment(table, circuit.L_loop, rule)
    stable = (d >= fold.delta_lo) & (d <= fold.delta_hi)
    accessible = (d >= seg.delta_lo) & (d <= seg.delta_hi)

    energy = 2.0 * np.asarray(table.energy(d)) + 0.5 * circuit.L_loop * current**2
    ground = stable.copy()
    phi_s, e_s = phi[stable], energy[stable]
    for shift in (-1, 1):
        other = phi_s + shift * FLUX_QUANTUM  # neighbour branch n + shift, seen at the same flux
        inside = (phi >= other[0]) & (phi <= other[-1]) & stable
        e_other = np.interp(phi[inside], other, e_s)
        worse = np.zeros_like(stable)
        worse[inside] = energy[inside] > e_other
        ground &= ~worse

    ends = np.array([seg.delta_lo, seg.delta_hi])
    I_ends = np.asarray(table.evaluate(ends))
    phi_ends = FLUX_QUANTUM * ends / math.pi + circuit.L_loop * I_ends + branch * FLUX_QUANTUM
    switch_points = ((float(phi_ends[0]), float(I_ends[0])), (float(phi_ends[1]), float(I_ends[1])))
    return FluxArc(
        delta_c=d,
        bias_flux=phi + branch * FLUX_QUANTUM,
        current=current,
        L_c=L_c,
        omega_0=omega,
        stable_mask=stable,
        accessible_mask=accessible,
        ground_mask=ground,
        sweetspot=fold.sweetspot,
        switch_points=switch_points,
        branch=branch,
        table=table,
        circuit=circuit,
    )


def responsivity_at(table: CprTable, circuit: CircuitParams, delta_c):
    """Flux responsivity ``d omega_0 / d Phi_b`` (rad/s per Wb) at ``delta_c``."""
    d = np.asarray(delta_c, dtype=float)
    s1 = np.asarray(table.derivative(d, 1))
    s2 = np.asarray(table.derivative(d, 2))
    L_c, omega = _frequency_or_nan(circuit.omega_0b, circuit.L_b, s1)
    ratio = 1.0 + L_c / (2.0 * circuit.L_b)
    with np.errstate(divide="ignore", invalid="ignore"):
        d_omega_d_Lc = -omega / (4.0 * circuit.L_b * ratio)
        d_Lc_d_delta = -REDUCED_FLUX_QUANTUM * s2 / s1**2
        d_delta_d_phi = 1.0 / (FLUX_QUANTUM / math.pi + circuit.L_loop * s1)
    out = d_omega_d_Lc * d_Lc_d_delta * d_delta_d_phi
    return out if np.ndim(out) else float(out)


def flux_responsivity(arc: FluxArc):
    """``(omega_0, F)`` along the arc with ``F = d omega_0 / d Phi_b``."""
    return arc.omega_0, responsivity_at(arc.table, arc.circuit, arc.delta_c)


def max_stable_responsivity(arc: FluxArc) -> float:
    """Largest ``|F|`` (rad/s per Wb) over accessible ground-state points."""
    _, F = flux_responsivity(arc)
    use = arc.ground_mask & arc.accessible_mask & np.isfinite(F) & np.isfinite(arc.omega_0)
    if not np.any(use):
        raise NoStableBranch("no accessible ground-state points on the arc")
    return float(np.max(np.abs(F[use])))


# ---------------------------------------------------------------- hysteretic sweeps


@dataclass
class SweepResult:
    bias_flux: np.ndarray
    delta_c: np.ndarray
    fluxoid_index: np.ndarray
    omega_0: np.ndarray
    current: np.ndarray
    jump_locations: np.ndarray
    direction: str


def hysteresis_sweep(table: CprTable, circuit: CircuitParams, phi_b, direction: str = "up",
                     rule: SwitchingRule = FoldPoint(), start_branch: int | None = None) -> SweepResult:
    """Follow the resonance through a monotonic flux sweep with fluxoid jumps.

    ``phi_b`` is either an array of applied fluxes or a ``(start, stop, num)``
    tuple.  The sweep starts on ``start_branch`` (default: the branch whose
    sweetspot is nearest to the first flux value) and switches to the
    neighbouring branch whenever the switching point of ``rule`` is passed.
    """
    if direction not in ("up", "down"):
        raise ValidationError("direction must be 'up' or 'down'")
    if isinstance(phi_b, tuple) and len(phi_b) == 3:
        start, stop, num = phi_b
        lo_f, hi_f = sorted((start, stop))
        grid = np.linspace(lo_f, hi_f, int(num))
        if direction == "down":
            grid = grid[::-1]
    else:
        grid = np.asarray(phi_b, dtype=float)
        steps = np.diff(grid)
        if direction == "up" and np.any(steps < 0) or direction == "down" and np.any(steps > 0):
            raise ValidationError("flux values must be monotonic in the sweep direction")

    seg = switching_segment(table, circuit.L_loop, rule)
    inverse = BranchInverse(table, circuit.L_loop, seg)
    phi_lo, phi_hi = inverse.flux_range
    if phi_hi - phi_lo < FLUX_QUANTUM:
        raise NoStableBranch("switching points leave a flux gap between neighbouring branches")
    phi_ss = bias_flux(table, circuit.L_loop, seg.sweetspot)

    if start_branch is None:
        n = int(math.floor((grid[0] - phi_ss) / FLUX_QUANTUM + 0.5))
    else:
        n = int(start_branch)
        if not phi_lo + n * FLUX_QUANTUM <= grid[0] <= phi_hi + n * FLUX_QUANTUM:
            raise BranchTerminated("the first flux value is not on the requested start branch")
    indices = np.empty(grid.size, dtype=int)
    jumps = []
    for i, p in enumerate(grid):
        moved = False
        while p > phi_hi + n * FLUX_QUANTUM:
            n += 1
            moved = True
        while p < phi_lo + n * FLUX_QUANTUM:
            n -= 1
            moved = True
        if moved and i > 0:
            jumps.append(p)
        indices[i] = n
    # grid points lie inside their branch interval, clamping only absorbs rounding
    d = np.asarray(inverse(grid - indices * FLUX_QUANTUM, clamp=True))
    current = np.asarray(table.evaluate(d))
    slope = np.asarray(table.derivative(np.clip(d, *_inner(table)), 1))
    _, omega = _frequency_or_nan(circuit.omega_0b, circuit.L_b, slope)
    return SweepResult(
        bias_flux=grid,
        delta_c=d,
        fluxoid_index=indices,
        omega_0=omega,
        current=current,
        jump_locations=np.asarray(jumps),
        direction=direction,
    )


def _inner(table):
    lo, hi = table.delta_c_range
    return lo + _EDGE, hi - _EDGE

