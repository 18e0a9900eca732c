"""Current-phase relations of a single constriction.

Two models are provided: a sinusoidal junction in series with a linear
inductance (solved in closed form along its branch) and the width-resolved
diode model whose current density is found by continuation over a grid in
transverse position and phase.  Both are turned into a :class:`CprTable`, a
quintic-spline representation expressed in the zero-shifted phase ``delta_c``.
"""

from __future__ import annotations

import functools
import math
from dataclasses import dataclass

import numpy as np
from scipy.interpolate import BSpline, make_interp_spline
from scipy.optimize import brentq

from .constants import FLUX_QUANTUM
from .errors import (
    EmptyValidRange,
    GridMismatch,
    NoSolutionOnBranch,
    NonFinite,
    OutOfRange,
    SeedFailure,
    ValidationError,
)
from .params import DiodeModelParams, HomogeneousCprParams

# ---------------------------------------------------------------- homogeneous


def _homogeneous_fold(screening: float) -> tuple[float, float]:
    """Junction phase and total phase at the fold of the branch through zero."""
    if screening <= 1.0:
        return math.inf, math.inf
    phi = math.acos(-1.0 / screening)
    return phi, phi + screening * math.sin(phi)


def cpr_homogeneous(I0: float, L_lin: float, delta_c):
    """Supercurrent of a sinusoidal junction in series with ``L_lin``.

    Solves ``I = I0 sin(delta_c - 2 pi L_lin I / flux_quantum)`` on the branch
    connected to ``I(0) = 0``.  Phases beyond the fold of that branch raise
    :class:`NoSolutionOnBranch`.
    """
    params = HomogeneousCprParams(I0, L_lin)
    ell = params.screening
    delta = np.asarray(delta_c, dtype=float)
    if not np.all(np.isfinite(delta)):
        raise NonFinite("delta_c must be finite")
    phi_fold, delta_fold = _homogeneous_fold(ell)
    if np.any(np.abs(delta) > delta_fold):
        raise NoSolutionOnBranch(
            f"|delta_c| exceeds the branch fold at {delta_fold:.6f} rad"
        )
    out = np.empty_like(delta)
    for idx, d in np.ndenumerate(delta):
        out[idx] = I0 * math.sin(_junction_phase(d, ell, phi_fold))
    return out if out.ndim else float(out)


def _junction_phase(delta: float, ell: float, phi_fold: float) -> float:
    """Junction phase ``phi`` with ``phi + ell sin(phi) = delta`` on the main branch."""
    if delta == 0.0 or ell == 0.0:
        return delta
    f = lambda phi: phi + ell * math.sin(phi) - delta
    if math.isfinite(phi_fold):
        lo, hi = -phi_fold, phi_fold
        if abs(abs(delta) - (phi_fold + ell * math.sin(phi_fold))) < 1e-15:
            return math.copysign(phi_fold, delta)
    else:
        lo, hi = delta - ell - 1.0, delta + ell + 1.0
    phi = brentq(f, lo, hi, xtol=1e-15, rtol=4 * np.finfo(float).eps, maxiter=200)
    # one Newton polish step
    slope = 1.0 + ell * math.cos(phi)
    if slope > 1e-6:
        phi -= f(phi) / slope
    return phi


def homogeneous_fold_phase(I0: float, L_lin: float) -> float:
    """Largest ``delta_c`` reachable on the branch through zero (inf if single valued)."""
    return _homogeneous_fold(HomogeneousCprParams(I0, L_lin).screening)[1]


# ---------------------------------------------------------------- diode model


@dataclass(frozen=True)
class ScanGrid:
    """Continuation grid for the current-density scan."""

    z_step: float = 0.01
    delta_step: float = 0.05
    z_overscan: float = 0.02
    delta_overscan: float = 0.15
    discard_tol: float = 0.01
    residual_tol: float = 1e-10
    bracket_width: float = 4.0
    max_refine: int = 4

    def __post_init__(self):
        for name in ("z_step", "delta_step", "discard_tol", "residual_tol", "bracket_width"):
            value = getattr(self, name)
            if not math.isfinite(value) or value <= 0:
                raise ValidationError(f"ScanGrid.{name} must be positive and finite")
        ratio = 0.5 / self.z_step
        if abs(ratio - round(ratio)) > 1e-9:
            raise GridMismatch("z_step must divide the half width 1/2 evenly")

    def z_nodes(self) -> np.ndarray:
        half = int(round(0.5 / self.z_step))
        extra = int(math.ceil(self.z_overscan / self.z_step - 1e-9))
        k = np.arange(-(half + extra), half + extra + 1)
        return k * self.z_step

    def delta_nodes(self) -> np.ndarray:
        m_max = int(math.ceil((math.pi + self.delta_overscan) / self.delta_step - 1e-9))
        m = np.arange(-m_max, m_max + 1)
        return m * self.delta_step


DEFAULT_GRID = ScanGrid()


@dataclass(frozen=True)
class CurrentDensityScan:
    """Normalized current density on the (z, delta0) grid.

    ``j[k, m]`` is the density at ``z[k]`` and ``delta0[m]``; entries with
    ``mask[k, m] == False`` were not reached by the continuation.
    """

    z: np.ndarray
    delta0: np.ndarray
    j: np.ndarray
    mask: np.ndarray
    params: DiodeModelParams
    grid: ScanGrid

    def residual(self) -> np.ndarray:
        zz = self.z[:, None]
        r = density_residual(self.j, zz, self.delta0[None, :], self.params)[0]
        return np.where(self.mask, r, np.nan)

    @property
    def integration_rows(self) -> np.ndarray:
        return np.abs(self.z) <= 0.5 + 1e-12

    @property
    def column_defined(self) -> np.ndarray:
        return np.all(self.mask[self.integration_rows], axis=0)


def density_residual(j, z, delta0, p: DiodeModelParams):
    """Residual of the self-consistency equation and its partial derivatives.

    Returns ``(R, dR/dj, dR/dz, dR/ddelta0)``.
    """
    amp = 1.0 - 2.0 * p.epsilon * z
    arg = delta0 + p.delta_B * (1.0 + p.b * z) * z - p.delta_ell * j
    s = np.sin(arg)
    c = np.cos(arg)
    res = amp * s - j
    d_j = -amp * p.delta_ell * c - 1.0
    d_z = -2.0 * p.epsilon * s + amp * c * p.delta_B * (1.0 + 2.0 * p.b * z)
    d_delta = amp * c
    return res, d_j, d_z, d_delta


def _newton(pred, z, delta0, p, grid, iters=12):
    """Vectorized Newton iteration started from the prediction.

    Returns the roots and a boolean array of converged entries.  Iterates are
    confined to the bracket of width ``grid.bracket_width`` centred on the
    prediction.
    """
    half = 0.5 * grid.bracket_width
    lo, hi = pred - half, pred + half
    amp = 1.0 - 2.0 * p.epsilon * z
    base = delta0 + p.delta_B * (1.0 + p.b * z) * z
    amp_ell = amp * p.delta_ell
    x = pred.copy()
    for it in range(iters + 1):
        arg = base - p.delta_ell * x
        r = amp * np.sin(arg) - x
        small = np.abs(r) < grid.residual_tol
        dr = -amp_ell * np.cos(arg) - 1.0
        x = np.clip(x - r / dr, lo, hi)
        if small.all():
            # the step just taken is a final polish on converged entries
            break
    r = amp * np.sin(base - p.delta_ell * x) - x
    return x, np.abs(r) < grid.residual_tol


def _bracketed_roots(pred, z, delta0, p, grid, samples=401):
    """Fallback: bracket the root nearest each prediction and refine by Brent's method.

    The residual is sampled on a uniform grid spanning the bracket of width
    ``grid.bracket_width`` centred on the prediction; the sign change closest
    to the prediction is refined.  Entries without a sign change return NaN.
    """
    half = 0.5 * grid.bracket_width
    offsets = np.linspace(-half, half, samples)
    xs = pred[:, None] + offsets[None, :]
    fs = density_residual(xs, z[:, None], delta0[:, None], p)[0]
    change = np.signbit(fs[:, :-1]) != np.signbit(fs[:, 1:])
    centre = 0.5 * (offsets[:-1] + offsets[1:])
    dist = np.where(change, np.abs(centre)[None, :], np.inf)
    pick = np.argmin(dist, axis=1)
    roots = np.full(pred.shape, np.nan)
    for i, c in enumerate(pick):
        if not np.isfinite(dist[i, c]):
            continue
        f = lambda x, i=i: density_residual(x, z[i], delta0[i], p)[0]
        roots[i] = brentq(f, xs[i, c], xs[i, c + 1], xtol=1e-15, rtol=4 * np.finfo(float).eps)
    return roots


def _solve(pred, z, delta0, p, grid):
    z = np.broadcast_to(z, pred.shape)
    delta0 = np.broadcast_to(delta0, pred.shape)
    x, ok = _newton(pred, z, delta0, p, grid)
    fail = np.flatnonzero(~ok)
    if fail.size:
        roots = _bracketed_roots(pred[fail], z[fail], delta0[fail], p, grid)
        found = np.isfinite(roots)
        idx = fail[found]
        x[idx] = roots[found]
        ok[idx] = np.abs(density_residual(x[idx], z[idx], delta0[idx], p)[0]) < grid.residual_tol
    return x, ok


def _advance(jp, z, d_from, d_to, p, grid, depth=0):
    """Continue roots ``jp`` at ``(z, d_from)`` to ``(z, d_to)`` along ``delta0``.

    A step whose root disagrees with the gradient prediction by more than
    ``grid.discard_tol`` is retried in two halves, down to ``2**grid.max_refine``
    substeps.  Returns the new roots and the rows that could be followed.
    """
    h = d_to - d_from
    _, dj, _, dd = density_residual(jp, z, d_from, p)
    slope0 = -dd / dj
    pred = jp + h * slope0
    root, ok = _solve(pred, z, np.full(jp.shape, d_to), p, grid)
    _, dj1, _, dd1 = density_residual(root, z, d_to, p)
    expected = jp + h * 0.5 * (slope0 - dd1 / dj1)
    ok &= np.abs(root - expected) <= grid.discard_tol
    if depth < grid.max_refine and not np.all(ok):
        retry = np.flatnonzero(~ok)
        mid = 0.5 * (d_from + d_to)
        half, ok_half = _advance(jp[retry], z[retry], d_from, mid, p, grid, depth + 1)
        keep = np.flatnonzero(ok_half)
        if keep.size:
            full, ok_full = _advance(half[keep], z[retry][keep], mid, d_to, p, grid, depth + 1)
            idx = retry[keep]
            root[idx] = full
            ok[idx] = ok_full
    return root, ok


def _advance_z(jp, z_from, z_to, p, grid, depth=0):
    """Scalar counterpart of :func:`_advance` along ``z`` at ``delta0 = 0``."""
    h = z_to - z_from
    _, dj, dz, _ = density_residual(jp, z_from, 0.0, p)
    slope0 = -dz / dj
    pred = jp + h * slope0
    root, ok = _solve(np.array([pred]), np.array([z_to]), 0.0, p, grid)
    root, ok = float(root[0]), bool(ok[0])
    if ok:
        _, dj1, dz1, _ = density_residual(root, z_to, 0.0, p)
        ok = abs(root - (jp + h * 0.5 * (slope0 - dz1 / dj1))) <= grid.discard_tol
    if not ok and depth < grid.max_refine:
        mid = 0.5 * (z_from + z_to)
        half, ok_half = _advance_z(jp, z_from, mid, p, grid, depth + 1)
        if ok_half:
            return _advance_z(half, mid, z_to, p, grid, depth + 1)
    return root, ok


def scan_current_density(params: DiodeModelParams, grid: ScanGrid = DEFAULT_GRID) -> CurrentDensityScan:
    """Track the normalized current density from the seed ``j(0, 0) = 0``.

    The seed column ``delta0 = 0`` is continued in ``z`` in both directions,
    then every row is continued in ``delta0`` in both directions.  A root is
    rejected when it differs from the gradient prediction by more than
    ``grid.discard_tol`` even after step refinement; the remainder of that row
    (or of the seed column) is then left undefined.
    """
    p = params
    z = grid.z_nodes()
    d = grid.delta_nodes()
    nz, nd = z.size, d.size
    kz0, md0 = nz // 2, nd // 2
    j = np.zeros((nz, nd))
    mask = np.zeros((nz, nd), dtype=bool)

    seed_res = density_residual(0.0, 0.0, 0.0, p)[0]
    if not np.isfinite(seed_res) or abs(seed_res) >= grid.residual_tol:
        raise SeedFailure("seed j(0, 0) = 0 does not satisfy the residual tolerance")
    mask[kz0, md0] = True

    # seed column, scanned in z
    for step in (1, -1):
        k = kz0
        while 0 <= k + step < nz:
            root, ok = _advance_z(j[k, md0], z[k], z[k + step], p, grid)
            if not ok:
                break
            k += step
            j[k, md0] = root
            mask[k, md0] = True

    # all rows together, scanned in delta0
    for step in (1, -1):
        active = mask[:, md0].copy()
        m = md0
        while 0 <= m + step < nd and np.any(active):
            rows = np.flatnonzero(active)
            root, ok = _advance(j[rows, m], z[rows], d[m], d[m + step], p, grid)
            m += step
            good = rows[ok]
            j[good, m] = root[ok]
            mask[good, m] = True
            active[rows[~ok]] = False
    j[~mask] = np.nan
    return CurrentDensityScan(z=z, delta0=d, j=j, mask=mask, params=p, grid=grid)


def _trapezoid_symmetric(values: np.ndarray, step: float) -> np.ndarray:
    """Trapezoid rule over rows of a grid symmetric about its middle row.

    Mirror pairs are summed first so that odd integrands integrate to an
    exactly odd result.
    """
    n = values.shape[0]
    w = np.full(n, step)
    w[0] = w[-1] = 0.5 * step
    paired = 0.5 * (values + values[::-1])
    # plain row sums; a BLAS product may round mirrored columns differently
    return np.sum(w[:, None] * paired, axis=0)


# ---------------------------------------------------------------- CPR table


@dataclass(frozen=True, eq=False)
class CprTable:
    """Spline representation of a current-phase relation.

    ``delta0`` and ``current`` are the nodes (in amperes) in the unshifted
    phase; ``zero_shift`` is the phase of the zero crossing nearest the
    origin, so the shifted phase is ``delta_c = delta0 - zero_shift``.
    """

    delta0: np.ndarray
    current: np.ndarray
    zero_shift: float
    spline: BSpline
    scale: float
    label: str = ""

    @classmethod
    def from_samples(cls, delta0, current, scale=None, label="") -> "CprTable":
        delta0 = np.asarray(delta0, dtype=float)
        current = np.asarray(current, dtype=float)
        if delta0.ndim != 1 or delta0.shape != current.shape:
            raise GridMismatch("delta0 and current must be 1-d arrays of equal length")
        if delta0.size < 7:
            raise EmptyValidRange("a CPR table needs at least 7 nodes")
        if not (np.all(np.isfinite(delta0)) and np.all(np.isfinite(current))):
            raise NonFinite("CPR samples must be finite")
        if np.any(np.diff(delta0) <= 0):
            raise GridMismatch("delta0 must be strictly increasing")
        spline = make_interp_spline(delta0, current, k=5)
        if scale is None:
            scale = float(np.max(np.abs(current))) or 1.0
        zero = _zero_shift(delta0, current, spline)
        for arr in (delta0, current):
            arr.setflags(write=False)
        return cls(delta0=delta0, current=current, zero_shift=zero, spline=spline, scale=scale, label=label)

    # ranges --------------------------------------------------------------
    @property
    def valid_range(self) -> tuple[float, float]:
        """Range of defined values in the unshifted phase."""
        return float(self.delta0[0]), float(self.delta0[-1])

    @property
    def delta_c_range(self) -> tuple[float, float]:
        lo, hi = self.valid_range
        return lo - self.zero_shift, hi - self.zero_shift

    def _to_delta0(self, delta_c, strict: bool):
        d = np.asarray(delta_c, dtype=float) + self.zero_shift
        lo, hi = self.valid_range
        tol = 1e-12 * max(1.0, abs(lo), abs(hi))
        if strict:
            bad = (d <= lo) | (d >= hi)
        else:
            bad = (d < lo - tol) | (d > hi + tol)
        if np.any(bad | ~np.isfinite(d)):
            raise OutOfRange(
                f"delta_c outside the valid range {self.delta_c_range} of the CPR table"
            )
        return d

    # evaluation ------------------------------------------------------------
    def __call__(self, delta_c):
        return self.evaluate(delta_c)

    def evaluate(self, delta_c):
        d = self._to_delta0(delta_c, strict=False)
        out = self.spline(d)
        return out if np.ndim(out) else float(out)

    def derivative(self, delta_c, order: int = 1):
        if order == 0:
            return self.evaluate(delta_c)
        if order < 0 or order > 5:
            raise ValidationError("derivative order must be between 0 and 5")
        d = self._to_delta0(delta_c, strict=True)
        out = self.spline(d, nu=order)
        return out if np.ndim(out) else float(out)

    def energy(self, delta_c):
        """Josephson-type energy ``(flux_quantum / 2 pi) * integral_0^delta_c I``."""
        d = self._to_delta0(delta_c, strict=False)
        anti = self._antiderivative
        out = (FLUX_QUANTUM / (2 * math.pi)) * (anti(d) - anti(self.zero_shift))
        return out if np.ndim(out) else float(out)

    @functools.cached_property
    def _antiderivative(self):
        return self.spline.antiderivative()

    # derived quantities ------------------------------------------------------
    def critical_currents(self) -> tuple[float, float]:
        """Extremal supercurrents ``(I_plus, I_minus)`` over the valid range."""
        lo, hi = self.valid_range
        deriv = self.spline.derivative()
        candidates = [lo, hi]
        x = self.delta0
        dvals = deriv(x)
        for a, b_, fa, fb in zip(x[:-1], x[1:], dvals[:-1], dvals[1:]):
            if fa == 0.0:
                candidates.append(a)
            elif fa * fb < 0:
                candidates.append(brentq(deriv, a, b_, xtol=1e-14))
        values = self.spline(np.array(candidates))
        return float(values.max()), float(values.min())

    def max_slope(self) -> tuple[float, float]:
        """Phase ``delta_c`` of the largest slope and the slope itself."""
        # stay clear of the spline end intervals, where end effects dominate
        margin = min(3, (self.delta0.size - 3) // 2)
        lo, hi = self.delta0[margin], self.delta0[-1 - margin]
        x = np.linspace(lo, hi, 8 * self.delta0.size)
        d1 = self.spline(x, nu=1)
        i = int(np.argmax(d1))
        second = self.spline.derivative(2)
        best = x[i]
        if 0 < i < x.size - 1:
            a, b_ = x[i - 1], x[i + 1]
            if second(a) * second(b_) < 0:
                best = brentq(second, a, b_, xtol=1e-14)
        return float(best - self.zero_shift), float(self.spline(best, nu=1))


def _zero_shift(delta0, current, spline) -> float:
    """Zero crossing of the CPR nearest ``delta0 = 0`` (bracketed root search)."""
    m0 = int(np.argmin(np.abs(delta0)))
    if current[m0] == 0.0:
        return float(delta0[m0])
    best = None
    # bracket on spline values: near zero they may differ in sign from the samples
    sign = np.sign(spline(delta0))
    for m in range(delta0.size - 1):
        if sign[m] == 0.0:
            root = float(delta0[m])
        elif sign[m] * sign[m + 1] < 0:
            root = brentq(spline, delta0[m], delta0[m + 1], xtol=1e-15, rtol=4 * np.finfo(float).eps)
        else:
            continue
        if best is None or abs(root) < abs(best):
            best = root
    if best is None:
        raise EmptyValidRange("the CPR does not cross zero inside its valid range")
    return float(best)


@functools.lru_cache(maxsize=256)
def cpr_diode(params: DiodeModelParams, grid: ScanGrid = DEFAULT_GRID) -> CprTable:
    """CPR of the width-resolved constriction model, cached per parameter set."""
    scan = scan_current_density(params, grid)
    return table_from_scan(scan)


def table_from_scan(scan: CurrentDensityScan) -> CprTable:
    rows = scan.integration_rows
    defined = scan.column_defined
    md0 = scan.delta0.size // 2
    if not defined[md0]:
        raise EmptyValidRange("the current density is undefined at delta0 = 0")
    lo = md0
    while lo > 0 and defined[lo - 1]:
        lo -= 1
    hi = md0
    while hi < defined.size - 1 and defined[hi + 1]:
        hi += 1
    cols = slice(lo, hi + 1)
    if hi - lo + 1 < 7:
        raise EmptyValidRange("too few phase nodes with a fully defined current density")
    jj = scan.j[rows][:, cols]
    integral = _trapezoid_symmetric(jj, scan.grid.z_step)
    p = scan.params
    return CprTable.from_samples(scan.delta0[cols], p.I00 * integral, scale=p.I00, label="diode")


def homogeneous_table(I0: float, L_lin: float = 0.0, step: float = 0.01, overscan: float = 0.15) -> CprTable:
    """CPR table of the homogeneous model sampled on a uniform phase grid.

    For a multi-valued relation the grid stops one step short of the fold.
    """
    fold = homogeneous_fold_phase(I0, L_lin)
    limit = min(math.pi + overscan, fold - step)
    m = int(math.floor(limit / step + 1e-9))
    delta = np.arange(-m, m + 1) * step
    current = np.asarray(cpr_homogeneous(I0, L_lin, delta))
    # exact oddness on the symmetric grid
    current = 0.5 * (current - current[::-1])
    return CprTable.from_samples(delta, current, scale=I0, label="homogeneous")


def cpr_derivative(table: CprTable, delta_c, order: int = 1):
    """``order``-th derivative of the CPR with respect to ``delta_c``."""
    return table.derivative(delta_c, order)


def cpr_value(table: CprTable, delta_c):
    return table.evaluate(delta_c)
