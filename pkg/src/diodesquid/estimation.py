"""Data reduction and parameter estimation.

The pipeline runs from raw resonance-frequency sweeps to model parameters:
sweeps are split into flux arcs at the fluxoid jumps, the bias coil is
calibrated from the sweetspot spacing, the CPR model is fitted to the arcs of
all fields at once, Kerr data are matched with a small CPR correction, and
the field dependence of the circuit inductances is inferred from reference
resonators.
"""

from __future__ import annotations

import math
import warnings
from dataclasses import dataclass, field
from typing import Mapping, Sequence

import numpy as np
from scipy.optimize import brentq, least_squares

from .constants import FLUX_QUANTUM
from .cpr import DEFAULT_GRID, CprTable, ScanGrid, cpr_diode
from .errors import (
    AmbiguousJumps,
    CapExceeded,
    DiodeSquidError,
    FitDivergence,
    GridMismatch,
    InsufficientArcs,
    NonConvergence,
    NonFinite,
    ParameterAtBound,
    TableRangeExceeded,
    ValidationError,
)
from .kerr import DEFAULT_CORRECTION_CAP, PolynomialCorrection, apply_correction, kerr_along
from .params import PUMP_REFERENCE_OMEGA, CircuitParams, DiodeModelParams, attenuation
from .squid import BranchInverse, _frequency_or_nan, _inner, bias_flux, fold_segment

UP, DOWN = 1, -1


# ---------------------------------------------------------------- raw sweeps and arcs


def _direction_codes(direction, n):
    if isinstance(direction, str):
        direction = [direction] * n
    out = []
    for d in direction:
        if isinstance(d, str):
            key = d.strip().lower()
            if key in ("up", "+", "+1", "1"):
                out.append(UP)
            elif key in ("down", "-", "-1"):
                out.append(DOWN)
            else:
                raise ValidationError(f"unknown sweep direction {d!r}")
        elif d in (1, -1):
            out.append(int(d))
        else:
            raise ValidationError(f"unknown sweep direction {d!r}")
    return np.asarray(out, dtype=int)


@dataclass(frozen=True, eq=False)
class RawSweep:
    """Resonance frequencies measured along one or more bias-current sweeps."""

    field: float
    bias_current: np.ndarray
    omega_0: np.ndarray
    direction: np.ndarray

    def __post_init__(self):
        I = np.asarray(self.bias_current, dtype=float)
        w = np.asarray(self.omega_0, dtype=float)
        d = _direction_codes(self.direction, I.size)
        if I.ndim != 1 or I.shape != w.shape or d.shape != I.shape:
            raise GridMismatch("bias_current, omega_0 and direction must have equal length")
        if not (np.all(np.isfinite(I)) and np.all(np.isfinite(w)) and math.isfinite(self.field)):
            raise NonFinite("sweep data must be finite")
        for start, stop in _runs(d):
            steps = np.diff(I[start:stop]) * d[start]
            if np.any(steps < 0):
                raise ValidationError("bias current must be monotone within each sweep direction")
        object.__setattr__(self, "bias_current", I)
        object.__setattr__(self, "omega_0", w)
        object.__setattr__(self, "direction", d)

    def __len__(self):
        return self.bias_current.size


def _runs(direction):
    """``(start, stop)`` slices of constant sweep direction."""
    edges = np.flatnonzero(np.diff(direction) != 0) + 1
    bounds = np.concatenate(([0], edges, [direction.size]))
    return list(zip(bounds[:-1], bounds[1:]))


@dataclass(frozen=True, eq=False)
class ArcDataset:
    """Sweep data with each point assigned to a flux arc.

    ``jumps`` holds the indices ``i`` at which the point ``i`` lies on a new
    arc relative to point ``i - 1``.  After calibration ``I_b0`` is the bias
    current per flux quantum and ``delta_phi_b`` the flux offset, so that the
    applied flux is ``Phi_b = flux_quantum I_b / I_b0 - delta_phi_b``.
    """

    field: float
    bias_current: np.ndarray
    omega_0: np.ndarray
    direction: np.ndarray
    arc_index: np.ndarray
    jumps: tuple
    sweetspot_currents: np.ndarray = field(default_factory=lambda: np.zeros(0))
    sweetspot_arcs: np.ndarray = field(default_factory=lambda: np.zeros(0, dtype=int))
    I_b0: float | None = None
    delta_phi_b: float | None = None

    @property
    def arcs(self) -> np.ndarray:
        return np.unique(self.arc_index)

    @property
    def calibrated(self) -> bool:
        return self.I_b0 is not None and self.delta_phi_b is not None

    def applied_flux(self, delta_phi_b: float | None = None) -> np.ndarray:
        self._require_calibration()
        offset = self.delta_phi_b if delta_phi_b is None else delta_phi_b
        return FLUX_QUANTUM * self.bias_current / self.I_b0 - offset

    def shifted_flux(self, delta_phi_b: float | None = None) -> np.ndarray:
        """Flux with all arcs moved onto arc 0, ``Phi_b - n flux_quantum``."""
        return self.applied_flux(delta_phi_b) - self.arc_index * FLUX_QUANTUM

    def with_calibration(self, I_b0, delta_phi_b, sweetspot_currents=None, sweetspot_arcs=None):
        return ArcDataset(
            field=self.field,
            bias_current=self.bias_current,
            omega_0=self.omega_0,
            direction=self.direction,
            arc_index=self.arc_index,
            jumps=self.jumps,
            sweetspot_currents=self.sweetspot_currents if sweetspot_currents is None else np.asarray(sweetspot_currents),
            sweetspot_arcs=self.sweetspot_arcs if sweetspot_arcs is None else np.asarray(sweetspot_arcs, dtype=int),
            I_b0=float(I_b0),
            delta_phi_b=float(delta_phi_b),
        )

    def _require_calibration(self):
        if not self.calibrated:
            raise ValidationError("the arc dataset has not been calibrated")


def _local_median(values, valid, half_window):
    out = np.full(values.size, np.nan)
    for i in np.flatnonzero(valid):
        lo, hi = max(0, i - half_window), min(values.size, i + half_window + 1)
        sel = valid[lo:hi].copy()
        sel[i - lo] = False
        if np.any(sel):
            out[i] = np.median(values[lo:hi][sel])
    return out


def _noise_floor(step, valid):
    """Robust standard deviation of the point-to-point noise in ``step``."""
    both = valid[1:] & valid[:-1]
    if not np.any(both):
        return 0.0
    second = np.abs(step[1:] - step[:-1])[both]
    return float(1.4826 * np.median(second) / math.sqrt(3.0))


def detect_jumps(sweep: RawSweep, threshold: float, half_window: int = 10) -> np.ndarray:
    """Indices ``i`` where ``|omega_0[i] - omega_0[i-1]|`` exceeds ``threshold``
    times the local median step (never less than the noise floor)."""
    step = np.diff(sweep.omega_0)
    valid = sweep.direction[1:] == sweep.direction[:-1]
    size = np.abs(step)
    local = _local_median(size, valid, half_window)
    scale = np.maximum(np.nan_to_num(local, nan=0.0), _noise_floor(step, valid))
    hit = valid & (size > threshold * scale) & (scale > 0)
    return np.flatnonzero(hit) + 1


def _override_for(overrides, field_value):
    if overrides is None:
        return None
    if isinstance(overrides, Mapping):
        for key, value in overrides.items():
            if math.isclose(float(key), field_value, rel_tol=0.0, abs_tol=1e-9):
                return value
        return None
    return overrides


def segment_arcs(sweep: RawSweep, threshold: float = 5.0, confirm: float = 10.0,
                 half_window: int = 10, overrides=None) -> ArcDataset:
    """Assign every point of ``sweep`` to a flux arc.

    A jump is where the frequency step exceeds ``threshold`` times the local
    median step.  Detections at ``threshold`` and ``confirm`` must agree;
    otherwise :class:`AmbiguousJumps` asks for an explicit override, given as
    a list of jump indices or a mapping from field to such a list.  The arc
    index moves by +1 at jumps of an up-sweep and by -1 in a down-sweep.
    """
    manual = _override_for(overrides, sweep.field)
    if manual is not None:
        jumps = np.unique(np.asarray(list(manual), dtype=int))
        if jumps.size and (jumps.min() < 1 or jumps.max() >= len(sweep)):
            raise ValidationError("override jump indices lie outside the sweep")
    else:
        low = detect_jumps(sweep, threshold, half_window)
        high = detect_jumps(sweep, confirm, half_window)
        if not np.array_equal(low, high):
            diff = sorted(set(low.tolist()) ^ set(high.tolist()))
            raise AmbiguousJumps(
                f"jump detection at field {sweep.field:g} T differs between {threshold:g}x and "
                f"{confirm:g}x the median step at indices {diff}; supply an override"
            )
        jumps = low
    index = np.zeros(len(sweep), dtype=int)
    is_jump = np.zeros(len(sweep), dtype=bool)
    is_jump[jumps] = True
    n = 0
    for i in range(1, len(sweep)):
        if is_jump[i]:
            n += sweep.direction[i]
        index[i] = n
    index -= index.min()
    return ArcDataset(
        field=float(sweep.field),
        bias_current=sweep.bias_current,
        omega_0=sweep.omega_0,
        direction=sweep.direction,
        arc_index=index,
        jumps=tuple(int(j) for j in jumps),
    )


# ---------------------------------------------------------------- bias calibration


def arc_sweetspot(current, omega, window: float = 0.15, iterations: int = 4, span: float | None = None):
    """Sweetspot current of one arc, or ``None`` if the maximum is not inside.

    The derivative ``d omega_0 / d I_b`` near the maximum is modelled as a
    linear function and its zero taken; this is a quadratic least-squares fit
    of ``omega_0`` in a window of ``+-window`` times the arc span.  Passing the
    span of a complete arc keeps the window identical for arcs cut short by
    the ends of the sweep, so that skewed arcs are all biased alike.
    """
    current = np.asarray(current, dtype=float)
    omega = np.asarray(omega, dtype=float)
    if current.size < 7:
        return None
    lo, hi = float(current.min()), float(current.max())
    if span is None:
        span = hi - lo
    if span <= 0 or hi <= lo:
        return None
    centre = float(current[np.argmax(omega)])
    vertex = None
    for _ in range(iterations):
        sel = np.abs(current - centre) <= window * span
        if np.count_nonzero(sel) < 5:
            return None
        x = (current[sel] - centre) / span
        if np.ptp(x) <= 0:
            return None
        c2, c1, _ = np.polyfit(x, omega[sel], 2)
        if c2 >= 0:
            return None
        vertex = centre - 0.5 * c1 / c2 * span
        if not lo < vertex < hi or abs(vertex - centre) > window * span:
            return None
        centre = vertex
    # the final window must lie inside the arc, otherwise the fit is one-sided
    edge = window * span
    if vertex is None or not lo + edge < vertex < hi - edge:
        return None
    return float(vertex)


def _sweetspots(arcs: ArcDataset, window: float):
    numbers, currents = [], []
    spans = [np.ptp(arcs.bias_current[arcs.arc_index == n]) for n in arcs.arcs]
    full = float(max(spans)) if spans else None
    for n in arcs.arcs:
        sel = arcs.arc_index == n
        v = arc_sweetspot(arcs.bias_current[sel], arcs.omega_0[sel], window, span=full)
        if v is not None:
            numbers.append(int(n))
            currents.append(v)
    return np.asarray(numbers, dtype=int), np.asarray(currents, dtype=float)


def calibrate_bias(arcs: ArcDataset, window: float = 0.15) -> tuple[float, float]:
    """``(I_b0, delta_phi_b)`` from the sweetspot currents of the arcs.

    ``I_b0`` is the mean sweetspot spacing per arc number; the offset places
    the sweetspots at ``Phi_b = n flux_quantum`` on average.
    """
    numbers, currents = _sweetspots(arcs, window)
    return _calibration(numbers, currents)


def _calibration(numbers, currents):
    if numbers.size < 2:
        raise InsufficientArcs("at least two arcs with a detectable sweetspot are required")
    order = np.argsort(numbers)
    numbers, currents = numbers[order], currents[order]
    I_b0 = (currents[-1] - currents[0]) / (numbers[-1] - numbers[0])
    if not I_b0 > 0:
        raise ValidationError("sweetspot currents do not increase with the arc number")
    delta_phi_b = FLUX_QUANTUM * float(np.mean(currents / I_b0 - numbers))
    return float(I_b0), float(delta_phi_b)


def calibrate(arcs: ArcDataset, window: float = 0.15) -> ArcDataset:
    """Copy of ``arcs`` carrying the bias calibration and the sweetspot currents."""
    numbers, currents = _sweetspots(arcs, window)
    I_b0, offset = _calibration(numbers, currents)
    return arcs.with_calibration(I_b0, offset, currents, numbers)


# ---------------------------------------------------------------- arc forward model


def arc_model(table: CprTable, circuit: CircuitParams, shifted_flux, samples: int = 2001):
    """``(delta_c, omega_0)`` on branch 0 at the given flux.

    Points outside the monotonic segment of the branch are clamped to its
    ends, since measured arcs end before the model folds.
    """
    seg = fold_segment(table, circuit.L_loop)
    inverse = BranchInverse(table, circuit.L_loop, seg, samples=samples)
    d = np.asarray(inverse(np.asarray(shifted_flux, dtype=float), clamp=True))
    slope = np.asarray(table.derivative(np.clip(d, *_inner(table)), 1))
    _, omega = _frequency_or_nan(circuit.omega_0b, circuit.L_b, slope)
    return d, omega


def model_sweetspot_flux(table: CprTable, circuit: CircuitParams) -> float:
    seg = fold_segment(table, circuit.L_loop)
    return float(bias_flux(table, circuit.L_loop, seg.sweetspot))


# ---------------------------------------------------------------- global arc fit

SHARED = ("I00", "epsilon", "b", "deltaB_per_tesla")
PER_FIELD = ("delta_phi_b", "delta_ell")
_UNIT = {"I00": 1e-6, "epsilon": 1.0, "b": 1.0, "deltaB_per_tesla": 1.0,
         "delta_phi_b": FLUX_QUANTUM, "delta_ell": 1.0}
_TYPICAL = {"I00": 10.0, "epsilon": 0.1, "b": 0.1, "deltaB_per_tesla": 1.0,
            "delta_phi_b": 0.01, "delta_ell": 0.1}
DEFAULT_BOUNDS = {
    "I00": (1e-7, 1e-3),
    "epsilon": (0.0, 0.999),
    "b": (0.0, 1.0),
    "deltaB_per_tesla": (-200.0, 200.0),
    "delta_phi_b": (-FLUX_QUANTUM, FLUX_QUANTUM),
    "delta_ell": (0.0, 10.0),
}
_PENALTY = 1e3


@dataclass(frozen=True)
class GlobalFitResult:
    """Shared CPR parameters and per-field ``delta_phi_b`` (Wb) and ``delta_ell``."""

    shared: dict
    per_field: dict
    uncertainties: dict
    goodness: dict
    grid: ScanGrid = DEFAULT_GRID

    @property
    def fields(self) -> list:
        return sorted(self.per_field)

    def model_params(self, field_value: float) -> DiodeModelParams:
        entry = self._entry(field_value)
        s = self.shared
        return DiodeModelParams(
            I00=s["I00"],
            epsilon=s["epsilon"],
            b=s["b"],
            delta_B=s["deltaB_per_tesla"] * field_value,
            delta_ell=entry["delta_ell"],
        )

    def table(self, field_value: float) -> CprTable:
        return cpr_diode(self.model_params(field_value), self.grid)

    def _entry(self, field_value):
        for key, value in self.per_field.items():
            if math.isclose(key, field_value, rel_tol=0.0, abs_tol=1e-9):
                return value
        raise ValidationError(f"no fit result for field {field_value:g} T")

    def derived(self, a: float | None = None, w: float | None = None) -> dict:
        """Derived quantities; junction dimensions ``a`` and ``w`` (m) are inputs, never inferred."""
        s = self.shared
        out = {}
        kB = s["deltaB_per_tesla"]
        if kB != 0:
            out["B0"] = 2 * math.pi / abs(kB)
            out["A_eff"] = FLUX_QUANTUM / out["B0"]
            if a is not None:
                out["l_eff0"] = out["A_eff"] / a
        zero = [f for f in self.per_field if abs(f) < 1e-12]
        if zero:
            out["L_lin"] = FLUX_QUANTUM * self.per_field[zero[0]]["delta_ell"] / (2 * math.pi * s["I00"])
        if a is not None and w is not None:
            out["j0"] = s["I00"] / (w * a)
        return out


class _GlobalArcModel:
    """Residuals of all fields with a column-grouped finite-difference Jacobian."""

    def __init__(self, datasets, circuits, layout, base, offsets, grid, omega_scale, diff_step, fixed=()):
        self.datasets = datasets
        self.circuits = circuits
        self.layout = layout  # list of (name, field index or None)
        self.base = base  # full parameter vector in fit units
        self.offsets = offsets
        self.grid = grid
        self.omega_scale = omega_scale
        self.diff_step = diff_step
        self.free = [i for i, (name, _) in enumerate(layout) if name not in set(fixed)]
        self._cache = {}
        sizes = [len(ds.omega_0) for ds in datasets]
        self.rows = np.cumsum([0] + sizes)

    def full(self, x_free):
        full = self.base.copy()
        full[self.free] = x_free
        return full

    def _field_values(self, full, k):
        values = {}
        for i, (name, owner) in enumerate(self.layout):
            if owner is None or owner == k:
                values[name] = full[i]
        return values

    def field_residual(self, full, k):
        v = self._field_values(full, k)
        key = (k, tuple(sorted(v.items())))
        hit = self._cache.get(key)
        if hit is not None:
            return hit
        ds, circuit = self.datasets[k], self.circuits[k]
        n = len(ds.omega_0)
        try:
            p = DiodeModelParams(
                I00=v["I00"] * _UNIT["I00"],
                epsilon=v["epsilon"],
                b=v["b"],
                delta_B=v["deltaB_per_tesla"] * ds.field,
                delta_ell=v["delta_ell"],
            )
            table = cpr_diode(p, self.grid)
            flux = ds.shifted_flux(self.offsets[k] + v["delta_phi_b"] * _UNIT["delta_phi_b"])
            _, omega = arc_model(table, circuit, flux)
            r = (omega - ds.omega_0) / self.omega_scale
            r = np.where(np.isfinite(r), r, _PENALTY)
        except (DiodeSquidError, ValueError):
            r = np.full(n, _PENALTY)
        if len(self._cache) > 512:
            self._cache.clear()
        self._cache[key] = r
        return r

    def residual_full(self, full):
        return np.concatenate([self.field_residual(full, k) for k in range(len(self.datasets))])

    def __call__(self, x_free):
        return self.residual_full(self.full(x_free))

    def jacobian(self, x_free, lower, upper):
        full = self.full(x_free)
        r0 = self.residual_full(full)
        J = np.zeros((r0.size, len(self.free)))
        # group columns: a per-field parameter only moves the rows of its field
        groups = {}
        for col, i in enumerate(self.free):
            name, owner = self.layout[i]
            groups.setdefault(name if owner is not None else (name, i), []).append((col, i))
        for members in groups.values():
            pert = full.copy()
            steps = {}
            for col, i in members:
                h = self.diff_step * max(abs(full[i]), _TYPICAL[self.layout[i][0]])
                if full[i] + h > upper[col]:
                    h = -h
                pert[i] = full[i] + h
                steps[col] = (i, h)
            r1 = self.residual_full(pert)
            for col, (i, h) in steps.items():
                owner = self.layout[i][1]
                if owner is None:
                    J[:, col] = (r1 - r0) / h
                else:
                    rows = slice(self.rows[owner], self.rows[owner + 1])
                    J[rows, col] = (r1[rows] - r0[rows]) / h
        return J


def fit_flux_arcs_multifield(datasets: Sequence[ArcDataset], circuits: Sequence[CircuitParams],
                             initial: Mapping, fixed: Sequence[str] = (), share_delta_ell: bool = False,
                             bounds: Mapping | None = None, grid: ScanGrid = DEFAULT_GRID,
                             omega_scale: float = 2 * math.pi * 1e6, diff_step: float = 1e-6,
                             max_nfev: int = 60, tol: float = 1e-10) -> GlobalFitResult:
    """Fit one CPR model to the arcs of several fields simultaneously.

    ``initial`` holds ``I00`` (A), ``epsilon``, ``b``, ``deltaB_per_tesla``
    (rad/T) and ``delta_ell`` (a scalar or one value per dataset); an optional
    ``delta_phi_b`` per dataset overrides the default start, which aligns the
    model sweetspot with the calibrated one.  Names in ``fixed`` are held at
    their initial values.
    """
    datasets = list(datasets)
    circuits = list(circuits)
    if not datasets or len(datasets) != len(circuits):
        raise ValidationError("need one circuit per arc dataset")
    for ds in datasets:
        ds._require_calibration()
    unknown = set(fixed) - set(SHARED) - set(PER_FIELD)
    if unknown:
        raise ValidationError(f"unknown fixed parameters {sorted(unknown)}")
    lims = dict(DEFAULT_BOUNDS)
    lims.update(bounds or {})

    nfield = len(datasets)
    ell0 = np.broadcast_to(np.asarray(initial["delta_ell"], dtype=float), (nfield,))
    layout, base = [], []
    for name in SHARED:
        layout.append((name, None))
        base.append(float(initial[name]) / _UNIT[name])
    if share_delta_ell:
        layout.append(("delta_ell", None))
        base.append(float(ell0[0]))
    offsets = []
    starts = initial.get("delta_phi_b")
    for k, (ds, circuit) in enumerate(zip(datasets, circuits)):
        # the fitted quantity is the correction to the calibrated offset
        offsets.append(ds.delta_phi_b)
        if starts is not None:
            shift = float(np.broadcast_to(starts, (nfield,))[k]) - ds.delta_phi_b
        else:
            p0 = DiodeModelParams(
                I00=float(initial["I00"]), epsilon=float(initial["epsilon"]), b=float(initial["b"]),
                delta_B=float(initial["deltaB_per_tesla"]) * ds.field, delta_ell=float(ell0[k]),
            )
            shift = -model_sweetspot_flux(cpr_diode(p0, grid), circuit)
        layout.append(("delta_phi_b", k))
        base.append(shift / _UNIT["delta_phi_b"])
        if not share_delta_ell:
            layout.append(("delta_ell", k))
            base.append(float(ell0[k]))

    model = _GlobalArcModel(datasets, circuits, layout, np.asarray(base, dtype=float), offsets, grid,
                            omega_scale, diff_step, fixed)
    free = model.free
    if not free:
        raise ValidationError("all parameters are fixed")
    lower, upper = [], []
    for i in free:
        name = layout[i][0]
        lo, hi = lims[name]
        lo, hi = lo / _UNIT[name], hi / _UNIT[name]
        lower.append(lo)
        upper.append(hi)
    lower, upper = np.asarray(lower), np.asarray(upper)
    x0 = np.clip(model.base[free], lower, upper)

    sol = least_squares(
        model, x0, jac=lambda x: model.jacobian(x, lower, upper), bounds=(lower, upper),
        method="trf", x_scale="jac", ftol=tol, xtol=tol, gtol=tol, max_nfev=max_nfev,
    )
    if not np.all(np.isfinite(sol.x)) or not np.isfinite(sol.cost):
        raise FitDivergence("global arc fit returned non-finite values")
    if sol.status < 0:
        raise FitDivergence(f"global arc fit failed: {sol.message}")
    full = model.full(sol.x)
    resid = model.residual_full(full)
    if np.any(resid >= _PENALTY):
        raise FitDivergence("global arc fit ended where the model is undefined for some points")

    J = sol.jac
    dof = max(1, resid.size - len(free))
    s2 = float(resid @ resid) / dof
    try:
        cov = s2 * np.linalg.pinv(J.T @ J)
        sig_free = np.sqrt(np.clip(np.diag(cov), 0.0, None))
    except np.linalg.LinAlgError:
        sig_free = np.full(len(free), np.nan)
    sigma = np.zeros(full.size)
    sigma[free] = sig_free

    for col, i in enumerate(free):
        name = layout[i][0]
        if name in ("epsilon", "b"):
            span = upper[col] - lower[col]
            if min(sol.x[col] - lower[col], upper[col] - sol.x[col]) <= 1e-6 * span:
                warnings.warn(f"{name} is at its bound ({sol.x[col]:g})", ParameterAtBound, stacklevel=2)

    shared, shared_sigma = {}, {}
    per_field, per_sigma = {}, {}
    for i, (name, owner) in enumerate(layout):
        value, err = full[i] * _UNIT[name], sigma[i] * _UNIT[name]
        if owner is None and name in SHARED:
            shared[name], shared_sigma[name] = float(value), float(err)
    for k, ds in enumerate(datasets):
        entry, err_entry = {}, {}
        for i, (name, owner) in enumerate(layout):
            if name == "delta_phi_b" and owner == k:
                entry[name] = float(offsets[k] + full[i] * _UNIT[name])
                err_entry[name] = float(sigma[i] * _UNIT[name])
            elif name == "delta_ell" and (owner == k or owner is None):
                entry[name] = float(full[i])
                err_entry[name] = float(sigma[i])
        per_field[float(ds.field)] = entry
        per_sigma[float(ds.field)] = err_entry
    rms = float(np.sqrt(np.mean(resid**2))) * omega_scale
    goodness = {
        "rms_omega": rms,
        "chi2_reduced": s2,
        "n_points": int(resid.size),
        "n_free": len(free),
        "nfev": int(sol.nfev),
        "status": int(sol.status),
    }
    return GlobalFitResult(
        shared=shared,
        per_field=per_field,
        uncertainties={"shared": shared_sigma, "per_field": per_sigma},
        goodness=goodness,
        grid=grid,
    )


# ---------------------------------------------------------------- Kerr fit with CPR correction


@dataclass(frozen=True, eq=False)
class KerrPoints:
    """Kerr results at arc points of one field.

    ``shifted_flux`` locates each point on branch 0 (Wb), ``zeta_kerr`` is the
    attenuation-scaled Kerr coefficient from the Stark-shift fit (rad/s) with
    uncertainty ``sigma`` and ``omega_p`` the pump frequency used.
    """

    field: float
    shifted_flux: np.ndarray
    omega_0: np.ndarray
    zeta_kerr: np.ndarray
    sigma: np.ndarray
    omega_p: np.ndarray

    def __post_init__(self):
        arrays = [np.asarray(getattr(self, n), dtype=float) for n in
                  ("shifted_flux", "omega_0", "zeta_kerr", "sigma", "omega_p")]
        if len({a.shape for a in arrays}) != 1 or arrays[0].ndim != 1:
            raise GridMismatch("Kerr point arrays must have equal length")
        if np.any(arrays[3] <= 0):
            raise ValidationError("Kerr uncertainties must be positive")
        for n, a in zip(("shifted_flux", "omega_0", "zeta_kerr", "sigma", "omega_p"), arrays):
            object.__setattr__(self, n, a)

    @property
    def weights(self) -> np.ndarray:
        return (np.min(self.sigma) / self.sigma) ** (1.0 / 3.0)


@dataclass(frozen=True)
class KerrFitResult:
    zeta0: float
    zeta1: float
    omega_p_ref: float
    corrections: dict
    step_zeta0: dict
    residual_rms: dict
    correction_size: dict

    def attenuation(self, omega_p):
        return attenuation(omega_p, self.zeta0, self.zeta1, self.omega_p_ref)


def kerr_model(table: CprTable, circuit: CircuitParams, shifted_flux):
    """Kerr coefficient on branch 0 at the given flux (NaN where undefined)."""
    d, _ = arc_model(table, circuit, shifted_flux)
    return kerr_along(table, circuit, np.clip(d, *_inner(table)))


def _arc_range(table, circuit, flux):
    d, _ = arc_model(table, circuit, flux)
    return float(np.min(d)), float(np.max(d))


class _KerrField:
    def __init__(self, points: KerrPoints, arcs: ArcDataset, base_table, circuit, delta_phi_b, arc_weight):
        self.points = points
        self.base_table = base_table
        self.circuit = circuit
        self.arc_flux = arcs.shifted_flux(delta_phi_b)
        self.arc_omega = arcs.omega_0
        self.arc_weight = arc_weight
        self.anchor = PolynomialCorrection.anchored(base_table)
        lo, hi = _arc_range(base_table, circuit, np.concatenate([self.arc_flux, points.shifted_flux]))
        self.arc_range = (lo, hi)
        reach = max(abs(lo - self.anchor.anchor_phase), abs(hi - self.anchor.anchor_phase), 1e-3)
        # q_k scaled so that a unit step changes Delta I by ~1e-3 J at the arc edge
        self.q_scale = np.array([1e-3 / reach**k for k in (1, 3, 8, 9)])

    def table(self, q):
        return apply_correction(self.base_table, self.anchor.with_coefficients(q))

    def kerr_residual(self, q, zeta):
        pts = self.points
        try:
            K = kerr_model(self.table(q), self.circuit, pts.shifted_flux)
        except (DiodeSquidError, ValueError):
            return np.full(pts.zeta_kerr.size, _PENALTY * 1e3)
        measured = pts.zeta_kerr / zeta
        r = (K - measured) * pts.weights
        return np.where(np.isfinite(r), r, _PENALTY * 1e3)

    def arc_residual(self, q):
        try:
            _, omega = arc_model(self.table(q), self.circuit, self.arc_flux)
        except (DiodeSquidError, ValueError):
            return np.full(self.arc_omega.size, _PENALTY * 1e3)
        r = (omega - self.arc_omega) * self.arc_weight
        return np.where(np.isfinite(r), r, _PENALTY * 1e3)


def _solve(fun, x0, step, max_nfev, tol=1e-12, bounds=(-np.inf, np.inf)):
    try:
        sol = least_squares(fun, x0, method="trf", x_scale=1.0, ftol=tol, xtol=tol, gtol=tol,
                            max_nfev=max_nfev, diff_step=1e-3, bounds=bounds)
    except (DiodeSquidError, ValueError) as exc:
        raise NonConvergence(f"Kerr fit step {step}: {exc}") from exc
    if sol.status < 0 or not np.all(np.isfinite(sol.x)):
        raise NonConvergence(f"Kerr fit step {step}: {sol.message}")
    return sol


def fit_kerr_with_correction(kerr_data: Sequence[KerrPoints], arcs: Sequence[ArcDataset],
                             base: GlobalFitResult, circuits: Sequence[CircuitParams],
                             arc_weight: float | Mapping = 1e-4, omega_p_ref: float = PUMP_REFERENCE_OMEGA,
                             zeta_guess: float | None = None, cap: float = DEFAULT_CORRECTION_CAP,
                             max_nfev: int = 200) -> KerrFitResult:
    """Match measured ``zeta K`` to the Kerr coefficient of slightly corrected CPRs.

    Three steps: (1) per field, ``zeta1 = 0`` with ``zeta0`` and the
    correction coefficients free; (2) ``zeta0`` and ``zeta1`` shared by all
    fields with the corrections frozen; (3) per field corrections refitted
    with the attenuation frozen.  Kerr residuals carry the weight
    ``(sigma_min / sigma)^(1/3)``; arc residuals the relative weight
    ``arc_weight`` (one value or a mapping from field to value).
    """
    kerr_data, arcs, circuits = list(kerr_data), list(arcs), list(circuits)
    if not (len(kerr_data) == len(arcs) == len(circuits)) or not kerr_data:
        raise ValidationError("need matching Kerr data, arcs and circuits per field")
    fields = []
    for pts, ds, circuit in zip(kerr_data, arcs, circuits):
        if not math.isclose(pts.field, ds.field, abs_tol=1e-9):
            raise ValidationError("Kerr data and arcs are not ordered by the same fields")
        weight = _override_for(arc_weight, ds.field) if isinstance(arc_weight, Mapping) else arc_weight
        weight = 1e-4 if weight is None else float(weight)
        entry = base._entry(ds.field)
        fields.append(_KerrField(pts, ds, base.table(ds.field), circuit, entry["delta_phi_b"], weight))

    # step 1: per-field zeta0 and corrections
    step_zeta0, q_found = {}, []
    for f in fields:
        K0 = kerr_model(f.base_table, f.circuit, f.points.shifted_flux)
        ratio = f.points.zeta_kerr / K0
        z0 = float(np.median(ratio[np.isfinite(ratio)])) if zeta_guess is None else zeta_guess
        if not z0 > 0:
            raise NonConvergence("Kerr fit step 1: no positive attenuation estimate")
        zs = z0

        def fun1(u, f=f, zs=zs):
            q = u[1:] * f.q_scale
            zeta = u[0] * zs
            return np.concatenate([f.kerr_residual(q, zeta), f.arc_residual(q)])

        sol = _solve(fun1, np.array([1.0, 0.0, 0.0, 0.0, 0.0]), 1, max_nfev,
                     bounds=([1e-6, -np.inf, -np.inf, -np.inf, -np.inf], np.inf))
        step_zeta0[f.points.field] = float(sol.x[0] * zs)
        q_found.append(sol.x[1:] * f.q_scale)

    # step 2: shared attenuation with frozen corrections
    z_start = float(np.median(list(step_zeta0.values())))
    omega_p_all = np.concatenate([f.points.omega_p for f in fields])
    spread = max(float(np.ptp(omega_p_all)), 2 * math.pi * 1e6)
    z1_scale = 1.0 / spread

    def fun2(u):
        z0, z1 = u[0] * z_start, u[1] * z1_scale
        out = []
        for f, q in zip(fields, q_found):
            zeta = attenuation(f.points.omega_p, z0, z1, omega_p_ref)
            if np.any(zeta <= 0):
                return np.full(sum(ff.points.zeta_kerr.size for ff in fields), _PENALTY * 1e3)
            out.append(f.kerr_residual(q, zeta))
        return np.concatenate(out)

    sol = _solve(fun2, np.array([1.0, 0.0]), 2, max_nfev)
    zeta0, zeta1 = float(sol.x[0] * z_start), float(sol.x[1] * z1_scale)
    if np.any(attenuation(omega_p_all, zeta0, zeta1, omega_p_ref) <= 0):
        raise NonConvergence("Kerr fit step 2: attenuation is not positive over the pump range")

    # step 3: corrections with frozen attenuation
    corrections, rms, size = {}, {}, {}
    for f, q_start in zip(fields, q_found):
        zeta = attenuation(f.points.omega_p, zeta0, zeta1, omega_p_ref)

        def fun3(u, f=f, zeta=zeta):
            q = u * f.q_scale
            return np.concatenate([f.kerr_residual(q, zeta), f.arc_residual(q)])

        sol = _solve(fun3, q_start / f.q_scale, 3, max_nfev)
        corr = f.anchor.with_coefficients(sol.x * f.q_scale)
        magnitude = corr.magnitude(*f.arc_range)
        if magnitude > cap:
            raise CapExceeded(
                f"Kerr fit step 3: correction reaches {magnitude:.3g} A at field {f.points.field:g} T"
            )
        corrections[f.points.field] = corr
        size[f.points.field] = magnitude
        kr = f.kerr_residual(sol.x * f.q_scale, zeta) / f.points.weights
        rms[f.points.field] = float(np.sqrt(np.mean(kr**2)))
    return KerrFitResult(
        zeta0=zeta0,
        zeta1=zeta1,
        omega_p_ref=float(omega_p_ref),
        corrections=corrections,
        step_zeta0=step_zeta0,
        residual_rms=rms,
        correction_size=size,
    )


# ---------------------------------------------------------------- field-dependent inductances

DEFAULT_LAMBDA0 = 130e-9
DEFAULT_FILM_THICKNESS = 100e-9


def _kinetic_shape(lam, d):
    lam = np.asarray(lam, dtype=float)
    return lam / np.tanh(d / lam)


@dataclass(frozen=True)
class InductanceTable:
    """``L(lambda) = L_geo + lambda L_star coth(d / lambda)`` fitted to tabulated values."""

    L_geo: float
    L_star: float
    film_thickness: float
    lambda_range: tuple

    def __call__(self, lam):
        out = self.L_geo + self.L_star * _kinetic_shape(lam, self.film_thickness)
        return out if np.ndim(out) else float(out)

    def check(self, lam):
        lo, hi = self.lambda_range
        lam = np.asarray(lam, dtype=float)
        if np.any(lam < lo * (1 - 1e-9)) or np.any(lam > hi * (1 + 1e-9)):
            raise TableRangeExceeded(
                f"penetration depth outside the tabulated range [{lo:.4g}, {hi:.4g}] m"
            )

    def inverse(self, L: float) -> float:
        lo, hi = self.lambda_range
        f = lambda x: self(x) - L
        if f(lo) * f(hi) > 0:
            raise TableRangeExceeded(f"inductance {L:.6g} H outside the tabulated range")
        return float(brentq(f, lo, hi, xtol=1e-18, rtol=4 * np.finfo(float).eps))


def fit_inductance_table(lam, L, film_thickness: float = DEFAULT_FILM_THICKNESS) -> InductanceTable:
    """Linear least squares for ``L_geo`` and ``L_star``."""
    lam = np.asarray(lam, dtype=float)
    L = np.asarray(L, dtype=float)
    if lam.ndim != 1 or lam.shape != L.shape or lam.size < 2:
        raise GridMismatch("inductance tables need matching arrays with at least two rows")
    if np.any(lam <= 0):
        raise ValidationError("penetration depths must be positive")
    A = np.column_stack([np.ones_like(lam), _kinetic_shape(lam, film_thickness)])
    (L_geo, L_star), *_ = np.linalg.lstsq(A, L, rcond=None)
    if not L_star > 0:
        raise FitDivergence("inductance table does not increase with the penetration depth")
    return InductanceTable(float(L_geo), float(L_star), float(film_thickness),
                           (float(lam.min()), float(lam.max())))


@dataclass(frozen=True)
class FieldInductanceModel:
    """``lambda(B) = (1 + (B/B_star)^2) lambda0`` together with one ``L(lambda)`` table."""

    lambda0: float
    B_star: float
    L_geo: float
    L_star: float
    film_thickness: float

    def penetration_depth(self, B):
        out = (1.0 + (np.asarray(B, dtype=float) / self.B_star) ** 2) * self.lambda0
        return out if np.ndim(out) else float(out)

    def inductance(self, lam):
        out = self.L_geo + self.L_star * _kinetic_shape(lam, self.film_thickness)
        return out if np.ndim(out) else float(out)

    def inductance_at(self, B):
        return self.inductance(self.penetration_depth(B))


@dataclass(frozen=True)
class FieldInductanceResult:
    model: FieldInductanceModel
    squid: InductanceTable
    loop: InductanceTable | None
    fields: np.ndarray
    penetration_depth: np.ndarray
    L_b: np.ndarray
    L_loop: np.ndarray | None
    omega_0b: np.ndarray | None
    L_c0: np.ndarray | None

    def circuit(self, i: int, **extra) -> CircuitParams:
        if self.L_loop is None or self.omega_0b is None:
            raise ValidationError("loop table and bare frequency are needed for circuit parameters")
        return CircuitParams(omega_0b=float(self.omega_0b[i]), L_b=float(self.L_b[i]),
                             L_loop=float(self.L_loop[i]), field=float(self.fields[i]), **extra)


def infer_field_inductances(fields, reference_freqs, reference_table, squid_table, loop_table=None,
                            omega_0b0: float | None = None, sweetspot_freqs=None,
                            lambda0: float = DEFAULT_LAMBDA0,
                            film_thickness: float = DEFAULT_FILM_THICKNESS) -> FieldInductanceResult:
    """Field dependence of penetration depth and circuit inductances.

    ``reference_freqs`` are resonance frequencies of a junction-less circuit
    at ``fields`` (which must include zero); the tables are ``(lambda, L)``
    pairs for that circuit, the SQUID circuit and optionally its loop.
    ``omega_0b0`` is the bare SQUID-circuit frequency at zero field and
    ``sweetspot_freqs`` the measured sweetspot frequencies, which give the
    sweetspot constriction inductance.
    """
    B = np.asarray(fields, dtype=float)
    w_ref = np.asarray(reference_freqs, dtype=float)
    if B.shape != w_ref.shape or B.ndim != 1:
        raise GridMismatch("fields and reference frequencies must match")
    zero = np.flatnonzero(np.abs(B) < 1e-12)
    if zero.size == 0:
        raise ValidationError("the reference frequencies must include zero field")
    ref = fit_inductance_table(*reference_table, film_thickness=film_thickness)
    squid = fit_inductance_table(*squid_table, film_thickness=film_thickness)
    loop = fit_inductance_table(*loop_table, film_thickness=film_thickness) if loop_table is not None else None

    ref.check(lambda0)
    L_ref0 = ref(lambda0)
    L_ref = (w_ref[zero[0]] / w_ref) ** 2 * L_ref0
    lam = np.array([lambda0 if abs(b) < 1e-12 else ref.inverse(L) for b, L in zip(B, L_ref)])

    nz = np.abs(B) > 1e-12
    if not np.any(nz):
        raise InsufficientArcs("at least one nonzero field is needed to fit B_star")
    y = lam[nz] / lambda0 - 1.0
    x = B[nz] ** 2
    u = float(np.sum(x * y) / np.sum(x * x))
    if not u > 0:
        raise FitDivergence("penetration depth does not increase with the field")
    B_star = 1.0 / math.sqrt(u)
    model = FieldInductanceModel(lambda0=lambda0, B_star=B_star, L_geo=ref.L_geo, L_star=ref.L_star,
                                 film_thickness=film_thickness)

    lam_model = np.asarray(model.penetration_depth(B))
    squid.check(lam_model)
    L_b = np.asarray(squid(lam_model))
    L_loop = None
    if loop is not None:
        loop.check(lam_model)
        L_loop = np.asarray(loop(lam_model))
    omega_0b = None
    L_c0 = None
    if omega_0b0 is not None:
        omega_0b = omega_0b0 * np.sqrt(squid(lambda0) / L_b)
        if sweetspot_freqs is not None:
            w00 = np.asarray(sweetspot_freqs, dtype=float)
            if w00.shape != B.shape:
                raise GridMismatch("sweetspot frequencies must match the fields")
            L_c0 = 2.0 * L_b * ((omega_0b / w00) ** 2 - 1.0)
    return FieldInductanceResult(
        model=model, squid=squid, loop=loop, fields=B, penetration_depth=lam,
        L_b=L_b, L_loop=L_loop, omega_0b=omega_0b, L_c0=L_c0,
    )
