"""Transmission models of a notch-coupled resonator and their fits.

All frequencies are angular (rad/s).  The realistic model multiplies the
rotated resonance by a quadratic amplitude background and a linear phase
(cable delay).  Fits run in the centred, scaled coordinate
``x = (omega - omega_c) / w`` and are mapped back afterwards.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np
from scipy.optimize import least_squares

from .errors import (
    GridMismatch,
    NoResonanceFound,
    NonConvergence,
    NonFinite,
    ValidationError,
    ZeroBackground,
)

PARAM_NAMES = ("omega_0", "kappa", "kappa_ext", "theta", "a0", "a1", "a2", "phi0", "phi1")


def s21_ideal(omega, omega_0, kappa, kappa_ext):
    omega = np.asarray(omega, dtype=float)
    return 1.0 - kappa_ext / (kappa + 2j * (omega - omega_0))


def s21_theta(omega, omega_0, kappa, kappa_ext, theta):
    """Resonance with a rotated external coupling (impedance mismatch)."""
    omega = np.asarray(omega, dtype=float)
    return 1.0 - np.exp(1j * theta) * (kappa_ext / (kappa + 2j * (omega - omega_0)))


def background(omega, a0, a1, a2, phi0, phi1):
    omega = np.asarray(omega, dtype=float)
    return (a0 + a1 * omega + a2 * omega**2) * np.exp(1j * (phi0 + phi1 * omega))


@dataclass(frozen=True)
class TraceS21:
    """Complex transmission sampled at angular frequencies."""

    omega: np.ndarray
    s21: np.ndarray
    metadata: dict = field(default_factory=dict)

    def __post_init__(self):
        omega = np.asarray(self.omega, dtype=float)
        s21 = np.asarray(self.s21, dtype=complex)
        if omega.ndim != 1 or omega.shape != s21.shape:
            raise ValidationError("omega and s21 must be 1-d arrays of equal length")
        if omega.size < 16:
            raise ValidationError("a trace needs at least 16 points")
        if not (np.all(np.isfinite(omega)) and np.all(np.isfinite(s21))):
            raise NonFinite("trace contains non-finite values")
        if np.any(np.diff(omega) <= 0):
            raise ValidationError("trace frequencies must be strictly increasing")
        object.__setattr__(self, "omega", omega)
        object.__setattr__(self, "s21", s21)


@dataclass
class ResonanceFit:
    omega_0: float
    kappa: float
    kappa_ext: float
    theta: float
    a0: float
    a1: float
    a2: float
    phi0: float
    phi1: float
    uncertainties: dict
    residual_rms: float
    stage_residuals: tuple = ()

    def params(self) -> dict:
        return {name: getattr(self, name) for name in PARAM_NAMES}

    def model(self, omega):
        return background(omega, self.a0, self.a1, self.a2, self.phi0, self.phi1) * s21_theta(
            omega, self.omega_0, self.kappa, self.kappa_ext, self.theta
        )

    @property
    def kappa_int(self) -> float:
        return self.kappa - self.kappa_ext


def s21_real(omega, fit: ResonanceFit | dict):
    p = fit.params() if isinstance(fit, ResonanceFit) else fit
    return background(omega, p["a0"], p["a1"], p["a2"], p["phi0"], p["phi1"]) * s21_theta(
        omega, p["omega_0"], p["kappa"], p["kappa_ext"], p["theta"]
    )


def background_correct(trace: TraceS21, backgrounds) -> TraceS21:
    """Divide by the complex mean of background traces taken on the same grid."""
    backgrounds = list(backgrounds)
    if not backgrounds:
        raise ValidationError("at least one background trace is required")
    for bg in backgrounds:
        if bg.omega.shape != trace.omega.shape or not np.array_equal(bg.omega, trace.omega):
            raise GridMismatch("background and trace frequency grids differ")
    mean = np.mean([bg.s21 for bg in backgrounds], axis=0)
    if np.any(np.abs(mean) < 1e-12 * max(1.0, float(np.max(np.abs(mean))))):
        raise ZeroBackground("mean background vanishes at some frequency")
    return TraceS21(trace.omega, trace.s21 / mean, dict(trace.metadata))


# ---------------------------------------------------------------- fitting


def _smooth(y, width):
    if width <= 1:
        return y
    kernel = np.ones(width) / width
    pad = width // 2
    padded = np.concatenate([np.full(pad, y[0]), y, np.full(pad, y[-1])])
    return np.convolve(padded, kernel, mode="valid")


def _complex_residual(model, data):
    r = model - data
    return np.concatenate([r.real, r.imag])


def _bg_scaled(x, A0, A1, A2, P0, P1):
    return (A0 + A1 * x + A2 * x**2) * np.exp(1j * (P0 + P1 * x))


def _res_scaled(x, x0, k, ke, th):
    return 1.0 - ke * np.exp(1j * th) / (k + 2j * (x - x0))


def _run(fun, p0, bounds=(-np.inf, np.inf)):
    sol = least_squares(fun, p0, bounds=bounds, method="trf", x_scale="jac",
                        xtol=1e-15, ftol=1e-15, gtol=1e-15, max_nfev=20000)
    if not np.all(np.isfinite(sol.x)) or sol.status < 0:
        raise NonConvergence(f"least-squares fit failed: {sol.message}")
    return sol


def _coarse_guess(x, s):
    n = x.size
    mag = np.abs(s)
    edge = max(3, n // 7)
    xe = np.concatenate([x[:edge], x[-edge:]])
    me = np.concatenate([mag[:edge], mag[-edge:]])
    trend = np.polyval(np.polyfit(xe, me, 1), x)
    norm = _smooth(mag / trend, max(3, (n // 100) | 1))
    i0 = int(np.argmin(norm))
    depth = 1.0 - norm[i0]
    half = 1.0 - 0.5 * depth
    lo = i0
    while lo > 0 and norm[lo] < half:
        lo -= 1
    hi = i0
    while hi < n - 1 and norm[hi] < half:
        hi += 1
    spacing = (x[-1] - x[0]) / (n - 1)
    width = max(x[hi] - x[lo], 4 * spacing)
    return x[i0], width


def fit_resonance(trace: TraceS21, excise: float = 3.0) -> ResonanceFit:
    """Three-stage fit of the realistic transmission model.

    1. the resonance window ``|omega - omega_0| < excise * kappa`` (coarse
       estimates) is excluded and the background is fitted to the rest;
    2. the background-divided trace is fitted with the rotated resonance;
    3. all nine parameters are refined jointly, starting from stages 1-2.

    Uncertainties are one standard deviation from the linearized covariance
    of the final stage.
    """
    omega, s = trace.omega, trace.s21
    centre = 0.5 * (omega[0] + omega[-1])
    width = 0.5 * (omega[-1] - omega[0])
    x = (omega - centre) / width
    n = x.size

    x0, k0 = _coarse_guess(x, s)

    # stage 1: background away from the resonance
    factor = excise
    off = np.abs(x - x0) >= factor * k0
    while off.sum() < max(12, n // 5) and factor > 0.5:
        factor *= 0.7
        off = np.abs(x - x0) >= factor * k0
    xo, so = x[off], s[off]
    amp = np.polyfit(xo, np.abs(so), 2)
    phase_full = np.unwrap(np.angle(s))
    ph = np.polyfit(xo, phase_full[off], 1)
    p_bg0 = np.array([amp[2], amp[1], amp[0], ph[1], ph[0]])
    bg_fun = lambda p: _complex_residual(_bg_scaled(xo, *p), so)
    bg_sol = _run(bg_fun, p_bg0)
    p_bg = bg_sol.x
    dof = max(1, 2 * xo.size - p_bg.size)
    noise = math.sqrt(float(np.sum(bg_sol.fun**2)) / dof)

    bg_all = _bg_scaled(x, *p_bg)
    if np.any(np.abs(bg_all) < 1e-12):
        raise ZeroBackground("fitted background vanishes inside the window")
    s_norm = s / bg_all
    dip = _smooth(np.abs(1.0 - s_norm), max(5, (n // 50) | 1))
    depth = float(np.max(dip))
    if depth < max(3.0 * noise, 1e-6):
        raise NoResonanceFound(f"dip depth {depth:.3g} below three times the noise {noise:.3g}")

    # stage 2: rotated resonance on the normalized trace
    i0 = int(np.argmax(dip))
    x0 = x[i0]
    c = k0 * (1.0 - s_norm[i0])
    p_res0 = np.array([x0, k0, max(abs(c), 1e-6 * k0), math.atan2(c.imag, c.real)])
    res_fun = lambda p: _complex_residual(_res_scaled(x, *p), s_norm)
    lower = np.array([x[0] - 1.0, 1e-12, 0.0, -np.inf])
    upper = np.array([x[-1] + 1.0, np.inf, np.inf, np.inf])
    p_res0 = np.clip(p_res0, lower + 1e-15, upper)
    res_sol = _run(res_fun, p_res0, (lower, upper))
    p_res = res_sol.x

    # stage 3: joint refinement
    full = lambda p: _complex_residual(_bg_scaled(x, *p[4:]) * _res_scaled(x, *p[:4]), s)
    p_start = np.concatenate([p_res, p_bg])
    stage2_res = full(p_start)
    lower_f = np.concatenate([lower, np.full(5, -np.inf)])
    upper_f = np.concatenate([upper, np.full(5, np.inf)])
    sol = _run(full, p_start, (lower_f, upper_f))
    p = sol.x
    if np.sum(sol.fun**2) > np.sum(stage2_res**2):
        p = p_start
    final = full(p)

    dof = max(1, 2 * n - p.size)
    s2 = float(np.sum(final**2)) / dof
    J = sol.jac if p is sol.x else least_squares(full, p, max_nfev=1).jac
    try:
        cov_scaled = s2 * np.linalg.pinv(J.T @ J)
    except np.linalg.LinAlgError as exc:  # pragma: no cover - pinv rarely fails
        raise NonConvergence("singular Jacobian in the final stage") from exc

    phys, T = _to_physical(p, centre, width)
    cov = T @ cov_scaled @ T.T
    sigma = np.sqrt(np.clip(np.diag(cov), 0.0, None))
    values = dict(zip(PARAM_NAMES, phys))
    values["theta"] = _wrap(values["theta"])
    values["phi0"] = _wrap(values["phi0"])
    if values["a0"] + values["a1"] * values["omega_0"] + values["a2"] * values["omega_0"] ** 2 < 0:
        # the same model with a sign-flipped amplitude and the phase shifted by pi
        for key in ("a0", "a1", "a2"):
            values[key] = -values[key]
        values["phi0"] = _wrap(values["phi0"] + math.pi)
    rms = math.sqrt(float(np.mean(final**2)))
    return ResonanceFit(
        **values,
        uncertainties=dict(zip(PARAM_NAMES, sigma)),
        residual_rms=rms,
        stage_residuals=(float(np.sum(stage2_res**2)), float(np.sum(final**2))),
    )


def _wrap(angle: float) -> float:
    return float((angle + math.pi) % (2 * math.pi) - math.pi)


def _to_physical(p, centre, width):
    """Map scaled parameters to physical ones; returns values and the Jacobian."""
    x0, k, ke, th, A0, A1, A2, P0, P1 = p
    c, w = centre, width
    vals = np.array([
        c + w * x0,
        w * k,
        w * ke,
        th,
        A0 - A1 * c / w + A2 * c**2 / w**2,
        A1 / w - 2 * A2 * c / w**2,
        A2 / w**2,
        P0 - P1 * c / w,
        P1 / w,
    ])
    T = np.zeros((9, 9))
    T[0, 0] = w
    T[1, 1] = w
    T[2, 2] = w
    T[3, 3] = 1.0
    T[4, 4:7] = [1.0, -c / w, c**2 / w**2]
    T[5, 5:7] = [1.0 / w, -2 * c / w**2]
    T[6, 6] = 1.0 / w**2
    T[7, 7:9] = [1.0, -c / w]
    T[8, 8] = 1.0 / w
    return vals, T


def synthetic_trace(omega, params: dict, sigma: float = 0.0, rng=None, metadata=None) -> TraceS21:
    """Realistic-model trace with complex Gaussian noise of standard deviation ``sigma`` per quadrature."""
    s = s21_real(omega, params)
    if sigma > 0:
        rng = np.random.default_rng(rng)
        s = s + sigma * (rng.standard_normal(s.shape) + 1j * rng.standard_normal(s.shape))
    return TraceS21(np.asarray(omega, dtype=float), s, dict(metadata or {}))


def background_params_from_window(centre, half_width, amplitude=(0.9, 0.05, 0.02), phase0=0.3, delay=50e-9):
    """Background coefficients for an amplitude ``A0 (1 + A1 x + A2 x^2)`` in the scaled window coordinate."""
    A0, r1, r2 = amplitude
    p = np.array([0, 0, 0, 0, A0, A0 * r1, A0 * r2, phase0, -delay * half_width])
    vals, _ = _to_physical(p, centre, half_width)
    out = dict(zip(PARAM_NAMES[4:], vals[4:]))
    out["phi0"] = _wrap(out["phi0"])
    return out
