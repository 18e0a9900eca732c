"""Driven Kerr resonator: intracavity photon number and two-tone response.

Detunings are ``Delta_p = omega_p - omega_0``; ``kerr`` is the Kerr
coefficient and ``kappa_nl`` the nonlinear damping, both in rad/s per photon.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
from scipy.optimize import least_squares

from .constants import HBAR
from .errors import ComplexRoot, NegativeResult, NonConvergence, ValidationError


@dataclass(frozen=True)
class PhotonNumber:
    """Physical roots of the steady-state cubic."""

    roots: tuple
    low: float
    high: float

    @property
    def bistable(self) -> bool:
        return len(self.roots) == 3


def photon_flux(power: float, omega_p: float) -> float:
    """Drive photon rate ``P / (hbar omega_p)``."""
    return power / (HBAR * omega_p)


def _cubic(n, Delta_p, kerr, kappa, kappa_ext, kappa_nl, n_p):
    return ((Delta_p - kerr * n) ** 2 + (0.5 * (kappa + kappa_nl * n)) ** 2) * n - 0.5 * kappa_ext * n_p


def photon_number(Delta_p: float, kerr: float, kappa: float, kappa_ext: float, kappa_nl: float,
                  n_p: float) -> PhotonNumber:
    """Solve ``((Delta_p - K n)^2 + ((kappa + kappa_nl n)/2)^2) n = kappa_ext n_p / 2``.

    ``n_p`` is the drive photon rate.  Real non-negative roots are polished
    by Newton's method; with three roots the middle one is the unstable state.
    """
    if n_p < 0 or kappa <= 0 or kappa_ext < 0:
        raise ValidationError("n_p, kappa and kappa_ext must be non-negative (kappa > 0)")
    if n_p == 0:
        return PhotonNumber(roots=(0.0,), low=0.0, high=0.0)
    c3 = kerr**2 + 0.25 * kappa_nl**2
    c2 = -2.0 * Delta_p * kerr + 0.5 * kappa * kappa_nl
    c1 = Delta_p**2 + 0.25 * kappa**2
    c0 = -0.5 * kappa_ext * n_p
    if c3 == 0.0:
        candidates = np.roots([c2, c1, c0]) if c2 != 0 else np.array([-c0 / c1])
    else:
        candidates = np.roots([c3, c2, c1, c0])
    scale = max(abs(c0), 1e-300)
    roots = []
    for r in candidates:
        if abs(r.imag) > 1e-6 * max(1.0, abs(r.real)):
            continue
        n = float(r.real)
        for _ in range(50):
            f = _cubic(n, Delta_p, kerr, kappa, kappa_ext, kappa_nl, n_p)
            df = 3 * c3 * n**2 + 2 * c2 * n + c1
            if df == 0:
                break
            step = f / df
            n -= step
            if abs(step) <= 1e-15 * max(abs(n), 1e-300):
                break
        if n >= 0 and abs(_cubic(n, Delta_p, kerr, kappa, kappa_ext, kappa_nl, n_p)) <= 1e-10 * scale:
            roots.append(n)
    if not roots:
        raise ComplexRoot("no real non-negative photon number")
    roots = sorted(set(roots))
    # merge numerically coincident roots
    merged = [roots[0]]
    for r in roots[1:]:
        if abs(r - merged[-1]) > 1e-9 * max(abs(r), 1.0):
            merged.append(r)
    return PhotonNumber(roots=tuple(merged), low=merged[0], high=merged[-1])


def _chi(Omega, Delta_p, kerr, n_c, kappa, kappa_nl):
    gamma = 0.5 * (kappa + 2.0 * kappa_nl * n_c)
    a = Delta_p - 2.0 * kerr * n_c
    chi = 1.0 / (1j * (a + Omega) + gamma)
    chi_rot = 1.0 / (-1j * (a - Omega) + gamma)
    return chi, chi_rot


def signal_susceptibility(Omega, Delta_p, kerr, n_c, kappa, kappa_nl=0.0):
    """Response of the signal mode at offset ``Omega`` from the pump."""
    Omega = np.asarray(Omega, dtype=complex if np.iscomplexobj(Omega) else float)
    chi, chi_rot = _chi(Omega, Delta_p, kerr, n_c, kappa, kappa_nl)
    coupling = (kerr**2 + 0.25 * kappa_nl**2) * n_c**2
    return chi / (1.0 - coupling * chi * chi_rot)


def susceptibility_denominator(Omega, Delta_p, kerr, n_c, kappa, kappa_nl=0.0):
    """``1 / (chi chi_rot) - (K^2 + kappa_nl^2/4) n^2``; zero at the pumped poles."""
    chi, chi_rot = _chi(np.asarray(Omega, dtype=complex), Delta_p, kerr, n_c, kappa, kappa_nl)
    return 1.0 / (chi * chi_rot) - (kerr**2 + 0.25 * kappa_nl**2) * n_c**2


def two_tone_s21(Omega, circuit, kerr, n_c, Delta_p):
    """Probe transmission ``1 - (kappa_ext/2) chi_s`` at offset ``Omega`` from the pump."""
    chi_s = signal_susceptibility(Omega, Delta_p, kerr, n_c, circuit.kappa, circuit.kappa_nl)
    return 1.0 - 0.5 * circuit.kappa_ext * chi_s


def _radicand(Delta_p, kerr, n_c, kappa_nl):
    return (Delta_p - kerr * n_c) * (Delta_p - 3.0 * kerr * n_c) - 0.25 * kappa_nl**2 * n_c**2


def pumped_modes(Delta_p, kerr, n_c, kappa, kappa_nl=0.0, omega_p: float = 0.0):
    """Pumped resonances ``(omega_plus, omega_minus, kappa_p)``.

    With the default ``omega_p = 0`` the frequencies are offsets from the pump.
    Raises :class:`ComplexRoot` where the modes merge (negative radicand).
    """
    r = _radicand(Delta_p, kerr, n_c, kappa_nl)
    if r < 0:
        raise ComplexRoot("pumped modes are degenerate in frequency (negative radicand)")
    root = math.sqrt(r)
    return omega_p + root, omega_p - root, kappa + 2.0 * kappa_nl * n_c


def pumped_poles(Delta_p, kerr, n_c, kappa, kappa_nl=0.0):
    """Complex offsets ``Omega`` at which the signal susceptibility diverges."""
    gamma = 0.5 * (kappa + 2.0 * kappa_nl * n_c)
    root = np.sqrt(complex(_radicand(Delta_p, kerr, n_c, kappa_nl)))
    return 1j * gamma + root, 1j * gamma - root


def stark_shift(Delta_p, kerr_n, kappa_p_minus_kappa=0.0):
    """Shift of the lower pumped mode from ``omega_0``.

    ``kerr_n`` is ``K n_c``; the damping enters through
    ``kappa_p - kappa = 2 kappa_nl n_c``.
    """
    Delta_p = np.asarray(Delta_p, dtype=float)
    r = (Delta_p - kerr_n) * (Delta_p - 3.0 * kerr_n) - np.asarray(kappa_p_minus_kappa) ** 2 / 16.0
    if np.any(r < 0):
        raise ComplexRoot("negative radicand in the Stark shift")
    out = Delta_p - np.sqrt(r)
    return out if np.ndim(out) else float(out)


def photon_number_from_shift(delta_omega, Delta_p, kappa, kappa_p, kappa_ext, P_p, omega_p):
    """Invert a measured shift for the photon number at the given device power.

    The shifted mode gives ``Delta_p - K n`` in closed form; inserting it in
    the steady-state relation yields ``n``.
    """
    Omega0p = delta_omega - Delta_p
    nl = 0.5 * (kappa_p - kappa)  # kappa_nl * n
    tilde = (Delta_p + math.sqrt(Delta_p**2 + 3.0 * (0.25 * nl**2 + Omega0p**2))) / 3.0
    n = 2.0 * photon_flux(P_p, omega_p) * kappa_ext / ((kappa + nl) ** 2 + 4.0 * tilde**2)
    if n < 0:
        raise NegativeResult("negative photon number")
    return n


def kerr_from_shift(delta_omega, Delta_p, kappa, kappa_p, kappa_ext, P_p, omega_p):
    """Kerr coefficient recovered from one shift: ``(Delta_p - tilde) / n``."""
    Omega0p = delta_omega - Delta_p
    nl = 0.5 * (kappa_p - kappa)
    tilde = (Delta_p + math.sqrt(Delta_p**2 + 3.0 * (0.25 * nl**2 + Omega0p**2))) / 3.0
    n = photon_number_from_shift(delta_omega, Delta_p, kappa, kappa_p, kappa_ext, P_p, omega_p)
    return (Delta_p - tilde) / n


@dataclass(frozen=True)
class StarkFit:
    zeta_kerr: float
    sigma: float
    residual_rms: float


def stark_model(zeta_kerr, n_over_zeta, Delta_p, kappa_p_minus_kappa=0.0):
    return stark_shift(Delta_p, zeta_kerr * np.asarray(n_over_zeta), kappa_p_minus_kappa)


def fit_stark_shift(n_over_zeta, delta_omega, Delta_p, kappa_p_minus_kappa=0.0, guess=None,
                    sigma=None) -> StarkFit:
    """Fit ``zeta K`` to shifts measured against ``n / zeta`` (photon number per unit attenuation)."""
    x = np.asarray(n_over_zeta, dtype=float)
    y = np.asarray(delta_omega, dtype=float)
    if x.shape != y.shape or x.size < 3:
        raise ValidationError("need at least three matching shift points")
    Delta_p = np.broadcast_to(np.asarray(Delta_p, dtype=float), x.shape)
    dk = np.broadcast_to(np.asarray(kappa_p_minus_kappa, dtype=float), x.shape)
    w = np.ones_like(y) if sigma is None else 1.0 / np.broadcast_to(np.asarray(sigma, dtype=float), x.shape)
    if guess is None:
        # first order: shift ~ 2 K n for small K n
        guess = float(np.sum(x * y) / np.sum(2.0 * x * x))
    scale = abs(guess) if guess != 0 else 1.0

    def fun(p):
        try:
            return (stark_model(p[0] * scale, x, Delta_p, dk) - y) * w
        except ComplexRoot:
            return np.full_like(y, 1e30)

    sol = least_squares(fun, [guess / scale], method="lm", xtol=1e-15, ftol=1e-15, gtol=1e-15)
    if not sol.success or not np.isfinite(sol.x[0]):
        raise NonConvergence(f"Stark fit failed: {sol.message}")
    value = sol.x[0] * scale
    dof = max(1, x.size - 1)
    s2 = float(np.sum(sol.fun**2)) / dof
    J = sol.jac[:, 0] / scale
    sig = math.sqrt(s2 / float(J @ J)) if sigma is None else math.sqrt(1.0 / float(J @ J))
    return StarkFit(zeta_kerr=float(value), sigma=float(sig), residual_rms=float(np.sqrt(np.mean(sol.fun**2))))
