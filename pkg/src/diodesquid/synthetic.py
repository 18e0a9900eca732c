"""Synthetic datasets from the forward models, with known ground truth."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .constants import FLUX_QUANTUM, HBAR
from .cpr import CprTable
from .errors import ValidationError
from .estimation import ArcDataset, KerrPoints, RawSweep, _kinetic_shape, arc_model
from .kerr import kerr_along
from .params import PUMP_REFERENCE_OMEGA, CircuitParams, attenuation
from .pumped import photon_number, stark_shift
from .squid import SwitchingRule, bias_flux, hysteresis_sweep, switching_segment, _inner


@dataclass(frozen=True, eq=False)
class SyntheticSweep:
    sweep: RawSweep
    jumps: np.ndarray
    fluxoid_index: np.ndarray
    applied_flux: np.ndarray
    omega_true: np.ndarray
    I_b0: float
    delta_phi_b: float


def arc_sweep(table: CprTable, circuit: CircuitParams, rule: SwitchingRule, I_b0: float = 1e-3,
              delta_phi_b: float = 0.0, flux_window=(-1.5, 1.5), points: int = 601,
              noise: float = 0.0, rng: np.random.Generator | None = None) -> SyntheticSweep:
    """Up-sweep followed by a down-sweep of the applied flux.

    ``flux_window`` is given in flux quanta around the sweetspot of branch 0;
    frequencies get Gaussian noise of standard deviation ``noise`` (rad/s).
    """
    seg = switching_segment(table, circuit.L_loop, rule)
    phi_ss = bias_flux(table, circuit.L_loop, seg.sweetspot)
    start, stop = (phi_ss + f * FLUX_QUANTUM for f in flux_window)
    up = hysteresis_sweep(table, circuit, (start, stop, points), "up", rule)
    # the down-sweep continues on the branch the up-sweep ended on
    down = hysteresis_sweep(table, circuit, (start, stop, points), "down", rule,
                            start_branch=int(up.fluxoid_index[-1]))
    flux = np.concatenate([up.bias_flux, down.bias_flux])
    index = np.concatenate([up.fluxoid_index, down.fluxoid_index])
    omega = np.concatenate([up.omega_0, down.omega_0])
    direction = np.concatenate([np.ones(points, dtype=int), -np.ones(points, dtype=int)])
    if not np.all(np.isfinite(omega)):
        raise ValidationError("the forward model is undefined on part of the sweep")
    same = direction[1:] == direction[:-1]
    jumps = np.flatnonzero(same & (index[1:] != index[:-1])) + 1
    measured = omega.copy()
    if noise > 0:
        if rng is None:
            raise ValidationError("a seeded generator is required for noisy data")
        measured = measured + rng.normal(0.0, noise, size=omega.size)
    current = (flux + delta_phi_b) * I_b0 / FLUX_QUANTUM
    sweep = RawSweep(field=circuit.field, bias_current=current, omega_0=measured, direction=direction)
    return SyntheticSweep(sweep=sweep, jumps=jumps, fluxoid_index=index, applied_flux=flux,
                          omega_true=omega, I_b0=I_b0, delta_phi_b=delta_phi_b)


def true_offset(synth: SyntheticSweep, arcs: ArcDataset) -> float:
    """Flux offset that maps calibrated ``arcs`` exactly onto branch-0 flux."""
    arcs._require_calibration()
    measured = FLUX_QUANTUM * (arcs.bias_current / arcs.I_b0 - arcs.arc_index)
    truth = synth.applied_flux - synth.fluxoid_index * FLUX_QUANTUM
    return float(np.mean(measured - truth))


def kerr_points(table: CprTable, circuit: CircuitParams, shifted_flux, zeta0: float, zeta1: float = 0.0,
                omega_ref: float = PUMP_REFERENCE_OMEGA, rel_sigma: float = 0.02, noise: bool = False,
                rng: np.random.Generator | None = None, detuning: float | None = None) -> KerrPoints:
    """Attenuation-scaled Kerr values at arc points, pumped at ``omega_0 + detuning``.

    The detuning defaults to the linewidth ``kappa``.
    ``rel_sigma`` sets the reported uncertainty relative to ``|zeta K|``;
    with ``noise`` the values are perturbed by that amount.
    """
    flux = np.asarray(shifted_flux, dtype=float)
    d, omega = arc_model(table, circuit, flux)
    K = kerr_along(table, circuit, np.clip(d, *_inner(table)))
    omega_p = omega + (circuit.kappa if detuning is None else detuning)
    zeta = attenuation(omega_p, zeta0, zeta1, omega_ref)
    value = zeta * K
    sigma = rel_sigma * np.abs(value)
    if noise:
        if rng is None:
            raise ValidationError("a seeded generator is required for noisy data")
        value = value + rng.normal(0.0, 1.0, size=value.size) * sigma
    return KerrPoints(field=circuit.field, shifted_flux=flux, omega_0=omega, zeta_kerr=value,
                      sigma=sigma, omega_p=omega_p)


def inductance_table(L_geo: float, L_star: float, film_thickness: float = 100e-9,
                     lam=None) -> tuple[np.ndarray, np.ndarray]:
    """Tabulated ``(lambda, L)`` pairs of the kinetic-inductance model."""
    lam = np.linspace(80e-9, 400e-9, 33) if lam is None else np.asarray(lam, dtype=float)
    return lam, L_geo + L_star * _kinetic_shape(lam, film_thickness)


def reference_frequencies(fields, omega_0: float, L_geo: float, L_star: float, B_star: float,
                          lambda0: float = 130e-9, film_thickness: float = 100e-9) -> np.ndarray:
    """Frequencies of a junction-less circuit whose inductance follows the field."""
    B = np.asarray(fields, dtype=float)
    lam = (1.0 + (B / B_star) ** 2) * lambda0
    L = L_geo + L_star * _kinetic_shape(lam, film_thickness)
    L0 = L_geo + L_star * _kinetic_shape(lambda0, film_thickness)
    return omega_0 * np.sqrt(L0 / L)


def stark_points(kerr: float, circuit: CircuitParams, Delta_p: float, omega_p: float, powers,
                 zeta: float, noise: float = 0.0, rng: np.random.Generator | None = None):
    """Stark shifts for source powers ``powers`` reaching the device attenuated by ``zeta``.

    Returns ``(delta_omega, n_c)``; ``n_c`` is the true photon number.
    """
    P = np.asarray(powers, dtype=float)
    n = np.array([photon_number(Delta_p, kerr, circuit.kappa, circuit.kappa_ext, circuit.kappa_nl,
                                zeta * p / (HBAR * omega_p)).low for p in P])
    shift = np.asarray(stark_shift(Delta_p, kerr * n, 2.0 * circuit.kappa_nl * n))
    if noise > 0:
        if rng is None:
            raise ValidationError("a seeded generator is required for noisy data")
        shift = shift + rng.normal(0.0, noise, size=shift.size)
    return shift, n


def field_circuit(base: CircuitParams, field: float, omega_0b: float | None = None,
                  L_b: float | None = None, L_loop: float | None = None) -> CircuitParams:
    return base.replace(field=field, **{k: v for k, v in
                                        (("omega_0b", omega_0b), ("L_b", L_b), ("L_loop", L_loop))
                                        if v is not None})


def sample_fluxes(table: CprTable, circuit: CircuitParams, rule: SwitchingRule, count: int,
                  margin: float = 0.05) -> np.ndarray:
    """``count`` branch-0 fluxes spread over the accessible segment."""
    seg = switching_segment(table, circuit.L_loop, rule)
    lo = bias_flux(table, circuit.L_loop, seg.delta_lo)
    hi = bias_flux(table, circuit.L_loop, seg.delta_hi)
    pad = margin * (hi - lo)
    return np.linspace(lo + pad, hi - pad, count)


__all__ = [
    "SyntheticSweep",
    "arc_sweep",
    "true_offset",
    "kerr_points",
    "inductance_table",
    "reference_frequencies",
    "stark_points",
    "field_circuit",
    "sample_fluxes",
]
