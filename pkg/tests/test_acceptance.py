"""Acceptance criteria, one test each, with the stated tolerances and runtime budgets.

Every test prints a single PASS/FAIL line; the lines are also collected in
the terminal summary.
"""

import math
import time
import warnings

import numpy as np
import pytest

from conftest import (
    ACCEPTANCE_LINES,
    SWITCHING_FRACTION,
    TRUTH_DELTA_ELL,
    TRUTH_FIELDS,
    TRUTH_SHARED,
    TWO_PI,
    diode_params,
)
from diodesquid.constants import FLUX_QUANTUM
from diodesquid.cpr import cpr_diode, homogeneous_fold_phase, homogeneous_table
from diodesquid.estimation import calibrate, fit_flux_arcs_multifield, infer_field_inductances, segment_arcs
from diodesquid.kerr import kerr_anharmonicity, kerr_bimodality, kerr_from_energy
from diodesquid.params import CircuitParams, DiodeModelParams
from diodesquid.pumped import _cubic, photon_flux, photon_number, photon_number_from_shift, pumped_modes, stark_shift
from diodesquid.s21 import background_params_from_window, fit_resonance, synthetic_trace
from diodesquid.squid import (
    constriction_inductance,
    flux_arc,
    max_stable_responsivity,
    proportional_switching,
    resonance_frequency,
    switching_segment,
)
from diodesquid.synthetic import arc_sweep, inductance_table, reference_frequencies

CIRCUIT = CircuitParams(TWO_PI * 10.380e9, 397e-12, 44e-12)


def record(number: int, name: str, ok: bool, detail: str, elapsed: float, budget: float):
    within = elapsed < budget
    verdict = "PASS" if ok and within else "FAIL"
    line = f"criterion {number}: {verdict} {name}: {detail}; runtime {elapsed:.3g} s (budget {budget:g} s)"
    ACCEPTANCE_LINES.append(line)
    print(line)
    assert ok, line
    assert within, line


# ---------------------------------------------------------------- shared fitted configuration

@pytest.fixture(scope="module")
def global_fit():
    """Five-field noisy synthetic bundle and its global fit; returns (result, seconds)."""
    rng = np.random.default_rng(7)
    datasets, circuits = [], []
    t0 = time.perf_counter()
    for B, ell in zip(TRUTH_FIELDS, TRUTH_DELTA_ELL):
        table = cpr_diode(diode_params(B, ell))
        circuit = CIRCUIT.replace(field=B)
        s = arc_sweep(table, circuit, proportional_switching(table, SWITCHING_FRACTION), I_b0=1e-3,
                      delta_phi_b=0.1 * FLUX_QUANTUM, points=401, noise=TWO_PI * 0.2e6, rng=rng)
        datasets.append(calibrate(segment_arcs(s.sweep)))
        circuits.append(circuit)
    initial = dict(I00=38e-6, epsilon=0.7, b=0.7, deltaB_per_tesla=TWO_PI / 0.29, delta_ell=1.35)
    with warnings.catch_warnings():
        warnings.simplefilter("error")
        result = fit_flux_arcs_multifield(datasets, circuits, initial)
    return result, time.perf_counter() - t0


# ---------------------------------------------------------------- 1

def test_criterion_1_sweetspot_consistency():
    t0 = time.perf_counter()
    w = resonance_frequency(TWO_PI * 10.380e9, 397e-12, 23e-12)
    elapsed = time.perf_counter() - t0
    err = abs(w - TWO_PI * 10.233e9) / TWO_PI
    record(1, "sweetspot consistency", err < 2e6,
           f"omega_0/2pi = {w / TWO_PI / 1e9:.5f} GHz, |error| = {err / 1e6:.3f} MHz (tol 2 MHz)",
           elapsed, 1e-3)


# ---------------------------------------------------------------- 2

def test_criterion_2_homogeneous_cpr():
    t0 = time.perf_counter()
    I0, L_lin = 30e-6, 12e-12
    table = homogeneous_table(I0, L_lin)
    L_J0 = FLUX_QUANTUM / (TWO_PI * I0)
    _, slope = table.max_slope()
    L_c0 = FLUX_QUANTUM / (TWO_PI * slope)
    fold = homogeneous_fold_phase(I0, L_lin)
    elapsed = time.perf_counter() - t0
    ok = abs(L_J0 - 11e-12) <= 0.2e-12 and math.isfinite(fold) and abs(fold - math.pi) < 0.3 \
        and L_lin / L_c0 > 0.5 and homogeneous_fold_phase(I0, 0.4 * L_J0) == math.inf
    record(2, "homogeneous CPR", ok,
           f"L_J0 = {L_J0 * 1e12:.3f} pH, fold at delta_c = {fold:.4f} rad, L_lin/L_c0 = {L_lin / L_c0:.3f}",
           elapsed, 0.1)


# ---------------------------------------------------------------- 3

def test_criterion_3_fraunhofer():
    t0 = time.perf_counter()
    worst = 0.0
    for dB in (0.5, 1.0, 2.0, 3.0, 5.0):
        t = cpr_diode(DiodeModelParams(1.0, 0.0, 0.0, dB, 0.0))
        x = np.linspace(*t.delta_c_range, 4001)
        worst = max(worst, abs(np.max(np.abs(t(x))) - abs(math.sin(dB / 2) / (dB / 2))))
    elapsed = time.perf_counter() - t0
    record(3, "Fraunhofer amplitude", worst < 1e-4, f"max |amplitude - sinc| = {worst:.2e} (tol 1e-4)",
           elapsed, 5.0)


# ---------------------------------------------------------------- 4

def _common_grid(a, b, n=401):
    lo = max(a[0], b[0]) + 1e-9
    hi = min(a[1], b[1]) - 1e-9
    return np.linspace(lo, hi, n)


def test_criterion_4_diode_symmetries():
    rng = np.random.default_rng(44)
    t0 = time.perf_counter()
    worst = {"a": 0.0, "b": 0.0, "c": 0.0}
    for _ in range(20):
        I00 = 35e-6
        eps, b = rng.uniform(0, 1), rng.uniform(0, 1)
        dB, ell = rng.uniform(-4, 4), rng.uniform(0, 1.6)
        # (a) no linear inductance
        t = cpr_diode(DiodeModelParams(I00, eps, b, dB, 0.0))
        lo, hi = t.delta_c_range
        x = np.linspace(0.0, min(-lo, hi) - 1e-9, 301)
        worst["a"] = max(worst["a"], np.max(np.abs(t(x) + t(-x))))
        # (b) no gradients
        t = cpr_diode(DiodeModelParams(I00, 0.0, 0.0, dB, ell))
        lo, hi = t.delta_c_range
        x = np.linspace(0.0, min(-lo, hi) - 1e-9, 301)
        worst["b"] = max(worst["b"], np.max(np.abs(t(x) + t(-x))))
        # (c) field reversal
        plus = cpr_diode(DiodeModelParams(I00, eps, b, dB, ell))
        minus = cpr_diode(DiodeModelParams(I00, eps, b, -dB, ell))
        d0 = _common_grid(plus.valid_range, (-minus.valid_range[1], -minus.valid_range[0]))
        worst["c"] = max(worst["c"], np.max(np.abs(minus.spline(-d0) + plus.spline(d0))))
    elapsed = time.perf_counter() - t0
    tol = 1e-6 * 35e-6
    ok = all(v < tol for v in worst.values())
    detail = ", ".join(f"({k}) {v / 35e-6:.1e} I00" for k, v in worst.items()) + " (tol 1e-6 I00, 20 draws)"
    record(4, "diode symmetry suite", ok, detail, elapsed, 60.0)


# ---------------------------------------------------------------- 5

def test_criterion_5_kerr_oracle():
    t0 = time.perf_counter()
    sine = homogeneous_table(FLUX_QUANTUM / (TWO_PI * 23e-12), 0.0)
    homogeneous = homogeneous_table(30e-6, 12e-12)
    high = cpr_diode(diode_params(0.275, TRUTH_DELTA_ELL[-1]))
    points = [(sine, 0.0), (homogeneous, 0.0), (homogeneous, 0.8), (high, high.max_slope()[0]), (high, -0.8)]
    errors = []
    for table, d in points:
        closed = kerr_anharmonicity(table, CIRCUIT, d)
        errors.append(abs(closed / kerr_from_energy(table, CIRCUIT, d) - 1.0))
    K_sine = kerr_anharmonicity(sine, CIRCUIT, 0.0) / TWO_PI
    elapsed = time.perf_counter() - t0
    ok = max(errors) < 1e-3 and abs(K_sine + 730.0) < 5.0
    record(5, "Kerr oracle equivalence", ok,
           f"max relative error {max(errors):.2e} (tol 1e-3) at 5 points, sine K/2pi = {K_sine:.1f} Hz",
           elapsed, 30.0)


# ---------------------------------------------------------------- 6

def _equal_frequency_ratio(table, fraction):
    seg = switching_segment(table, CIRCUIT.L_loop, proportional_switching(table, SWITCHING_FRACTION))

    def w(d):
        return resonance_frequency(CIRCUIT.omega_0b, CIRCUIT.L_b, constriction_inductance(table, d))

    top = w(seg.sweetspot)
    end = max(w(seg.delta_lo + 1e-9), w(seg.delta_hi - 1e-9))
    return kerr_bimodality(table, CIRCUIT, top - fraction * (top - end), seg)[2]


def test_criterion_6_kerr_bimodality(global_fit):
    result, fit_seconds = global_fit
    t0 = time.perf_counter()
    high = _equal_frequency_ratio(result.table(0.275), 0.9)
    high = max(high, 1.0 / high)
    zero = [_equal_frequency_ratio(result.table(0.0), f) for f in (0.3, 0.6, 0.9)]
    elapsed = time.perf_counter() - t0 + fit_seconds
    ok = high > 3.0 and all(abs(r - 1.0) < 0.05 for r in zero)
    record(6, "Kerr bimodality", ok,
           f"fitted 275 mT |K| ratio {high:.2f} (> 3), zero-field ratios "
           + ", ".join(f"{r:.4f}" for r in zero) + " (within 5% of 1)", elapsed, 120.0)


# ---------------------------------------------------------------- 7

def test_criterion_7_pumped_identities():
    kappa, kappa_ext, omega_p = TWO_PI * 22e6, TWO_PI * 4.7e6, TWO_PI * 10.25e9
    rng = np.random.default_rng(77)
    t0 = time.perf_counter()
    exact = True
    for _ in range(50):
        Delta = rng.uniform(0.2, 5.0) * kappa
        n = 1e4
        K = rng.uniform(-0.3, 0.0) * kappa / n
        kappa_nl = rng.uniform(0.0, 0.05) * kappa / n
        _, minus, kappa_p = pumped_modes(Delta, K, n, kappa, kappa_nl)
        exact &= bool(minus + Delta == stark_shift(Delta, K * n, kappa_p - kappa))
    worst = 0.0
    for _ in range(1000):
        k = TWO_PI * 10 ** rng.uniform(6, 8)
        ke = k * rng.uniform(0.01, 1.0)
        Delta = k * rng.uniform(-5, 5)
        K = TWO_PI * 10 ** rng.uniform(1, 4) * rng.choice([-1, 1])
        knl = TWO_PI * 10 ** rng.uniform(-2, 2) * rng.integers(0, 2)
        n_p = 10 ** rng.uniform(8, 16)
        for root in photon_number(Delta, K, k, ke, knl, n_p).roots:
            worst = max(worst, abs(_cubic(root, Delta, K, k, ke, knl, n_p)) / (0.5 * ke * n_p))
    inversion = 0.0
    for knl in (0.0, TWO_PI * 0.5, TWO_PI * 5.0):
        for delta in (0.3, 1.0, 3.0):
            Delta, K, P = delta * kappa, -TWO_PI * 1.2e3, 1e-11
            n = photon_number(Delta, K, kappa, kappa_ext, knl, photon_flux(P, omega_p)).low
            kappa_p = kappa + 2 * knl * n
            shift = stark_shift(Delta, K * n, kappa_p - kappa)
            back = photon_number_from_shift(shift, Delta, kappa, kappa_p, kappa_ext, P, omega_p)
            inversion = max(inversion, abs(back / n - 1.0))
    elapsed = time.perf_counter() - t0
    ok = exact and worst < 1e-10 and inversion < 1e-6
    record(7, "pumped-response identities", ok,
           f"Stark shift == lower mode exactly: {exact}; cubic residual {worst:.1e} (tol 1e-10, 1000 draws); "
           f"inversion error {inversion:.1e} (tol 1e-6)", elapsed, 10.0)


# ---------------------------------------------------------------- 8

def test_criterion_8_s21_round_trip():
    omega_0, kappa, kappa_ext = TWO_PI * 10.233e9, TWO_PI * 22e6, TWO_PI * 4.7e6
    half = 10 * kappa
    omega = np.linspace(omega_0 - half, omega_0 + half, 2001)
    truth = {"omega_0": omega_0, "kappa": kappa, "kappa_ext": kappa_ext, "theta": 0.1,
             **background_params_from_window(omega_0, half)}
    t0 = time.perf_counter()
    fit = fit_resonance(synthetic_trace(omega, truth))
    noiseless = max(abs(getattr(fit, k) / v - 1.0) if v else abs(getattr(fit, k))
                    for k, v in truth.items())
    passed = 0
    for seed in range(100):
        f = fit_resonance(synthetic_trace(omega, truth, sigma=0.003, rng=seed))
        passed += abs(f.omega_0 - omega_0) < TWO_PI * 100e3 and abs(f.kappa / kappa - 1.0) < 0.05
    elapsed = time.perf_counter() - t0
    ok = noiseless < 1e-6 and passed >= 95
    record(8, "S21 round trip", ok,
           f"noiseless max relative error {noiseless:.1e} (tol 1e-6); noisy seeds within tolerance "
           f"{passed}/100 (need 95)", elapsed, 60.0)


# ---------------------------------------------------------------- 9

def test_criterion_9_global_fit(global_fit):
    result, fit_seconds = global_fit
    s = result.shared
    err_I00 = abs(s["I00"] / TRUTH_SHARED["I00"] - 1.0)
    err_eps = abs(s["epsilon"] - TRUTH_SHARED["epsilon"])
    err_dB = abs(s["deltaB_per_tesla"] / TRUTH_SHARED["deltaB_per_tesla"] - 1.0)
    err_ell = max(abs(result.per_field[B]["delta_ell"] / ell - 1.0)
                  for B, ell in zip(TRUTH_FIELDS, TRUTH_DELTA_ELL))
    ok = err_I00 < 0.02 and err_eps < 0.05 and err_dB < 0.02 and err_ell < 0.05
    record(9, "multi-field global fit", ok,
           f"I00 {err_I00:.1e} (tol 2%), epsilon {err_eps:.1e} (tol 0.05), deltaB/B {err_dB:.1e} (tol 2%), "
           f"delta_ell {err_ell:.1e} (tol 5%)", fit_seconds, 600.0)


# ---------------------------------------------------------------- 10

def test_criterion_10_field_inductances():
    fields = np.array([0.0, 0.05, 0.1, 0.15, 0.2, 0.25, 0.275])
    L_geo, L_star, B_star = 300e-12, 6e-4, 0.45
    sq_geo, sq_star = 330e-12, 4e-4
    t0 = time.perf_counter()
    ref = inductance_table(L_geo, L_star)
    squid = inductance_table(sq_geo, sq_star)
    w = reference_frequencies(fields, TWO_PI * 8e9, L_geo, L_star, B_star)
    r = infer_field_inductances(fields, w, ref, squid, omega_0b0=TWO_PI * 10.38e9)
    elapsed = time.perf_counter() - t0
    errors = {
        "L_geo": abs(r.model.L_geo / L_geo - 1.0),
        "L_star": abs(r.model.L_star / L_star - 1.0),
        "B_star": abs(r.model.B_star / B_star - 1.0),
        "squid L_geo": abs(r.squid.L_geo / sq_geo - 1.0),
        "squid L_star": abs(r.squid.L_star / sq_star - 1.0),
    }
    ok = all(v < 5e-3 for v in errors.values())
    record(10, "field-inductance inference", ok,
           ", ".join(f"{k} {v:.1e}" for k, v in errors.items()) + " (tol 0.5%; lambda0 = 130 nm is an input)", elapsed, 10.0)


# ---------------------------------------------------------------- 11

def test_criterion_11_arc_asymmetry(global_fit):
    result, _ = global_fit
    t0 = time.perf_counter()
    F = {}
    for B in (0.0, 0.275):
        table = result.table(B)
        arc = flux_arc(table, CIRCUIT.replace(field=B), proportional_switching(table, SWITCHING_FRACTION))
        F[B] = max_stable_responsivity(arc) * FLUX_QUANTUM / TWO_PI
    elapsed = time.perf_counter() - t0
    ratio = F[0.275] / F[0.0]
    record(11, "arc asymmetry figure of merit", ratio > 3.0,
           f"max stable |F|/2pi {F[0.0] / 1e6:.1f} MHz/Phi0 at 0 T, {F[0.275] / 1e6:.1f} MHz/Phi0 at 275 mT, "
           f"ratio {ratio:.2f} (> 3)", elapsed, 60.0)
