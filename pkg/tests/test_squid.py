import math

import numpy as np
import pytest
from hypothesis import given, strategies as st

from conftest import TWO_PI, diode_params
from diodesquid.constants import FLUX_QUANTUM
from diodesquid.cpr import cpr_diode, homogeneous_table
from diodesquid.errors import BranchTerminated, NonPhysical, SingularInductance, ValidationError
from diodesquid.params import DiodeModelParams
from diodesquid.squid import (
    FixedCurrent,
    FixedPhase,
    FoldPoint,
    bias_flux,
    constriction_inductance,
    delta_c_of_bias,
    flux_arc,
    flux_responsivity,
    fold_segment,
    hysteresis_sweep,
    max_stable_responsivity,
    proportional_switching,
    resonance_frequency,
    responsivity_at,
    switching_segment,
)

MHZ_PER_PHI0 = FLUX_QUANTUM / TWO_PI / 1e6


class TestInductance:
    def test_sine_sweetspot(self, sine_table):
        assert constriction_inductance(sine_table, 0.0) == pytest.approx(FLUX_QUANTUM / (TWO_PI * 30e-6), rel=1e-9)
        assert constriction_inductance(sine_table, 0.0) == pytest.approx(11e-12, abs=0.05e-12)

    def test_homogeneous_sweetspot(self, homogeneous):
        assert constriction_inductance(homogeneous, 0.0) == pytest.approx(23e-12, abs=0.05e-12)

    def test_minimum_at_maximum_slope(self, high_field_diode):
        t = high_field_diode
        phase, _ = t.max_slope()
        x = np.linspace(phase - 0.8, phase + 0.8, 161)
        assert np.all(constriction_inductance(t, x) >= constriction_inductance(t, phase) - 1e-24)

    def test_singular(self, sine_table):
        with pytest.raises(SingularInductance):
            constriction_inductance(sine_table, math.pi / 2)


class TestResonance:
    def test_sweetspot_frequency(self):
        f = resonance_frequency(TWO_PI * 10.380e9, 397e-12, 23e-12) / TWO_PI
        assert f == pytest.approx(10.233e9, abs=1e6)

    def test_limits(self):
        assert resonance_frequency(7.0, 1.0, 0.0) == 7.0
        assert resonance_frequency(7.0, 1.0, 2.0) == pytest.approx(7.0 / math.sqrt(2), rel=1e-15)

    def test_nonphysical(self):
        with pytest.raises(NonPhysical):
            resonance_frequency(7.0, 1.0, -3.0)


class TestBiasFlux:
    def test_zero_flux_zero_phase(self, high_field_diode, circuit):
        assert delta_c_of_bias(high_field_diode, circuit.L_loop, 0.0) == pytest.approx(0.0, abs=1e-12)

    def test_half_quantum_against_dense_scan(self, homogeneous, circuit):
        d = np.linspace(0.0, math.pi, 100001)
        phi = FLUX_QUANTUM * d / math.pi + circuit.L_loop * 30e-6 * np.sin(
            d - np.asarray(_homogeneous_junction_shift(d))
        )
        i = np.flatnonzero(np.diff(np.sign(phi - 0.5 * FLUX_QUANTUM)))[0]
        oracle = d[i] + (0.5 * FLUX_QUANTUM - phi[i]) / (phi[i + 1] - phi[i]) * (d[i + 1] - d[i])
        got = delta_c_of_bias(homogeneous, circuit.L_loop, 0.5 * FLUX_QUANTUM)
        assert got == pytest.approx(oracle, abs=1e-6)

    def test_past_fold(self, homogeneous, circuit):
        seg = fold_segment(homogeneous, circuit.L_loop)
        beyond = bias_flux(homogeneous, circuit.L_loop, seg.delta_hi) + 0.01 * FLUX_QUANTUM
        with pytest.raises(BranchTerminated):
            delta_c_of_bias(homogeneous, circuit.L_loop, beyond)

    def test_branch_offset(self, homogeneous, circuit):
        a = delta_c_of_bias(homogeneous, circuit.L_loop, 0.3 * FLUX_QUANTUM)
        b = delta_c_of_bias(homogeneous, circuit.L_loop, 2.3 * FLUX_QUANTUM, branch=2)
        assert a == pytest.approx(b, abs=1e-12)


def _homogeneous_junction_shift(d):
    """Linear-inductance phase of the 30 uA / 12 pH constriction (fixed-point oracle)."""
    ell = TWO_PI * 12e-12 * 30e-6 / FLUX_QUANTUM
    x = np.zeros_like(d)
    for _ in range(400):
        x = 0.5 * x + 0.5 * np.sin(d - ell * x)
    return ell * x


class TestArcs:
    def test_capped_switching_near_nine_tenths(self, homogeneous, circuit):
        arc = flux_arc(homogeneous, circuit, FixedPhase(1.45, -1.45))
        (phi_lo, _), (phi_hi, _) = arc.switch_points
        assert phi_hi / FLUX_QUANTUM == pytest.approx(0.9, abs=0.03)
        assert phi_lo / FLUX_QUANTUM == pytest.approx(-0.9, abs=0.03)

    def test_symmetric_without_loop_inductance(self, sine_table, circuit):
        arc = flux_arc(sine_table, circuit.replace(L_loop=0.0), n_points=2001)
        ok = np.isfinite(arc.omega_0)
        np.testing.assert_allclose(arc.bias_flux, -arc.bias_flux[::-1], atol=1e-12 * FLUX_QUANTUM)
        np.testing.assert_allclose(arc.omega_0[ok], arc.omega_0[::-1][ok], rtol=1e-9)

    @pytest.mark.parametrize("field, delta_ell", [(0.275, 1.5), (0.3, 1.276)])
    def test_down_sweep_jumps_downwards_at_high_field(self, field, delta_ell, circuit):
        t = cpr_diode(diode_params(field, delta_ell))
        rule = proportional_switching(t, 0.6)
        grid = (-2 * FLUX_QUANTUM, 2 * FLUX_QUANTUM, 2001)
        size = {}
        for direction in ("up", "down"):
            r = hysteresis_sweep(t, circuit, grid, direction, rule)
            j = np.flatnonzero(np.diff(r.fluxoid_index))
            size[direction] = r.omega_0[j + 1] - r.omega_0[j]
        assert np.all(size["down"] < 0)
        assert np.all(size["up"] > 0)
        assert np.min(size["up"]) > np.max(np.abs(size["down"]))

    def test_zero_field_jumps_upwards(self, zero_field_diode, circuit):
        rule = proportional_switching(zero_field_diode, 0.6)
        for direction in ("up", "down"):
            r = hysteresis_sweep(zero_field_diode, circuit, (-2 * FLUX_QUANTUM, 2 * FLUX_QUANTUM, 2001), direction, rule)
            j = np.flatnonzero(np.diff(r.fluxoid_index))
            assert np.all(r.omega_0[j + 1] > r.omega_0[j])

    @pytest.mark.parametrize("params", [
        DiodeModelParams(35e-6, 0.0, 0.0, 2.0, 1.3),
        DiodeModelParams(35e-6, 0.78, 0.8, 2.0, 0.0),
    ])
    def test_non_diode_arcs_symmetric_about_sweetspot(self, params, circuit):
        t = cpr_diode(params)
        arc = flux_arc(t, circuit)
        phi_ss = bias_flux(t, circuit.L_loop, arc.sweetspot)
        s = arc.stable_mask
        x = np.linspace(0.0, 0.95 * min(phi_ss - arc.bias_flux[s][0], arc.bias_flux[s][-1] - phi_ss), 50)
        d_plus = delta_c_of_bias(t, circuit.L_loop, phi_ss + x)
        d_minus = delta_c_of_bias(t, circuit.L_loop, phi_ss - x)
        w = lambda d: resonance_frequency(circuit.omega_0b, circuit.L_b, constriction_inductance(t, d))
        np.testing.assert_allclose(w(d_plus), w(d_minus), rtol=1e-6)

    def test_field_reversal_mirrors_arc(self, circuit):
        plus = cpr_diode(diode_params(0.25, 1.45))
        minus = cpr_diode(DiodeModelParams(plus.scale, 0.78, 0.8, -diode_params(0.25, 1.45).delta_B, 1.45))
        a, b = flux_arc(plus, circuit), flux_arc(minus, circuit)
        np.testing.assert_allclose(b.bias_flux[::-1], -a.bias_flux, atol=1e-9 * FLUX_QUANTUM)
        ok = np.isfinite(a.omega_0)
        np.testing.assert_allclose(b.omega_0[::-1][ok], a.omega_0[ok], rtol=1e-6)

    def test_eqs_consistency_of_arc_points(self, high_field_diode, circuit):
        arc = flux_arc(high_field_diode, circuit)
        phi = bias_flux(high_field_diode, circuit.L_loop, arc.delta_c)
        np.testing.assert_allclose(phi, arc.bias_flux, rtol=0, atol=1e-15 * FLUX_QUANTUM)
        s = arc.stable_mask & np.isfinite(arc.omega_0)
        w = resonance_frequency(circuit.omega_0b, circuit.L_b, constriction_inductance(high_field_diode, arc.delta_c[s]))
        np.testing.assert_allclose(w, arc.omega_0[s], rtol=1e-14)

    @pytest.mark.parametrize("which", ["zero_field_diode", "high_field_diode", "homogeneous"])
    def test_inductance_monotone_away_from_sweetspot(self, which, request, circuit):
        t = request.getfixturevalue(which)
        arc = flux_arc(t, circuit, proportional_switching(t, 0.6), n_points=4001)
        d = arc.delta_c[arc.accessible_mask]
        L_c = arc.L_c[arc.accessible_mask]
        i = int(np.argmin(L_c))
        assert d[i] == pytest.approx(arc.sweetspot, abs=2 * (d[1] - d[0]))
        assert np.all(np.diff(L_c[i:]) > 0) and np.all(np.diff(L_c[: i + 1]) < 0)

    def test_homogeneous_slope_monotone_on_fold_segment(self, homogeneous, circuit):
        arc = flux_arc(homogeneous, circuit, n_points=4001)
        slope = homogeneous.derivative(arc.delta_c[arc.stable_mask])
        k = int(np.argmax(slope))
        assert np.all(np.diff(slope[k:]) < 0) and np.all(np.diff(slope[: k + 1]) > 0)


class TestSweeps:
    @pytest.mark.parametrize("rule", [FoldPoint(), FixedPhase(1.45, -1.45)])
    def test_hysteresis_pairs(self, rule, homogeneous, circuit):
        grid = (-1.4 * FLUX_QUANTUM, 1.6 * FLUX_QUANTUM, 3001)
        up = hysteresis_sweep(homogeneous, circuit, grid, "up", rule)
        down = hysteresis_sweep(homogeneous, circuit, grid, "down", rule)
        step = 3.0 / 3000

        def jumps(r):
            i = np.flatnonzero(np.diff(r.fluxoid_index))
            return {(int(min(r.fluxoid_index[k], r.fluxoid_index[k + 1]))): 0.5 * (r.bias_flux[k] + r.bias_flux[k + 1])
                    for k in i}

        ju, jd = jumps(up), jumps(down)
        pairs = sorted(set(ju) & set(jd))
        assert pairs
        # the n -> n+1 switch going up mirrors the n+1 -> n switch going down about (n + 1/2)
        for n in pairs:
            assert (ju[n] + jd[n]) / 2 / FLUX_QUANTUM == pytest.approx(n + 0.5, abs=step)
            assert ju[n] > jd[n]
        # frequencies coincide exactly where both sweeps sit on the same branch,
        # and never inside a hysteresis window
        w_up, w_down = up.omega_0, down.omega_0[::-1]
        same = np.isclose(w_up, w_down, rtol=1e-9)
        on_same_branch = up.fluxoid_index == down.fluxoid_index[::-1]
        assert np.all(same[on_same_branch])
        x = up.bias_flux / FLUX_QUANTUM
        # branches n and m of a symmetric arc only meet at (n + m) / 2
        meet = 0.5 * (up.fluxoid_index + down.fluxoid_index[::-1])
        for n in pairs:
            inside = (x > jd[n] / FLUX_QUANTUM) & (x < ju[n] / FLUX_QUANTUM) & (np.abs(x - meet) > 2 * step)
            assert inside.any() and not np.any(same[inside])
        if isinstance(rule, FixedPhase):
            # capped switching leaves windows narrower than a flux quantum
            assert same.sum() > 0.2 * same.size

    def test_no_jumps_without_loop_inductance(self, sine_table, circuit):
        c0 = circuit.replace(L_loop=0.0)
        grid = (-1.0 * FLUX_QUANTUM, 1.0 * FLUX_QUANTUM, 601)
        up = hysteresis_sweep(sine_table, c0, grid, "up", start_branch=0)
        down = hysteresis_sweep(sine_table, c0, grid, "down", start_branch=0)
        assert up.jump_locations.size == 0 and down.jump_locations.size == 0
        np.testing.assert_allclose(up.omega_0, down.omega_0[::-1], rtol=1e-12, equal_nan=True)
        # the next branch repeats the response one flux quantum later
        shifted = (0.0, 2.0 * FLUX_QUANTUM, 601)
        nxt = hysteresis_sweep(sine_table, c0, shifted, "up", start_branch=1)
        assert nxt.jump_locations.size == 0
        np.testing.assert_allclose(nxt.omega_0, up.omega_0, rtol=1e-12, equal_nan=True)
        # closed form of the sine SQUID on branch 0
        c = np.cos(np.pi * up.bias_flux / FLUX_QUANTUM)
        ratio = 1 + FLUX_QUANTUM / (TWO_PI * 30e-6 * c) / (2 * c0.L_b)
        ok = (ratio > 0) & (np.abs(c) > 0.05)
        np.testing.assert_allclose(up.omega_0[ok], c0.omega_0b / np.sqrt(ratio[ok]), rtol=1e-8)

    def test_fixed_current_switches_early(self, homogeneous, circuit):
        fold = flux_arc(homogeneous, circuit).switch_points
        early = flux_arc(homogeneous, circuit, FixedCurrent(20e-6, -20e-6)).switch_points
        assert early[1][0] < fold[1][0]
        assert early[0][0] > fold[0][0]
        assert early[1][1] == pytest.approx(20e-6, rel=1e-9)

    def test_flux_periodicity(self, high_field_diode, circuit):
        rule = proportional_switching(high_field_diode, 0.6)
        a = hysteresis_sweep(high_field_diode, circuit, (-1.3 * FLUX_QUANTUM, 1.7 * FLUX_QUANTUM, 601), "up", rule)
        b = hysteresis_sweep(high_field_diode, circuit, (-0.3 * FLUX_QUANTUM, 2.7 * FLUX_QUANTUM, 601), "up", rule)
        np.testing.assert_array_equal(b.fluxoid_index, a.fluxoid_index + 1)
        np.testing.assert_allclose(b.omega_0, a.omega_0, rtol=1e-12)

    def test_direction_validation(self, homogeneous, circuit):
        with pytest.raises(ValidationError):
            hysteresis_sweep(homogeneous, circuit, np.array([0.0, 1e-16, 0.0]), "up")
        with pytest.raises(ValidationError):
            hysteresis_sweep(homogeneous, circuit, (0, 1e-15, 3), "sideways")


class TestResponsivity:
    def test_zero_at_sweetspot(self, high_field_diode, circuit):
        arc = flux_arc(high_field_diode, circuit)
        scale = max_stable_responsivity(arc)
        assert abs(responsivity_at(high_field_diode, circuit, arc.sweetspot)) < 1e-6 * scale

    def test_odd_for_symmetric_arc(self, sine_table, circuit):
        x = np.linspace(0.05, 1.0, 40)
        np.testing.assert_allclose(responsivity_at(sine_table, circuit, x),
                                   -responsivity_at(sine_table, circuit, -x), rtol=1e-6)

    def test_finite_difference_oracle(self, high_field_diode, circuit):
        t = high_field_diode
        seg = switching_segment(t, circuit.L_loop, proportional_switching(t, 0.6))
        d = np.linspace(seg.delta_lo + 0.05, seg.delta_hi - 0.05, 9)
        h = 1e-5
        w = lambda x: resonance_frequency(circuit.omega_0b, circuit.L_b, constriction_inductance(t, x))
        fd = (w(d + h) - w(d - h)) / (bias_flux(t, circuit.L_loop, d + h) - bias_flux(t, circuit.L_loop, d - h))
        np.testing.assert_allclose(responsivity_at(t, circuit, d), fd, rtol=1e-5, atol=1e-6 * np.max(np.abs(fd)))
        _, F = flux_responsivity(flux_arc(t, circuit))
        assert np.all(np.isfinite(F[np.isfinite(flux_arc(t, circuit).omega_0)]))

    def test_zero_field_maximum(self, homogeneous, circuit):
        value = max_stable_responsivity(flux_arc(homogeneous, circuit)) * MHZ_PER_PHI0
        assert value == pytest.approx(25.0, rel=0.2)

    def test_high_field_exceeds_zero_field(self, zero_field_diode, high_field_diode, circuit):
        F0 = max_stable_responsivity(flux_arc(zero_field_diode, circuit, proportional_switching(zero_field_diode, 0.6)))
        F1 = max_stable_responsivity(flux_arc(high_field_diode, circuit, proportional_switching(high_field_diode, 0.6)))
        assert F1 / F0 > 3


@given(st.floats(0.05, 0.95))
def test_proportional_rule_bounds(fraction):
    t = homogeneous_table(30e-6, 12e-12)
    rule = proportional_switching(t, fraction)
    assert rule.I_plus == pytest.approx(fraction * 30e-6, rel=1e-6)
    assert rule.I_minus == pytest.approx(-fraction * 30e-6, rel=1e-6)
