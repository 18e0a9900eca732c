import math
import warnings

import numpy as np
import pytest

from conftest import TWO_PI, diode_params
from diodesquid.constants import FLUX_QUANTUM
from diodesquid.cpr import cpr_diode
from diodesquid.errors import (
    AmbiguousJumps,
    InsufficientArcs,
    NoStableBranch,
    ParameterAtBound,
    TableRangeExceeded,
    ValidationError,
)
from diodesquid.estimation import (
    GlobalFitResult,
    KerrPoints,
    RawSweep,
    arc_sweetspot,
    calibrate,
    calibrate_bias,
    fit_flux_arcs_multifield,
    fit_inductance_table,
    fit_kerr_with_correction,
    infer_field_inductances,
    kerr_model,
    segment_arcs,
)
from diodesquid.kerr import PolynomialCorrection, apply_correction
from diodesquid.params import DiodeModelParams, attenuation, attenuation_db
from diodesquid.squid import proportional_switching
from diodesquid.synthetic import (
    arc_sweep,
    inductance_table,
    kerr_points,
    reference_frequencies,
    sample_fluxes,
    true_offset,
)

K_B = TWO_PI / 0.305
HOMOGENEOUS_ELL = TWO_PI * 12e-12 * 30e-6 / FLUX_QUANTUM


def synthesize(table, circuit, points=201, offset=0.1, noise=0.0, rng=None):
    return arc_sweep(table, circuit, proportional_switching(table, 0.6), I_b0=1e-3,
                     delta_phi_b=offset * FLUX_QUANTUM, points=points, noise=noise, rng=rng)


def arcs_at(field, params, circuit, **kw):
    s = synthesize(cpr_diode(params), circuit.replace(field=field), **kw)
    return calibrate(segment_arcs(s.sweep)), circuit.replace(field=field), s


def mirrored(sweep: RawSweep) -> RawSweep:
    return RawSweep(field=sweep.field, bias_current=-sweep.bias_current, omega_0=sweep.omega_0,
                    direction=-sweep.direction)


class TestSegmentation:
    @pytest.mark.parametrize("field,ell", [(0.0, 1.276), (0.275, 1.5)])
    def test_generator_jumps_recovered(self, field, ell, circuit):
        s = synthesize(cpr_diode(diode_params(field, ell)), circuit.replace(field=field))
        arcs = segment_arcs(s.sweep)
        assert arcs.jumps == tuple(s.jumps.tolist())
        assert len(s.jumps) >= 4 and arcs.arcs.size >= 3
        # arc numbers follow the fluxoid number of the generator
        np.testing.assert_array_equal(arcs.arc_index, s.fluxoid_index - s.fluxoid_index.min())

    def test_downward_jumps_at_high_field(self, circuit):
        s = synthesize(cpr_diode(diode_params(0.275, 1.5)), circuit.replace(field=0.275))
        steps = np.diff(s.sweep.omega_0)[s.jumps - 1]
        down = s.sweep.direction[s.jumps] < 0
        assert np.all(steps[down] < 0) and np.all(steps[~down] > 0)
        assert segment_arcs(s.sweep).jumps == tuple(s.jumps.tolist())

    def test_noisy_jumps_recovered(self, circuit):
        rng = np.random.default_rng(11)
        s = synthesize(cpr_diode(diode_params(0.275, 1.5)), circuit.replace(field=0.275),
                       noise=TWO_PI * 0.2e6, rng=rng)
        assert segment_arcs(s.sweep).jumps == tuple(s.jumps.tolist())

    def test_monotone_data_single_arc(self):
        I = np.linspace(0, 1e-3, 200)
        sweep = RawSweep(0.0, I, TWO_PI * (10e9 + 1e8 * np.sin(I * 3e3)), "up")
        arcs = segment_arcs(sweep)
        assert arcs.jumps == () and np.all(arcs.arc_index == 0)

    def test_ambiguous_jump(self):
        I = np.arange(100.0)
        w = np.arange(100.0)
        w[50:] += 6.0  # a step of 7x the median: above 5x, below 10x
        sweep = RawSweep(0.0, I, w, "up")
        with pytest.raises(AmbiguousJumps):
            segment_arcs(sweep)
        arcs = segment_arcs(sweep, overrides=[50])
        assert arcs.jumps == (50,) and arcs.arc_index[49] == 0 and arcs.arc_index[50] == 1
        assert segment_arcs(sweep, overrides={0.0: []}).jumps == ()

    def test_coarse_sampling_is_ambiguous(self, circuit):
        # small down-sweep jumps on a coarse grid fall between the two thresholds
        s = synthesize(cpr_diode(diode_params(0.2, 1.4)), circuit.replace(field=0.2),
                       noise=TWO_PI * 0.2e6, rng=np.random.default_rng(2))
        with pytest.raises(AmbiguousJumps):
            segment_arcs(s.sweep)
        arcs = segment_arcs(s.sweep, overrides={0.2: s.jumps.tolist()})
        assert arcs.jumps == tuple(s.jumps.tolist())

    def test_override_validation(self):
        sweep = RawSweep(0.0, np.arange(20.0), np.arange(20.0), "up")
        with pytest.raises(ValidationError):
            segment_arcs(sweep, overrides=[25])

    def test_deterministic(self, circuit):
        s = synthesize(cpr_diode(diode_params(0.2, 1.4)), circuit.replace(field=0.2), points=401,
                       noise=TWO_PI * 0.2e6, rng=np.random.default_rng(2))
        a, b = segment_arcs(s.sweep), segment_arcs(s.sweep)
        np.testing.assert_array_equal(a.arc_index, b.arc_index)
        assert a.jumps == b.jumps

    def test_raw_sweep_validation(self):
        with pytest.raises(ValidationError):
            RawSweep(0.0, np.array([0.0, 2.0, 1.0]), np.zeros(3), "up")
        with pytest.raises(ValidationError):
            RawSweep(0.0, np.arange(3.0), np.zeros(3), "sideways")


class TestCalibration:
    @pytest.mark.parametrize("field,ell", [(0.0, 1.276), (0.275, 1.5)])
    def test_bias_period(self, field, ell, circuit):
        s = synthesize(cpr_diode(diode_params(field, ell)), circuit.replace(field=field))
        I_b0, _ = calibrate_bias(segment_arcs(s.sweep))
        assert I_b0 == pytest.approx(1e-3, rel=1e-3)

    def test_symmetric_arc_vertex(self):
        I = np.linspace(-1.0, 1.0, 201)
        assert arc_sweetspot(I, 5.0 - 3.0 * I**2) == pytest.approx(0.0, abs=1e-14)
        assert arc_sweetspot(I, 5.0 + 3.0 * I**2) is None

    def test_zero_field_sweetspots_on_flux_quanta(self, circuit):
        arcs, _, _ = arcs_at(0.0, diode_params(0.0, 1.276), circuit)
        flux = FLUX_QUANTUM * arcs.sweetspot_currents / arcs.I_b0 - arcs.delta_phi_b
        np.testing.assert_allclose(flux / FLUX_QUANTUM, arcs.sweetspot_arcs, atol=1e-3)

    def test_insufficient_arcs(self):
        I = np.linspace(-1e-3, 1e-3, 101)
        sweep = RawSweep(0.0, I, 1e10 - 1e15 * I**2, "up")
        with pytest.raises(InsufficientArcs):
            calibrate(segment_arcs(sweep))

    def test_uncalibrated_flux_rejected(self):
        sweep = RawSweep(0.0, np.arange(20.0), np.arange(20.0), "up")
        with pytest.raises(ValidationError):
            segment_arcs(sweep).applied_flux()


def homogeneous_fit(arcs, circuit):
    init = dict(I00=33e-6, epsilon=0.0, b=0.0, deltaB_per_tesla=0.0, delta_ell=1.0)
    return fit_flux_arcs_multifield([arcs], [circuit], init, fixed=("epsilon", "b", "deltaB_per_tesla"))


@pytest.fixture(scope="module")
def homogeneous_arcs(circuit):
    return arcs_at(0.0, DiodeModelParams(30e-6, 0.0, 0.0, 0.0, HOMOGENEOUS_ELL), circuit)


class TestGlobalFit:

    def test_zero_field_simple_fit(self, homogeneous_arcs):
        arcs, circuit, _ = homogeneous_arcs
        r = homogeneous_fit(arcs, circuit)
        assert r.shared["I00"] == pytest.approx(30e-6, rel=1e-4)
        L_lin = r.derived()["L_lin"]
        assert L_lin == pytest.approx(12e-12, abs=0.05e-12)
        assert FLUX_QUANTUM / (TWO_PI * r.shared["I00"]) == pytest.approx(11e-12, abs=0.2e-12)
        assert r.shared["epsilon"] == 0.0 and r.shared["b"] == 0.0

    def test_bias_offset_only_moves_flux_offset(self, homogeneous_arcs):
        arcs, circuit, s = homogeneous_arcs
        shift = 0.37e-3
        moved = RawSweep(s.sweep.field, s.sweep.bias_current + shift, s.sweep.omega_0, s.sweep.direction)
        arcs2 = calibrate(segment_arcs(moved))
        assert arcs2.I_b0 == pytest.approx(arcs.I_b0, rel=1e-12)
        a, b = homogeneous_fit(arcs, circuit), homogeneous_fit(arcs2, circuit)
        assert b.shared["I00"] == pytest.approx(a.shared["I00"], rel=1e-9)
        assert b.per_field[0.0]["delta_ell"] == pytest.approx(a.per_field[0.0]["delta_ell"], rel=1e-9)
        moved_offset = b.per_field[0.0]["delta_phi_b"] - a.per_field[0.0]["delta_phi_b"]
        assert moved_offset == pytest.approx(FLUX_QUANTUM * shift / arcs.I_b0, rel=1e-9)

    def test_mirrored_arcs_flip_gradient(self, circuit):
        arcs, cc, s = arcs_at(0.275, diode_params(0.275, 1.5), circuit)
        mirror = calibrate(segment_arcs(mirrored(s.sweep)))
        init = dict(I00=36e-6, epsilon=0.78, b=0.8, deltaB_per_tesla=1.03 * K_B, delta_ell=1.45)
        a = fit_flux_arcs_multifield([arcs], [cc], init, fixed=("epsilon", "b"))
        init_m = dict(init, deltaB_per_tesla=-a.shared["deltaB_per_tesla"])
        b = fit_flux_arcs_multifield([mirror], [cc], init_m, fixed=("epsilon", "b"))
        assert b.shared["deltaB_per_tesla"] == pytest.approx(-a.shared["deltaB_per_tesla"], rel=1e-4)
        assert b.shared["I00"] == pytest.approx(a.shared["I00"], rel=1e-4)
        assert b.per_field[0.275]["delta_ell"] == pytest.approx(a.per_field[0.275]["delta_ell"], rel=1e-4)
        assert a.shared["deltaB_per_tesla"] == pytest.approx(K_B, rel=2e-4)

    def test_self_consistency_random_draws(self, circuit):
        # exact calibration, so the data are the forward model's own output
        rng = np.random.default_rng(2024)
        done = 0
        while done < 3:
            truth = dict(I00=rng.uniform(28e-6, 42e-6), epsilon=rng.uniform(0.6, 0.9),
                         b=rng.uniform(0.6, 0.9), deltaB_per_tesla=TWO_PI / rng.uniform(0.29, 0.32))
            ells = rng.uniform(1.2, 1.5, size=2)
            datasets, circuits = [], []
            try:
                for B, ell in zip((0.1, 0.275), ells):
                    p = DiodeModelParams(truth["I00"], truth["epsilon"], truth["b"],
                                         truth["deltaB_per_tesla"] * B, ell)
                    cc = circuit.replace(field=B)
                    s = synthesize(cpr_diode(p), cc)
                    arcs = segment_arcs(s.sweep).with_calibration(1e-3, 0.0)
                    datasets.append(arcs.with_calibration(1e-3, true_offset(s, arcs)))
                    circuits.append(cc)
            except NoStableBranch:
                continue  # switching leaves a flux gap: not a sweepable device
            init = {k: v * 1.02 for k, v in truth.items()}
            init["delta_ell"] = ells * 0.98
            # exact offsets put branch 0 on the model flux rather than the sweetspot on zero
            init["delta_phi_b"] = [ds.delta_phi_b for ds in datasets]
            r = fit_flux_arcs_multifield(datasets, circuits, init)
            for k, v in truth.items():
                assert r.shared[k] == pytest.approx(v, rel=1e-4), k
            for B, ell in zip((0.1, 0.275), ells):
                assert r.per_field[B]["delta_ell"] == pytest.approx(ell, rel=1e-4)
            done += 1

    def test_parameter_at_bound_reported(self, circuit):
        arcs, cc, _ = arcs_at(0.275, diode_params(0.275, 1.45, b=1.0), circuit)
        init = dict(I00=35e-6, epsilon=0.78, b=0.95, deltaB_per_tesla=K_B, delta_ell=1.45)
        with warnings.catch_warnings(record=True) as caught:
            warnings.simplefilter("always")
            r = fit_flux_arcs_multifield([arcs], [cc], init, fixed=("epsilon",))
        assert r.shared["b"] == pytest.approx(1.0, abs=1e-6)
        assert any(issubclass(w.category, ParameterAtBound) for w in caught)

    def test_input_validation(self, circuit, homogeneous_arcs):
        arcs, cc, _ = homogeneous_arcs
        init = dict(I00=33e-6, epsilon=0.0, b=0.0, deltaB_per_tesla=0.0, delta_ell=1.0)
        with pytest.raises(ValidationError):
            fit_flux_arcs_multifield([arcs], [], init)
        with pytest.raises(ValidationError):
            fit_flux_arcs_multifield([arcs], [cc], init, fixed=("nonsense",))
        raw = segment_arcs(RawSweep(0.0, np.arange(20.0), np.arange(20.0), "up"))
        with pytest.raises(ValidationError):
            fit_flux_arcs_multifield([raw], [cc], init)

    def test_derived_quantities(self):
        r = GlobalFitResult(shared=dict(I00=35e-6, epsilon=0.78, b=1.0, deltaB_per_tesla=K_B),
                            per_field={0.0: dict(delta_phi_b=0.0, delta_ell=1.276)},
                            uncertainties={}, goodness={})
        d = r.derived(a=20e-9, w=100e-9)
        assert d["B0"] == pytest.approx(0.305, rel=1e-12)
        assert d["A_eff"] == pytest.approx(FLUX_QUANTUM / 0.305, rel=1e-12)
        assert d["l_eff0"] == pytest.approx(d["A_eff"] / 20e-9, rel=1e-12)
        assert d["j0"] == pytest.approx(35e-6 / 2e-15, rel=1e-12)
        assert d["L_lin"] == pytest.approx(FLUX_QUANTUM * 1.276 / (TWO_PI * 35e-6), rel=1e-12)


def kerr_bundle(circuit, q_true, fields=((0.0, 1.276), (0.275, 1.5)), zeta0=3e-7, zeta1=2e-11,
                rel_sigma=0.02, noise=False, seed=0):
    rng = np.random.default_rng(seed)
    points, arcs, circuits, per, truth_tables = [], [], [], {}, []
    for B, ell in fields:
        base = cpr_diode(diode_params(B, ell))
        true = apply_correction(base, PolynomialCorrection.anchored(base).with_coefficients(q_true))
        cc = circuit.replace(field=B)
        rule = proportional_switching(true, 0.6)
        s = arc_sweep(true, cc, rule, points=301)
        ds = segment_arcs(s.sweep).with_calibration(1e-3, 0.0)
        flux = sample_fluxes(true, cc, rule, 15)
        points.append(kerr_points(true, cc, flux, zeta0=zeta0, zeta1=zeta1, rel_sigma=rel_sigma,
                                  noise=noise, rng=rng))
        arcs.append(ds)
        circuits.append(cc)
        truth_tables.append(true)
        per[B] = dict(delta_phi_b=true_offset(s, ds), delta_ell=ell)
    shared = dict(I00=35e-6, epsilon=0.78, b=0.8, deltaB_per_tesla=K_B)
    base = GlobalFitResult(shared=shared, per_field=per, uncertainties={}, goodness={})
    return points, arcs, circuits, base, truth_tables


class TestKerrFit:
    def test_recovers_attenuation_and_bimodal_kerr(self, circuit):
        points, arcs, circuits, base, truth = kerr_bundle(circuit, (1e-3, -1e-4, 0.0, 0.0))
        r = fit_kerr_with_correction(points, arcs, base, circuits)
        assert r.zeta0 == pytest.approx(3e-7, rel=0.10)
        for pts, cc, true in zip(points, circuits, truth):
            corrected = apply_correction(base.table(pts.field), r.corrections[pts.field])
            K_fit = kerr_model(corrected, cc, pts.shifted_flux)
            K_true = kerr_model(true, cc, pts.shifted_flux)
            np.testing.assert_allclose(K_fit, K_true, rtol=0.15)
        assert np.all(r.attenuation(np.concatenate([p.omega_p for p in points])) > 0)
        assert max(r.correction_size.values()) < 50e-9

    def test_exact_model_needs_no_correction(self, circuit):
        # constant attenuation: step 1 with zeta1 = 0 is then exact
        points, arcs, circuits, base, _ = kerr_bundle(circuit, (0.0, 0.0, 0.0, 0.0), zeta1=0.0)
        r = fit_kerr_with_correction(points, arcs, base, circuits)
        assert r.zeta0 == pytest.approx(3e-7, rel=1e-9)
        assert abs(r.zeta1) < 1e-9 / (TWO_PI * 1e9)
        for B, corr in r.corrections.items():
            assert r.correction_size[B] < 1e-9 * corr.J, B
            assert r.step_zeta0[B] == pytest.approx(3e-7, rel=1e-9)

    def test_weighting_neutral_to_common_scale(self, circuit):
        points, arcs, circuits, base, _ = kerr_bundle(circuit, (1e-3, -1e-4, 0.0, 0.0), noise=True, seed=4)
        scaled = [KerrPoints(p.field, p.shifted_flux, p.omega_0, p.zeta_kerr, 3.0 * p.sigma, p.omega_p)
                  for p in points]
        for p, q in zip(points, scaled):
            np.testing.assert_allclose(q.weights, p.weights, rtol=1e-15)
        a = fit_kerr_with_correction(points, arcs, base, circuits)
        b = fit_kerr_with_correction(scaled, arcs, base, circuits)
        # weights agree to an ulp; the weakly determined directions (zeta1, q8)
        # then stop at slightly different points inside the optimizer tolerance
        assert b.zeta0 == pytest.approx(a.zeta0, rel=1e-6)
        assert b.zeta1 == pytest.approx(a.zeta1, rel=1e-4)
        arc_ranges = {0.0: (-1.33, 1.33), 0.275: (-2.5, -0.43)}
        for B, (lo, hi) in arc_ranges.items():
            x = np.linspace(lo, hi, 201)
            ca, cb = a.corrections[B], b.corrections[B]
            np.testing.assert_allclose(cb(x), ca(x), rtol=0, atol=1e-5 * a.correction_size[B])

    def test_mismatched_inputs(self, circuit):
        points, arcs, circuits, base, _ = kerr_bundle(circuit, (0.0, 0.0, 0.0, 0.0), fields=((0.0, 1.276),))
        with pytest.raises(ValidationError):
            fit_kerr_with_correction(points, arcs, base, [])

    def test_paper_scale_attenuation(self):
        assert attenuation_db(4e-5) == pytest.approx(44.0, abs=0.05)
        assert attenuation(TWO_PI * 10.25e9, 4e-5, 1e-15) == pytest.approx(4e-5, rel=1e-12)


class TestInductances:
    fields = np.array([0.0, 0.05, 0.1, 0.15, 0.2, 0.25, 0.275])
    ref = (300e-12, 6e-4)
    squid = (330e-12, 4e-4)
    loop = (40e-12, 5e-5)
    B_star = 0.45

    def infer(self, **kw):
        w = reference_frequencies(self.fields, TWO_PI * 8e9, *self.ref, self.B_star)
        return infer_field_inductances(self.fields, w, inductance_table(*self.ref), inductance_table(*self.squid),
                                       inductance_table(*self.loop), omega_0b0=TWO_PI * 10.38e9, **kw)

    def test_table_round_trip(self):
        t = fit_inductance_table(*inductance_table(*self.squid))
        assert t.L_geo == pytest.approx(self.squid[0], rel=1e-3)
        assert t.L_star == pytest.approx(self.squid[1], rel=1e-3)

    def test_field_model_round_trip(self):
        r = self.infer()
        assert r.model.B_star == pytest.approx(self.B_star, rel=1e-3)
        assert r.model.lambda0 == 130e-9
        lam_true = (1 + (self.fields / self.B_star) ** 2) * 130e-9
        np.testing.assert_allclose(r.penetration_depth, lam_true, rtol=1e-3)
        L_b_true = self.squid[0] + self.squid[1] * lam_true / np.tanh(100e-9 / lam_true)
        np.testing.assert_allclose(r.L_b, L_b_true, rtol=1e-3)
        assert np.all(np.diff(r.L_b) > 0) and np.all(np.diff(r.omega_0b) < 0)

    def test_zero_field_reproduces_table(self):
        r = self.infer()
        assert r.L_b[0] == r.squid(130e-9)
        assert r.omega_0b[0] == TWO_PI * 10.38e9

    def test_sweetspot_constriction_inductance(self):
        r0 = self.infer()
        L_c = 23e-12
        w00 = r0.omega_0b * np.sqrt(r0.L_b / (r0.L_b + L_c / 2))
        r = self.infer(sweetspot_freqs=w00)
        np.testing.assert_allclose(r.L_c0, L_c, rtol=1e-9)
        c = r.circuit(3)
        assert c.L_b == r.L_b[3] and c.field == self.fields[3]

    def test_range_exceeded(self):
        w = reference_frequencies(self.fields, TWO_PI * 8e9, *self.ref, 0.05)
        with pytest.raises(TableRangeExceeded):
            infer_field_inductances(self.fields, w, inductance_table(*self.ref), inductance_table(*self.squid))

    def test_needs_zero_field(self):
        w = reference_frequencies(self.fields[1:], TWO_PI * 8e9, *self.ref, self.B_star)
        with pytest.raises(ValidationError):
            infer_field_inductances(self.fields[1:], w, inductance_table(*self.ref), inductance_table(*self.squid))
