"""Command-line front end: simulation, synthetic data and the staged fits.

Exit status: 0 success, 2 invalid input or configuration, 3 a fit or
pipeline stage failed, 4 a file could not be read or written.
"""

from __future__ import annotations

import argparse
import logging
import math
import os
import sys
import warnings
from pathlib import Path

import numpy as np

from . import dataio
from .config import RunConfig, load_config
from .constants import FLUX_QUANTUM
from .errors import DiodeSquidError, NonConvergence, ParseError, ValidationError
from .estimation import (
    GlobalFitResult,
    KerrPoints,
    calibrate,
    fit_flux_arcs_multifield,
    fit_kerr_with_correction,
    infer_field_inductances,
    segment_arcs,
)
from .kerr import kerr_along
from .params import attenuation, attenuation_db
from .pumped import fit_stark_shift, photon_flux, photon_number, pumped_modes, stark_shift
from .s21 import PARAM_NAMES, background_params_from_window, fit_resonance, synthetic_trace
from .squid import (
    bias_flux,
    constriction_inductance,
    flux_arc,
    hysteresis_sweep,
    max_stable_responsivity,
    resonance_frequency,
    switching_segment,
    _inner,
)
from .synthetic import (
    arc_sweep,
    inductance_table,
    kerr_points,
    reference_frequencies,
    sample_fluxes,
    stark_points,
)

log = logging.getLogger("diodesquid")

TWO_PI = 2.0 * math.pi
EXIT_OK, EXIT_VALIDATION, EXIT_FIT, EXIT_IO = 0, 2, 3, 4


def _field_tag(B: float) -> str:
    return f"{B * 1e3:g}mT".replace("-", "m")


def _settings(cfg: RunConfig) -> dict:
    return {"config": cfg.source, **cfg.as_dict()}


# ---------------------------------------------------------------- simulate-cpr

def cmd_simulate_cpr(cfg: RunConfig, args) -> dict:
    out = Path(args.out)
    report = {"command": "simulate-cpr", "fields": []}
    for B in cfg.sweep.fields:
        table = cfg.diode_model.table(B)
        lo, hi = _inner(table)
        d = np.linspace(lo, hi, 1201)
        I_plus, I_minus = table.critical_currents()
        v_lo, v_hi = table.valid_range
        meta = {
            "field_t": B,
            "zero_shift_rad": table.zero_shift,
            "I0_plus_a": I_plus,
            "I0_minus_a": I_minus,
            "valid_lo_rad": v_lo,
            "valid_hi_rad": v_hi,
            "model": cfg.diode_model.kind,
        }
        path = out / f"cpr_{_field_tag(B)}.csv"
        dataio.write_table(path, {
            "delta_c_rad": d,
            "current_a": table.evaluate(d),
            "d1_a_per_rad": table.derivative(d, 1),
            "d2_a_per_rad2": table.derivative(d, 2),
            "d3_a_per_rad3": table.derivative(d, 3),
        }, meta)
        row = dict(meta, file=str(path), ratio_minus_plus=abs(I_minus / I_plus))
        report["fields"].append(row)
        log.info("field %g T: I0+ = %.4g A, I0- = %.4g A", B, I_plus, I_minus)
    report["settings"] = _settings(cfg)
    dataio.write_report(out / "simulate_cpr.yaml", report)
    return report


# ---------------------------------------------------------------- simulate-arcs

def cmd_simulate_arcs(cfg: RunConfig, args) -> dict:
    out = Path(args.out)
    report = {"command": "simulate-arcs", "fields": []}
    for B in cfg.sweep.fields:
        table = cfg.diode_model.table(B)
        circuit = cfg.circuit.at(B)
        rule = cfg.sweep.rule(table)
        seg = switching_segment(table, circuit.L_loop, rule)
        phi_ss = bias_flux(table, circuit.L_loop, seg.sweetspot)
        start, stop = (phi_ss + f * FLUX_QUANTUM for f in cfg.sweep.flux_window)
        up = hysteresis_sweep(table, circuit, (start, stop, cfg.sweep.points), "up", rule)
        down = hysteresis_sweep(table, circuit, (start, stop, cfg.sweep.points), "down", rule,
                                start_branch=int(up.fluxoid_index[-1]))
        cols = {k: [] for k in ("bias_flux_phi0", "direction", "fluxoid_index", "delta_c_rad",
                                "freq_hz", "current_a", "jump_hz")}
        jump_sizes = {}
        for sweep in (up, down):
            jump = np.zeros(sweep.omega_0.size)
            moved = np.flatnonzero(np.diff(sweep.fluxoid_index) != 0) + 1
            jump[moved] = (sweep.omega_0[moved] - sweep.omega_0[moved - 1]) / TWO_PI
            jump_sizes[sweep.direction] = np.abs(jump[moved])
            cols["bias_flux_phi0"].append(sweep.bias_flux / FLUX_QUANTUM)
            cols["direction"].append(np.full(sweep.omega_0.size, 1 if sweep.direction == "up" else -1))
            cols["fluxoid_index"].append(sweep.fluxoid_index)
            cols["delta_c_rad"].append(sweep.delta_c)
            cols["freq_hz"].append(sweep.omega_0 / TWO_PI)
            cols["current_a"].append(sweep.current)
            cols["jump_hz"].append(jump)
        path = out / f"arcs_{_field_tag(B)}.csv"
        dataio.write_table(path, {k: np.concatenate(v) for k, v in cols.items()}, {"field_t": B})
        arc = flux_arc(table, circuit, rule)
        L_c0 = constriction_inductance(table, seg.sweetspot)
        up_jump = float(np.mean(jump_sizes["up"])) if jump_sizes["up"].size else 0.0
        down_jump = float(np.mean(jump_sizes["down"])) if jump_sizes["down"].size else 0.0
        report["fields"].append({
            "field_t": B,
            "file": str(path),
            "sweetspot_flux_phi0": phi_ss / FLUX_QUANTUM,
            "sweetspot_freq_hz": resonance_frequency(circuit.omega_0b, circuit.L_b, L_c0) / TWO_PI,
            "sweetspot_L_c_h": L_c0,
            "max_stable_responsivity_hz_per_phi0": max_stable_responsivity(arc) * FLUX_QUANTUM / TWO_PI,
            "mean_up_jump_hz": up_jump,
            "mean_down_jump_hz": down_jump,
            "jump_asymmetry_hz": up_jump - down_jump,
        })
    report["settings"] = _settings(cfg)
    dataio.write_report(out / "simulate_arcs.yaml", report)
    return report


# ---------------------------------------------------------------- simulate-pumped

def cmd_simulate_pumped(cfg: RunConfig, args) -> dict:
    """Kerr coefficient, photon number and lower pumped mode at arc points."""
    out = Path(args.out)
    pump = cfg.pump
    cols = {k: [] for k in ("field_t", "flux_phi0", "freq_hz", "kerr_hz", "power_w", "n_c",
                            "stark_shift_hz", "mode_minus_hz", "linewidth_pumped_hz")}
    for B in cfg.sweep.fields:
        table = cfg.diode_model.table(B)
        circuit = cfg.circuit.at(B)
        rule = cfg.sweep.rule(table)
        pts = kerr_points(table, circuit, sample_fluxes(table, circuit, rule, cfg.synthetic.kerr_points),
                          1.0, detuning=pump.detuning)
        for flux, w0, K, wp in zip(pts.shifted_flux, pts.omega_0, pts.zeta_kerr, pts.omega_p):
            zeta = float(attenuation(wp, pump.zeta0, pump.zeta1, pump.omega_ref))
            Delta = wp - w0
            for P in pump.powers:
                n = photon_number(Delta, K, circuit.kappa, circuit.kappa_ext, circuit.kappa_nl,
                                  photon_flux(zeta * P, wp)).low
                mode_minus = pumped_modes(Delta, K, n, circuit.kappa, circuit.kappa_nl, omega_p=wp)[1]
                kappa_p = circuit.kappa + 2.0 * circuit.kappa_nl * n
                cols["field_t"].append(B)
                cols["flux_phi0"].append(flux / FLUX_QUANTUM)
                cols["freq_hz"].append(w0 / TWO_PI)
                cols["kerr_hz"].append(K / TWO_PI)
                cols["power_w"].append(P)
                cols["n_c"].append(n)
                cols["stark_shift_hz"].append(stark_shift(Delta, K * n, kappa_p - circuit.kappa) / TWO_PI)
                # the lower mode is the observed one
                cols["mode_minus_hz"].append(mode_minus / TWO_PI)
                cols["linewidth_pumped_hz"].append(kappa_p / TWO_PI)
    path = out / "pumped.csv"
    dataio.write_table(path, {k: np.asarray(v) for k, v in cols.items()})
    report = {"command": "simulate-pumped", "file": str(path), "rows": len(cols["n_c"]),
              "settings": _settings(cfg)}
    dataio.write_report(out / "simulate_pumped.yaml", report)
    return report


# ---------------------------------------------------------------- generate-synthetic

def _truth_shared(cfg: RunConfig) -> dict:
    m = cfg.diode_model
    if m.kind == "homogeneous":
        return {"I00_a": m.I0, "epsilon": 0.0, "b": 0.0, "deltaB_per_tesla_rad": 0.0}
    return {"I00_a": m.I00, "epsilon": m.epsilon, "b": m.b, "deltaB_per_tesla_rad": m.deltaB_per_tesla}


def _truth_delta_ell(cfg: RunConfig, B: float) -> float:
    m = cfg.diode_model
    if m.kind == "homogeneous":
        # sine CPR with a series linear inductance is the diode model at zero asymmetry
        return TWO_PI * m.I0 * m.L_lin / FLUX_QUANTUM
    return m.delta_ell_at(B)


def cmd_generate_synthetic(cfg: RunConfig, args) -> dict:
    if args.seed is None:
        raise ValidationError("generate-synthetic needs --seed")
    rng = np.random.default_rng(args.seed)
    out = Path(args.out)
    syn, pump = cfg.synthetic, cfg.pump
    sweeps, kerr_sets, truth_fields, traces = [], [], [], []
    stark = {k: [] for k in dataio.STARK_COLUMNS}
    point = 0
    for B in cfg.sweep.fields:
        table = cfg.diode_model.table(B)
        circuit = cfg.circuit.at(B)
        rule = cfg.sweep.rule(table)
        s = arc_sweep(table, circuit, rule, I_b0=syn.I_b0, delta_phi_b=syn.delta_phi_b * FLUX_QUANTUM,
                      flux_window=cfg.sweep.flux_window, points=cfg.sweep.points,
                      noise=syn.arc_noise, rng=rng)
        sweeps.append(s.sweep)
        flux = sample_fluxes(table, circuit, rule, syn.kerr_points)
        kp = kerr_points(table, circuit, flux, pump.zeta0, pump.zeta1, pump.omega_ref,
                         rel_sigma=syn.kerr_rel_sigma, noise=syn.kerr_rel_sigma > 0, rng=rng,
                         detuning=pump.detuning)
        kerr_sets.append(kp)
        K_true = kerr_along(table, circuit, np.clip(_branch_phase(table, circuit, flux), *_inner(table)))
        for f, w0, wp, K in zip(flux, kp.omega_0, kp.omega_p, K_true):
            zeta = float(attenuation(wp, pump.zeta0, pump.zeta1, pump.omega_ref))
            shift, n = stark_points(K, circuit, wp - w0, wp, pump.powers, zeta,
                                    noise=syn.stark_noise, rng=rng)
            for P, dw, nc in zip(pump.powers, shift, n):
                stark["point"].append(point)
                stark["field_t"].append(B)
                stark["flux_wb"].append(f)
                stark["freq_hz"].append(w0)
                stark["pump_freq_hz"].append(wp)
                stark["detuning_hz"].append(wp - w0)
                stark["n_over_zeta"].append(nc / zeta)
                stark["shift_hz"].append(dw)
            point += 1
        # one transmission trace at the sweetspot of each field
        w_ss = float(resonance_frequency(circuit.omega_0b, circuit.L_b,
                                         constriction_inductance(table, switching_segment(
                                             table, circuit.L_loop, rule).sweetspot)))
        params = {"omega_0": w_ss, "kappa": circuit.kappa, "kappa_ext": circuit.kappa_ext, "theta": 0.1,
                  **background_params_from_window(w_ss, 10 * circuit.kappa)}
        omega = np.linspace(w_ss - 10 * circuit.kappa, w_ss + 10 * circuit.kappa, syn.s21_points)
        trace = synthetic_trace(omega, params, sigma=syn.s21_sigma, rng=rng, metadata={"field_t": B})
        tpath = out / f"trace_{_field_tag(B)}.csv"
        dataio.write_trace(tpath, trace)
        traces.append({"file": tpath.name, "field_t": B, **{k: params[k] for k in PARAM_NAMES}})
        truth_fields.append({"field_t": B, "delta_ell": _truth_delta_ell(cfg, B),
                             "delta_phi_b_phi0": syn.delta_phi_b})

    ind_fields = sorted(set(cfg.sweep.fields) | {0.0})
    ind_paths = write_inductance_inputs(
        out, ind_fields, syn.reference_freq, (syn.reference_L_geo, syn.reference_L_star),
        (syn.squid_L_geo, syn.squid_L_star), syn.B_star, cfg.inductance.lambda0, cfg.inductance.film_thickness)
    dataio.write_dataset(out / "arcs.csv", sweeps, {"I_b0_a": syn.I_b0, "seed": args.seed})
    dataio.write_kerr_points(out / "kerr_points.csv", kerr_sets)
    dataio.write_stark_points(out / "stark_points.csv", {k: np.asarray(v) for k, v in stark.items()})
    truth = {
        "seed": args.seed,
        "model": cfg.diode_model.kind,
        "shared": _truth_shared(cfg),
        "per_field": truth_fields,
        "I_b0_a": syn.I_b0,
        "zeta0": pump.zeta0,
        "zeta1_per_hz": pump.zeta1 * TWO_PI,
        "traces": traces,
        "inductance": {"lambda0_m": cfg.inductance.lambda0, "B_star_t": syn.B_star,
                       "reference_L_geo_h": syn.reference_L_geo, "reference_L_star_h_per_m": syn.reference_L_star,
                       "squid_L_geo_h": syn.squid_L_geo, "squid_L_star_h_per_m": syn.squid_L_star},
        "files": {"arcs": "arcs.csv", "kerr_points": "kerr_points.csv", "stark_points": "stark_points.csv",
                  **{k: p.name for k, p in ind_paths.items()}},
    }
    dataio.write_report(out / "truth.yaml", truth)
    report = {"command": "generate-synthetic", "seed": args.seed, "truth": "truth.yaml",
              "settings": _settings(cfg)}
    dataio.write_report(out / "generate_synthetic.yaml", report)
    return report


def _branch_phase(table, circuit, flux):
    from .estimation import arc_model

    d, _ = arc_model(table, circuit, flux)
    return d


# ---------------------------------------------------------------- fit-s21

def cmd_fit_s21(cfg: RunConfig, args) -> dict:
    paths = list(args.traces) or list(cfg.io.traces)
    if not paths:
        raise ValidationError("no traces given (positional paths or io.traces)")
    results = []
    for p in paths:
        trace = dataio.read_trace(p)
        fit = fit_resonance(trace, excise=cfg.fit.s21_excise)
        entry = {"file": str(p)}
        for name in PARAM_NAMES:
            entry[name] = getattr(fit, name)
        for name in ("omega_0", "kappa", "kappa_ext"):
            entry[name + "_over_2pi_hz"] = getattr(fit, name) / TWO_PI
        entry["uncertainties"] = dict(fit.uncertainties)
        entry["residual_rms"] = fit.residual_rms
        entry["stage_residuals"] = list(fit.stage_residuals)
        results.append(entry)
        log.info("%s: f0 = %.9g Hz, kappa/2pi = %.6g Hz", p, fit.omega_0 / TWO_PI, fit.kappa / TWO_PI)
    report = {"command": "fit-s21", "fits": results, "settings": _settings(cfg)}
    dataio.write_report(Path(args.out) / "fit_s21.yaml", report)
    return report


# ---------------------------------------------------------------- fit-arcs

def _arc_datasets(cfg: RunConfig, arcs_path, overrides_path):
    if arcs_path is None:
        raise ValidationError("no arc dataset given (--arcs or io.arcs)")
    sweeps = dataio.read_dataset(arcs_path)
    overrides = dataio.read_overrides(overrides_path) if overrides_path else None
    f = cfg.fit
    out = []
    for s in sweeps:
        arcs = segment_arcs(s, threshold=f.jump_threshold, confirm=f.jump_confirm,
                            half_window=f.jump_half_window, overrides=overrides)
        out.append(calibrate(arcs, window=f.sweetspot_window))
    return out


def _initial_guess(cfg: RunConfig) -> dict:
    m = cfg.diode_model
    if m.kind == "homogeneous":
        base = {"I00": m.I0, "epsilon": 0.0, "b": 0.0, "deltaB_per_tesla": 0.0,
                "delta_ell": TWO_PI * m.I0 * m.L_lin / FLUX_QUANTUM}
    else:
        base = {"I00": m.I00, "epsilon": m.epsilon, "b": m.b, "deltaB_per_tesla": m.deltaB_per_tesla,
                "delta_ell": m.delta_ell}
    base.update(cfg.fit.initial)
    return base


def result_report(result: GlobalFitResult, datasets, circuits) -> dict:
    s, u = result.shared, result.uncertainties
    per_field = []
    for ds, circuit in zip(datasets, circuits):
        entry = result._entry(ds.field)
        unc = u["per_field"][ds.field] if ds.field in u.get("per_field", {}) else {}
        table = result.table(ds.field)
        _, slope = table.max_slope()
        L_c0 = FLUX_QUANTUM / (TWO_PI * slope)
        per_field.append({
            "field_t": ds.field,
            "delta_phi_b_wb": entry["delta_phi_b"],
            "delta_phi_b_phi0": entry["delta_phi_b"] / FLUX_QUANTUM,
            "delta_ell": entry["delta_ell"],
            "sigma_delta_ell": unc.get("delta_ell"),
            "I_b0_a": ds.I_b0,
            "calibration_delta_phi_b_wb": ds.delta_phi_b,
            "jumps": len(ds.jumps),
            "sweetspot_L_c_h": L_c0,
            "sweetspot_freq_hz": float(resonance_frequency(circuit.omega_0b, circuit.L_b, L_c0)) / TWO_PI,
        })
    shared = {"I00_a": s["I00"], "epsilon": s["epsilon"], "b": s["b"],
              "deltaB_per_tesla_rad": s["deltaB_per_tesla"]}
    sigma = {"I00_a": u["shared"]["I00"], "epsilon": u["shared"]["epsilon"], "b": u["shared"]["b"],
             "deltaB_per_tesla_rad": u["shared"]["deltaB_per_tesla"]}
    derived = {}
    for k, v in result.derived().items():
        derived[{"B0": "B0_t", "A_eff": "A_eff_m2", "L_lin": "L_lin_h"}.get(k, k)] = v
    return {"shared": shared, "sigma": sigma, "per_field": per_field, "derived": derived,
            "goodness": dict(result.goodness)}


def result_from_report(report: dict) -> GlobalFitResult:
    s = report["shared"]
    shared = {"I00": float(s["I00_a"]), "epsilon": float(s["epsilon"]), "b": float(s["b"]),
              "deltaB_per_tesla": float(s["deltaB_per_tesla_rad"])}
    per_field = {float(e["field_t"]): {"delta_phi_b": float(e["delta_phi_b_wb"]),
                                       "delta_ell": float(e["delta_ell"])} for e in report["per_field"]}
    return GlobalFitResult(shared=shared, per_field=per_field, uncertainties={}, goodness={})


def _compare(fitted: dict, truth: dict) -> dict:
    out = {}
    for k, v in truth["shared"].items():
        t = float(v)
        f = float(fitted["shared"][k])
        out[k] = {"truth": t, "fitted": f, "error": f - t,
                  "relative_error": (f - t) / t if t != 0 else None}
    for entry in truth["per_field"]:
        B = float(entry["field_t"])
        match = [e for e in fitted["per_field"] if math.isclose(e["field_t"], B, abs_tol=1e-9)]
        if match:
            t, f = float(entry["delta_ell"]), float(match[0]["delta_ell"])
            out[f"delta_ell@{B:g}T"] = {"truth": t, "fitted": f, "error": f - t,
                                        "relative_error": (f - t) / t if t else None}
    return out


def cmd_fit_arcs(cfg: RunConfig, args) -> dict:
    datasets = _arc_datasets(cfg, args.arcs or cfg.io.arcs, args.overrides or cfg.io.overrides)
    circuits = [cfg.circuit.at(ds.field) for ds in datasets]
    with warnings.catch_warnings(record=True) as caught:
        warnings.simplefilter("always")
        result = fit_flux_arcs_multifield(
            datasets, circuits, _initial_guess(cfg), fixed=cfg.fit.fixed,
            share_delta_ell=cfg.fit.share_delta_ell, bounds=cfg.fit.bounds or None,
            grid=cfg.diode_model.grid, max_nfev=cfg.fit.max_nfev)
    report = {"command": "fit-arcs", **result_report(result, datasets, circuits),
              "warnings": [str(w.message) for w in caught]}
    if args.truth:
        report["comparison"] = _compare(report, dataio.read_report(args.truth))
    report["settings"] = _settings(cfg)
    dataio.write_report(Path(args.out) / "fit_arcs.yaml", report)
    return report


# ---------------------------------------------------------------- fit-kerr

def _kerr_from_stark(table: dataio.Table) -> list[KerrPoints]:
    """Fit every Stark point group for ``zeta K``."""
    point = table.column("point")
    groups = {}
    for i, p in enumerate(point.tolist()):
        groups.setdefault(int(p), []).append(i)
    rows = {k: [] for k in ("field", "flux", "omega", "zk", "sigma", "omega_p")}
    for idx in groups.values():
        idx = np.asarray(idx)
        B = float(table.column("field_t")[idx[0]])
        fit = fit_stark_shift(table.column("n_over_zeta")[idx], table.column("shift_hz")[idx],
                              table.column("detuning_hz")[idx])
        rows["field"].append(B)
        rows["flux"].append(table.column("flux_wb")[idx[0]])
        rows["omega"].append(table.column("freq_hz")[idx[0]])
        rows["zk"].append(fit.zeta_kerr)
        # noiseless data give a vanishing spread; keep weights finite
        rows["sigma"].append(max(fit.sigma, 1e-9 * abs(fit.zeta_kerr)))
        rows["omega_p"].append(table.column("pump_freq_hz")[idx[0]])
    fields = np.asarray(rows["field"])
    out = []
    for B in dict.fromkeys(rows["field"]):
        m = fields == B
        out.append(KerrPoints(field=B, shifted_flux=np.asarray(rows["flux"])[m],
                              omega_0=np.asarray(rows["omega"])[m], zeta_kerr=np.asarray(rows["zk"])[m],
                              sigma=np.asarray(rows["sigma"])[m], omega_p=np.asarray(rows["omega_p"])[m]))
    return out


def cmd_fit_kerr(cfg: RunConfig, args) -> dict:
    report_path = args.arc_report or cfg.io.arc_report
    if report_path is None:
        raise ValidationError("fit-kerr needs the fit-arcs report (--arc-report or io.arc_report)")
    base = result_from_report(dataio.read_report(report_path))
    datasets = _arc_datasets(cfg, args.arcs or cfg.io.arcs, args.overrides or cfg.io.overrides)
    circuits = [cfg.circuit.at(ds.field) for ds in datasets]
    stark_path = args.stark_points or cfg.io.stark_points
    kerr_path = args.kerr_points or cfg.io.kerr_points
    if stark_path:
        points = _kerr_from_stark(dataio.read_stark_points(stark_path))
    elif kerr_path:
        points = dataio.read_kerr_points(kerr_path)
    else:
        raise ValidationError("fit-kerr needs Kerr or Stark points")
    by_field = {p.field: p for p in points}
    order = [ds for ds in datasets if any(math.isclose(ds.field, B, abs_tol=1e-9) for B in by_field)]
    kerr = [next(p for B, p in by_field.items() if math.isclose(B, ds.field, abs_tol=1e-9)) for ds in order]
    circ = [cfg.circuit.at(ds.field) for ds in order]
    result = fit_kerr_with_correction(kerr, order, base, circ, arc_weight=cfg.fit.arc_weight,
                                      omega_p_ref=cfg.pump.omega_ref, cap=cfg.fit.correction_cap,
                                      max_nfev=cfg.fit.kerr_max_nfev)
    fields = []
    for pts, ds, c in zip(kerr, order, circ):
        corr = result.corrections[ds.field]
        fields.append({
            "field_t": ds.field,
            "q": list(corr.coefficients),
            "correction_size_a": result.correction_size[ds.field],
            "step1_zeta0": result.step_zeta0[ds.field],
            "kerr_residual_rms_hz": result.residual_rms[ds.field] / TWO_PI,
            "points": int(pts.zeta_kerr.size),
        })
    report = {
        "command": "fit-kerr",
        "zeta0": result.zeta0,
        "zeta1_per_hz": result.zeta1 * TWO_PI,
        "reference_freq_hz": result.omega_p_ref / TWO_PI,
        "attenuation_db": attenuation_db(result.zeta0),
        "per_field": fields,
        "settings": _settings(cfg),
    }
    dataio.write_report(Path(args.out) / "fit_kerr.yaml", report)
    return report


# ---------------------------------------------------------------- infer-inductances

def _lambda_table(path):
    t = dataio.read_table(path, required=("lambda_m", "L_h"))
    return t.column("lambda_m"), t.column("L_h")


def cmd_infer_inductances(cfg: RunConfig, args) -> dict:
    tables = dict(cfg.io.inductance_tables)
    for name in ("reference", "squid", "loop"):
        if getattr(args, name, None):
            tables[name] = getattr(args, name)
    freqs_path = args.freqs or cfg.io.reference_freqs
    if "reference" not in tables or "squid" not in tables or freqs_path is None:
        raise ValidationError("infer-inductances needs reference and squid tables and reference frequencies")
    f = dataio.read_table(freqs_path, required=("field_t", "freq_hz"))
    sweet = TWO_PI * f.columns["sweetspot_freq_hz"] if "sweetspot_freq_hz" in f.columns else None
    ind = cfg.inductance
    res = infer_field_inductances(
        f.column("field_t"), TWO_PI * f.column("freq_hz"), _lambda_table(tables["reference"]),
        _lambda_table(tables["squid"]), _lambda_table(tables["loop"]) if "loop" in tables else None,
        omega_0b0=ind.omega_0b0 if ind.omega_0b0 is not None else cfg.circuit.at(0.0).omega_0b,
        sweetspot_freqs=sweet, lambda0=ind.lambda0, film_thickness=ind.film_thickness)
    m = res.model
    per_field = []
    for i, B in enumerate(res.fields):
        per_field.append({
            "field_t": float(B),
            "penetration_depth_m": float(res.penetration_depth[i]),
            "L_b_h": float(res.L_b[i]),
            "L_loop_h": float(res.L_loop[i]) if res.L_loop is not None else None,
            "omega_0b_over_2pi_hz": float(res.omega_0b[i]) / TWO_PI if res.omega_0b is not None else None,
            "L_c0_h": float(res.L_c0[i]) if res.L_c0 is not None else None,
        })
    report = {
        "command": "infer-inductances",
        "model": {"lambda0_m": m.lambda0, "B_star_t": m.B_star, "L_geo_h": m.L_geo,
                  "L_star_h_per_m": m.L_star, "film_thickness_m": m.film_thickness},
        "tables": {"squid": {"L_geo_h": res.squid.L_geo, "L_star_h_per_m": res.squid.L_star}},
        "per_field": per_field,
        "settings": _settings(cfg),
    }
    if res.loop is not None:
        report["tables"]["loop"] = {"L_geo_h": res.loop.L_geo, "L_star_h_per_m": res.loop.L_star}
    dataio.write_report(Path(args.out) / "infer_inductances.yaml", report)
    return report


def write_inductance_inputs(out, fields, omega_ref0, ref, squid, B_star, lambda0=130e-9, d=100e-9) -> dict:
    """Synthetic table and frequency files for ``infer-inductances``; returns their paths."""
    out = Path(out)
    paths = {}
    for name, (L_geo, L_star) in (("reference", ref), ("squid", squid)):
        lam, L = inductance_table(L_geo, L_star, d)
        paths[name] = out / f"lambda_{name}.csv"
        dataio.write_table(paths[name], {"lambda_m": lam, "L_h": L})
    w = reference_frequencies(fields, omega_ref0, *ref, B_star, lambda0, d)
    paths["freqs"] = out / "reference_freqs.csv"
    dataio.write_table(paths["freqs"], {"field_t": np.asarray(fields, dtype=float), "freq_hz": w / TWO_PI})
    return paths


# ---------------------------------------------------------------- entry point

COMMANDS = {
    "simulate-cpr": cmd_simulate_cpr,
    "simulate-arcs": cmd_simulate_arcs,
    "simulate-pumped": cmd_simulate_pumped,
    "generate-synthetic": cmd_generate_synthetic,
    "fit-s21": cmd_fit_s21,
    "fit-arcs": cmd_fit_arcs,
    "fit-kerr": cmd_fit_kerr,
    "infer-inductances": cmd_infer_inductances,
}


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", help="YAML run configuration")
    common.add_argument("--seed", type=int, help="seed for synthetic noise")
    common.add_argument("--out", default=".", help="output directory (default: current)")
    common.add_argument("--verbose", action="store_true", help="log progress to stderr")
    parser = argparse.ArgumentParser(prog="diodesquid", description=__doc__.splitlines()[0],
                                     parents=[common])
    sub = parser.add_subparsers(dest="command", required=True)
    for name in COMMANDS:
        p = sub.add_parser(name, parents=[common])
        if name == "fit-s21":
            p.add_argument("traces", nargs="*", help="trace CSV files")
        if name in ("fit-arcs", "fit-kerr"):
            p.add_argument("--arcs", help="arc dataset CSV")
            p.add_argument("--overrides", help="manual jump positions CSV")
        if name == "fit-arcs":
            p.add_argument("--truth", help="truth sidecar to compare against")
        if name == "fit-kerr":
            p.add_argument("--arc-report", help="fit-arcs report")
            p.add_argument("--kerr-points", help="Kerr points CSV")
            p.add_argument("--stark-points", help="Stark-shift points CSV")
        if name == "infer-inductances":
            p.add_argument("--reference", help="(lambda, L) table of the reference circuit")
            p.add_argument("--squid", help="(lambda, L) table of the SQUID circuit")
            p.add_argument("--loop", help="(lambda, L) table of the SQUID loop")
            p.add_argument("--freqs", help="reference frequencies per field")
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(message)s", stream=sys.stderr)
    try:
        cfg = load_config(args.config)
        os.makedirs(args.out, exist_ok=True)
        COMMANDS[args.command](cfg, args)
    except ParseError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_IO
    except ValidationError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_VALIDATION
    except (NonConvergence, DiodeSquidError) as exc:
        print(f"error: {type(exc).__name__}: {exc}", file=sys.stderr)
        return EXIT_FIT
    except OSError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_IO
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
