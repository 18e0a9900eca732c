"""Zero-field numbers of the measured circuit: sweetspot, inductances, Kerr and the homogeneous arc fit."""

import argparse
import math

import numpy as np

from diodesquid.constants import FLUX_QUANTUM
from diodesquid.cpr import homogeneous_fold_phase, homogeneous_table
from diodesquid.estimation import calibrate, fit_flux_arcs_multifield, segment_arcs
from diodesquid.kerr import kerr_anharmonicity
from diodesquid.params import CircuitParams
from diodesquid.squid import flux_arc, max_stable_responsivity, proportional_switching, resonance_frequency
from diodesquid.synthetic import arc_sweep

TWO_PI = 2.0 * math.pi


def main():
    ap = argparse.ArgumentParser(description=__doc__)
    ap.add_argument("--seed", type=int, default=1)
    ap.add_argument("--noise-mhz", type=float, default=0.2)
    args = ap.parse_args()

    circuit = CircuitParams(TWO_PI * 10.380e9, 397e-12, 44e-12)
    I0, L_lin = 30e-6, 12e-12
    L_J0 = FLUX_QUANTUM / (TWO_PI * I0)
    table = homogeneous_table(I0, L_lin)
    L_c0 = FLUX_QUANTUM / (TWO_PI * table.max_slope()[1])
    print(f"L_J0                 {L_J0 * 1e12:8.3f} pH")
    print(f"L_c0 = L_J0 + L_lin  {L_c0 * 1e12:8.3f} pH")
    print(f"fold phase           {homogeneous_fold_phase(I0, L_lin):8.4f} rad")
    w = resonance_frequency(circuit.omega_0b, circuit.L_b, L_c0)
    print(f"sweetspot frequency  {w / TWO_PI / 1e9:8.4f} GHz")
    sine = homogeneous_table(FLUX_QUANTUM / (TWO_PI * L_c0), 0.0)
    print(f"Kerr, sine CPR       {kerr_anharmonicity(sine, circuit, 0.0) / TWO_PI:8.1f} Hz")
    print(f"Kerr, homogeneous    {kerr_anharmonicity(table, circuit, 0.0) / TWO_PI:8.1f} Hz")
    F = max_stable_responsivity(flux_arc(table, circuit)) * FLUX_QUANTUM / TWO_PI
    print(f"max stable |F|/2pi   {F / 1e6:8.2f} MHz/Phi0")

    rng = np.random.default_rng(args.seed)
    s = arc_sweep(table, circuit, proportional_switching(table, 0.6), I_b0=1e-3, delta_phi_b=0.1 * FLUX_QUANTUM, points=401,
                  noise=TWO_PI * args.noise_mhz * 1e6, rng=rng)
    data = calibrate(segment_arcs(s.sweep))
    ell = TWO_PI * I0 * L_lin / FLUX_QUANTUM
    fit = fit_flux_arcs_multifield([data], [circuit], {"I00": 0.9 * I0, "delta_ell": 0.9 * ell, "epsilon": 0.0, "b": 0.0,
                                                            "deltaB_per_tesla": 0.0},
                                   fixed=("epsilon", "b", "deltaB_per_tesla"))
    derived = fit.derived()
    print(f"fitted I0            {fit.shared['I00'] * 1e6:8.3f} uA")
    print(f"fitted L_lin         {derived['L_lin'] * 1e12:8.3f} pH")
    print(f"rms misfit           {fit.goodness['rms_omega'] / TWO_PI / 1e6:8.3f} MHz")


if __name__ == "__main__":
    main()
