"""Five-field synthetic arc bundle, global fit and comparison with the generating parameters."""

import argparse
import math
import time

import numpy as np

from diodesquid.constants import FLUX_QUANTUM
from diodesquid.cpr import cpr_diode
from diodesquid.estimation import calibrate, fit_flux_arcs_multifield, segment_arcs
from diodesquid.params import CircuitParams, DiodeModelParams
from diodesquid.squid import proportional_switching
from diodesquid.synthetic import arc_sweep

TWO_PI = 2.0 * math.pi
TRUTH = dict(I00=35e-6, epsilon=0.78, b=0.8, deltaB_per_tesla=TWO_PI / 0.305)
FIELDS = (0.0, 0.1, 0.2, 0.25, 0.275)
DELTA_ELL = (1.276, 1.3, 1.4, 1.45, 1.5)


def main():
    ap = argparse.ArgumentParser(description=__doc__)
    ap.add_argument("--seed", type=int, default=7)
    ap.add_argument("--points", type=int, default=401, help="bias points per sweep direction")
    ap.add_argument("--noise-mhz", type=float, default=0.2)
    ap.add_argument("--start-offset", type=float, default=0.1, help="relative start error")
    args = ap.parse_args()

    circuit = CircuitParams(TWO_PI * 10.380e9, 397e-12, 44e-12)
    rng = np.random.default_rng(args.seed)
    datasets, circuits = [], []
    for B, ell in zip(FIELDS, DELTA_ELL):
        table = cpr_diode(DiodeModelParams(TRUTH["I00"], TRUTH["epsilon"], TRUTH["b"],
                                           TRUTH["deltaB_per_tesla"] * B, ell))
        c = circuit.replace(field=B)
        s = arc_sweep(table, c, proportional_switching(table, 0.6), I_b0=1e-3, delta_phi_b=0.1 * FLUX_QUANTUM,
                      points=args.points, noise=TWO_PI * args.noise_mhz * 1e6, rng=rng)
        datasets.append(calibrate(segment_arcs(s.sweep)))
        circuits.append(c)

    k = 1.0 + args.start_offset
    initial = {name: value * k for name, value in TRUTH.items()}
    initial["epsilon"] = TRUTH["epsilon"] / k
    initial["delta_ell"] = 1.35
    t0 = time.perf_counter()
    fit = fit_flux_arcs_multifield(datasets, circuits, initial)
    print(f"fit time {time.perf_counter() - t0:.1f} s, rms misfit "
          f"{fit.goodness['rms_omega'] / TWO_PI / 1e6:.3f} MHz")
    print(f"{'parameter':>18} {'truth':>12} {'fitted':>12} {'sigma':>10} {'rel. error':>10}")
    for name, value in TRUTH.items():
        f, u = fit.shared[name], fit.uncertainties["shared"][name]
        print(f"{name:>18} {value:12.5g} {f:12.5g} {u:10.2g} {f / value - 1:10.2e}")
    for B, ell in zip(FIELDS, DELTA_ELL):
        f = fit.per_field[B]["delta_ell"]
        print(f"{'delta_ell@' + format(B, 'g'):>18} {ell:12.5g} {f:12.5g} {'':>10} {f / ell - 1:10.2e}")
    for name, value in fit.derived().items():
        print(f"{name:>18} {value:12.5g}")


if __name__ == "__main__":
    main()
