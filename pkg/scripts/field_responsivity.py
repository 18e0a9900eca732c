"""Diode asymmetry and maximum stable flux responsivity against in-plane field."""

import argparse
import math

import numpy as np

from diodesquid.constants import FLUX_QUANTUM
from diodesquid.cpr import cpr_diode
from diodesquid.params import CircuitParams, DiodeModelParams
from diodesquid.squid import flux_arc, max_stable_responsivity, proportional_switching

TWO_PI = 2.0 * math.pi


def main():
    ap = argparse.ArgumentParser(description=__doc__)
    ap.add_argument("--b", type=float, default=0.8, help="current-density gradient parameter")
    ap.add_argument("--delta-ell", type=float, default=1.276)
    ap.add_argument("--steps", type=int, default=13)
    args = ap.parse_args()
    circuit = CircuitParams(TWO_PI * 10.380e9, 397e-12, 44e-12)
    base = None
    print(f"{'B (T)':>6} {'I0+ (uA)':>9} {'I0- (uA)':>9} {'|I0-/I0+|':>9} {'F (MHz/Phi0)':>13} {'F/F(0)':>7}")
    for B in np.linspace(0.0, 0.3, args.steps):
        table = cpr_diode(DiodeModelParams(35e-6, 0.78, args.b, TWO_PI / 0.305 * B, args.delta_ell))
        I_plus, I_minus = table.critical_currents()
        arc = flux_arc(table, circuit, proportional_switching(table, 0.6))
        F = max_stable_responsivity(arc) * FLUX_QUANTUM / TWO_PI
        base = base or F
        print(f"{B:6.3f} {I_plus * 1e6:9.3f} {I_minus * 1e6:9.3f} {abs(I_minus / I_plus):9.3f} "
              f"{F / 1e6:13.2f} {F / base:7.2f}")


if __name__ == "__main__":
    main()
