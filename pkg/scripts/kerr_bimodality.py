"""Kerr coefficient at equal resonance frequency on the two sides of an arc, for each field."""

import argparse
import math

from diodesquid.cpr import cpr_diode
from diodesquid.kerr import kerr_bimodality
from diodesquid.params import CircuitParams, DiodeModelParams
from diodesquid.squid import constriction_inductance, proportional_switching, resonance_frequency, switching_segment

TWO_PI = 2.0 * math.pi
FIELDS = (0.0, 0.1, 0.2, 0.25, 0.275)
DELTA_ELL = (1.276, 1.3, 1.4, 1.45, 1.5)


def main():
    ap = argparse.ArgumentParser(description=__doc__)
    ap.add_argument("--switching-fraction", type=float, default=0.6)
    args = ap.parse_args()
    circuit = CircuitParams(TWO_PI * 10.380e9, 397e-12, 44e-12)
    print(f"{'B (T)':>6} {'depth':>6} {'f0 (GHz)':>9} {'K_lo (Hz)':>10} {'K_hi (Hz)':>10} {'ratio':>6}")
    for B, ell in zip(FIELDS, DELTA_ELL):
        table = cpr_diode(DiodeModelParams(35e-6, 0.78, 0.8, TWO_PI / 0.305 * B, ell))
        seg = switching_segment(table, circuit.L_loop, proportional_switching(table, args.switching_fraction))

        def w(d):
            return resonance_frequency(circuit.omega_0b, circuit.L_b, constriction_inductance(table, d))

        top = w(seg.sweetspot)
        end = max(w(seg.delta_lo + 1e-9), w(seg.delta_hi - 1e-9))
        for depth in (0.3, 0.6, 0.9):
            target = top - depth * (top - end)
            K_lo, K_hi, ratio = kerr_bimodality(table, circuit, target, seg)
            print(f"{B:6.3f} {depth:6.1f} {target / TWO_PI / 1e9:9.4f} {K_lo / TWO_PI:10.1f} "
                  f"{K_hi / TWO_PI:10.1f} {max(ratio, 1 / ratio):6.2f}")


if __name__ == "__main__":
    main()
