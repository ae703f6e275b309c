"""Infidelity of two simultaneous CZ gates as a function of their separation.

Run with ``python3 demos/crosstalk_sweep.py``.
"""

import math

from rydtwin.analysis import cz_counts, per_layer_infidelity
from rydtwin.circuit import CZ_PHI, NATIVE, RX, Circuit, Gate
from rydtwin.engine import BackendConfig, run_ideal, run_pulse
from rydtwin.lattice import square
from rydtwin.physics import DeviceParams, build_terms

params = DeviceParams()

# separation label -> (lattice shape, the two pairs)
GEOMETRIES = {
    "sqrt(2) a": ((2, 4), ((0, 1), (6, 7))),
    "2 a": ((1, 6), ((0, 1), (3, 4))),
    "3 a": ((1, 7), ((0, 1), (4, 5))),
    "4 a": ((1, 8), ((0, 1), (5, 6))),
}

for label, (shape, pairs) in GEOMETRIES.items():
    lat = square(*shape)
    sites = sorted({s for p in pairs for s in p})
    prep = tuple(Gate(RX, (s,), math.pi / 2) for s in sites)
    circ = Circuit(NATIVE, lat, (prep, tuple(Gate(CZ_PHI, p) for p in pairs)), {"r_g_sq": 1.0})
    # keep every pair coupled so the far-field tail is visible
    terms = build_terms(lat, 100 * params.a_um, False, params, circ.active_sites())
    rec = run_pulse(circ, params, BackendConfig(snapshot_per_layer=True), terms=terms)
    ideal = []
    run_ideal(circ, levels=3, snapshots=ideal)
    series = per_layer_infidelity(rec.snapshots, ideal, cz_counts(circ))
    print(f"separation {label:>10}: layer infidelity {series.infidelity[-1]:.3e}")
