"""Calibrate the CZ pulse, then check that norm loss tracks time spent in the Rydberg state.

Run with ``python3 demos/calibrate_and_decay.py`` (under a minute).
"""

import math

from rydtwin.analysis import rydberg_observables
from rydtwin.circuit import CZ_PHI, NATIVE, RX, Circuit, Gate
from rydtwin.engine import run_pulse
from rydtwin.lattice import square
from rydtwin.physics import DeviceParams, calibrate_cz

params = DeviceParams()
cal = calibrate_cz(params, seed=0, n_starts=4)
print(f"calibrated CZ: F={cal.fidelity:.8f}, phi={cal.phi:.4f}, {cal.n_evaluations} evaluations")

lat = square(1, 2)
prep = (Gate(RX, (0,), math.pi / 2), Gate(RX, (1,), math.pi / 2))
for n_cz in (1, 5, 15):
    circ = Circuit(NATIVE, lat, (prep,) + ((Gate(CZ_PHI, (0, 1)),),) * n_cz, {"r_g_sq": 1.0})
    rec = run_pulse(circ, params, open_system=True)
    _, t_r = rydberg_observables(rec)
    print(f"{n_cz:2d} CZ: loss {1 - rec.norm2:.5f}, 2 gamma T_R {2 * params.gamma * t_r:.5f}")
