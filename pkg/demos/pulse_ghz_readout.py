"""Prepare a 3x3 GHZ state at pulse level and inspect the readout histogram.

Run with ``python3 demos/pulse_ghz_readout.py`` (about ten seconds).
"""

from rydtwin.analysis import classify_readout, fidelity_report, rydberg_observables
from rydtwin.compiler import CompileRequest, compile_ghz
from rydtwin.engine import TWO_STATE, run_pulse, sample_measurements
from rydtwin.lattice import LatticeSpec
from rydtwin.physics import DeviceParams

params = DeviceParams()
circ = compile_ghz(CompileRequest(LatticeSpec(rows=3), r_g_sq=16.0)).circuit

for open_system in (False, True):
    rec = run_pulse(circ, params, open_system=open_system)
    rep = fidelity_report(rec.final, circ)
    p_r, t_r = rydberg_observables(rec)
    label = "with decay" if open_system else "closed"
    print(f"{label}: F={rep.F:.6f}, norm^2={rec.norm2:.6f}, residual Rydberg {p_r:.2e}, T_R={t_r:.4f} us")

hist = sample_measurements(rec.final, 100_000, TWO_STATE, seed=7)
ro = classify_readout(hist)
print(f"GHZ bins carry {ro.ghz_mass:.4f} of the shots, error bins {ro.error_mass:.2e}")
for key in ro.reported:
    print(f"  (n0, n1)={key}: {hist.frequency(key):.5f} [{ro.labels[key]}]")
