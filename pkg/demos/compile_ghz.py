"""Compile GHZ preparation circuits on square lattices and print their statistics.

Run with ``python3 demos/compile_ghz.py``.
"""

from rydtwin.analysis import dephasing_model, ghz_fidelity
from rydtwin.circuit import circuit_stats, depth_bounds
from rydtwin.compiler import CompileRequest, compile_ghz
from rydtwin.engine import run_ideal
from rydtwin.lattice import LatticeSpec

TAU_US = 2.0

for L, r_g_sq in [(3, 8.0), (4, 4.0), (4, 8.0), (4, 16.0)]:
    res = compile_ghz(CompileRequest(LatticeSpec(rows=L), r_g_sq=r_g_sq))
    circ = res.circuit
    s = circuit_stats(circ, TAU_US)
    bounds = ""
    if L % 2 == 0:
        lo, hi, serial = depth_bounds(L)
        bounds = f" (bounds {lo}..{hi}, serial {serial})"
    print(f"{L}x{L}, r_g^2={r_g_sq:g} a^2: depth {circ.depth}{bounds}")
    print(f"  gates/layer: one-qubit {s.avg_one:.2f}, two-qubit {s.avg_two:.2f}; QGS {s.qgs:.3g}/s")
    print(f"  search: {res.report.iterations} rounds, {res.report.wall_time_s:.2f}s")
    print(f"  ideal GHZ fidelity {ghz_fidelity(run_ideal(circ)):.12f}")
    print(f"  dephasing-limited fidelity {dephasing_model(circ, TAU_US).estimate():.4f}")
