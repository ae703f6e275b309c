"""Acceptance criteria, one test each; every test prints a PASS/FAIL line with the measured values."""

import math
import time

import numpy as np
import pytest

from rydtwin.analysis import (
    cz_counts, dephasing_fidelity, fidelity_report, ghz_fidelity, per_layer_infidelity, rydberg_observables,
)
from rydtwin.circuit import CZ_PHI, NATIVE, RX, Circuit, Gate, circuit_stats, depth_bounds
from rydtwin.compiler import LOCAL_GHZ, CompileRequest, compile_ghz, repetition_code_groups
from rydtwin.engine import BackendConfig, QutritState, run_ideal, run_pulse, sample_measurements
from rydtwin.lattice import LatticeSpec, square
from rydtwin.physics import DEFAULT_CZ, DeviceParams, calibrate_cz, two_atom_cz

P = DeviceParams()


@pytest.fixture
def verdict(capsys):
    def report(n, name, ok, detail):
        with capsys.disabled():
            print(f"\n[criterion {n:2d}] {'PASS' if ok else 'FAIL'} {name}: {detail}")
        assert ok, detail

    return report


def _serial_cz(n_cz, open_system=False):
    """Two atoms in |+>|+> followed by ``n_cz`` entanglers, one per layer."""
    lat = square(1, 2)
    prep = (Gate(RX, (0,), math.pi / 2), Gate(RX, (1,), math.pi / 2))
    layers = (prep,) + ((Gate(CZ_PHI, (0, 1)),),) * n_cz
    return run_pulse(Circuit(NATIVE, lat, layers, {"r_g_sq": 1.0}), P, open_system=open_system)


def _decay_gap(rec):
    loss = 1 - rec.norm2
    _, t_r = rydberg_observables(rec)
    return loss, 2 * rec.metadata["gamma"] * t_r


def test_c01_depth_formulas(verdict):
    got = {L: depth_bounds(L) for L in (4, 6, 8)}
    want = {4: (23, 30, 168), 6: (33, 50, 388), 8: (43, 78, 696)}
    verdict(1, "depth bounds", got == want, f"{got}")


def test_c02_compiler_quality(verdict):
    t0 = time.perf_counter()
    sq = compile_ghz(CompileRequest(LatticeSpec("square", 4), r_g_sq=8.0)).circuit.depth
    t1 = time.perf_counter()
    hx = compile_ghz(CompileRequest(LatticeSpec("hexagonal", 4), r_g_sq=4.0)).circuit.depth
    t2 = time.perf_counter()
    ok = sq <= 30 and hx <= 29 and t1 - t0 <= 300 and t2 - t1 <= 300
    verdict(2, "compiler depth", ok,
            f"square 4x4 r_g^2=8: D={sq} (<=30); hexagonal 4x4 r_g=2a: D={hx} (<=29); "
            f"times {t1 - t0:.1f}s, {t2 - t1:.1f}s")


def test_c03_compiler_correctness(verdict):
    t0 = time.perf_counter()
    fids = {}
    for L in (2, 3, 4):
        c = compile_ghz(CompileRequest(LatticeSpec(rows=L), r_g_sq=8.0)).circuit
        fids[f"{L}x{L}"] = ghz_fidelity(run_ideal(c))
    groups = repetition_code_groups(square(4))
    c = compile_ghz(CompileRequest(LatticeSpec(rows=4), r_g_sq=4.0, target=LOCAL_GHZ, groups=groups)).circuit
    fids["repetition"] = ghz_fidelity(run_ideal(c), groups)
    dt = time.perf_counter() - t0
    worst = min(fids.values())
    verdict(3, "ideal-backend target overlap", worst >= 1 - 1e-10 and dt <= 600,
            f"min F = 1 - {1 - worst:.2e} over {sorted(fids)}; {dt:.1f}s")


def test_c04_table_statistics(verdict):
    c = compile_ghz(CompileRequest(LatticeSpec(rows=4), r_g_sq=8.0)).circuit
    s = circuit_stats(c, 2.0)
    ok = abs(s.avg_one - 5.5) <= 1.0 and abs(s.avg_two - 0.5) <= 0.2 and abs(s.qgs - 3e6) <= 0.25 * 3e6
    verdict(4, "4x4 circuit statistics", ok,
            f"O1={s.avg_one:.2f} (5.5+-1), O2={s.avg_two:.2f} (0.5+-0.2), QGS(2us)={s.qgs:.3g} (3e6+-25%)")


def test_c05_calibration(verdict):
    t0 = time.perf_counter()
    res = calibrate_cz(P, seed=0)
    dt = time.perf_counter() - t0
    verdict(5, "CZ calibration", res.fidelity >= 0.9999 and dt <= 600,
            f"F_CZ={res.fidelity:.8f} (>=0.9999) after {res.starts} start(s), {dt:.1f}s")


def test_c06_crosstalk_trend(verdict, crosstalk):
    t0 = time.perf_counter()
    inf = {}
    for key in ("sqrt2", "2", "3", "4"):
        circ, rec, ideal = crosstalk(key)
        inf[key] = 1 - per_layer_infidelity(rec.snapshots, ideal, cz_counts(circ)).fidelity[-1]
    vals = list(inf.values())
    dec = all(a > b for a, b in zip(vals, vals[1:]))
    span = vals[0] / vals[-1]
    dt = time.perf_counter() - t0
    verdict(6, "crosstalk trend", dec and span >= 100 and dt <= 900,
            ", ".join(f"{k}a: {v:.3g}" for k, v in inf.items()) + f"; span {span:.2g}")


@pytest.mark.slow
def test_c07_pulse_ghz(verdict, pulse_ghz):
    circ, rec = pulse_ghz(3, 3, 16.0)
    rep = fidelity_report(rec.final, circ)
    single = 1 - two_atom_cz(DEFAULT_CZ, P.a_um, P).fidelity()
    bound = 8 * 10 * single
    verdict(7, "3x3 pulse GHZ", rep.I <= bound and rep.n_cz == 8,
            f"I={rep.I:.3g} <= 8 x 10 x {single:.3g} = {bound:.3g}; D={circ.depth}")


@pytest.mark.slow
def test_c08_decay_identity(verdict, pulse_ghz):
    _, rec = pulse_ghz(3, 3, 16.0, True)
    loss, pred = _decay_gap(rec)
    ok_ghz = loss <= 0.05 and abs(loss - pred) <= 0.1 * loss
    serial = _serial_cz(15, open_system=True)
    loss15, pred15 = _decay_gap(serial)
    ok_serial = abs(loss15 - pred15) <= 0.1 * loss15 and 0.5 * 1.4e-2 <= loss15 <= 2 * 1.4e-2
    verdict(8, "decay identity", ok_ghz and ok_serial,
            f"3x3: loss {loss:.4g} vs 2 gamma T_R {pred:.4g}; 15 serial CZs: loss {loss15:.4g} "
            f"(2 gamma T_R {pred15:.4g}) vs 1.4e-2 within x2")


@pytest.mark.slow
def test_c09_rydberg_time(verdict, pulse_ghz):
    one = rydberg_observables(_serial_cz(1))[1]
    ratios = [rydberg_observables(_serial_cz(k))[1] / (k * one) for k in (2, 4, 8)]
    per_cz = [rydberg_observables(pulse_ghz(1, k, 16.0)[1])[1] / (k - 1) for k in (2, 3, 4, 5)]
    chain_ok = max(per_cz) / min(per_cz) - 1 <= 0.05
    plateau = {r2: rydberg_observables(pulse_ghz(3, 3, r2)[1])[1] for r2 in (8.0, 16.0, 25.0)}
    pv = list(plateau.values())
    plateau_ok = max(pv) / min(pv) - 1 <= 0.05
    add_ok = all(abs(r - 1) <= 0.05 for r in ratios)
    verdict(9, "T_R additivity and plateau", add_ok and chain_ok and plateau_ok,
            f"serial ratios {np.round(ratios, 4).tolist()}, chain T_R per CZ {np.round(per_cz, 4).tolist()}, "
            f"3x3 T_R at r_g^2 8/16/25: {np.round(pv, 4).tolist()}")


def test_c10_dephasing(verdict, rng):
    n = rng.integers(1, 100, 100)
    t = rng.uniform(0, 1e3, 100)
    t2 = rng.uniform(1e2, 1e5, 100)
    err = max(abs(dephasing_fidelity(int(a), b, c) - (0.5 + 0.5 * math.exp(-a * b / c))) for a, b, c in zip(n, t, t2))
    f = dephasing_fidelity(64, 50 * 2.0, 1e4)
    verdict(10, "dephasing", err <= 1e-12 and abs(f - 0.7637) <= 1e-4, f"max err {err:.1e}; F_D(64, 100us)={f:.5f}")


def test_c11_sampling(verdict):
    n = 16
    a = np.zeros((2,) * n, complex)
    a[(0,) * n] = a[(1,) * n] = 1 / math.sqrt(2)
    st = QutritState(a, tuple(range(n)), n)
    h1 = sample_measurements(st, 1_000_000, seed=0)
    h2 = sample_measurements(st, 1_000_000, seed=0)
    f0, f1 = h1.frequency((16, 0)), h1.frequency((0, 16))
    same = repr(sorted(h1.counts.items())).encode() == repr(sorted(h2.counts.items())).encode()
    verdict(11, "GHZ16 sampling", abs(f0 - 0.5) <= 0.002 and abs(f1 - 0.5) <= 0.002 and same,
            f"P(16,0)={f0:.5f}, P(0,16)={f1:.5f}, byte-identical rerun={same}")


@pytest.mark.slow
def test_c12_numerical_hygiene(verdict, pulse_ghz):
    circ, rec = pulse_ghz(3, 3, 16.0)
    n_gates = sum(len(l) for l in circ.layers)
    drift = float(np.max(np.abs(rec.norm - 1)))
    f1 = two_atom_cz(DEFAULT_CZ, P.a_um, P, 0.001).fidelity()
    f2 = two_atom_cz(DEFAULT_CZ, P.a_um, P, 0.0005).fidelity()
    ok = drift <= 1e-8 * n_gates and abs(f1 - f2) <= 1e-8
    verdict(12, "numerical hygiene", ok,
            f"norm drift {drift:.1e} over {n_gates} gates; dt-halving change in F_CZ {abs(f1 - f2):.1e}")
