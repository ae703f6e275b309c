import math

import numpy as np
import pytest
from scipy.linalg import expm

from rydtwin.analysis import ghz_fidelity
from rydtwin.circuit import CZ_IDEAL, CZ_PHI, H, LOGICAL, NATIVE, RZ, Circuit, Gate
from rydtwin.compiler import CompileRequest, compile_ghz
from rydtwin.engine import (
    SINGLE_STATE, TWO_STATE, BackendConfig, EngineError, IntegratorInstability, MemoryGuardError, QutritState,
    apply_gate, evolve, exact_distribution, run_ideal, run_pulse, sample_measurements, state_overlap, zero_state,
)
from rydtwin.lattice import LatticeSpec, square
from rydtwin.physics import NR, SR, TWO_PI, DeviceParams, SiteDrive, build_terms, trapezoid

P = DeviceParams()


def _ghz(n, n_lattice=None):
    amps = np.zeros((2,) * n, complex)
    amps[(0,) * n] = amps[(1,) * n] = 1 / math.sqrt(2)
    return QutritState(amps, tuple(range(n)), n_lattice or n)


def _random_qubit_state(sites, n_lattice, seed):
    rng = np.random.default_rng(seed)
    st = zero_state(sites, n_lattice, 3)
    a = np.zeros((3,) * len(sites), complex)
    sl = (slice(0, 2),) * len(sites)
    a[sl] = rng.normal(size=(2,) * len(sites)) + 1j * rng.normal(size=(2,) * len(sites))
    st.amps[...] = a / np.linalg.norm(a)
    return st


def test_hadamard_on_zero():
    c = Circuit(LOGICAL, square(1, 1), ((Gate(H, (0,)),),))
    assert np.allclose(run_ideal(c).vector, [1 / math.sqrt(2)] * 2)


def test_cz_ideal_on_11():
    st = zero_state((0, 1), 2, 2)
    st.amps[...] = 0
    st.amps[1, 1] = 1
    apply_gate(st, Gate(CZ_IDEAL, (0, 1)), {0: 0, 1: 1})
    assert st.amps[1, 1] == pytest.approx(-1)


def test_ghz_4x4_native_ideal():
    res = compile_ghz(CompileRequest(LatticeSpec(rows=4), r_g_sq=8.0, verify=False))
    assert ghz_fidelity(run_ideal(res.circuit)) >= 1 - 1e-10


def test_ideal_levels_agree():
    res = compile_ghz(CompileRequest(LatticeSpec(rows=2), r_g_sq=2.0))
    a, b = run_ideal(res.circuit, levels=2), run_ideal(res.circuit, levels=3)
    assert abs(abs(state_overlap(a, b)) - 1) < 1e-12


def test_zero_drive_is_identity():
    lat = square(1, 3)
    circ = Circuit(NATIVE, lat, ((Gate(RZ, (0,), 0.0), Gate(RZ, (1,), 0.0), Gate(RZ, (2,), 0.0)),))
    init = _random_qubit_state((0, 1, 2), 3, 1)
    rec = run_pulse(circ, P, initial=init, r_g_sq=1.0)
    assert np.allclose(rec.final.amps, init.amps, atol=1e-14)


def test_rabi_pi_half_area():
    T = P.gate_duration_us
    st = QutritState(np.array([0, 1, 0], complex), (0,), 1)
    out = evolve(st, {0: SiteDrive(omega_r=math.pi / (2 * T))}, T)
    assert abs(out.amps[2]) ** 2 >= 1 - 1e-6


def test_blockade():
    lat = square(1, 2)
    terms = build_terms(lat, 3.0, False, P)
    om = TWO_PI * 10
    drives = {0: SiteDrive(omega_r=om), 1: SiteDrive(omega_r=om)}
    st = zero_state((0, 1), 2, 3)
    st.amps[...] = 0
    st.amps[1, 1] = 1
    I3 = np.eye(3)
    Hm = om * (np.kron(SR, I3) + np.kron(I3, SR)) + P.vdw(3.0) * np.kron(NR, NR)
    step = 0.01
    for k in range(1, 31):
        st = evolve(st, drives, step, terms)
        assert abs(st.amps[2, 2]) ** 2 < 0.1
        exact = expm(-1j * Hm * step * k)[:, 4]
        assert np.allclose(st.vector, exact, atol=1e-8)


def test_single_cz_against_two_atom_model():
    lat = square(1, 2)
    circ = Circuit(NATIVE, lat, ((Gate(CZ_PHI, (0, 1)),),), {"r_g_sq": 1.0})
    errs = []
    for seed in range(4):
        init = _random_qubit_state((0, 1), 2, seed)
        rec = run_pulse(circ, P, initial=init)
        ideal = init.to_levels(3).copy()
        apply_gate(ideal, Gate(CZ_PHI, (0, 1)), {0: 0, 1: 1})
        errs.append(1 - abs(state_overlap(ideal, rec.final)) ** 2)
        assert abs(rec.norm2 - 1) <= 1e-8
    assert max(errs) <= 1e-5


def test_dt_halving_cz():
    lat = square(1, 2)
    circ = Circuit(NATIVE, lat, ((Gate(CZ_PHI, (0, 1)),),), {"r_g_sq": 1.0})
    init = _random_qubit_state((0, 1), 2, 9)
    a = run_pulse(circ, P, BackendConfig(dt=0.001), initial=init).final
    b = run_pulse(circ, P, BackendConfig(dt=0.0005), initial=init).final
    assert 1 - abs(state_overlap(a, b)) ** 2 <= 1e-8


def test_open_system_loses_norm():
    lat = square(1, 2)
    circ = Circuit(NATIVE, lat, ((Gate(CZ_PHI, (0, 1)),),), {"r_g_sq": 1.0})
    init = _random_qubit_state((0, 1), 2, 3)
    rec = run_pulse(circ, P, open_system=True, initial=init)
    loss = 1 - rec.norm2
    # exact rate identity: d(norm^2)/dt = -2 gamma * unnormalised Rydberg number
    tr = trapezoid(rec.n_expect.sum(axis=1) * rec.norm ** 2, rec.times)
    assert loss > 0
    assert abs(loss - 2 * P.gamma * tr) <= 1e-3 * loss


def test_records_and_snapshots():
    res = compile_ghz(CompileRequest(LatticeSpec(rows=2), r_g_sq=2.0))
    rec = run_pulse(res.circuit, P, BackendConfig(snapshot_per_layer=True, record_stride=10))
    assert len(rec.snapshots) == res.circuit.depth == len(rec.layer_end_times)
    assert rec.layer_end_times[-1] == pytest.approx(res.circuit.depth * P.gate_duration_us)
    assert rec.times[-1] == pytest.approx(rec.layer_end_times[-1])
    rows = list(rec.series_rows())
    assert len(rows) == len(rec.times) and len(rows[0]) == 3


def test_layer_period_adds_idle_time():
    res = compile_ghz(CompileRequest(LatticeSpec(rows=2), r_g_sq=2.0))
    rec = run_pulse(res.circuit, P, BackendConfig(layer_period=0.2, record_stride=50))
    assert rec.layer_end_times[-1] == pytest.approx(0.2 * res.circuit.depth)
    with pytest.raises(EngineError):
        run_pulse(res.circuit, P, BackendConfig(layer_period=0.1))


def test_memory_guards():
    big = compile_ghz(CompileRequest(LatticeSpec(rows=5), r_g_sq=8.0, verify=False)).circuit
    with pytest.raises(MemoryGuardError):
        run_pulse(big, P)
    mid = compile_ghz(CompileRequest(LatticeSpec(rows=2, cols=5), r_g_sq=8.0, verify=False)).circuit
    with pytest.raises(MemoryGuardError, match="allow_large"):
        run_pulse(mid, P)


def test_instability_guard():
    lat = square(1, 2)
    circ = Circuit(NATIVE, lat, ((Gate(CZ_PHI, (0, 1)),),), {"r_g_sq": 1.0})
    with pytest.raises(IntegratorInstability):
        run_pulse(circ, P, BackendConfig(dt=0.061))


def test_sampling_ghz16():
    hist = sample_measurements(_ghz(16), 1_000_000, TWO_STATE, seed=0)
    assert abs(hist.frequency((16, 0)) - 0.5) <= 0.002
    assert abs(hist.frequency((0, 16)) - 0.5) <= 0.002
    assert sum(hist.counts.values()) == 1_000_000


def test_sampling_determinism():
    st = _random_qubit_state((0, 1, 2), 5, 4)
    a = sample_measurements(st, 50_000, TWO_STATE, seed=11, chunk=1000)
    b = sample_measurements(st, 50_000, TWO_STATE, seed=11, chunk=1000)
    assert repr(a.counts).encode() == repr(b.counts).encode()
    c = sample_measurements(st, 50_000, TWO_STATE, seed=12, chunk=1000)
    assert c.counts != a.counts


def test_sampling_matches_exact():
    st = _random_qubit_state((0, 1, 2, 3), 4, 5)
    shots = 200_000
    hist = sample_measurements(st, shots, TWO_STATE, seed=2)
    exact = exact_distribution(st, TWO_STATE)
    keys = set(hist.counts) | set(exact.counts)
    tv = 0.5 * sum(abs(hist.frequency(k) - exact.counts.get(k, 0.0)) for k in keys)
    # TV of an empirical distribution over K bins is below sqrt(K / shots) with high probability
    assert tv <= math.sqrt(len(keys) / shots)


def test_single_state_cannot_see_rydberg():
    n = 4
    a = np.zeros((3,) * n, complex)
    a[(1,) * (n - 1) + (2,)] = 1
    st = QutritState(a, tuple(range(n)), n)
    hist = sample_measurements(st, 100, SINGLE_STATE, seed=0)
    assert hist.counts == {0: 100}
    two = sample_measurements(st, 100, TWO_STATE, seed=0)
    assert two.counts == {(0, n - 1): 100}


def test_single_shot():
    hist = sample_measurements(_ghz(3), 1, TWO_STATE, seed=5)
    assert sum(hist.counts.values()) == 1 and len(hist.counts) == 1


def test_inactive_sites_count_as_zero():
    hist = sample_measurements(_ghz(2, n_lattice=5), 1000, TWO_STATE, seed=0)
    assert set(hist.counts) <= {(5, 0), (3, 2)}


def test_sampling_errors():
    with pytest.raises(EngineError):
        sample_measurements(_ghz(2), 0)
    with pytest.raises(EngineError):
        sample_measurements(_ghz(2), 10, "three_state")
