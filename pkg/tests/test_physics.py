import math

import numpy as np
import pytest

from rydtwin.circuit import CZ_PHI, RX, RZ, Gate
from rydtwin.lattice import square
from rydtwin.physics import (
    DEFAULT_CZ, DEFAULT_GAMMA, TWO_PI, CalibrationError, CZPulse, DeviceParams, PhysicsError, basis_averaged_tr,
    build_terms, calibrate_cz, cz_fidelity, derive_c6, device_from_dict, device_to_dict, fit_gamma, load_device,
    pulses_for_layer, save_device, two_atom_cz,
)

P = DeviceParams()


def test_c6_and_blockade():
    assert derive_c6(P) == pytest.approx(1.525e5, rel=1e-3)
    v = P.vdw(3.0) / TWO_PI
    assert v == pytest.approx(-derive_c6(P) / 729)
    assert abs(v) / 10 == pytest.approx(21, abs=0.2)
    assert abs(P.vdw(P.r_b_um)) == pytest.approx(P.omega_r)


def test_vdw_monotone():
    d = np.linspace(2.0, 20.0, 200)
    v = P.vdw(d)
    assert np.all(np.diff(v) > 0) and np.all(v < 0)


@pytest.mark.parametrize("r_i,expected", [(3.0, 24), (3.0 * math.sqrt(2), 42)])
def test_term_counts(r_i, expected):
    t = build_terms(square(4), r_i, False, P)
    assert t.n_pairs == expected
    assert t.gamma == 0.0
    assert np.all(t.diagonal(3).imag == 0)


def test_open_terms():
    t = build_terms(square(2), 3.0, True, P)
    assert t.gamma == pytest.approx(DEFAULT_GAMMA)
    assert t.diagonal(3).imag.min() == pytest.approx(-4 * DEFAULT_GAMMA)


def test_terms_cutoff_below_spacing():
    with pytest.raises(PhysicsError):
        build_terms(square(2), 2.0, False, P)


def test_pulse_areas():
    T = P.gate_duration_us
    d = pulses_for_layer([Gate(RX, (0,), math.pi), Gate(RZ, (1,), 0.0), Gate(RZ, (2,), 1.0)], P)
    assert d[0].omega_x == pytest.approx(math.pi / (2 * T))
    assert 1 not in d
    assert 2 * d[2].omega_z * T == pytest.approx(1.0)


def test_cz_drive():
    d = pulses_for_layer([Gate(CZ_PHI, (0, 1), 0.0)], P)
    assert set(d) == {0, 1}
    for s in d.values():
        assert s.omega_r == pytest.approx(TWO_PI * 10)
        assert s.rydberg
        area = s.omega_r / TWO_PI * P.gate_duration_us
        assert area == pytest.approx(1.22)
    with pytest.raises(PhysicsError):
        pulses_for_layer([Gate(CZ_PHI, (0, 1), 0.5)], P)


def test_default_pulse_quality():
    res = two_atom_cz(DEFAULT_CZ, P.a_um, P)
    assert res.fidelity() >= 0.9999
    assert abs(1 - res.fidelity() - 1.7e-6) <= 1.7e-5
    assert res.p_r[3] <= 1e-4
    assert abs(res.phi) < 1e-3
    assert 0 < res.tr[3] < 2 * P.gate_duration_us


def test_bare_pulse_fails():
    bare = CZPulse(0.0, 0.2, 0.5, 0.0, 0.0)
    assert cz_fidelity(bare, P) < 0.999


def test_dt_halving():
    f1 = cz_fidelity(DEFAULT_CZ, P, dt=0.001)
    f2 = cz_fidelity(DEFAULT_CZ, P, dt=0.0005)
    assert abs(f1 - f2) <= 1e-8


def test_dt_must_divide():
    with pytest.raises(PhysicsError):
        two_atom_cz(DEFAULT_CZ, 3.0, P, dt=0.05)


def test_calibration():
    res = calibrate_cz(P, seed=0, n_starts=3)
    assert res.fidelity >= 0.9999
    assert res.pulse.fidelity == res.fidelity
    assert cz_fidelity(res.pulse, P) == pytest.approx(res.fidelity, abs=1e-12)


def test_calibration_failure_carries_best():
    with pytest.raises(CalibrationError) as e:
        calibrate_cz(P, seed=1, n_starts=1, maxiter=5, min_fidelity=0.99999999)
    assert isinstance(e.value.best, CZPulse)


def test_gamma_fit():
    g = fit_gamma(P)
    assert g == pytest.approx(DEFAULT_GAMMA, rel=1e-3)
    assert 2 * g * basis_averaged_tr(DEFAULT_CZ, P) * 15 == pytest.approx(1.4e-2, rel=1e-3)


def test_device_roundtrip(tmp_path):
    p = DeviceParams(a_um=3.5, t2_us=5e3)
    q = device_from_dict(device_to_dict(p))
    assert q.a_um == 3.5 and q.t2_us == 5e3 and q.cz == p.cz
    assert q.c6 == pytest.approx(p.c6)
    save_device(p, tmp_path / "d.yaml")
    assert load_device(tmp_path / "d.yaml").cz == p.cz


def test_interaction_radius():
    assert P.d_off == pytest.approx(6.0)
    assert P.r_i(8.0) == pytest.approx(3.0 * math.sqrt(8) + 6.0)
