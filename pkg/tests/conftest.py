import functools
import math

import numpy as np
import pytest

from rydtwin.circuit import CZ_PHI, NATIVE, RX, Circuit, Gate
from rydtwin.compiler import CompileRequest, compile_ghz
from rydtwin.engine import BackendConfig, run_ideal, run_pulse
from rydtwin.lattice import LatticeSpec, square
from rydtwin.physics import DeviceParams, build_terms


@functools.lru_cache(maxsize=None)
def _pulse_ghz(rows, cols, r_g_sq, open_system=False, d_off_um=None):
    circ = compile_ghz(CompileRequest(LatticeSpec(rows=rows, cols=cols), r_g_sq=r_g_sq)).circuit
    rec = run_pulse(circ, DeviceParams(d_off_um=d_off_um), BackendConfig(snapshot_per_layer=True), open_system)
    return circ, rec


@pytest.fixture(scope="session")
def pulse_ghz():
    """Cached pulse-level GHZ runs: ``pulse_ghz(rows, cols, r_g_sq, open_system, d_off_um)``."""
    return _pulse_ghz


# cross distance in units of a -> (lattice shape, two entangled pairs)
CROSSTALK_GEOMETRIES = {
    "sqrt2": ((2, 4), ((0, 1), (6, 7))),
    "2": ((1, 6), ((0, 1), (3, 4))),
    "3": ((1, 7), ((0, 1), (4, 5))),
    "4": ((1, 8), ((0, 1), (5, 6))),
}


@functools.lru_cache(maxsize=None)
def _crosstalk(key, pairs_only=None):
    """RX(pi/2) on the atoms, then the entanglers in one layer; returns (circuit, pulse record, ideal snapshots).

    Every atom pair is included in the Hamiltonian, whatever its distance.
    """
    shape, pairs = CROSSTALK_GEOMETRIES[key]
    if pairs_only is not None:
        pairs = pairs[:pairs_only]
    lat = square(*shape)
    sites = sorted({s for p in pairs for s in p})
    prep = tuple(Gate(RX, (s,), math.pi / 2) for s in sites)
    circ = Circuit(NATIVE, lat, (prep, tuple(Gate(CZ_PHI, p) for p in pairs)), {"r_g_sq": 1.0})
    dev = DeviceParams()
    terms = build_terms(lat, 100 * dev.a_um, False, dev, circ.active_sites())
    rec = run_pulse(circ, dev, BackendConfig(snapshot_per_layer=True), terms=terms)
    ideal = []
    run_ideal(circ, levels=3, snapshots=ideal)
    return circ, rec, ideal


@pytest.fixture(scope="session")
def crosstalk():
    """Cached two-entangler runs keyed by cross distance: ``"sqrt2"``, ``"2"``, ``"3"``, ``"4"``."""
    return _crosstalk


@pytest.fixture(scope="session")
def rng():
    return np.random.default_rng(20240101)
