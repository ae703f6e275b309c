import itertools

import pytest

from rydtwin.analysis import ghz_fidelity
from rydtwin.circuit import CNOT, CZ_PHI, H, LOGICAL, NATIVE, dumps, validate_parallel_layers
from rydtwin.compiler import (
    LOCAL_GHZ, CompileError, CompileRequest, SearchConfiguration, TruncationPolicy, apply_round, compile_ghz,
    enumerate_pairs, enumerate_parallel_sets, initial_configuration, repetition_code_groups, search, truncate_frontier,
)
from rydtwin.engine import run_ideal
from rydtwin.lattice import LatticeSpec, square


def _config(n, entangled):
    st = bytearray(n)
    for s in entangled:
        st[s] = 1
    return SearchConfiguration(bytes(st))


def test_pairs_corner():
    lat = square(2)
    assert sorted(enumerate_pairs(_config(4, [0]), lat)) == [(0, 1), (0, 2)]


def test_pairs_interior():
    lat = square(4)
    c = lat.index(1, 1)
    assert len(enumerate_pairs(_config(16, [c]), lat)) == 4


def test_pairs_full_and_blocked():
    lat = square(3)
    assert enumerate_pairs(_config(9, range(9)), lat) == []
    blocked = initial_configuration(9, [4], delay=3)
    assert enumerate_pairs(blocked, lat) == []


def test_pairs_respect_groups():
    lat = square(1, 3)
    group_of = [0, 0, 1]
    assert enumerate_pairs(_config(3, [1]), lat, group_of) == [(1, 0)]


def test_parallel_sets_shared_control():
    lat = square(2)
    sets = enumerate_parallel_sets([(0, 1), (0, 2)], lat, 4.0)
    assert sorted(sets) == [((0, 1),), ((0, 2),)]


def test_parallel_sets_chain():
    lat = square(1, 4)
    pairs = enumerate_pairs(_config(4, [1, 2]), lat)
    sets = enumerate_parallel_sets(pairs, lat, 1.0)
    assert any(len(s) == 2 for s in sets)
    assert enumerate_parallel_sets([], lat, 1.0) == []


def test_parallel_sets_are_compatible():
    lat = square(4)
    pairs = enumerate_pairs(_config(16, [5, 6, 9, 10]), lat)
    for s in enumerate_parallel_sets(pairs, lat, 8.0):
        used = [x for p in s for x in p]
        assert len(used) == len(set(used))
        for a in range(len(s)):
            for b in range(a + 1, len(s)):
                assert min(lat.dist2[p, q] for p in s[a] for q in s[b]) >= 8.0


def test_apply_round_blocks_participants():
    cfg = apply_round(_config(4, [0]), [(0, 1)], 4)
    assert cfg.state[0] == 5 and cfg.state[1] == 5
    nxt = apply_round(cfg, [], 4)
    assert nxt.state[0] == 4
    assert nxt.history() == [((0, 1),), ()]


def test_truncate_single():
    lat = square(4)
    cfg = [_config(16, [0])]
    assert truncate_frontier(cfg, TruncationPolicy(), lat) == cfg


def test_truncate_cap():
    lat = square(4)
    configs = [_config(16, c) for c in itertools.combinations(range(16), 3)][:1000]
    configs += [_config(16, c) for c in itertools.combinations(range(16), 4)][: 1000 - len(configs)]
    assert len(configs) == 1000
    kept = truncate_frontier(configs, TruncationPolicy(max_geometries=300), lat)
    assert len(kept) == 300
    assert all(c.n_entangled == 4 for c in kept)


def test_truncate_prefers_centre():
    lat = square(4)
    centred = _config(16, [lat.index(1, 1), lat.index(1, 2)])
    corner = _config(16, [lat.index(0, 0), lat.index(0, 1)])
    kept = truncate_frontier([corner, centred], TruncationPolicy(), lat)
    assert kept[0] is centred


def test_policy_validation():
    with pytest.raises(CompileError):
        TruncationPolicy(keep_fraction=1.5)
    with pytest.raises(CompileError):
        TruncationPolicy(max_geometries=0)


@pytest.mark.parametrize("L", [2, 3])
def test_small_global_ghz(L):
    res = compile_ghz(CompileRequest(LatticeSpec(rows=L), r_g_sq=8.0))
    assert validate_parallel_layers(res.circuit, 8.0) == []
    assert ghz_fidelity(run_ideal(res.circuit)) >= 1 - 1e-10
    assert res.report.n_cnots == L * L - 1


def test_logical_mode_4x4():
    res = compile_ghz(CompileRequest(LatticeSpec(rows=4), r_g_sq=4.0, mode=LOGICAL))
    gates = list(res.circuit.gates())
    assert sum(g.kind == H for g in gates) == 1
    assert sum(g.kind == CNOT for g in gates) == 15
    # light cone from the best root on a 4x4 grid: at least 4 CNOT rounds
    assert res.circuit.depth - 1 >= 4
    assert ghz_fidelity(run_ideal(res.circuit)) >= 1 - 1e-10


def test_rectangle_orientation_invariance():
    a = compile_ghz(CompileRequest(LatticeSpec(rows=3, cols=5), r_g_sq=8.0))
    b = compile_ghz(CompileRequest(LatticeSpec(rows=5, cols=3), r_g_sq=8.0))
    assert a.circuit.depth == b.circuit.depth


def test_depth_monotone_in_radius():
    depths = [compile_ghz(CompileRequest(LatticeSpec(rows=3), r_g_sq=r2, verify=False)).circuit.depth
              for r2 in (1.0, 4.0, 16.0)]
    assert depths == sorted(depths)


def test_determinism():
    req = CompileRequest(LatticeSpec(rows=3), r_g_sq=4.0, seed=7)
    assert dumps(compile_ghz(req).circuit) == dumps(compile_ghz(req).circuit)


def test_search_report():
    plan, rep = search(CompileRequest(LatticeSpec(rows=3), r_g_sq=4.0))
    assert rep.iterations == len(rep.frontier_sizes) > 0
    assert plan.n_cnots == 8
    assert plan.mode == NATIVE


def test_repetition_layout():
    groups = repetition_code_groups(square(4))
    assert len(groups) == 3 and all(len(g) == 5 for g in groups)
    members = [s for g in groups for s in g]
    assert sorted(members) == [s for s in range(16) if s != 0]
    res = compile_ghz(CompileRequest(LatticeSpec(rows=4), r_g_sq=4.0, target=LOCAL_GHZ, groups=groups))
    assert res.circuit.depth <= 26
    assert ghz_fidelity(run_ideal(res.circuit), groups) >= 1 - 1e-10


def test_two_site_group_is_bell_pair():
    lat = square(1, 3)
    res = compile_ghz(CompileRequest(lat.spec, r_g_sq=1.0, target=LOCAL_GHZ, groups=((0, 1),), mode=LOGICAL))
    assert [len(l) for l in res.circuit.layers] == [1, 1]
    st = run_ideal(res.circuit)
    assert ghz_fidelity(st, [[0, 1]]) >= 1 - 1e-12


def test_singleton_groups_give_plus_states():
    lat = square(1, 2)
    res = compile_ghz(CompileRequest(lat.spec, r_g_sq=1.0, target=LOCAL_GHZ, groups=((0,), (1,))))
    assert not any(g.kind == CZ_PHI for g in res.circuit.gates())
    assert ghz_fidelity(run_ideal(res.circuit), [[0], [1]]) >= 1 - 1e-12


def test_bad_groups():
    with pytest.raises(CompileError):
        compile_ghz(CompileRequest(LatticeSpec(rows=2), target=LOCAL_GHZ, groups=((0, 1), (1, 2))))
    with pytest.raises(CompileError):
        CompileRequest(LatticeSpec(rows=2), target=LOCAL_GHZ)
