"""Breadth-first layer search for shallow GHZ-preparation circuits.

Every search iteration is one layer of the output circuit. A configuration
records which sites are already entangled and, for each of them, how many more
iterations it must wait before it can enter another entangler. Each iteration
expands every configuration by all maximal sets of CNOTs that can run in
parallel under the radius ``r_g``, deduplicates configurations that are
equivalent under lattice symmetry, and trims the frontier to a fixed budget.
The first iteration that produces a fully entangled configuration fixes the
depth.
"""

from __future__ import annotations

import hashlib
import itertools
import logging
import random
import time
from dataclasses import dataclass, field
from typing import Iterable, Sequence

import networkx as nx
import numpy as np

from .circuit import LOGICAL, NATIVE, Circuit, validate_parallel_layers
from .lattice import DIST2_TOL, Lattice, LatticeSpec, build_lattice
from .scheduler import NATIVE_BLOCK, ROOT_LEAD, CZPlan, lower_to_native, plan_to_logical

log = logging.getLogger(__name__)

GLOBAL_GHZ = "global_ghz"
LOCAL_GHZ = "local_ghz"

# pair ground sets up to this size are enumerated exhaustively
EXHAUSTIVE_PAIRS = 20


class CompileError(ValueError):
    pass


class SearchFailure(RuntimeError):
    pass


@dataclass(frozen=True)
class TruncationPolicy:
    keep_fraction: float = 0.5
    max_geometries: int = 300
    lag: int = 2
    set_cap: int = 64
    aggressive: bool = False

    def __post_init__(self):
        if not 0 < self.keep_fraction <= 1:
            raise CompileError("keep_fraction must lie in (0, 1]")
        if self.max_geometries < 1 or self.set_cap < 1:
            raise CompileError("max_geometries and set_cap must be positive")
        if self.lag < 0:
            raise CompileError("lag must be non-negative")


@dataclass(frozen=True)
class CompileRequest:
    lattice: LatticeSpec
    r_g_sq: float = 8.0
    mode: str = NATIVE
    target: str = GLOBAL_GHZ
    groups: tuple[tuple[int, ...], ...] | None = None
    policy: TruncationPolicy = TruncationPolicy()
    seed: int = 0
    phi: float = 0.0
    verify: bool = True

    def __post_init__(self):
        if self.mode not in (NATIVE, LOGICAL):
            raise CompileError(f"unknown mode {self.mode!r}")
        if self.r_g_sq < 1 - DIST2_TOL:
            raise CompileError("r_g must be at least one lattice constant")
        if self.target not in (GLOBAL_GHZ, LOCAL_GHZ):
            raise CompileError(f"unknown target {self.target!r}")
        if self.target == LOCAL_GHZ and not self.groups:
            raise CompileError("local GHZ target needs groups")

    @property
    def blocked_cycles(self) -> int:
        return NATIVE_BLOCK if self.mode == NATIVE else 0

    @property
    def root_delay(self) -> int:
        return ROOT_LEAD if self.mode == NATIVE else 1


@dataclass
class SearchReport:
    depth: int = 0
    iterations: int = 0
    frontier_sizes: list[int] = field(default_factory=list)
    expanded_sizes: list[int] = field(default_factory=list)
    truncated: list[int] = field(default_factory=list)
    wall_time_s: float = 0.0
    seed: int = 0
    n_cnots: int = 0

    def to_dict(self) -> dict:
        return dict(self.__dict__)


@dataclass(frozen=True)
class SearchConfiguration:
    """Search node.

    ``state[s]`` is 0 for a site outside the GHZ state and ``1 + counter``
    for an entangled site, where ``counter`` is the number of iterations it
    still has to wait.
    """

    state: bytes
    parent: "SearchConfiguration | None" = field(default=None, repr=False, compare=False)
    move: tuple[tuple[int, int], ...] = ()

    @property
    def entangled(self) -> frozenset[int]:
        return frozenset(i for i, v in enumerate(self.state) if v)

    @property
    def n_entangled(self) -> int:
        return sum(1 for v in self.state if v)

    def blocked(self, site: int) -> int:
        v = self.state[site]
        return v - 1 if v else 0

    def history(self) -> list[tuple[tuple[int, int], ...]]:
        out = []
        node = self
        while node.parent is not None:
            out.append(node.move)
            node = node.parent
        return out[::-1]


def initial_configuration(n_sites: int, roots: Iterable[int], delay: int) -> SearchConfiguration:
    st = bytearray(n_sites)
    for r in roots:
        st[r] = 1 + delay
    return SearchConfiguration(bytes(st))


def enumerate_pairs(config: SearchConfiguration, lattice: Lattice,
                    group_of: Sequence[int] | None = None) -> list[tuple[int, int]]:
    """All (control, target) nearest-neighbour pairs the configuration allows.

    The control is entangled and not blocked; the target is not entangled.
    With ``group_of`` given, both sites must belong to the same group.
    """
    st = config.state
    out = []
    for c in range(len(st)):
        if st[c] != 1:
            continue
        for t in lattice.neighbors[c]:
            if st[t] == 0 and (group_of is None or group_of[c] == group_of[t]):
                out.append((c, t))
    return out


def _compatible(lattice: Lattice, p, q, r_g_sq: float) -> bool:
    if set(p) & set(q):
        return False
    d2 = lattice.dist2
    return min(d2[a, b] for a in p for b in q) >= r_g_sq - DIST2_TOL


def _key_hash(data: bytes, seed: int) -> bytes:
    return hashlib.blake2b(data, digest_size=8, key=seed.to_bytes(8, "little", signed=True)).digest()


def enumerate_parallel_sets(pairs: Sequence[tuple[int, int]], lattice: Lattice, r_g_sq: float,
                            cap: int = 64, seed: int = 0) -> list[tuple[tuple[int, int], ...]]:
    """Maximal sets of pairwise compatible pairs.

    Two pairs are compatible when they share no site and every cross distance
    is at least ``r_g``. Up to :data:`EXHAUSTIVE_PAIRS` pairs all maximal sets
    are enumerated as maximal cliques of the compatibility graph; larger
    ground sets use greedy completion from ``cap`` seeded random orders. At
    most ``cap`` sets are returned, largest first.
    """
    pairs = [tuple(p) for p in pairs]
    n = len(pairs)
    if n == 0:
        return []
    comp = [[i != j and _compatible(lattice, pairs[i], pairs[j], r_g_sq) for j in range(n)] for i in range(n)]
    found: set[tuple[int, ...]] = set()
    if n <= EXHAUSTIVE_PAIRS:
        g = nx.Graph()
        g.add_nodes_from(range(n))
        g.add_edges_from((i, j) for i in range(n) for j in range(i + 1, n) if comp[i][j])
        for cl in nx.find_cliques(g):
            found.add(tuple(sorted(cl)))
    else:
        rng = random.Random(seed * 1_000_003 + n)
        orders = [list(range(n))]
        for _ in range(cap - 1):
            o = list(range(n))
            rng.shuffle(o)
            orders.append(o)
        for o in orders:
            chosen: list[int] = []
            for i in o:
                if all(comp[i][j] for j in chosen):
                    chosen.append(i)
            found.add(tuple(sorted(chosen)))
    sets = sorted(found, key=lambda s: (-len(s), _key_hash(repr([pairs[i] for i in s]).encode(), seed)))
    return [tuple(pairs[i] for i in s) for s in sets[:cap]]


def apply_round(config: SearchConfiguration, move: Sequence[tuple[int, int]], blocked_cycles: int) -> SearchConfiguration:
    st = bytearray(config.state)
    for i, v in enumerate(st):
        if v > 1:
            st[i] = v - 1
    for c, t in move:
        st[c] = 1 + blocked_cycles
        st[t] = 1 + blocked_cycles
    return SearchConfiguration(bytes(st), config, tuple(move))


class _Canon:
    """Canonical keys of configurations under a group of site permutations."""

    def __init__(self, perms: Sequence[Sequence[int]]):
        self.inv = [np.argsort(np.asarray(p)) for p in perms]

    def key(self, state: bytes) -> bytes:
        a = np.frombuffer(state, dtype=np.uint8)
        return min(a[inv].tobytes() for inv in self.inv)


def _partition_symmetries(lattice: Lattice, groups: Sequence[Sequence[int]]) -> list[tuple[int, ...]]:
    target = {frozenset(g) for g in groups}
    out = []
    for perm in lattice.symmetries:
        if {frozenset(perm[s] for s in g) for g in groups} == target:
            out.append(perm)
    return out


def _metrics(lattice: Lattice, config: SearchConfiguration) -> tuple[float, float]:
    idx = [i for i, v in enumerate(config.state) if v]
    p = lattice.unit_positions[idx]
    com = p.mean(axis=0)
    off = float(np.linalg.norm(com - lattice.center))
    spread = float(np.linalg.norm(p - com, axis=1).mean())
    return off, spread


def truncate_frontier(configs: Sequence[SearchConfiguration], policy: TruncationPolicy, lattice: Lattice,
                      seed: int = 0) -> list[SearchConfiguration]:
    """Trim a frontier to the policy budget.

    Configurations are binned by the number of entangled sites. Bins at least
    ``lag`` below the best are dropped once the bins above them hold
    ``keep_fraction`` of the frontier. Survivors are ranked by bin size, then
    by how close the centre of mass of the entangled sites is to the array
    centre, then by larger spread about that centre of mass, then by the
    total remaining wait, then by a seeded hash. The best ``max_geometries``
    are kept; the top bin always contributes at least one.
    """
    configs = list(configs)
    if len(configs) <= 1:
        return configs
    sizes = sorted({c.n_entangled for c in configs}, reverse=True)
    best = sizes[0]
    total = len(configs)
    kept_sizes = []
    acc = 0
    for s in sizes:
        n = sum(1 for c in configs if c.n_entangled == s)
        if s <= best - policy.lag and acc >= policy.keep_fraction * total:
            break
        kept_sizes.append(s)
        acc += n
    keep = set(kept_sizes)
    pool = [c for c in configs if c.n_entangled in keep]

    def rank(c: SearchConfiguration):
        off, spread = _metrics(lattice, c)
        wait = sum(v - 1 for v in c.state if v)
        return (-c.n_entangled, round(off, 9), -round(spread, 9), wait, _key_hash(c.state, seed))

    pool.sort(key=rank)
    return pool[: policy.max_geometries]


@dataclass(frozen=True)
class CompileResult:
    circuit: Circuit
    plan: CZPlan
    report: SearchReport


def _validate_groups(lattice: Lattice, groups) -> tuple[tuple[int, ...], ...]:
    groups = tuple(tuple(sorted(int(s) for s in g)) for g in groups)
    seen: set[int] = set()
    for g in groups:
        if not g:
            raise CompileError("empty group")
        if seen & set(g):
            raise CompileError("groups overlap")
        if any(s < 0 or s >= lattice.n_sites for s in g):
            raise CompileError("group site outside the lattice")
        seen |= set(g)
        sub = nx.Graph()
        sub.add_nodes_from(g)
        sub.add_edges_from((a, b) for a in g for b in g if a < b and lattice.adjacent(a, b))
        if not nx.is_connected(sub):
            raise CompileError(f"group {g} is not connected")
    return groups


def search(request: CompileRequest) -> tuple[CZPlan, SearchReport]:
    """Run the layer search and return the CNOT plan of the shallowest solution found."""
    t0 = time.perf_counter()
    lat = build_lattice(request.lattice)
    n = lat.n_sites
    if request.target == GLOBAL_GHZ:
        groups = (tuple(range(n)),)
    else:
        groups = _validate_groups(lat, request.groups)
    group_of = [-1] * n
    for k, g in enumerate(groups):
        for s in g:
            group_of[s] = k
    members = [s for g in groups for s in g]
    goal = len(members)
    perms = _partition_symmetries(lat, groups)
    canon = _Canon(perms)

    root_sets = orbit_reps_product(lat, groups, perms)
    B = request.blocked_cycles
    policy = request.policy
    report = SearchReport(seed=request.seed)

    frontier: list[SearchConfiguration] = []
    seen: set[bytes] = set()
    for roots in root_sets:
        cfg = initial_configuration(n, roots, request.root_delay)
        k = canon.key(cfg.state)
        if k not in seen:
            seen.add(k)
            frontier.append(cfg)

    solution = next((c for c in frontier if c.n_entangled == goal), None)
    max_iter = goal * (B + 2) + request.root_delay + 8
    it = 0
    while solution is None:
        if it >= max_iter or not frontier:
            raise SearchFailure(f"no solution within {max_iter} layers")
        expanded: list[SearchConfiguration] = []
        seen = set()
        for cfg in frontier:
            pairs = enumerate_pairs(cfg, lat, group_of)
            moves = enumerate_parallel_sets(pairs, lat, request.r_g_sq, policy.set_cap, request.seed) if pairs else []
            if policy.aggressive and moves:
                top = len(moves[0])
                moves = [m for m in moves if len(m) == top]
            for mv in moves or [()]:
                nxt = apply_round(cfg, mv, B)
                k = canon.key(nxt.state)
                if k in seen:
                    continue
                seen.add(k)
                expanded.append(nxt)
        report.expanded_sizes.append(len(expanded))
        done = [c for c in expanded if c.n_entangled == goal]
        if done:
            done.sort(key=lambda c: _key_hash(c.state, request.seed))
            solution = done[0]
            report.frontier_sizes.append(len(expanded))
            report.truncated.append(0)
        else:
            frontier = truncate_frontier(expanded, policy, lat, request.seed)
            report.frontier_sizes.append(len(frontier))
            report.truncated.append(len(expanded) - len(frontier))
        it += 1
        log.debug("iteration %d: %d expanded, %d kept", it, len(expanded), report.frontier_sizes[-1])

    hist = solution.history()
    root_node = solution
    while root_node.parent is not None:
        root_node = root_node.parent
    roots = tuple(i for i, v in enumerate(root_node.state) if v)
    rounds = tuple(tuple(m) for m in hist)
    while rounds and not rounds[-1]:
        rounds = rounds[:-1]
    report.iterations = it
    report.n_cnots = sum(len(r) for r in rounds)
    report.wall_time_s = time.perf_counter() - t0
    md = {"target": request.target, "seed": request.seed, "groups": [list(g) for g in groups]}
    plan = CZPlan(lat, request.mode, roots, rounds, float(request.r_g_sq), md)
    return plan, report


def orbit_reps_product(lattice: Lattice, groups, perms) -> list[tuple[int, ...]]:
    """One root per group, reduced to representatives under ``perms``."""
    seen: set[tuple[int, ...]] = set()
    out = []
    for combo in itertools.product(*groups):
        key = tuple(sorted(combo))
        if key in seen:
            continue
        out.append(combo)
        for p in perms:
            seen.add(tuple(sorted(p[s] for s in combo)))
    return out


def compile_ghz(request: CompileRequest) -> CompileResult:
    """Search, then emit the circuit at the requested level.

    Native-mode results are native circuits with the entanglers at the
    layers chosen by the search; logical-mode results are H + CNOT circuits.
    With ``request.verify`` the output is simulated on the ideal backend and
    checked against the target state.
    """
    plan, report = search(request)
    if request.mode == NATIVE:
        circ = lower_to_native(plan, phi=request.phi)
    else:
        circ = plan_to_logical(plan)
    if validate_parallel_layers(circ, request.r_g_sq):
        raise SearchFailure("emitted circuit violates the parallel-gate radius")
    report.depth = circ.depth
    circ = circ.with_metadata(compiler={
        "mode": request.mode, "seed": request.seed, "policy": dict(request.policy.__dict__),
        "depth": circ.depth,
    })
    if request.verify:
        _verify(circ, plan)
    return CompileResult(circ, plan, report)


def compile_local_ghz(request: CompileRequest) -> CompileResult:
    if request.target != LOCAL_GHZ:
        request = CompileRequest(**{**request.__dict__, "target": LOCAL_GHZ})
    return compile_ghz(request)


def _verify(circ: Circuit, plan: CZPlan) -> None:
    from .analysis import ghz_fidelity
    from .engine import run_ideal

    groups = plan.metadata["groups"]
    if sum(len(g) for g in groups) > 20:
        return
    st = run_ideal(circ)
    f = ghz_fidelity(st, groups)
    if not f >= 1 - 1e-9:
        raise SearchFailure(f"compiled circuit reaches GHZ fidelity {f:.3e} only")


def repetition_code_groups(lattice: Lattice | None = None) -> tuple[tuple[int, ...], ...]:
    """Three five-site groups packed on a 4x4 square array.

    One is a full plus around site (1, 1); the other two are bent five-site
    chains filling the remaining border. Site (0, 0) stays unused.
    """
    lat = lattice or build_lattice(LatticeSpec("square", 4))
    if (lat.spec.kind, lat.spec.rows, lat.spec.cols) != ("square", 4, 4):
        raise CompileError("the packed repetition layout is defined on a 4x4 square array")
    ix = lat.index
    a = (ix(0, 1), ix(1, 0), ix(1, 1), ix(1, 2), ix(2, 1))
    b = (ix(0, 2), ix(0, 3), ix(1, 3), ix(2, 3), ix(2, 2))
    c = (ix(2, 0), ix(3, 0), ix(3, 1), ix(3, 2), ix(3, 3))
    return a, b, c
