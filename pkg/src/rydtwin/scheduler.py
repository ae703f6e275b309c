"""Lowering of logical circuits and CZ-round plans to layered native circuits.

Native timing used throughout: a CNOT puts one RX(pi) on the control and three
rotations on the target before the entangler, and three rotations on each
qubit after it. A qubit that takes part in an entangler therefore needs four
local layers before it can enter the next one.
"""

from __future__ import annotations

from dataclasses import dataclass, field

from .circuit import (
    CNOT, CZ_IDEAL, CZ_PHI, H, LOGICAL, NATIVE, Circuit, CircuitError, Gate,
    decompose_hadamard, lower_cz_ideal, native_cnot, validate_parallel_layers,
)
from .lattice import DIST2_TOL, Lattice

GATE_DURATION_US = 0.122

PRE_CONTROL = 1
PRE_TARGET = 3
POST = 3
# local layers between two entanglers on the same qubit
NATIVE_BLOCK = POST + PRE_CONTROL
# layers before the first entangler of a root qubit: H plus the control pre-gate
ROOT_LEAD = 3 + PRE_CONTROL


class SchedulingError(ValueError):
    pass


@dataclass(frozen=True)
class CZPlan:
    """CNOT rounds produced by the search.

    ``rounds[t]`` lists the (control, target) pairs whose entangler sits in
    layer ``t``: a native layer index when ``mode`` is ``"native"``, a logical
    layer index (layer 0 holds the Hadamards) when it is ``"logical"``.
    """

    lattice: Lattice
    mode: str
    roots: tuple[int, ...]
    rounds: tuple[tuple[tuple[int, int], ...], ...]
    r_g_sq: float
    metadata: dict = field(default_factory=dict, compare=False)

    @property
    def n_cnots(self) -> int:
        return sum(len(r) for r in self.rounds)

    def cnots(self):
        for t, r in enumerate(self.rounds):
            for c, q in r:
                yield t, c, q


def _check_pairs_radius(lattice: Lattice, pairs, r_g_sq: float, where: str):
    for a in range(len(pairs)):
        for b in range(a + 1, len(pairs)):
            d2 = min(lattice.dist2[p, q] for p in pairs[a] for q in pairs[b])
            if d2 < r_g_sq - DIST2_TOL:
                raise SchedulingError(f"{where}: entanglers {pairs[a]} and {pairs[b]} closer than r_g")


def plan_to_logical(plan: CZPlan) -> Circuit:
    """Logical circuit (H layer, then CNOT rounds) of a logical-mode plan."""
    if plan.mode != LOGICAL:
        raise SchedulingError("plan_to_logical needs a logical-mode plan")
    layers = [[Gate(H, (r,)) for r in plan.roots]]
    for t, rnd in enumerate(plan.rounds):
        if t == 0:
            if rnd:
                raise SchedulingError("logical layer 0 is reserved for Hadamards")
            continue
        layers.append([Gate(CNOT, (c, q)) for c, q in rnd])
    while len(layers) > 1 and not layers[-1]:
        layers.pop()
    md = dict(plan.metadata, r_g_sq=plan.r_g_sq, roots=list(plan.roots))
    return Circuit(LOGICAL, plan.lattice, tuple(tuple(l) for l in layers), md)


def _plan_native(plan: CZPlan, phi: float) -> Circuit:
    """Native circuit with the entanglers pinned to the plan's layers."""
    slots: dict[int, list[Gate]] = {}
    busy: dict[tuple[int, int], Gate] = {}

    def put(layer: int, g: Gate):
        if layer < 0:
            raise SchedulingError(f"plan needs a negative layer for {g}")
        for s in g.sites:
            if (layer, s) in busy:
                raise SchedulingError(f"layer {layer}: site {s} already used by {busy[layer, s]}")
            busy[layer, s] = g
        slots.setdefault(layer, []).append(g)

    first: dict[int, int] = {}
    for t, c, q in plan.cnots():
        first.setdefault(c, t)
        first.setdefault(q, t)
    for r in plan.roots:
        f = first.get(r, ROOT_LEAD)
        for k, g in enumerate(decompose_hadamard(r)):
            put(f - ROOT_LEAD + k, g)
    for t, rnd in enumerate(plan.rounds):
        _check_pairs_radius(plan.lattice, rnd, plan.r_g_sq, f"layer {t}")
        for c, q in rnd:
            nc = native_cnot(c, q, phi)
            for k, g in enumerate(nc.control_pre):
                put(t - len(nc.control_pre) + k, g)
            for k, g in enumerate(nc.target_pre):
                put(t - len(nc.target_pre) + k, g)
            put(t, nc.cz)
            for k, g in enumerate(nc.control_post):
                put(t + 1 + k, g)
            for k, g in enumerate(nc.target_post):
                put(t + 1 + k, g)
    depth = max(slots) + 1 if slots else 0
    layers = tuple(tuple(slots.get(i, ())) for i in range(depth))
    md = dict(plan.metadata, r_g_sq=plan.r_g_sq, phi=phi, roots=list(plan.roots))
    return Circuit(NATIVE, plan.lattice, layers, md)


class _Placer:
    """Per-qubit earliest placement with an r_g check on entangler layers."""

    def __init__(self, lattice: Lattice, r_g_sq: float):
        self.lattice = lattice
        self.r_g_sq = r_g_sq
        self.slots: dict[int, list[Gate]] = {}
        self.free: dict[int, int] = {}  # next free layer per site
        self.cz_layers: dict[int, list[tuple[int, int]]] = {}

    def fresh(self, s: int) -> bool:
        return s not in self.free

    def _put(self, layer: int, g: Gate):
        self.slots.setdefault(layer, []).append(g)
        for s in g.sites:
            self.free[s] = layer + 1

    def local(self, g: Gate):
        self._put(self.free.get(g.sites[0], 0), g)

    def _cz_ok(self, layer: int, pair) -> bool:
        lat = self.lattice
        for other in self.cz_layers.get(layer, ()):
            if min(lat.dist2[p, q] for p in pair for q in other) < self.r_g_sq - DIST2_TOL:
                return False
        return True

    def entangle(self, pre_a, pre_b, cz: Gate, post_a, post_b):
        a, b = cz.sites
        # fresh qubits get their leading gates right-aligned to the entangler
        ready_a = 0 if self.fresh(a) else self.free[a]
        ready_b = 0 if self.fresh(b) else self.free[b]
        t = max(ready_a + len(pre_a), ready_b + len(pre_b))
        while not self._cz_ok(t, cz.sites):
            t += 1
        for pre, fresh in ((pre_a, self.fresh(a)), (pre_b, self.fresh(b))):
            if fresh:
                for k, g in enumerate(pre):
                    self._put(t - len(pre) + k, g)
            else:
                for g in pre:
                    self.local(g)
        self._put(t, cz)
        self.cz_layers.setdefault(t, []).append(cz.sites)
        for g in post_a:
            self.local(g)
        for g in post_b:
            self.local(g)

    def layers(self) -> tuple[tuple[Gate, ...], ...]:
        depth = max(self.slots) + 1 if self.slots else 0
        return tuple(tuple(self.slots.get(i, ())) for i in range(depth))


def _lower_logical(circuit: Circuit, r_g_sq: float, phi: float) -> Circuit:
    for layer in circuit.layers:
        _check_pairs_radius(circuit.lattice, [g.sites for g in layer if g.two_qubit], r_g_sq, "input")
    pl = _Placer(circuit.lattice, r_g_sq)
    for layer in circuit.layers:
        for g in layer:
            if g.kind == H:
                for h in decompose_hadamard(g.sites[0]):
                    pl.local(h)
            elif g.kind == CNOT:
                nc = native_cnot(*g.sites, phi)
                pl.entangle(nc.control_pre, nc.target_pre, nc.cz, nc.control_post, nc.target_post)
            elif g.kind == CZ_IDEAL:
                cz, *post = lower_cz_ideal(*g.sites, phi)
                a, b = g.sites
                pl.entangle((), (), cz, [p for p in post if p.sites[0] == a], [p for p in post if p.sites[0] == b])
            else:
                raise CircuitError(f"unexpected gate {g.kind} in a logical circuit")
    md = dict(circuit.metadata, r_g_sq=r_g_sq, phi=phi)
    return Circuit(NATIVE, circuit.lattice, pl.layers(), md)


def lower_to_native(source: Circuit | CZPlan, r_g_sq: float | None = None, phi: float = 0.0) -> Circuit:
    """Native circuit implementing a logical circuit or a CZ-round plan.

    Parameters
    ----------
    source
        A logical :class:`~rydtwin.circuit.Circuit` or a :class:`CZPlan`.
        Native-mode plans keep their entangler layers; everything else is
        placed greedily at the earliest layer its qubits allow.
    r_g_sq
        Squared parallel-gate radius in units of a^2. Defaults to the plan's
        value, or to the ``r_g_sq`` entry of the circuit metadata.
    phi
        Calibrated phase of the native entangler.
    """
    if isinstance(source, CZPlan):
        r2 = source.r_g_sq if r_g_sq is None else r_g_sq
        if source.mode == NATIVE:
            out = _plan_native(source if r2 == source.r_g_sq else
                               CZPlan(source.lattice, source.mode, source.roots, source.rounds, r2, source.metadata), phi)
        else:
            out = _lower_logical(plan_to_logical(source), r2, phi)
    else:
        if source.level != LOGICAL:
            raise SchedulingError("lower_to_native expects a logical circuit")
        r2 = source.metadata.get("r_g_sq", 1.0) if r_g_sq is None else r_g_sq
        out = _lower_logical(source, float(r2), phi)
    bad = validate_parallel_layers(out, out.metadata["r_g_sq"])
    if bad:
        raise SchedulingError(f"lowered circuit violates r_g in layer {bad[0].layer}")
    return out


@dataclass(frozen=True)
class Timeline:
    """Start times (us) of every layer; each layer drives for ``gate_duration``."""

    starts: tuple[float, ...]
    tau_layer: float
    gate_duration: float

    @property
    def total(self) -> float:
        return len(self.starts) * self.tau_layer

    def window(self, layer: int) -> tuple[float, float]:
        t0 = self.starts[layer]
        return t0, t0 + self.gate_duration

    def to_dict(self) -> dict:
        return {"tau_layer_us": self.tau_layer, "gate_duration_us": self.gate_duration,
                "n_layers": len(self.starts), "total_us": self.total}


def assign_pulse_timeline(circuit: Circuit, tau_layer: float, gate_duration: float = GATE_DURATION_US) -> Timeline:
    """Place layer ``i`` at ``i * tau_layer``; rejects layer periods shorter than a gate."""
    if not tau_layer >= gate_duration - 1e-12:
        raise SchedulingError(f"layer period {tau_layer} us is shorter than the gate duration {gate_duration} us")
    return Timeline(tuple(i * tau_layer for i in range(circuit.depth)), float(tau_layer), float(gate_duration))
