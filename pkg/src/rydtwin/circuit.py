"""Layered circuits at the logical (H, CNOT, CZ) and native (RX, RZ, CZ(phi)) level.

Rotation convention: ``RX(t) = exp(-i t X / 2)``, ``RZ(t) = exp(-i t Z / 2)``
acting on the {|0>, |1>} block of a site and as identity on |r>.

The native entangler ``CZ_PHI(phi)`` is modelled as
``diag(1, e^{i phi}, e^{i phi}, e^{i(2 phi - pi)})`` on |00>, |01>, |10>, |11>.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field
from typing import Iterable, Sequence

import numpy as np

from .lattice import Lattice, LatticeSpec, build_lattice

SCHEMA = "rydtwin-circuit/1"

LOGICAL = "logical"
NATIVE = "native"

RX, RZ, H, CZ_IDEAL, CNOT, CZ_PHI = "RX", "RZ", "H", "CZ_IDEAL", "CNOT", "CZ_PHI"
ONE_QUBIT = frozenset({RX, RZ, H})
TWO_QUBIT = frozenset({CZ_IDEAL, CNOT, CZ_PHI})
LEVEL_GATES = {LOGICAL: frozenset({H, CNOT, CZ_IDEAL}), NATIVE: frozenset({RX, RZ, CZ_PHI})}

PI = math.pi


class CircuitError(ValueError):
    pass


@dataclass(frozen=True)
class Gate:
    kind: str
    sites: tuple[int, ...]
    angle: float = 0.0

    def __post_init__(self):
        object.__setattr__(self, "sites", tuple(int(s) for s in self.sites))
        if self.kind in ONE_QUBIT:
            if len(self.sites) != 1:
                raise CircuitError(f"{self.kind} acts on one site, got {self.sites}")
        elif self.kind in TWO_QUBIT:
            if len(self.sites) != 2 or self.sites[0] == self.sites[1]:
                raise CircuitError(f"{self.kind} needs two distinct sites, got {self.sites}")
        else:
            raise CircuitError(f"unknown gate kind {self.kind!r}")
        if not math.isfinite(self.angle):
            raise CircuitError("gate angle must be finite")

    @property
    def two_qubit(self) -> bool:
        return self.kind in TWO_QUBIT

    def to_dict(self) -> dict:
        return {"kind": self.kind, "sites": list(self.sites), "angle": format(float(self.angle), ".17g")}

    @classmethod
    def from_dict(cls, d: dict) -> "Gate":
        return cls(d["kind"], tuple(d["sites"]), float(d.get("angle", "0")))


def rx(site: int, theta: float) -> Gate:
    return Gate(RX, (site,), theta)


def rz(site: int, theta: float) -> Gate:
    return Gate(RZ, (site,), theta)


Layer = tuple  # tuple[Gate, ...]


def check_layer(layer: Iterable[Gate]) -> tuple[Gate, ...]:
    layer = tuple(layer)
    seen: set[int] = set()
    for g in layer:
        if seen.intersection(g.sites):
            raise CircuitError(f"gates in one layer overlap on sites {sorted(seen.intersection(g.sites))}")
        seen.update(g.sites)
    return layer


@dataclass(frozen=True)
class Circuit:
    level: str
    lattice: Lattice
    layers: tuple[tuple[Gate, ...], ...]
    metadata: dict = field(default_factory=dict, compare=False)

    def __post_init__(self):
        if self.level not in LEVEL_GATES:
            raise CircuitError(f"unknown circuit level {self.level!r}")
        layers = tuple(check_layer(l) for l in self.layers)
        object.__setattr__(self, "layers", layers)
        allowed = LEVEL_GATES[self.level]
        n = self.lattice.n_sites
        for layer in layers:
            for g in layer:
                if g.kind not in allowed:
                    raise CircuitError(f"{g.kind} not allowed in a {self.level} circuit")
                if any(s < 0 or s >= n for s in g.sites):
                    raise CircuitError(f"gate {g} addresses a site outside the lattice")
                if g.two_qubit and not self.lattice.adjacent(*g.sites):
                    raise CircuitError(f"{g.kind} on non-adjacent sites {g.sites}")

    @property
    def depth(self) -> int:
        return len(self.layers)

    def gates(self) -> Iterable[Gate]:
        for layer in self.layers:
            yield from layer

    def active_sites(self) -> tuple[int, ...]:
        return tuple(sorted({s for g in self.gates() for s in g.sites}))

    def with_metadata(self, **kw) -> "Circuit":
        md = dict(self.metadata)
        md.update(kw)
        return Circuit(self.level, self.lattice, self.layers, md)


# --- gate matrices on the qubit block -----------------------------------------

def rx_matrix(theta: float) -> np.ndarray:
    c, s = math.cos(theta / 2), math.sin(theta / 2)
    return np.array([[c, -1j * s], [-1j * s, c]])


def rz_matrix(theta: float) -> np.ndarray:
    return np.diag([np.exp(-0.5j * theta), np.exp(0.5j * theta)])


H_MATRIX = np.array([[1, 1], [1, -1]], dtype=complex) / math.sqrt(2)
CNOT_MATRIX = np.array([[1, 0, 0, 0], [0, 1, 0, 0], [0, 0, 0, 1], [0, 0, 1, 0]], dtype=complex)
CZ_MATRIX = np.diag([1, 1, 1, -1]).astype(complex)


def cz_phi_matrix(phi: float) -> np.ndarray:
    e = np.exp(1j * phi)
    return np.diag([1, e, e, np.exp(1j * (2 * phi - PI))])


def gate_matrix(g: Gate) -> np.ndarray:
    """Qubit-block unitary of ``g`` (2x2, or 4x4 with the first site as the high bit)."""
    if g.kind == RX:
        return rx_matrix(g.angle)
    if g.kind == RZ:
        return rz_matrix(g.angle)
    if g.kind == H:
        return H_MATRIX
    if g.kind == CNOT:
        return CNOT_MATRIX
    if g.kind == CZ_IDEAL:
        return CZ_MATRIX
    if g.kind == CZ_PHI:
        return cz_phi_matrix(g.angle)
    raise CircuitError(g.kind)


# --- decompositions -----------------------------------------------------------

def decompose_hadamard(site: int = 0) -> list[Gate]:
    """H = RZ(pi/2) RX(pi/2) RZ(pi/2), returned in application order."""
    return [rz(site, PI / 2), rx(site, PI / 2), rz(site, PI / 2)]


@dataclass(frozen=True)
class NativeCnot:
    """The 11-gate native CNOT split by role and by position relative to the CZ."""

    control_pre: tuple[Gate, ...]
    target_pre: tuple[Gate, ...]
    cz: Gate
    control_post: tuple[Gate, ...]
    target_post: tuple[Gate, ...]

    def gates(self) -> list[Gate]:
        return [*self.control_pre, *self.target_pre, self.cz, *self.control_post, *self.target_post]


def native_cnot(control: int, target: int, phi: float) -> NativeCnot:
    c, t = control, target
    return NativeCnot(
        control_pre=(rx(c, PI),),
        target_pre=(rx(t, PI / 2), rz(t, -PI / 2), rx(t, PI / 2)),
        cz=Gate(CZ_PHI, (c, t), phi),
        control_post=(rz(c, -phi - 3 * PI / 2), rx(c, PI), rz(c, 3 * PI / 2)),
        target_post=(rz(t, -phi - 3 * PI / 2), rx(t, PI / 2), rz(t, 3 * PI / 2)),
    )


def decompose_cnot_native(control: int, target: int, phi: float, lattice: Lattice | None = None) -> list[Gate]:
    """Native CNOT as 10 single-qubit rotations around one CZ_PHI, in application order.

    Order of application: RX(pi) on the control, RX(pi/2) RZ(-pi/2) RX(pi/2)
    on the target, the entangler, then RZ(-phi - 3pi/2) RX(pi) RZ(3pi/2) on the
    control and RZ(-phi - 3pi/2) RX(pi/2) RZ(3pi/2) on the target. Both
    post-CZ phase gates carry ``-phi`` so that the symmetric CZ_PHI model
    reduces to an exact CZ, which makes the sequence equal CNOT (up to a
    global phase) for every ``phi``; see :func:`cnot_identity_error`.
    """
    if control == target:
        raise CircuitError("control and target must differ")
    if lattice is not None and not lattice.adjacent(control, target):
        raise CircuitError(f"CNOT on non-adjacent sites {control}, {target}")
    return native_cnot(control, target, phi).gates()


def lower_cz_ideal(control: int, target: int, phi: float) -> list[Gate]:
    """CZ = CZ_PHI(phi) followed by RZ(-phi) on both sites."""
    out = [Gate(CZ_PHI, (control, target), phi)]
    if phi != 0.0:
        out += [rz(control, -phi), rz(target, -phi)]
    return out


def sequence_unitary(gates: Sequence[Gate], sites: Sequence[int]) -> np.ndarray:
    """Qubit-space unitary of a gate sequence on ``sites`` (first site = highest bit)."""
    n = len(sites)
    pos = {s: k for k, s in enumerate(sites)}
    U = np.eye(2 ** n, dtype=complex).reshape((2,) * n + (2 ** n,))
    for g in gates:
        m = gate_matrix(g)
        axes = [pos[s] for s in g.sites]
        k = len(axes)
        m = m.reshape((2,) * (2 * k))
        U = np.tensordot(m, U, axes=(list(range(k, 2 * k)), axes))
        U = np.moveaxis(U, list(range(k)), axes)
    return U.reshape(2 ** n, 2 ** n)


def phase_aligned_distance(U: np.ndarray, V: np.ndarray) -> float:
    """max |U - e^{ia} V| with the global phase a chosen from the largest entry of V."""
    k = int(np.argmax(np.abs(V)))
    ph = U.flat[k] / V.flat[k]
    if abs(ph) == 0:
        return float(np.abs(U - V).max())
    ph /= abs(ph)
    return float(np.abs(U - ph * V).max())


def cnot_identity_error(phi: float) -> float:
    """Deviation of the native 11-gate sequence from CNOT at the given phi."""
    U = sequence_unitary(decompose_cnot_native(0, 1, phi), [0, 1])
    return phase_aligned_distance(U, CNOT_MATRIX)


# --- validation and statistics -------------------------------------------------

@dataclass(frozen=True)
class Violation:
    layer: int
    gates: tuple[Gate, Gate]
    distance: float  # in units of a


def validate_parallel_layers(circuit: Circuit, r_g_sq: float) -> list[Violation]:
    """All pairs of simultaneous two-qubit gates closer than ``r_g``.

    ``r_g_sq`` is the squared radius in units of a^2. An empty list means the
    circuit respects the constraint.
    """
    lat = circuit.lattice
    out = []
    for i, layer in enumerate(circuit.layers):
        twos = [g for g in layer if g.two_qubit]
        for a in range(len(twos)):
            for b in range(a + 1, len(twos)):
                d2 = min(lat.dist2[p, q] for p in twos[a].sites for q in twos[b].sites)
                if not d2 >= r_g_sq - 1e-9:
                    out.append(Violation(i, (twos[a], twos[b]), float(math.sqrt(d2))))
    return out


@dataclass(frozen=True)
class CircuitStats:
    depth: int
    n_gates: int
    n_one: int
    n_two: int
    avg_one: float
    avg_two: float
    max_one: int
    max_two: int
    qgs: float  # gates per second

    def as_dict(self) -> dict:
        return dict(self.__dict__)


def circuit_stats(circuit: Circuit, tau_layer_us: float) -> CircuitStats:
    """Gate counts per layer and quantum gates per second for a layer period in us."""
    if not tau_layer_us > 0:
        raise CircuitError("tau_layer must be positive")
    ones = [sum(1 for g in l if not g.two_qubit) for l in circuit.layers]
    twos = [sum(1 for g in l if g.two_qubit) for l in circuit.layers]
    D = circuit.depth
    G1, G2 = sum(ones), sum(twos)
    if D == 0:
        return CircuitStats(0, 0, 0, 0, 0.0, 0.0, 0, 0, 0.0)
    return CircuitStats(
        depth=D, n_gates=G1 + G2, n_one=G1, n_two=G2,
        avg_one=G1 / D, avg_two=G2 / D, max_one=max(ones), max_two=max(twos),
        qgs=(G1 + G2) / (D * tau_layer_us * 1e-6),
    )


def depth_bounds(L: int) -> tuple[int, int, int]:
    """(D_min, D_CZ-serial, D_serial) for global GHZ preparation on an even L x L grid."""
    if L < 2 or L % 2:
        raise CircuitError(f"depth bounds are defined for even L >= 2, got {L}")
    return 3 + 5 * L, L * L + 14, 11 * (L * L - 1) + 3


# --- JSON -------------------------------------------------------------------------

def _jsonable(x):
    if isinstance(x, dict):
        return {str(k): _jsonable(v) for k, v in x.items()}
    if isinstance(x, (list, tuple)):
        return [_jsonable(v) for v in x]
    if isinstance(x, np.generic):
        return x.item()
    return x


def circuit_to_dict(circuit: Circuit) -> dict:
    md = dict(circuit.metadata)
    head = {
        "schema": SCHEMA,
        "level": circuit.level,
        "lattice": circuit.lattice.to_dict(),
        "r_g_sq_in_a2": md.pop("r_g_sq", None),
    }
    if "tau_layer_us" in md:
        head["tau_layer_us"] = md.pop("tau_layer_us")
    head["metadata"] = _jsonable(md)
    head["layers"] = [[g.to_dict() for g in layer] for layer in circuit.layers]
    return head


def circuit_from_dict(d: dict) -> Circuit:
    if d.get("schema") != SCHEMA:
        raise CircuitError(f"unsupported circuit schema {d.get('schema')!r}")
    lat = build_lattice(LatticeSpec.from_dict(d["lattice"]))
    pos = d["lattice"].get("positions_um")
    if pos is not None and not np.allclose(np.asarray(pos, float), lat.positions, rtol=0, atol=1e-9):
        raise CircuitError("stored site positions disagree with the lattice parameters")
    md = dict(d.get("metadata", {}))
    if d.get("r_g_sq_in_a2") is not None:
        md["r_g_sq"] = d["r_g_sq_in_a2"]
    if d.get("tau_layer_us") is not None:
        md["tau_layer_us"] = d["tau_layer_us"]
    layers = tuple(tuple(Gate.from_dict(g) for g in layer) for layer in d["layers"])
    return Circuit(d["level"], lat, layers, md)


def dumps(circuit: Circuit) -> str:
    return json.dumps(circuit_to_dict(circuit), indent=1, sort_keys=True)


def loads(text: str) -> Circuit:
    return circuit_from_dict(json.loads(text))


def save(circuit: Circuit, path) -> None:
    with open(path, "w") as f:
        f.write(dumps(circuit))


def load(path) -> Circuit:
    with open(path) as f:
        return loads(f.read())
