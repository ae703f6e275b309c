"""Dense state-vector backends: exact gates and pulse-level time evolution.

A :class:`QutritState` stores amplitudes as a tensor of shape
``(levels,) * n`` whose axis ``k`` belongs to lattice site ``sites[k]``; the
flattened vector is in C order, so the last site varies fastest. Only sites a
circuit touches are simulated: every other atom stays in |0>, which no drive
or interaction term moves.

Ideal runs use ``levels=2`` because exact gates never populate |r>; pulse runs
use ``levels=3``.

Pulse integration. Drives on sites without Rydberg coupling commute with
everything else in the Hamiltonian and are applied as exact single-site
exponentials. The remaining generator (Rydberg-coupled sites plus the diagonal
interaction and decay terms) is advanced with a commutator-free fourth-order
Magnus step, each exponential evaluated by an Arnoldi (Krylov) projection.
"""

from __future__ import annotations

import math
import os
from dataclasses import dataclass, field
from typing import Callable, Sequence

import numpy as np
from scipy.linalg import expm

from .circuit import CNOT, CZ_IDEAL, CZ_PHI, Circuit, Gate, gate_matrix
from .physics import (
    CF4_NODES, CF4_WEIGHTS, DeviceParams, HamiltonianTerms, SiteDrive, build_terms, pulses_for_layer,
)

MAX_SITES = 16
ROUTINE_PULSE_SITES = 9
TWO_STATE = "two_state"
SINGLE_STATE = "single_state"


class EngineError(RuntimeError):
    pass


class MemoryGuardError(EngineError):
    pass


class IntegratorInstability(EngineError):
    pass


# --- state --------------------------------------------------------------------

@dataclass
class QutritState:
    amps: np.ndarray
    sites: tuple[int, ...]
    n_lattice: int
    layout: str = "axis k = sites[k], C order"

    def __post_init__(self):
        self.sites = tuple(int(s) for s in self.sites)
        if self.amps.ndim != len(self.sites):
            raise EngineError("amplitude tensor rank differs from the number of sites")
        if len(set(self.amps.shape)) > 1:
            raise EngineError("all sites must have the same number of levels")

    @property
    def n(self) -> int:
        return len(self.sites)

    @property
    def levels(self) -> int:
        return self.amps.shape[0] if self.amps.ndim else 3

    @property
    def norm2(self) -> float:
        return float(np.vdot(self.amps, self.amps).real)

    @property
    def vector(self) -> np.ndarray:
        return self.amps.reshape(-1)

    def copy(self) -> "QutritState":
        return QutritState(self.amps.copy(), self.sites, self.n_lattice, self.layout)

    def to_levels(self, levels: int) -> "QutritState":
        if levels == self.levels:
            return self
        if levels < self.levels:
            raise EngineError("cannot drop levels from a state")
        out = np.zeros((levels,) * self.n, dtype=complex)
        out[(slice(0, self.levels),) * self.n] = self.amps
        return QutritState(out, self.sites, self.n_lattice, self.layout)

    def probabilities(self) -> np.ndarray:
        p = np.abs(self.vector) ** 2
        s = p.sum()
        if not s > 0:
            raise EngineError("state has zero norm")
        return p / s

    def amplitude(self, config: dict[int, int]) -> complex:
        """Amplitude of the basis state with the given site levels (absent sites in |0>)."""
        idx = []
        for s in self.sites:
            idx.append(int(config.get(s, 0)))
        extra = {s: v for s, v in config.items() if s not in self.sites and v != 0}
        if extra:
            return 0j
        if any(v >= self.levels for v in idx):
            return 0j
        return complex(self.amps[tuple(idx)])


def zero_state(sites: Sequence[int], n_lattice: int, levels: int = 3) -> QutritState:
    n = len(sites)
    check_size(n, levels)
    amps = np.zeros((levels,) * n, dtype=complex)
    amps[(0,) * n] = 1.0
    return QutritState(amps, tuple(sites), n_lattice)


def available_memory() -> int | None:
    try:
        return os.sysconf("SC_AVPHYS_PAGES") * os.sysconf("SC_PAGE_SIZE")
    except (ValueError, OSError, AttributeError):
        return None


def check_size(n: int, levels: int, vectors: int = 4) -> int:
    """Bytes needed for ``vectors`` state copies; raises when over the limits."""
    if n > MAX_SITES:
        raise MemoryGuardError(f"{n} sites exceed the dense limit of {MAX_SITES}")
    need = 16 * levels ** n * vectors
    avail = available_memory()
    if avail is not None and need > avail:
        raise MemoryGuardError(f"needs about {need / 2**30:.1f} GiB, {avail / 2**30:.1f} GiB available")
    return need


# --- tensor kernels -------------------------------------------------------------

def apply_one(psi: np.ndarray, axis: int, U: np.ndarray) -> np.ndarray:
    """Apply a (levels x levels) matrix to one axis of the state tensor."""
    L = psi.shape[axis]
    A = int(np.prod(psi.shape[:axis], dtype=np.int64))
    x = psi.reshape(A, L, -1)
    return np.matmul(U, x).reshape(psi.shape)


def apply_two(psi: np.ndarray, ax1: int, ax2: int, U: np.ndarray) -> np.ndarray:
    L = psi.shape[ax1]
    U4 = U.reshape(L, L, L, L)
    out = np.tensordot(U4, psi, axes=([2, 3], [ax1, ax2]))
    return np.moveaxis(out, [0, 1], [ax1, ax2])


def embed_one(U2: np.ndarray, levels: int) -> np.ndarray:
    if levels == 2:
        return U2
    U = np.eye(levels, dtype=complex)
    U[:2, :2] = U2
    return U


def embed_two(U4: np.ndarray, levels: int) -> np.ndarray:
    """Qubit-block two-site gate extended by identity on every Rydberg-involving state."""
    if levels == 2:
        return U4
    d = levels
    U = np.eye(d * d, dtype=complex)
    q = [a * d + b for a in range(2) for b in range(2)]
    U[np.ix_(q, q)] = U4
    return U


def apply_gate(state: QutritState, g: Gate, pos: dict[int, int]) -> None:
    L = state.levels
    if g.two_qubit:
        a, b = (pos[s] for s in g.sites)
        if g.kind in (CZ_PHI, CZ_IDEAL):
            d = np.diag(gate_matrix(g))
            ph = np.ones((L, L), dtype=complex)
            ph[:2, :2] = d.reshape(2, 2)
            shape = [1] * state.n
            shape[a], shape[b] = L, L
            # reshape fills axes in increasing order
            state.amps = state.amps * (ph if a < b else ph.T).reshape(shape)
        else:
            state.amps = apply_two(state.amps, a, b, embed_two(gate_matrix(g), L))
    else:
        state.amps = apply_one(state.amps, pos[g.sites[0]], embed_one(gate_matrix(g), L))


# --- ideal backend ----------------------------------------------------------------

def run_ideal(circuit: Circuit, levels: int = 2, sites: Sequence[int] | None = None,
              snapshots: list | None = None) -> QutritState:
    """Apply the circuit's gates exactly, layer by layer, starting from all |0>.

    Parameters
    ----------
    levels
        2 for the compact qubit representation, 3 to include |r>.
    sites
        Sites to simulate; defaults to the sites the circuit touches.
    snapshots
        If a list is given, a copy of the state after every layer is appended.
    """
    sites = circuit.active_sites() if sites is None else tuple(sites)
    st = zero_state(sites, circuit.lattice.n_sites, levels)
    pos = {s: k for k, s in enumerate(sites)}
    for layer in circuit.layers:
        for g in layer:
            apply_gate(st, g, pos)
        if snapshots is not None:
            snapshots.append(st.copy())
    return st


# --- Krylov exponential --------------------------------------------------------------

def expmv(matvec: Callable[[np.ndarray], np.ndarray], v: np.ndarray, dt: float,
          m_max: int = 40, tol: float = 1e-13, _depth: int = 0) -> np.ndarray:
    """exp(-i dt A) v by Arnoldi projection; halves the step if it does not converge."""
    beta = np.linalg.norm(v)
    if beta == 0:
        return v.copy()
    V = [v / beta]
    Hm = np.zeros((m_max + 1, m_max), dtype=complex)
    for j in range(m_max):
        w = matvec(V[j])
        for i in range(j + 1):
            Hm[i, j] = np.vdot(V[i], w)
            w = w - Hm[i, j] * V[i]
        # second Gram-Schmidt pass keeps the basis orthogonal
        for i in range(j + 1):
            c = np.vdot(V[i], w)
            Hm[i, j] += c
            w = w - c * V[i]
        h = np.linalg.norm(w)
        F = expm(-1j * dt * Hm[: j + 1, : j + 1])[:, 0]
        if h < 1e-300 or beta * h * dt * abs(F[j]) < tol * beta:
            return beta * np.tensordot(F, np.asarray(V), axes=(0, 0))
        Hm[j + 1, j] = h
        V.append(w / h)
    if _depth > 12:
        raise IntegratorInstability("Krylov exponential failed to converge")
    half = expmv(matvec, v, dt / 2, m_max, tol, _depth + 1)
    return expmv(matvec, half, dt / 2, m_max, tol, _depth + 1)


# --- pulse backend ---------------------------------------------------------------------

@dataclass(frozen=True)
class BackendConfig:
    """Settings of the pulse-level integrator.

    ``layer_period`` defaults to the gate duration, i.e. layers follow each
    other without idle time; the layer period of a scenario only enters the
    dephasing and gate-rate estimates.
    """

    dt: float = 0.001
    record_stride: int = 1
    snapshot_per_layer: bool = False
    seed: int = 0
    layer_period: float | None = None
    allow_large: bool = False
    krylov_dim: int = 40
    krylov_tol: float = 1e-13
    stability: float = 0.5

    def __post_init__(self):
        if not self.dt > 0:
            raise EngineError("dt must be positive")
        if self.record_stride < 1:
            raise EngineError("record_stride must be >= 1")


@dataclass
class RunRecord:
    times: np.ndarray
    n_expect: np.ndarray  # (n_times, n_sites)
    norm: np.ndarray  # norm (not squared) at each time
    final: QutritState
    sites: tuple[int, ...]
    snapshots: list = field(default_factory=list)
    layer_end_times: list = field(default_factory=list)
    metadata: dict = field(default_factory=dict)

    @property
    def norm2(self) -> float:
        return self.final.norm2

    def series_rows(self):
        tot = self.n_expect.sum(axis=1)
        for t, nr, s in zip(self.times, self.norm, tot):
            yield float(t), float(nr), float(s)


def _rydberg_expectations(psi: np.ndarray, norm2: float) -> np.ndarray:
    p = np.abs(psi) ** 2
    n = psi.ndim
    out = np.empty(n)
    for k in range(n):
        x = p.reshape(int(np.prod(p.shape[:k], dtype=np.int64)), p.shape[k], -1)
        out[k] = x[:, 2, :].sum()
    return out / norm2 if norm2 > 0 else out


def _local_props(drives: dict[int, SiteDrive], pos: dict[int, int], dt: float) -> list[tuple[int, np.ndarray]]:
    out = []
    for s, d in drives.items():
        if not d.rydberg and not d.is_zero():
            out.append((pos[s], expm(-1j * dt * d.matrix(0.0))))
    return out


def _drive_steps(psi: np.ndarray, drives: dict[int, SiteDrive], pos: dict[int, int], diag: np.ndarray,
                 idle_phase: np.ndarray, steps: int, dt: float, config: BackendConfig):
    """Yield the state after each of ``steps`` time steps under ``drives``."""
    local = _local_props(drives, pos, dt)
    ryd = [(pos[s], d) for s, d in drives.items() if d.rydberg]
    w1, w2 = CF4_WEIGHTS
    c1, c2 = CF4_NODES
    if ryd:
        tk = np.arange(steps) * dt
        mats = [(ax, d.matrix(tk + c1 * dt), d.matrix(tk + c2 * dt)) for ax, d in ryd]
        peak = max(np.linalg.norm(m1, ord=2, axis=(1, 2)).max() for _, m1, _ in mats)
        if dt * peak > config.stability:
            raise IntegratorInstability(
                f"dt {dt} too large for drive norm {peak:.1f} rad/us (limit {config.stability})")
    shape = psi.shape
    for k in range(steps):
        for ax, U in local:
            psi = apply_one(psi, ax, U)
        if ryd:
            for wa, wb in ((w2, w1), (w1, w2)):
                gens = [(ax, wa * m1[k] + wb * m2[k]) for ax, m1, m2 in mats]

                def mv(v, gens=gens):
                    x = v.reshape(shape)
                    out = 0.5 * diag * x
                    for ax, G in gens:
                        out = out + apply_one(x, ax, G)
                    return out.reshape(-1)

                psi = expmv(mv, psi.reshape(-1), dt, config.krylov_dim, config.krylov_tol).reshape(shape)
        else:
            psi = psi * idle_phase
        yield psi


def evolve(state: QutritState, drives: dict[int, SiteDrive], duration: float,
           terms: HamiltonianTerms | None = None, config: BackendConfig | None = None) -> QutritState:
    """Evolve a three-level state under fixed site drives for ``duration`` us.

    ``drives`` maps lattice sites to :class:`~rydtwin.physics.SiteDrive`;
    ``terms`` supplies interactions and decay (none by default). The drive
    clock starts at zero, as within one gate window.
    """
    config = BackendConfig() if config is None else config
    st = state.to_levels(3)
    sites = tuple(st.sites)
    if terms is None:
        terms = HamiltonianTerms(sites, (), 0.0, False, 0.0)
    elif tuple(terms.sites) != sites:
        raise EngineError("Hamiltonian terms were built for different sites")
    steps = max(1, int(round(duration / config.dt)))
    dt = duration / steps
    diag = terms.diagonal(3)
    pos = {s: k for k, s in enumerate(sites)}
    psi = st.amps.astype(complex, copy=True)
    for psi in _drive_steps(psi, drives, pos, diag, np.exp(-1j * dt * diag), steps, dt, config):
        pass
    return QutritState(psi, sites, st.n_lattice, st.layout)


def run_pulse(circuit: Circuit, device: DeviceParams | None = None, config: BackendConfig | None = None,
              open_system: bool = False, r_g_sq: float | None = None,
              terms: HamiltonianTerms | None = None, initial: QutritState | None = None) -> RunRecord:
    """Integrate the Schroedinger equation for a native circuit's pulse program.

    Each layer drives for the gate duration, followed by idle evolution up to
    ``config.layer_period``. The open system adds ``-i gamma n`` per site and
    the state is not renormalised. The run starts from all |0> unless an
    ``initial`` state on the circuit's active sites is given.

    Raises
    ------
    MemoryGuardError
        Too many sites for the dense backend, or more than nine without
        ``config.allow_large``.
    IntegratorInstability
        ``dt`` times the largest drive norm exceeds ``config.stability``.
    """
    device = DeviceParams() if device is None else device
    config = BackendConfig() if config is None else config
    sites = circuit.active_sites()
    n = len(sites)
    if n > MAX_SITES:
        raise MemoryGuardError(f"{n} sites exceed the dense limit of {MAX_SITES}")
    if n > ROUTINE_PULSE_SITES and not config.allow_large:
        raise MemoryGuardError(f"pulse run on {n} sites needs allow_large "
                               f"(about {16 * 3 ** n * (config.krylov_dim + 6) / 2**30:.1f} GiB)")
    check_size(n, 3, config.krylov_dim + 6)
    T = device.gate_duration_us
    period = T if config.layer_period is None else config.layer_period
    if period < T - 1e-12:
        raise EngineError("layer period shorter than the gate duration")
    steps = max(1, int(round(T / config.dt)))
    dt = T / steps
    idle_steps = int(round((period - T) / dt))
    if r_g_sq is None:
        r_g_sq = float(circuit.metadata.get("r_g_sq", 1.0))
    if terms is None:
        terms = build_terms(circuit.lattice, device.r_i(r_g_sq), open_system, device, sites)
    elif tuple(terms.sites) != tuple(sites):
        raise EngineError("Hamiltonian terms were built for different sites")
    diag = terms.diagonal(3)
    idle_phase = np.exp(-1j * dt * diag)
    pos = {s: k for k, s in enumerate(sites)}
    if initial is None:
        psi = zero_state(sites, circuit.lattice.n_sites, 3).amps
    else:
        if tuple(initial.sites) != tuple(sites):
            raise EngineError(f"initial state covers sites {initial.sites}, circuit uses {sites}")
        psi = initial.to_levels(3).amps.astype(complex, copy=True)
    n0 = float(np.vdot(psi, psi).real)

    times, recs, norms = [0.0], [_rydberg_expectations(psi, n0)], [math.sqrt(n0)]
    snaps, ends = [], []
    t_now = 0.0
    step_count = 0

    def record(force=False):
        nonlocal step_count
        step_count += 1
        if force or step_count % config.record_stride == 0:
            n2 = float(np.vdot(psi, psi).real)
            times.append(t_now)
            recs.append(_rydberg_expectations(psi, n2))
            norms.append(math.sqrt(n2))

    for layer in circuit.layers:
        drives = pulses_for_layer(layer, device)
        for k, psi in enumerate(_drive_steps(psi, drives, pos, diag, idle_phase, steps, dt, config)):
            t_now += dt
            record(force=(k == steps - 1 and idle_steps == 0))
        for k in range(idle_steps):
            psi = psi * idle_phase
            t_now += dt
            record(force=(k == idle_steps - 1))
        ends.append(t_now)
        if config.snapshot_per_layer:
            snaps.append(QutritState(psi.copy(), sites, circuit.lattice.n_sites))
    final = QutritState(psi, sites, circuit.lattice.n_sites)
    md = {"dt": dt, "steps_per_gate": steps, "layer_period": period, "open_system": bool(open_system),
          "gamma": terms.gamma, "r_i_um": terms.r_i_um, "n_pairs": terms.n_pairs, "sites": list(sites)}
    return RunRecord(np.asarray(times), np.asarray(recs), np.asarray(norms), final, sites, snaps, ends, md)


# --- measurement ------------------------------------------------------------------

@dataclass(frozen=True)
class Histogram:
    scheme: str
    shots: int
    n_sites: int
    counts: dict  # bin -> count (int) or probability (float) in exact mode

    def frequency(self, key) -> float:
        total = self.shots if self.shots else 1.0
        return self.counts.get(key, 0) / total

    def rows(self):
        for k in sorted(self.counts):
            yield k, self.counts[k]


def _digit_counts(idx: np.ndarray, n: int, levels: int) -> tuple[np.ndarray, np.ndarray]:
    c0 = np.zeros(idx.shape, dtype=np.int64)
    c1 = np.zeros(idx.shape, dtype=np.int64)
    x = idx.astype(np.int64)
    for _ in range(n):
        x, d = np.divmod(x, levels)
        c0 += d == 0
        c1 += d == 1
    return c0, c1


def _bin_keys(c0, c1, scheme):
    if scheme == TWO_STATE:
        return list(zip(c0.tolist(), c1.tolist()))
    return c0.tolist()


def sample_measurements(state: QutritState, shots: int, scheme: str = TWO_STATE, seed: int = 0,
                        chunk: int = 1 << 17) -> Histogram:
    """Projective measurements of every site, binned by readout scheme.

    ``two_state`` bins by (number of |0>, number of |1>) and ``single_state``
    by the number of |0> only; sites that are not simulated count as |0>.
    Shots are drawn in chunks, chunk ``c`` using a Philox generator seeded
    with ``(seed, c)``, so results do not depend on how chunks are scheduled.
    """
    if shots < 1:
        raise EngineError("shots must be >= 1")
    if scheme not in (TWO_STATE, SINGLE_STATE):
        raise EngineError(f"unknown readout scheme {scheme!r}")
    p = np.abs(state.vector) ** 2
    cdf = np.cumsum(p)
    total = cdf[-1]
    if not total > 0:
        raise EngineError("cannot sample a zero-norm state")
    extra0 = state.n_lattice - state.n
    counts: dict = {}
    for c, start in enumerate(range(0, shots, chunk)):
        m = min(chunk, shots - start)
        rng = np.random.Generator(np.random.Philox(np.random.SeedSequence([seed, c])))
        u = rng.random(m) * total
        idx = np.minimum(np.searchsorted(cdf, u, side="right"), p.size - 1)
        c0, c1 = _digit_counts(idx, state.n, state.levels)
        c0 = c0 + extra0
        if scheme == TWO_STATE:
            keys, cnt = np.unique(np.stack([c0, c1], axis=1), axis=0, return_counts=True)
            for (a, b), k in zip(keys.tolist(), cnt.tolist()):
                counts[(a, b)] = counts.get((a, b), 0) + k
        else:
            keys, cnt = np.unique(c0, return_counts=True)
            for a, k in zip(keys.tolist(), cnt.tolist()):
                counts[a] = counts.get(a, 0) + k
    return Histogram(scheme, shots, state.n_lattice, dict(sorted(counts.items())))


def exact_distribution(state: QutritState, scheme: str = TWO_STATE) -> Histogram:
    """Bin probabilities of the normalised state (``shots`` = 0 marks exact mode)."""
    p = state.probabilities()
    c0, c1 = _digit_counts(np.arange(p.size), state.n, state.levels)
    c0 = c0 + (state.n_lattice - state.n)
    out: dict = {}
    for key, w in zip(_bin_keys(c0, c1, scheme), p.tolist()):
        if w:
            out[key] = out.get(key, 0.0) + w
    return Histogram(scheme, 0, state.n_lattice, dict(sorted(out.items())))


def state_overlap(s1: QutritState, s2: QutritState) -> complex:
    """<s1|s2> of the normalised states."""
    if s1.sites != s2.sites:
        raise EngineError("states were simulated on different site layouts")
    L = max(s1.levels, s2.levels)
    a, b = s1.to_levels(L).vector, s2.to_levels(L).vector
    na, nb = np.linalg.norm(a), np.linalg.norm(b)
    if na == 0 or nb == 0:
        raise EngineError("zero-norm state")
    return complex(np.vdot(a, b) / (na * nb))
