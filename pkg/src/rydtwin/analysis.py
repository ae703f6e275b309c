"""Fidelities, Rydberg observables, dephasing estimates and readout classification."""

from __future__ import annotations

import itertools
import math
from dataclasses import dataclass
from typing import Sequence

import numpy as np

from .circuit import RX, Circuit
from .engine import SINGLE_STATE, TWO_STATE, Histogram, QutritState, RunRecord, state_overlap
from .physics import trapezoid

EPS_N = 1e-12


class AnalysisError(ValueError):
    pass


def _groups(state: QutritState, target) -> list[list[int]]:
    if target is None:
        return [list(range(state.n_lattice))]
    target = list(target)
    if target and all(isinstance(t, (int, np.integer)) for t in target):
        return [[int(t) for t in target]]
    return [[int(s) for s in g] for g in target]


def ghz_amplitude(state: QutritState, target=None) -> complex:
    """<GHZ|psi> for a product of GHZ states over the target groups, |0> elsewhere."""
    groups = _groups(state, target)
    G = len(groups)
    acc = 0j
    for bits in itertools.product((0, 1), repeat=G):
        cfg = {s: 1 for g, b in zip(groups, bits) if b for s in g}
        acc += state.amplitude(cfg)
    return acc / math.sqrt(2.0) ** G


def ghz_fidelity(state: QutritState, target=None) -> float:
    """|<GHZ|psi>|^2 on the unnormalised state, so lost norm counts as error.

    ``target`` is a list of sites (one GHZ state), a list of site groups
    (product of GHZ states), or ``None`` for one GHZ state over the lattice.
    """
    return float(abs(ghz_amplitude(state, target)) ** 2)


@dataclass(frozen=True)
class LayerSeries:
    fidelity: np.ndarray  # F(i)
    infidelity: np.ndarray  # 1 - F(i)/F(i-1)
    per_gate: np.ndarray
    n_cz: np.ndarray

    def rows(self):
        for i, (a, b) in enumerate(zip(self.infidelity, self.per_gate)):
            yield i, float(a), float(b)


def per_layer_infidelity(pulse_snapshots: Sequence[QutritState], ideal_snapshots: Sequence[QutritState],
                         cz_per_layer: Sequence[int]) -> LayerSeries:
    """Layer error from the ratio of consecutive overlaps with ideal intermediate states.

    With ``F(i) = |<ideal_i|pulse_i>|^2`` and ``rho(i) = F(i)/F(i-1)``, layer
    ``i`` holding ``n_i`` entanglers gets ``1 - rho(i)^(1/n_i)`` per gate (raw
    ``1 - rho(i)`` when it has none). Values below 1e-12 are reported as 1e-12.
    """
    if not pulse_snapshots or len(pulse_snapshots) != len(ideal_snapshots):
        raise AnalysisError("need one pulse and one ideal snapshot per layer")
    if len(cz_per_layer) != len(pulse_snapshots):
        raise AnalysisError("entangler counts do not match the snapshots")
    F = np.array([abs(state_overlap(i, p)) ** 2 for p, i in zip(pulse_snapshots, ideal_snapshots)])
    prev = np.concatenate([[1.0], F[:-1]])
    rho = F / prev
    n = np.asarray(cz_per_layer)
    per_gate = np.where(n > 0, 1 - rho ** (1.0 / np.maximum(n, 1)), 1 - rho)
    return LayerSeries(F, np.maximum(1 - rho, EPS_N), np.maximum(per_gate, EPS_N), n)


def cz_counts(circuit: Circuit) -> list[int]:
    return [sum(1 for g in l if g.two_qubit) for l in circuit.layers]


@dataclass(frozen=True)
class FidelityReport:
    F: float
    n_cz: int
    norm2: float
    layers: LayerSeries | None = None

    @property
    def I(self) -> float:
        return 1.0 - self.F

    @property
    def F_avg(self) -> float:
        return self.F ** (1.0 / self.n_cz) if self.n_cz else self.F

    @property
    def norm_loss(self) -> float:
        return 1.0 - self.norm2

    def to_dict(self) -> dict:
        return {"F": self.F, "I": self.I, "n_cz": self.n_cz, "F_avg": self.F_avg, "norm2": self.norm2,
                "norm_loss": self.norm_loss}


def fidelity_report(state: QutritState, circuit: Circuit, target=None, layers: LayerSeries | None = None) -> FidelityReport:
    return FidelityReport(ghz_fidelity(state, target), sum(cz_counts(circuit)), state.norm2, layers)


def rydberg_observables(record: RunRecord) -> tuple[float, float]:
    """(P_R, T_R): final total Rydberg population and its time integral in us."""
    if len(record.times) == 0:
        raise AnalysisError("empty time series")
    tot = record.n_expect.sum(axis=1)
    return float(tot[-1]), trapezoid(tot, record.times)


# --- dephasing -----------------------------------------------------------------------

def dephasing_fidelity(n: int, t: float, t2: float = 1.0e4) -> float:
    """F_D = 1/2 + exp(-n t / T2) / 2 for n qubits dephasing for time t."""
    if t < 0:
        raise AnalysisError("time must be non-negative")
    if not t2 > 0:
        raise AnalysisError("T2 must be positive")
    return 0.5 + 0.5 * math.exp(-n * t / t2)


@dataclass(frozen=True)
class DephasingModel:
    """Per-qubit dephasing starting at each qubit's first RX layer."""

    t2: float
    start_layers: tuple[int, ...]
    depth: int
    tau_layer: float

    @property
    def n(self) -> int:
        return len(self.start_layers)

    @property
    def total_time(self) -> float:
        return self.depth * self.tau_layer

    def closed_form(self) -> float:
        return dephasing_fidelity(self.n, self.total_time, self.t2)

    def estimate(self) -> float:
        """1/2 + exp(-sum_q (tau - t_q) / T2) / 2 with t_q the start of qubit q."""
        tau = self.total_time
        exposure = sum(tau - s * self.tau_layer for s in self.start_layers)
        return 0.5 + 0.5 * math.exp(-exposure / self.t2)


def dephasing_model(circuit: Circuit, tau_layer: float, t2: float = 1.0e4) -> DephasingModel:
    first: dict[int, int] = {}
    for i, layer in enumerate(circuit.layers):
        for g in layer:
            if g.kind == RX:
                first.setdefault(g.sites[0], i)
    return DephasingModel(t2, tuple(first[s] for s in sorted(first)), circuit.depth, tau_layer)


# --- readout -----------------------------------------------------------------------

@dataclass(frozen=True)
class Readout:
    labels: dict
    ghz_mass: float
    error_mass: float
    coverage: float
    reported: tuple


def classify_readout(hist: Histogram, n: int | None = None, report_bins: int = 8) -> Readout:
    """Label GHZ-compatible bins and measure how much mass the reported bins carry.

    GHZ bins are (n, 0) and (0, n) for two-state readout, or 0 and n zeros for
    single-state readout. ``coverage`` is the mass of the ``report_bins``
    most populated bins.
    """
    n = hist.n_sites if n is None else n
    if hist.scheme == TWO_STATE:
        good = {(n, 0), (0, n)}
    elif hist.scheme == SINGLE_STATE:
        good = {0, n}
    else:
        raise AnalysisError(f"unknown scheme {hist.scheme}")
    total = float(sum(hist.counts.values()))
    if total <= 0:
        raise AnalysisError("empty histogram")
    labels = {k: ("ghz" if k in good else "error") for k in hist.counts}
    ghz = sum(v for k, v in hist.counts.items() if k in good) / total
    top = sorted(hist.counts.items(), key=lambda kv: (-kv[1], str(kv[0])))[:report_bins]
    cov = sum(v for _, v in top) / total
    return Readout(labels, ghz, 1.0 - ghz, cov, tuple(k for k, _ in top))


def compare_runs(a: QutritState | RunRecord, b: QutritState | RunRecord, target=None) -> tuple[float, float]:
    """(C, dF) with C = 1 - |<a|b>|^2 on normalised states and dF = F_a - F_b."""
    sa = a.final if isinstance(a, RunRecord) else a
    sb = b.final if isinstance(b, RunRecord) else b
    if sa.n != sb.n:
        raise AnalysisError("runs simulate different numbers of sites")
    c = 1.0 - abs(state_overlap(sa, sb)) ** 2
    return max(c, 0.0), ghz_fidelity(sa, target) - ghz_fidelity(sb, target)
