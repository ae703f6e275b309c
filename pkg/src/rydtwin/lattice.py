"""Atom-array geometry: square and triangular-packed ("hexagonal") lattices.

Sites are indexed row-major. Positions are in micrometres. Distances that the
compiler compares against the parallel-gate radius are expressed as squared
multiples of the lattice constant, so ``r_g = sqrt(8) a`` is simply ``8``.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from functools import cached_property
from typing import Iterable

import numpy as np

SQUARE = "square"
HEXAGONAL = "hexagonal"

# squared-distance tolerance in units of a^2
DIST2_TOL = 1e-9


class LatticeError(ValueError):
    """Invalid lattice parameters."""


class UnsupportedOrderError(ValueError):
    """The requested space-filling order does not exist for this lattice."""


@dataclass(frozen=True)
class LatticeSpec:
    kind: str = SQUARE
    rows: int = 4
    cols: int | None = None
    spacing: float = 3.0

    def __post_init__(self):
        if self.cols is None:
            object.__setattr__(self, "cols", self.rows)
        if self.kind not in (SQUARE, HEXAGONAL):
            raise LatticeError(f"unknown lattice kind {self.kind!r}")
        if int(self.rows) != self.rows or int(self.cols) != self.cols:
            raise LatticeError("rows and cols must be integers")
        if self.rows < 1 or self.cols < 1:
            raise LatticeError(f"lattice dimensions must be >= 1, got {self.rows}x{self.cols}")
        if not self.spacing > 0:
            raise LatticeError(f"lattice spacing must be positive, got {self.spacing}")

    @property
    def n_sites(self) -> int:
        return self.rows * self.cols

    def to_dict(self) -> dict:
        return {"kind": self.kind, "rows": self.rows, "cols": self.cols, "spacing_um": self.spacing}

    @classmethod
    def from_dict(cls, d: dict) -> "LatticeSpec":
        return cls(kind=d.get("kind", SQUARE), rows=int(d["rows"]),
                   cols=int(d.get("cols", d["rows"])),
                   spacing=float(d.get("spacing_um", d.get("spacing", 3.0))))


@dataclass(frozen=True)
class Site:
    index: int
    row: int
    col: int
    position: tuple[float, float]


def _unit_positions(spec: LatticeSpec) -> np.ndarray:
    """Positions in units of the lattice constant, row-major."""
    r, c = np.divmod(np.arange(spec.n_sites), spec.cols)
    if spec.kind == SQUARE:
        return np.stack([r, c], axis=1).astype(float)
    # triangular packing: odd rows shifted by half a spacing
    x = c + 0.5 * (r % 2)
    y = r * (np.sqrt(3.0) / 2.0)
    return np.stack([x, y], axis=1)


@dataclass(frozen=True)
class Lattice:
    """Built lattice: sites, nearest-neighbour graph and pairwise distances.

    Immutable after construction.
    """

    spec: LatticeSpec
    sites: tuple[Site, ...] = field(repr=False)
    unit_positions: np.ndarray = field(repr=False, compare=False)

    @property
    def n_sites(self) -> int:
        return len(self.sites)

    @property
    def spacing(self) -> float:
        return self.spec.spacing

    @cached_property
    def positions(self) -> np.ndarray:
        """Site positions in micrometres, shape (N, 2)."""
        return self.unit_positions * self.spec.spacing

    @cached_property
    def dist2(self) -> np.ndarray:
        """Pairwise squared distances in units of a^2.

        Exact integers on square lattices.
        """
        p = self.unit_positions
        d = p[:, None, :] - p[None, :, :]
        d2 = np.einsum("ijk,ijk->ij", d, d)
        if self.spec.kind == SQUARE:
            d2 = np.rint(d2)
        return d2

    @cached_property
    def edges(self) -> tuple[tuple[int, int], ...]:
        """Nearest-neighbour pairs (i < j) at distance exactly a."""
        i, j = np.nonzero(np.triu(np.abs(self.dist2 - 1.0) <= DIST2_TOL, k=1))
        return tuple(zip(i.tolist(), j.tolist()))

    @cached_property
    def neighbors(self) -> tuple[tuple[int, ...], ...]:
        nb: list[list[int]] = [[] for _ in range(self.n_sites)]
        for i, j in self.edges:
            nb[i].append(j)
            nb[j].append(i)
        return tuple(tuple(sorted(x)) for x in nb)

    def index(self, row: int, col: int) -> int:
        if not (0 <= row < self.spec.rows and 0 <= col < self.spec.cols):
            raise IndexError(f"site ({row}, {col}) outside {self.spec.rows}x{self.spec.cols} lattice")
        return row * self.spec.cols + col

    def adjacent(self, i: int, j: int) -> bool:
        return abs(self.dist2[i, j] - 1.0) <= DIST2_TOL

    def at_least(self, i: int, j: int, r2: float) -> bool:
        """True if sites i and j are separated by at least sqrt(r2)*a."""
        return self.dist2[i, j] >= r2 - DIST2_TOL

    def pair_distance(self, i: int | Site, j: int | Site) -> float:
        """Euclidean distance between two sites in micrometres."""
        i = i.index if isinstance(i, Site) else i
        j = j.index if isinstance(j, Site) else j
        return float(np.sqrt(self.dist2[i, j])) * self.spec.spacing

    def bounding_area(self) -> float:
        """Area of the axis-aligned rectangle enclosing all atoms, in um^2."""
        span = self.positions.max(axis=0) - self.positions.min(axis=0)
        return float(span[0] * span[1])

    @cached_property
    def center(self) -> np.ndarray:
        """Geometric centre of the array in units of a."""
        p = self.unit_positions
        return 0.5 * (p.min(axis=0) + p.max(axis=0))

    @cached_property
    def symmetries(self) -> tuple[tuple[int, ...], ...]:
        return symmetry_group(self)

    def to_dict(self) -> dict:
        d = self.spec.to_dict()
        d["positions_um"] = [[float(x), float(y)] for x, y in self.positions]
        return d


def build_lattice(spec: LatticeSpec) -> Lattice:
    """Construct the site list and geometry for ``spec``."""
    if not isinstance(spec, LatticeSpec):
        raise LatticeError("expected a LatticeSpec")
    up = _unit_positions(spec)
    sites = tuple(
        Site(k, k // spec.cols, k % spec.cols, (float(up[k, 0] * spec.spacing), float(up[k, 1] * spec.spacing)))
        for k in range(spec.n_sites)
    )
    return Lattice(spec, sites, up)


def square(rows: int, cols: int | None = None, spacing: float = 3.0) -> Lattice:
    return build_lattice(LatticeSpec(SQUARE, rows, cols, spacing))


def hexagonal(rows: int, cols: int | None = None, spacing: float = 3.0) -> Lattice:
    return build_lattice(LatticeSpec(HEXAGONAL, rows, cols, spacing))


def pair_distance(lattice: Lattice, s1: int | Site, s2: int | Site) -> float:
    return lattice.pair_distance(s1, s2)


# --- symmetry ---------------------------------------------------------------

_DIHEDRAL = [
    np.array([[1, 0], [0, 1]]), np.array([[0, -1], [1, 0]]),
    np.array([[-1, 0], [0, -1]]), np.array([[0, 1], [-1, 0]]),
    np.array([[1, 0], [0, -1]]), np.array([[-1, 0], [0, 1]]),
    np.array([[0, 1], [1, 0]]), np.array([[0, -1], [-1, 0]]),
]


def symmetry_group(lattice: Lattice) -> tuple[tuple[int, ...], ...]:
    """Isometries of the bounding box that map the site set onto itself.

    Each element is a site permutation ``perm`` with ``perm[i]`` the image of
    site ``i``. The identity comes first.
    """
    p = lattice.unit_positions
    c = lattice.center
    out: list[tuple[int, ...]] = []
    for m in _DIHEDRAL:
        q = (p - c) @ m.T + c
        d2 = ((q[:, None, :] - p[None, :, :]) ** 2).sum(-1)
        img = d2.argmin(axis=1)
        if np.all(d2[np.arange(len(p)), img] <= DIST2_TOL) and len(set(img.tolist())) == len(p):
            perm = tuple(int(x) for x in img)
            if perm not in out:
                out.append(perm)
    return tuple(out)


def unique_sites_under_symmetry(lattice: Lattice) -> list[Site]:
    """One representative (the lowest index) per symmetry orbit."""
    seen: set[int] = set()
    reps = []
    for s in range(lattice.n_sites):
        if s in seen:
            continue
        reps.append(lattice.sites[s])
        seen.update(g[s] for g in lattice.symmetries)
    return reps


def orbit_representatives(lattice: Lattice, site_sets: Iterable[tuple[int, ...]]) -> list[tuple[int, ...]]:
    """Reduce a collection of site tuples to one per symmetry orbit.

    Tuples are compared elementwise, so an ordered tuple (e.g. one root per
    group) keeps its ordering.
    """
    seen: set[tuple[int, ...]] = set()
    reps = []
    for t in site_sets:
        t = tuple(t)
        if t in seen:
            continue
        reps.append(t)
        seen.update(tuple(g[s] for s in t) for g in lattice.symmetries)
    return reps


# --- Hilbert order ----------------------------------------------------------

def _d2xy(n: int, d: int) -> tuple[int, int]:
    x = y = 0
    s = 1
    t = d
    while s < n:
        rx = 1 & (t // 2)
        ry = 1 & (t ^ rx)
        if ry == 0:
            if rx == 1:
                x, y = s - 1 - x, s - 1 - y
            x, y = y, x
        x += s * rx
        y += s * ry
        t //= 4
        s *= 2
    return x, y


def hilbert_order(L: int) -> list[int]:
    """Row-major site indices of an L x L square lattice in Hilbert-curve order.

    Raises
    ------
    UnsupportedOrderError
        If ``L`` is not a power of two. Callers can fall back to
        :func:`snake_order`.
    """
    if L < 1 or L & (L - 1):
        raise UnsupportedOrderError(f"Hilbert order needs a power-of-two side, got {L}")
    order = []
    for d in range(L * L):
        x, y = _d2xy(L, d)
        order.append(y * L + x)
    return order


def snake_order(rows: int, cols: int) -> list[int]:
    """Boustrophedon order; consecutive sites are always nearest neighbours."""
    out = []
    for r in range(rows):
        cs = range(cols) if r % 2 == 0 else range(cols - 1, -1, -1)
        out.extend(r * cols + c for c in cs)
    return out
