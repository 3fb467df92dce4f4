"""Current algebra: sources, weights, parity skeletons, and open projections.

A current assigns a nonnegative integer multiplicity to each edge of a
region (ghost edges included under plus boundary conditions).  Its sources
are the vertices of odd total flux, the ghost never being listed.  Weights
live in the log domain throughout: multiplicities of order beta*J make
linear-domain weights overflow even at desk scale.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .model import Region, RegionError

EVEN, ODD = 0, 1


def parity_block_weight(parity: int, lam: float) -> float:
    """Total weight of one edge's multiplicities of fixed parity.

    sum over n of lam^n / n! restricted to even n gives cosh(lam), odd n
    gives sinh(lam).
    """
    if lam < 0.0:
        raise ValueError("edge intensity lam = beta*J must be nonnegative")
    return math.sinh(lam) if parity == ODD else math.cosh(lam)


def _canonical(u: int, v: int) -> tuple[int, int]:
    if u == v:
        raise ValueError("self-loops carry no current")
    return (u, v) if u < v else (v, u)


@dataclass
class Current:
    """Sparse edge -> multiplicity map on a region.

    Stored entries are strictly positive; the ghost endpoint uses the
    reserved id ``region.n_sites``.  Iteration order is the canonical sorted
    edge order, which keeps serialized output reproducible.
    """

    region: Region
    mult: dict = field(default_factory=dict)

    def __post_init__(self):
        clean = {}
        for (u, v), n in self.mult.items():
            u, v = _canonical(int(u), int(v))
            n = int(n)
            if n < 0:
                raise ValueError("multiplicities must be nonnegative")
            if n == 0:
                continue
            self._check_edge(u, v)
            clean[(u, v)] = n
        self.mult = clean

    def _check_edge(self, u, v):
        top = self.region.n_sites + (1 if self.region.has_ghost else 0)
        if not (0 <= u < top and 0 <= v < top):
            raise ValueError(f"edge ({u},{v}) outside the region's vertex set")

    def __getitem__(self, edge) -> int:
        return self.mult.get(_canonical(*edge), 0)

    def items(self):
        return sorted(self.mult.items())

    @property
    def total(self) -> int:
        return sum(self.mult.values())

    # -- the four projections ------------------------------------------------

    def sources(self) -> frozenset:
        """Vertices with odd total flux; the ghost is never listed."""
        deg = {}
        for (u, v), n in self.mult.items():
            if n % 2:
                deg[u] = deg.get(u, 0) ^ 1
                deg[v] = deg.get(v, 0) ^ 1
        ghost = self.region.n_sites if self.region.has_ghost else -1
        return frozenset(x for x, odd in deg.items() if odd and x != ghost)

    def log_weight(self, beta: float) -> float:
        """log of prod_edges (beta*J)^n / n!; -inf if any J = 0 edge is used."""
        if beta <= 0.0:
            raise ValueError("beta must be positive")
        acc = 0.0
        for (u, v), n in self.mult.items():
            J = self.region.edge_coupling(u, v)
            if J <= 0.0:
                return -math.inf
            acc += n * math.log(beta * J) - math.lgamma(n + 1)
        return acc

    def parity(self) -> "ParityConfig":
        cfg = ParityConfig.zeros(self.region)
        lookup = cfg.edge_slot
        arr = cfg.odd
        for (u, v), n in self.mult.items():
            if n % 2:
                arr[lookup[(u, v)]] = 1
        return cfg

    def open_projection(self) -> "OpenConfig":
        cfg = OpenConfig.closed(self.region)
        lookup = cfg.edge_slot
        for (u, v), n in self.mult.items():
            cfg.open[lookup[(u, v)]] = True
        return cfg

    # -- algebra -------------------------------------------------------------

    def __add__(self, other: "Current") -> "Current":
        """Edgewise sum; a current on a subregion is zero-extended."""
        if self.region is other.region:
            host = self.region
        elif self.region.is_subregion_of(other.region):
            host = other.region
        elif other.region.is_subregion_of(self.region):
            host = self.region
        else:
            raise RegionError("currents live on incompatible regions (no subset relation)")
        out = dict(self.mult)
        for e, n in other.mult.items():
            out[e] = out.get(e, 0) + n
        return Current(host, out)

    # -- serialization -------------------------------------------------------

    def to_text(self) -> str:
        lines = [f"# current on {self.region.shape} n_sites={self.region.n_sites} "
                 f"bc={self.region.bc}"]
        for (u, v), n in self.items():
            lines.append(f"{u} {v} {n}")
        return "\n".join(lines) + "\n"

    @classmethod
    def from_text(cls, region: Region, text: str) -> "Current":
        mult = {}
        for line in text.splitlines():
            line = line.strip()
            if not line or line.startswith("#"):
                continue
            u, v, n = line.split()
            mult[(int(u), int(v))] = int(n)
        return cls(region, mult)


def add_currents(a: Current, b: Current) -> Current:
    return a + b


def _edge_slot_map(region: Region):
    eu, ev, _, _ = region.edge_universe()
    return {(int(a), int(b)): k for k, (a, b) in enumerate(zip(eu, ev))}


@dataclass
class ParityConfig:
    """Per-edge even/odd skeleton of a current over the region's edge universe."""

    region: Region
    odd: np.ndarray  # uint8, 1 = odd

    @classmethod
    def zeros(cls, region: Region) -> "ParityConfig":
        eu, _, _, _ = region.edge_universe()
        return cls(region, np.zeros(len(eu), dtype=np.uint8))

    def __post_init__(self):
        eu, _, _, _ = self.region.edge_universe()
        if len(self.odd) != len(eu):
            raise RegionError("parity config must cover exactly the region's edge set")

    @property
    def edge_slot(self):
        return _edge_slot_map(self.region)

    def odd_degree_vertices(self) -> frozenset:
        """Vertices (ghost included) with an odd number of odd edges."""
        eu, ev, _, _ = self.region.edge_universe()
        deg = {}
        for k in np.nonzero(self.odd)[0]:
            for x in (int(eu[k]), int(ev[k])):
                deg[x] = deg.get(x, 0) ^ 1
        return frozenset(x for x, odd in deg.items() if odd)

    def sources(self) -> frozenset:
        ghost = self.region.n_sites if self.region.has_ghost else -1
        return frozenset(x for x in self.odd_degree_vertices() if x != ghost)


@dataclass
class OpenConfig:
    """Binary open/closed edge configuration over the region's edge universe."""

    region: Region
    open: np.ndarray  # bool

    @classmethod
    def closed(cls, region: Region) -> "OpenConfig":
        eu, _, _, _ = region.edge_universe()
        return cls(region, np.zeros(len(eu), dtype=bool))

    def __post_init__(self):
        eu, _, _, _ = self.region.edge_universe()
        if len(self.open) != len(eu):
            raise RegionError("open config must cover exactly the region's edge set")

    @property
    def edge_slot(self):
        return _edge_slot_map(self.region)

    def union(self, other: "OpenConfig") -> "OpenConfig":
        if other.region is not self.region:
            raise RegionError("open configs live on different regions")
        return OpenConfig(self.region, self.open | other.open)
