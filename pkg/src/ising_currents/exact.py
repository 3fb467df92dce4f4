"""Brute-force ground truth on small regions.

Two independent exact routes are kept side by side because they fail
independently: spin sums enumerate the 2^|V| configurations of the
Hamiltonian directly, while parity sums enumerate the 2^|E| even/odd edge
skeletons with the per-edge cosh/sinh blocks that arise from marginalizing
multiplicities of fixed parity.  Their agreement (and the agreement of the
two correlation routes built from them) is the backbone of the test suite.

The duplicated-measure engine computes exact connectivity probabilities for
the superposition of an independent sourceless free-boundary current and a
sourceless plus-boundary current: per-edge states split into joint parities,
with even-parity edges refined into zero/nonzero at conditional zero
probability 1/cosh(beta*J).  The enumeration is organized by surely-open
edge mask and forced ghost parity, with a weighted subset-sum transform
carrying the refinement probabilities; this is an exact regrouping of the
per-edge joint-state sum.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from functools import lru_cache

import numpy as np
from scipy.special import logsumexp

from .currents import Current
from .model import Region, RegionError

MAX_ENUM_EDGES = 24
MAX_ENUM_SITES = 24
REL_TOL = 1e-10
ABS_FLOOR = 1e-14

_NEG_HUGE = -1e300  # stands in for log 0 where -inf would poison sums


class EnumerationSizeError(ValueError):
    """Region too large for exhaustive enumeration."""


class AccuracyError(RuntimeError):
    """Two exact routes disagreed beyond tolerance."""


@dataclass
class ExactReport:
    quantity: str
    value: float
    method: str
    region: dict

    def as_dict(self):
        return {"quantity": self.quantity, "value": self.value,
                "method": self.method, "region": self.region}


def close_rel(a: float, b: float, rel=REL_TOL, floor=ABS_FLOOR) -> bool:
    return abs(a - b) <= max(rel * max(abs(a), abs(b)), floor)


# ---------------------------------------------------------------------------
# parity-sum partition functions
# ---------------------------------------------------------------------------

def _universe_arrays(region: Region, removed_edges=()):
    eu, ev, J, n_lat = region.edge_universe()
    removed = {tuple(sorted((int(a), int(b)))) for a, b in removed_edges}
    keep = [k for k in range(len(eu))
            if (int(eu[k]), int(ev[k])) not in removed]
    if len(removed) and len(keep) + len(removed) != len(eu):
        missing = removed - {(int(eu[k]), int(ev[k])) for k in range(len(eu))}
        raise RegionError(f"removed edges not in region: {sorted(missing)}")
    return eu[keep], ev[keep], J[keep]


def _parity_enumeration(region: Region, beta: float, removed_edges=()):
    """Vertex-parity masks and log weights for all 2^E edge-parity patterns.

    Pattern index doubles as the odd-edge bitmask.  The returned log weights
    include the cosh blocks of even edges, i.e. the full parity-marginal
    weight sum_{n compatible} w_beta(n).
    """
    eu, ev, J = _universe_arrays(region, removed_edges)
    n_edges = len(eu)
    if n_edges > MAX_ENUM_EDGES:
        raise EnumerationSizeError(
            f"{n_edges} edges exceeds the {MAX_ENUM_EDGES}-edge enumeration cap")
    lam = beta * J
    logcosh = np.log(np.cosh(lam))
    with np.errstate(divide="ignore"):
        logtanh = np.where(lam > 0.0, np.log(np.tanh(np.maximum(lam, 1e-300))), _NEG_HUGE)
    masks = np.zeros(1, dtype=np.uint64)
    logw = np.zeros(1)
    for k in range(n_edges):
        m = np.uint64((1 << int(eu[k])) | (1 << int(ev[k])))
        masks = np.concatenate([masks, masks ^ m])
        logw = np.concatenate([logw, logw + logtanh[k]])
    return masks, logw + logcosh.sum()


def log_partition_current(region: Region, beta: float, sources=(),
                          removed_edges=()) -> float:
    """log of sum over currents n with sources(n) = A of w_beta(n).

    Under plus boundary conditions the ghost absorbs parity, so patterns are
    selected by their lattice odd-degree set only.  Returns -inf when no
    current realizes the source set (e.g. odd |A| under free b.c.).
    """
    sources = frozenset(int(s) for s in sources)
    for s in sources:
        if not (0 <= s < region.n_sites):
            raise RegionError(f"source {s} is not a region vertex")
    masks, logw = _parity_enumeration(region, beta, removed_edges)
    lattice_mask = np.uint64((1 << region.n_sites) - 1)
    target = np.uint64(0)
    for s in sources:
        target |= np.uint64(1 << s)
    sel = (masks & lattice_mask) == target
    if not np.any(sel):
        return -math.inf
    out = float(logsumexp(logw[sel]))
    return out if out > _NEG_HUGE / 2 else -math.inf


# ---------------------------------------------------------------------------
# spin-sum partition functions and expectations
# ---------------------------------------------------------------------------

def _spin_stats(region: Region, beta: float, field: float = 0.0,
                pair=None, energy_edges=None):
    """Exhaustive spin sums: returns (logZ, <s_x s_y>, <exp(-beta*K)>).

    pair: optional (x, y) for the correlation; energy_edges: optional edge
    list defining K = sum J s s (ghost edges allowed, ghost spin +1).
    """
    n = region.n_sites
    if n > MAX_ENUM_SITES:
        raise EnumerationSizeError(
            f"{n} sites exceeds the {MAX_ENUM_SITES}-site enumeration cap")
    h_eff = np.full(n, float(field))
    if region.has_ghost:
        h_eff += region.ghost_J
    c = np.arange(1 << n, dtype=np.uint32)
    energy = np.zeros(len(c))
    for u, v, J in zip(region.edge_u, region.edge_v, region.edge_J):
        opp = ((c >> np.uint32(u)) ^ (c >> np.uint32(v))) & np.uint32(1)
        energy -= J * (1.0 - 2.0 * opp)
    for x in range(n):
        if h_eff[x] != 0.0:
            bit = (c >> np.uint32(x)) & np.uint32(1)
            energy -= h_eff[x] * (1.0 - 2.0 * bit)
    e_min = energy.min()
    w = np.exp(-beta * (energy - e_min))
    Z = w.sum()
    log_z = math.log(Z) - beta * e_min
    corr = None
    if pair is not None:
        x, y = pair
        if x == y:
            corr = 1.0
        else:
            sxy = 1.0 - 2.0 * (((c >> np.uint32(x)) ^ (c >> np.uint32(y))) & np.uint32(1))
            corr = float(np.dot(w, sxy) / Z)
    boltz_k = None
    if energy_edges is not None:
        K = np.zeros(len(c))
        for (u, v) in energy_edges:
            u, v = int(u), int(v)
            J = region.edge_coupling(u, v)
            if region.has_ghost and (u == region.ghost_id or v == region.ghost_id):
                site = v if u == region.ghost_id else u
                s = 1.0 - 2.0 * (((c >> np.uint32(site)) & np.uint32(1)).astype(float))
                K += J * s
            else:
                opp = ((c >> np.uint32(u)) ^ (c >> np.uint32(v))) & np.uint32(1)
                K += J * (1.0 - 2.0 * opp)
        boltz_k = float(np.dot(w, np.exp(-beta * K)) / Z)
    return log_z, corr, boltz_k


def log_partition_spin(region: Region, beta: float, field: float = 0.0) -> float:
    """log of sum over all 2^|V| spin configurations of exp(-beta*H)."""
    log_z, _, _ = _spin_stats(region, beta, field)
    return log_z


def correlation_spin(region: Region, beta: float, x: int, y: int,
                     field: float = 0.0) -> float:
    _, corr, _ = _spin_stats(region, beta, field, pair=(x, y))
    return corr


# ---------------------------------------------------------------------------
# correlations through the current representation
# ---------------------------------------------------------------------------

def correlation_free(region: Region, beta: float, x: int, y: int,
                     diagnostics: dict | None = None) -> float:
    """<s_x s_y> with free b.c. as a ratio of source-constrained current sums."""
    if region.has_ghost:
        raise RegionError("free-boundary correlation on a plus region: use free_twin()")
    if x == y:
        return 1.0
    lz_xy = log_partition_current(region, beta, {x, y})
    lz_0 = log_partition_current(region, beta)
    if lz_xy == -math.inf:
        if diagnostics is not None:
            diagnostics["disconnected"] = True
        return 0.0
    return math.exp(lz_xy - lz_0)


def correlation_plus(region: Region, beta: float, x: int, y: int) -> float:
    """<s_x s_y> with plus b.c.: currents on the region together with its ghost."""
    if not region.has_ghost:
        raise RegionError("plus-boundary correlation requires a ghost vertex")
    if x == y:
        return 1.0
    lz_xy = log_partition_current(region, beta, {x, y})
    lz_0 = log_partition_current(region, beta)
    if lz_xy == -math.inf:
        return 0.0
    return math.exp(lz_xy - lz_0)


def magnetization_plus(region: Region, beta: float, x: int) -> float:
    """<s_x> with plus b.c.: single-source currents, parity absorbed by the ghost."""
    if not region.has_ghost:
        raise RegionError("plus-boundary magnetization requires a ghost vertex")
    lz_x = log_partition_current(region, beta, {x})
    lz_0 = log_partition_current(region, beta)
    if lz_x == -math.inf:
        return 0.0
    return math.exp(lz_x - lz_0)


# ---------------------------------------------------------------------------
# switching identity on a fixed multigraph
# ---------------------------------------------------------------------------

def switching_source_counts(m: Current, subgraph_edges=None, cap: int = 4,
                            max_total: int = 24):
    """Exact integer counts sum_{n <= m, n on G, sources(n) = A} binom(m, n).

    Returns a dict mapping the vertex bitmask of A to its count, together
    with the set of subgraph edges carrying positive multiplicity.  Binomial
    products are exact Python integers.
    """
    region = m.region
    if subgraph_edges is None:
        sub = None
    else:
        sub = {tuple(sorted((int(a), int(b)))) for a, b in subgraph_edges}
    support = []
    for (u, v), mult in m.items():
        if mult > cap:
            raise EnumerationSizeError(f"multiplicity {mult} exceeds the cap {cap}")
        if sub is not None and (u, v) not in sub:
            continue
        support.append(((u, v), mult))
    if sum(mult for _, mult in support) > max_total:
        raise EnumerationSizeError("total multiplicity exceeds the enumeration cap")

    counts: dict[int, int] = {}

    def recurse(i, mask, binom):
        if i == len(support):
            counts[mask] = counts.get(mask, 0) + binom
            return
        (u, v), mult = support[i]
        flip = (1 << u) | (1 << v)
        for k in range(mult + 1):
            recurse(i + 1, mask ^ (flip if k % 2 else 0), binom * math.comb(mult, k))

    recurse(0, 0, 1)
    return counts


def hat_connected(m: Current, x: int, y: int, subgraph_edges=None) -> bool:
    """Is x connected to y inside the subgraph by edges of positive multiplicity?"""
    if x == y:
        return True
    sub = None
    if subgraph_edges is not None:
        sub = {tuple(sorted((int(a), int(b)))) for a, b in subgraph_edges}
    parent = {}

    def find(a):
        while parent.setdefault(a, a) != a:
            parent[a] = parent[parent[a]]
            a = parent[a]
        return a

    for (u, v), mult in m.items():
        if mult <= 0:
            continue
        if sub is not None and (u, v) not in sub:
            continue
        ra, rb = find(u), find(v)
        if ra != rb:
            parent[ra] = rb
    return find(x) == find(y)


def check_switching_identity(m: Current, x: int, y: int, subgraph_edges=None,
                             cap: int = 4) -> bool:
    """Exact integer check of the subcurrent switching identity for one pair."""
    counts = switching_source_counts(m, subgraph_edges, cap=cap)
    lhs = counts.get((1 << x) | (1 << y), 0) if x != y else counts.get(0, 0)
    ind = hat_connected(m, x, y, subgraph_edges)
    rhs = counts.get(0, 0) if ind else 0
    return lhs == rhs


# ---------------------------------------------------------------------------
# exact duplicated-current connectivity
# ---------------------------------------------------------------------------

def _component_masks(n_edges, eu, ev, n_sites, anchor):
    """For every open-edge bitmask: the vertex bitmask of anchor's cluster."""
    out = np.zeros(1 << n_edges, dtype=np.int64)
    for mask in range(1 << n_edges):
        parent = list(range(n_sites))

        def find(a):
            while parent[a] != a:
                parent[a] = parent[parent[a]]
                a = parent[a]
            return a

        for k in range(n_edges):
            if mask >> k & 1:
                ra, rb = find(eu[k]), find(ev[k])
                if ra != rb:
                    parent[ra] = rb
        root = find(anchor)
        cmask = 0
        for v in range(n_sites):
            if find(v) == root:
                cmask |= 1 << v
        out[mask] = cmask
    return out


class DuplicatedMeasure:
    """Exact law of the union of open projections of two independent
    sourceless currents, free boundary tensor plus boundary, on one region.

    Lattice-edge parity patterns of both currents are enumerated; ghost-edge
    parities of the plus current are forced by its lattice odd-degree set and
    marginalized analytically.  Even-parity edges open with the conditional
    probability 1 - 1/cosh(beta*J)^2 (both refinements zero with probability
    1/cosh^2), carried through a weighted subset-sum transform.
    """

    MAX_EDGES = 12

    def __init__(self, region: Region, beta: float):
        if not region.has_ghost:
            raise RegionError("duplicated measure pairs a free current with a plus "
                              "current: build the region with bc='plus'")
        self.region = region
        self.beta = beta
        eu, ev, J = region.edge_u, region.edge_v, region.edge_J
        E = len(eu)
        if E > self.MAX_EDGES:
            raise EnumerationSizeError(
                f"{E} lattice edges exceeds the {self.MAX_EDGES}-edge cap")
        n = region.n_sites
        self.n_edges = E
        self.eu = eu.astype(np.int64)
        self.ev = ev.astype(np.int64)
        lam = beta * J
        logcosh = np.log(np.cosh(lam))
        with np.errstate(divide="ignore"):
            logtanh = np.where(lam > 0, np.log(np.tanh(np.maximum(lam, 1e-300))),
                               _NEG_HUGE)
        # pattern tables over lattice edges (pattern index == odd-edge bitmask)
        masks = np.zeros(1, dtype=np.int64)
        logw = np.zeros(1)
        for k in range(E):
            m = np.int64((1 << int(eu[k])) | (1 << int(ev[k])))
            masks = np.concatenate([masks, masks ^ m])
            logw = np.concatenate([logw, logw + logtanh[k]])
        logw = logw + logcosh.sum()

        g = region.ghost_J
        lam_g = beta * g
        log_cosh_g = np.where(g > 0, np.log(np.cosh(lam_g)), 0.0)
        with np.errstate(divide="ignore"):
            log_tanh_g = np.where(g > 0, np.log(np.tanh(np.maximum(lam_g, 1e-300))),
                                  _NEG_HUGE)
        bits = ((masks[:, None] >> np.arange(n)[None, :]) & 1).astype(float)
        ghost_shift = bits @ np.where(g > 0, log_tanh_g, _NEG_HUGE)
        logw2 = logw + log_cosh_g.sum() + ghost_shift

        self._shift1 = logw[masks == 0].max()
        self._shift2 = logw2.max()
        free_sel = np.nonzero(masks == 0)[0]
        self.free_masks = free_sel  # edge bitmasks of sourceless free patterns
        self.free_w = np.exp(logw[free_sel] - self._shift1)
        self.plus_w = np.exp(logw2 - self._shift2)
        self.plus_D = masks  # forced ghost-odd vertex masks per plus pattern

        q = 1.0 / np.cosh(lam)
        self.p_open = 1.0 - q * q
        logq2 = 2.0 * np.log(q)
        B = np.zeros(1)
        for k in range(E):
            B = np.concatenate([B, B + logq2[k]])
        self.log_qbar = logq2.sum() - B  # log prod_{e not in mask} q_e^2
        self.log_cosh_g = log_cosh_g
        self._wd = None
        self._den = None

    # -- aggregation ---------------------------------------------------------

    def _tables(self):
        if self._wd is None:
            size = 1 << self.n_edges
            wd: dict[int, np.ndarray] = {}
            for i in range(size):
                w2 = self.plus_w[i]
                if w2 == 0.0:
                    continue
                D = int(self.plus_D[i])
                arr = wd.get(D)
                if arr is None:
                    arr = np.zeros(size)
                    wd[D] = arr
                np.add.at(arr, self.free_masks | i, self.free_w * w2)
            self._wd = wd
            self._den = float(sum(a.sum() for a in wd.values()))
        return self._wd, self._den

    def _sos(self, W):
        """V[omega] = sum_{s subset omega} W[s] prod_{e in omega minus s} p_e."""
        V = W.copy()
        for k in range(self.n_edges):
            V = V.reshape(-1, 2, 1 << k)
            V[:, 1, :] += self.p_open[k] * V[:, 0, :]
            V = V.reshape(-1)
        return V

    @lru_cache(maxsize=64)
    def _anchor_components(self, anchor: int):
        return _component_masks(self.n_edges, self.eu, self.ev,
                                self.region.n_sites, anchor)

    def log_normalization(self) -> float:
        """log of Z_free(no sources) * Z_plus(no sources), for cross-checks."""
        _, den = self._tables()
        return math.log(den) + self._shift1 + self._shift2

    def connect_prob(self, x: int, y: int) -> float:
        """Probability that x and y are joined by open lattice edges."""
        if x == y:
            return 1.0
        wd, den = self._tables()
        W = np.zeros(1 << self.n_edges)
        for arr in wd.values():
            W += arr
        V = self._sos(W)
        qbar = np.exp(self.log_qbar)
        comp = self._anchor_components(x)
        conn = ((comp >> y) & 1).astype(float)
        num = float(np.dot(conn * qbar, V))
        return num / den

    def connect_ghost_prob(self, x: int) -> float:
        """Probability that x is joined to the ghost (open ghost edges count)."""
        wd, den = self._tables()
        size = 1 << self.n_edges
        comp = self._anchor_components(x)
        qbar = np.exp(self.log_qbar)
        # log prod_{v in cluster} 1/cosh(beta g_v): chance all ghost edges of the
        # cluster come out closed, given none of them is forced odd
        n = self.region.n_sites
        bits = ((comp[:, None] >> np.arange(n)[None, :]) & 1).astype(float)
        log_cg = -(bits @ self.log_cosh_g)
        cg = np.exp(log_cg)
        total = 0.0
        for D, W in wd.items():
            V = self._sos(W)
            blocked = ((comp & D) == 0).astype(float)
            # 1 - [no forced-open ghost edge in the cluster] * [all even ghost
            # edges of the cluster closed]
            total += float(np.dot(qbar * (1.0 - blocked * cg), V))
        return total / den


def duplicated_connectivity_prob(region: Region, beta: float, x: int, y: int) -> float:
    """Exact P0 (x) P+ probability that x and y are joined in the union of the
    open projections of two independent sourceless currents."""
    return DuplicatedMeasure(region, beta).connect_prob(x, y)


# ---------------------------------------------------------------------------
# parity-flip path factor and the correlation gap bound
# ---------------------------------------------------------------------------

def path_flip_weight(region: Region, beta: float, path) -> float:
    """Product over path edges of min(tanh(l), (cosh(l)-1)/sinh(l)), l = beta*J.

    This is the guaranteed weight-retention factor of flipping the parity of
    every edge along the path; an empty path gives the empty product 1.
    """
    path = [int(v) for v in path]
    if len(path) <= 1:
        return 1.0
    out = 1.0
    for a, b in zip(path[:-1], path[1:]):
        J = region.edge_coupling(a, b)
        if J <= 0.0:
            raise RegionError(f"path edge ({a},{b}) has no positive coupling")
        lam = beta * J
        out *= min(math.tanh(lam), (math.cosh(lam) - 1.0) / math.sinh(lam))
    return out


def best_flip_weight(region: Region, beta: float, x: int, y: int,
                     max_paths: int = 100) -> float:
    """Best path factor over up to max_paths shortest positive-coupling paths."""
    if x == y:
        return 1.0
    n = region.n_sites
    adj = [[] for _ in range(n)]
    for u, v, J in zip(region.edge_u, region.edge_v, region.edge_J):
        if J > 0.0:
            adj[int(u)].append(int(v))
            adj[int(v)].append(int(u))
    dist = [-1] * n
    dist[y] = 0
    frontier = [y]
    while frontier:
        nxt = []
        for v in frontier:
            for w in adj[v]:
                if dist[w] < 0:
                    dist[w] = dist[v] + 1
                    nxt.append(w)
        frontier = nxt
    if dist[x] < 0:
        raise RegionError(f"no positive-coupling path joins {x} and {y}")
    paths = []

    def extend(path):
        if len(paths) >= max_paths:
            return
        v = path[-1]
        if v == y:
            paths.append(list(path))
            return
        for w in adj[v]:
            if dist[w] == dist[v] - 1:
                path.append(w)
                extend(path)
                path.pop()

    extend([x])
    return max(path_flip_weight(region, beta, p) for p in paths)


def check_correlation_gap_bound(region: Region, beta: float, x: int, y: int,
                                slack: float = REL_TOL) -> dict:
    """Exact check of 0 <= <ss>+ - <ss>0 <= Gamma^-1 * P[x joined to ghost].

    The connection probability refers to the duplicated sourceless measure;
    Gamma is the best parity-flip path factor between x and y.
    """
    if not region.has_ghost:
        raise RegionError("gap bound requires a plus-boundary region")
    free = region.free_twin()
    c_plus = correlation_plus(region, beta, x, y)
    c_free = correlation_free(free, beta, x, y)
    gap = c_plus - c_free
    gamma = best_flip_weight(region, beta, x, y)
    p_ghost = DuplicatedMeasure(region, beta).connect_ghost_prob(x)
    bound = p_ghost / gamma
    tol = max(slack, slack * max(abs(gap), abs(bound)))
    return {
        "x": x, "y": y, "beta": beta,
        "corr_plus": c_plus, "corr_free": c_free, "gap": gap,
        "gamma": gamma, "p_connect_ghost": p_ghost, "bound": bound,
        "lower_ok": gap >= -tol,
        "upper_ok": gap <= bound + tol,
    }


# ---------------------------------------------------------------------------
# parity events and the pressure
# ---------------------------------------------------------------------------

def all_even_event_prob(region: Region, beta: float, edges,
                        rel_tol: float = REL_TOL) -> dict:
    """Probability that every edge of E has even multiplicity, two ways.

    Route a: parity-sum ratio with the edges deleted, times prod cosh(beta*J).
    Route b: spin expectation of exp(-beta*K_E) times the same product.
    The two routes must agree to rel_tol; disagreement raises AccuracyError.
    """
    edges = [tuple(sorted((int(a), int(b)))) for a, b in edges]
    log_cosh_sum = 0.0
    for (u, v) in edges:
        J = region.edge_coupling(u, v)
        log_cosh_sum += math.log(math.cosh(beta * J))
    lz_del = log_partition_current(region, beta, removed_edges=edges)
    lz_full = log_partition_current(region, beta)
    route_a = math.exp(log_cosh_sum + lz_del - lz_full)
    _, _, boltz = _spin_stats(region, beta, energy_edges=edges)
    route_b = boltz * math.exp(log_cosh_sum)
    if not close_rel(route_a, route_b, rel=rel_tol):
        raise AccuracyError(
            f"parity-event routes disagree: parity {route_a!r} vs spin {route_b!r}")
    return {"edges": edges, "value": route_a,
            "route_parity": route_a, "route_spin": route_b}


def pressure_sequence(model, beta: float, field: float, L_values,
                      bc: str = "free"):
    """Per-site log partition function over a sequence of small boxes.

    Reported as raw finite-volume values; no extrapolation is claimed.
    """
    from .model import build_box

    out = []
    for L in L_values:
        region = build_box(model, L, bc=bc, beta=beta)
        if region.n_sites > MAX_ENUM_SITES:
            raise EnumerationSizeError(
                f"box L={L} has {region.n_sites} sites, beyond the spin-sum cap")
        lz = log_partition_spin(region, beta, field)
        out.append({"L": L, "n_sites": region.n_sites,
                    "log_z_per_site": lz / region.n_sites})
    return out
