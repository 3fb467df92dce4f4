"""Cluster analysis of open configurations and the order-parameter chain.

Connectivity frequencies of the duplicated-current measure, the insertion
map that opens every coupled edge inside a central block, finite-volume
uniqueness diagnostics, and the long-range-order estimators:

  m*          volume-averaged plus-boundary single-site magnetization,
              estimated from the worm chain's aggregated (site, ghost)
              defect occupation and cross-checked by a direct spin chain;
  M_LRO^2     center-anchored block-averaged two-point mean, free b.c.;
  M~_LRO^2    minimum over centered blocks of the block-averaged two-point
              sum (equivalently the block-magnetization second moment);
  chi         two-point sum over the whole box.

All two-point block sums come from block-magnetization moments of a free
boundary spin chain, so no pair enumeration is needed.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from . import _mc
from .currents import OpenConfig
from .estimates import EstimateSeries, binned_stats, combined_sigma
from .model import Region, RegionError, build_box
from .sampler import ChainConfig, DuplicatedSamples, run_spin_chain, worm_run


# ---------------------------------------------------------------------------
# cluster labeling
# ---------------------------------------------------------------------------

@dataclass
class ClusterLabels:
    labels: np.ndarray          # vertex -> root id (ghost included when present)
    sizes: dict                 # root id -> cluster size
    touches_ghost: set
    touches_boundary: set

    def same_cluster(self, x: int, y: int) -> bool:
        return self.labels[x] == self.labels[y]

    @property
    def n_clusters(self) -> int:
        return len(self.sizes)


def label_clusters(config: OpenConfig) -> ClusterLabels:
    """Union-find labels over a single open configuration (ghost included)."""
    region = config.region
    eu, ev, _, _ = region.edge_universe()
    n_tot = region.n_sites + (1 if region.has_ghost else 0)
    roots = _mc.label_components(config.open.astype(np.uint8),
                                 eu.astype(np.int64), ev.astype(np.int64), n_tot)
    sizes: dict[int, int] = {}
    for r in roots:
        sizes[int(r)] = sizes.get(int(r), 0) + 1
    touches_ghost = set()
    if region.has_ghost:
        touches_ghost = {int(roots[region.ghost_id])}
    boundary = region.boundary_mask()
    touches_boundary = {int(roots[v]) for v in np.nonzero(boundary)[0]}
    return ClusterLabels(roots, sizes, touches_ghost, touches_boundary)


# ---------------------------------------------------------------------------
# estimators over duplicated-sample streams
# ---------------------------------------------------------------------------

def _lattice_edges(samples: DuplicatedSamples):
    region = samples.region
    open_lat = samples.open_mat[:, : samples.n_lattice_edges].astype(np.uint8)
    eu = region.edge_u.astype(np.int64)
    ev = region.edge_v.astype(np.int64)
    return open_lat, eu, ev


def connectivity_estimates(samples: DuplicatedSamples, pairs=(),
                           ghost_sites=(), anchor: int | None = None,
                           n_bins: int = 32) -> dict:
    """Frequency estimates of pair, ghost, and boundary connectivity events.

    Pair connectivity is within the lattice; ghost connectivity uses the full
    edge set including ghost edges; the boundary event joins the anchor
    (default: center) to the box boundary.
    """
    region = samples.region
    out = {}
    open_lat, eu, ev = _lattice_edges(samples)
    pair_list = [(int(a), int(b)) for a, b in pairs]
    if pair_list:
        pa = np.array([p[0] for p in pair_list], dtype=np.int64)
        pb = np.array([p[1] for p in pair_list], dtype=np.int64)
        flags = _mc.batch_pairs_connected(open_lat, eu, ev, region.n_sites, pa, pb)
        for i, (a, b) in enumerate(pair_list):
            mean, err = binned_stats(flags[:, i].astype(float), n_bins)
            out[("pair", a, b)] = EstimateSeries(f"P[{a}<->{b}]", float(mean),
                                                 float(err), len(flags), n_bins,
                                                 samples.seed)
    if ghost_sites and region.has_ghost:
        euu, evv, _, _ = region.edge_universe()
        n_tot = region.n_sites + 1
        target = np.zeros(n_tot, dtype=np.uint8)
        target[region.ghost_id] = 1
        full = samples.open_mat.astype(np.uint8)
        for x in ghost_sites:
            flags = _mc.batch_connected_to_set(full, euu.astype(np.int64),
                                               evv.astype(np.int64), n_tot,
                                               int(x), target)
            mean, err = binned_stats(flags.astype(float), n_bins)
            out[("ghost", int(x))] = EstimateSeries(f"P[{x}<->ghost]", float(mean),
                                                    float(err), len(flags), n_bins,
                                                    samples.seed)
    boundary = region.boundary_mask()
    if boundary.any():
        if anchor is None:
            anchor = region.center_site()
        flags = _mc.batch_connected_to_set(open_lat, eu, ev, region.n_sites,
                                           int(anchor), boundary.astype(np.uint8))
        mean, err = binned_stats(flags.astype(float), n_bins)
        out[("boundary", int(anchor))] = EstimateSeries(
            "P[anchor<->boundary]", float(mean), float(err), len(flags), n_bins,
            samples.seed)
    return out


def block_sites(region: Region, radius: int) -> np.ndarray:
    """Indices of the centered block of sup-norm radius `radius`."""
    if region.coords is None:
        raise RegionError("blocks need lattice coordinates")
    if region.shape == "torus":
        L = region.extent
        center = np.full(region.dimension, L // 2)
        delta = np.abs(region.coords - center)
        delta = np.minimum(delta, L - delta)
    else:
        delta = np.abs(region.coords)
    return np.nonzero(delta.max(axis=1) <= radius)[0]


def axis_segment_sites(region: Region, half_length: int) -> np.ndarray:
    """Centered segment of length 2*half_length+1 along the first axis."""
    if region.coords is None:
        raise RegionError("segments need lattice coordinates")
    coords = region.coords.copy()
    if region.shape == "torus":
        coords = coords - region.extent // 2
    on_axis = np.all(coords[:, 1:] == 0, axis=1) if region.dimension > 1 \
        else np.ones(len(coords), dtype=bool)
    return np.nonzero(on_axis & (np.abs(coords[:, 0]) <= half_length))[0]


def lro_chain_check(samples: DuplicatedSamples, block_radius: int,
                    free_corr_block_sum: EstimateSeries,
                    anchor: int | None = None, n_bins: int = 32,
                    n_sigma: float = 3.0) -> dict:
    """Statistical check of the percolation / two-point chain

        (|B| P[0<->boundary])^2 <= sum_{x,y in B} P[x<->y]
                                <= sum_{x,y in B} <s_x s_y>_free,

    each inequality granted n_sigma combined slack.  free_corr_block_sum must
    estimate the right-hand sum (|B|^2 times the block-magnetization second
    moment of a free-boundary chain)."""
    region = samples.region
    if anchor is None:
        anchor = region.center_site()
    block = block_sites(region, block_radius)
    b_size = len(block)
    open_lat, eu, ev = _lattice_edges(samples)
    boundary = region.boundary_mask().astype(np.uint8)
    flags = _mc.batch_connected_to_set(open_lat, eu, ev, region.n_sites,
                                       int(anchor), boundary)
    p_mean, p_err = binned_stats(flags.astype(float), n_bins)
    left = (b_size * p_mean) ** 2
    left_err = 2.0 * b_size * b_size * p_mean * p_err
    mask = np.zeros(region.n_sites, dtype=np.uint8)
    mask[block] = 1
    sums = _mc.batch_block_pair_sum(open_lat, eu, ev, region.n_sites, mask)
    mid_mean, mid_err = binned_stats(sums, n_bins)
    right = free_corr_block_sum.mean
    right_err = free_corr_block_sum.stderr
    return {
        "block_radius": block_radius,
        "block_size": b_size,
        "left": float(left), "left_err": float(left_err),
        "mid": float(mid_mean), "mid_err": float(mid_err),
        "right": float(right), "right_err": float(right_err),
        "left_le_mid": left <= mid_mean + n_sigma * combined_sigma(left_err, mid_err),
        "mid_le_right": mid_mean <= right + n_sigma * combined_sigma(mid_err, right_err),
    }


# ---------------------------------------------------------------------------
# insertion map
# ---------------------------------------------------------------------------

def open_block_edges(config: OpenConfig, radius: int) -> OpenConfig:
    """Open every positively coupled edge whose endpoints lie in the centered
    block of the given radius; deterministic, idempotent, monotone."""
    region = config.region
    if region.shape == "box" and radius > region.extent:
        raise RegionError("block radius exceeds the region")
    inside = np.zeros(region.n_sites + (1 if region.has_ghost else 0), dtype=bool)
    inside[block_sites(region, radius)] = True
    eu, ev, J, _ = region.edge_universe()
    force = inside[eu] & inside[ev] & (J > 0.0)
    return OpenConfig(region, config.open | force)


# ---------------------------------------------------------------------------
# uniqueness diagnostic
# ---------------------------------------------------------------------------

def multiple_giant_cluster_frequency(samples: DuplicatedSamples,
                                     size_fraction: float = 0.05,
                                     n_bins: int = 32) -> dict:
    """Frequency of configurations with two disjoint boundary-touching
    clusters, each at least size_fraction of the volume.

    A qualitative finite-volume proxy for uniqueness of the giant cluster;
    reported, never asserted as a theorem.  Clusters are taken in the lattice
    (ghost edges ignored), matching the translation-invariant object.
    """
    if not (0.0 < size_fraction <= 0.5):
        raise ValueError("size fraction must lie in (0, 0.5]")
    region = samples.region
    open_lat, eu, ev = _lattice_edges(samples)
    boundary = region.boundary_mask().astype(np.uint8)
    min_size = max(1, int(math.ceil(size_fraction * region.n_sites)))
    flags = _mc.batch_two_giants(open_lat, eu, ev, region.n_sites, boundary,
                                 min_size)
    mean, err = binned_stats(flags.astype(float), n_bins)
    return {"frequency": float(mean), "stderr": float(err),
            "n_samples": len(flags), "size_fraction": size_fraction,
            "min_size": min_size}


# ---------------------------------------------------------------------------
# order parameters
# ---------------------------------------------------------------------------

@dataclass
class OrderParameterReport:
    beta: float
    L: int
    m_star: EstimateSeries               # worm route (primary)
    m_star_spin: EstimateSeries          # direct spin-chain cross-check
    m_lro_sq: EstimateSeries             # center-anchored block mean
    m_lro_tilde_sq: EstimateSeries       # min over block family
    chi: EstimateSeries
    per_block: dict = field(default_factory=dict)
    meta: dict = field(default_factory=dict)

    @property
    def m_lro(self) -> float:
        return math.sqrt(max(self.m_lro_sq.mean, 0.0))

    @property
    def m_lro_tilde(self) -> float:
        return math.sqrt(max(self.m_lro_tilde_sq.mean, 0.0))

    def as_dict(self):
        return {
            "beta": self.beta, "L": self.L,
            "m_star": self.m_star.as_dict(),
            "m_star_spin": self.m_star_spin.as_dict(),
            "m_lro_sq": self.m_lro_sq.as_dict(),
            "m_lro_tilde_sq": self.m_lro_tilde_sq.as_dict(),
            "m_lro": self.m_lro, "m_lro_tilde": self.m_lro_tilde,
            "chi": self.chi.as_dict(),
            "per_block": {k: v for k, v in self.per_block.items()},
            "meta": self.meta,
        }


def free_block_moments(region: Region, cfg: ChainConfig, block_radii,
                       n_bins: int = 32, chain: int = 0) -> dict:
    """Free-boundary block-magnetization moments and two-point sums.

    Measures, per sample, the squared block means over each radius, the
    center-anchored block sum s_0 * S(block), and the full-box sum; their
    averages give the two-point block sums without pair enumeration.
    """
    if region.has_ghost:
        raise RegionError("block moments are a free-boundary estimator")
    radii = sorted(set(int(k) for k in block_radii))
    blocks = [block_sites(region, k) for k in radii]
    center = region.center_site()
    mats = np.zeros((len(radii), region.n_sites))
    for i, b in enumerate(blocks):
        mats[i, b] = 1.0
    sizes = np.array([len(b) for b in blocks], dtype=float)

    def measure(s):
        sf = s.astype(float)
        sums = mats @ sf
        out = np.empty(len(radii) + 2)
        out[: len(radii)] = (sums / sizes) ** 2
        out[len(radii)] = sf[center] * sums[-1] / sizes[-1]
        out[len(radii) + 1] = sf[center] * sf.sum()
        return out

    series = run_spin_chain(region, cfg, measure, len(radii) + 2, chain=chain)
    mean, err = binned_stats(series, n_bins)
    per_block = {}
    for i, k in enumerate(radii):
        per_block[k] = {"mean_sq": float(mean[i]), "stderr": float(err[i]),
                        "block_size": int(sizes[i])}
    return {
        "per_block": per_block,
        "radii": radii,
        "m_lro_sq": (float(mean[len(radii)]), float(err[len(radii)])),
        "chi": (float(mean[len(radii) + 1]), float(err[len(radii) + 1])),
        "n_measurements": len(series),
    }


def order_parameters(model, L: int, beta: float, seed: int = 1234,
                     spin_sweeps: int = 20000, spin_burnin: int = 2000,
                     worm_sweeps: int = 40000, worm_burnin: int = 4000,
                     block_radii=None, use_segments: bool = False,
                     n_bins: int = 32) -> OrderParameterReport:
    """Full order-parameter estimate set on boxes of half-width L.

    m* comes from the worm chain's aggregated ghost-defect occupation on the
    plus box (all sites, i.e. the volume-averaged single-site magnetization)
    and is cross-checked against a direct spin chain; the block quantities
    come from a free-boundary spin chain.
    """
    plus = build_box(model, L, bc="plus", beta=beta)
    free = plus.free_twin()
    if block_radii is None:
        ks = sorted({max(1, L // 8), max(1, L // 4), max(2, L // 2),
                     max(2, 3 * L // 4), L})
    else:
        ks = sorted(set(block_radii))

    worm_cfg = ChainConfig(beta=beta, bc="plus", sweeps=worm_sweeps,
                           burnin=worm_burnin, seed=seed, algorithm="worm")
    wres = worm_run(plus, worm_cfg, pairs=(), n_bins=n_bins)
    m_star = wres.magnetization

    spin_cfg = ChainConfig(beta=beta, bc="plus", sweeps=spin_sweeps,
                           burnin=spin_burnin, seed=seed + 1,
                           algorithm="spin-wolff")

    def mag(s):
        return np.array([s.mean()])

    mser = run_spin_chain(plus, spin_cfg, mag, 1)
    mmean, merr = binned_stats(mser, n_bins)
    m_star_spin = EstimateSeries("m_star_spin", float(mmean[0]), float(merr[0]),
                                 len(mser), n_bins, seed + 1)

    free_cfg = ChainConfig(beta=beta, bc="free", sweeps=spin_sweeps,
                           burnin=spin_burnin, seed=seed + 2,
                           algorithm="spin-wolff")
    if use_segments:
        moments = _segment_moments(free, free_cfg, ks, n_bins)
    else:
        moments = free_block_moments(free, free_cfg, ks, n_bins)
    tilde_k, tilde = min(
        ((k, v) for k, v in moments["per_block"].items()),
        key=lambda kv: kv[1]["mean_sq"])
    n_meas = moments["n_measurements"]
    report = OrderParameterReport(
        beta=beta, L=L,
        m_star=m_star,
        m_star_spin=m_star_spin,
        m_lro_sq=EstimateSeries("m_lro_sq", *moments["m_lro_sq"], n_meas,
                                n_bins, seed + 2),
        m_lro_tilde_sq=EstimateSeries("m_lro_tilde_sq", tilde["mean_sq"],
                                      tilde["stderr"], n_meas, n_bins, seed + 2,
                                      {"block_radius": tilde_k}),
        chi=EstimateSeries("chi", *moments["chi"], n_meas, n_bins, seed + 2),
        per_block=moments["per_block"],
        meta={"worm": wres.meta, "block_family":
              "axis-segments" if use_segments else "centered-boxes"},
    )
    return report


def _segment_moments(region: Region, cfg: ChainConfig, ks, n_bins: int) -> dict:
    segs = [axis_segment_sites(region, k) for k in ks]
    center = region.center_site()
    mats = np.zeros((len(ks), region.n_sites))
    for i, b in enumerate(segs):
        mats[i, b] = 1.0
    sizes = np.array([len(b) for b in segs], dtype=float)

    def measure(s):
        sf = s.astype(float)
        sums = mats @ sf
        out = np.empty(len(ks) + 2)
        out[: len(ks)] = (sums / sizes) ** 2
        out[len(ks)] = sf[center] * sums[-1] / sizes[-1]
        out[len(ks) + 1] = sf[center] * sf.sum()
        return out

    series = run_spin_chain(region, cfg, measure, len(ks) + 2)
    mean, err = binned_stats(series, n_bins)
    per_block = {}
    for i, k in enumerate(sorted(set(int(k) for k in ks))):
        per_block[k] = {"mean_sq": float(mean[i]), "stderr": float(err[i]),
                        "block_size": int(sizes[i])}
    return {"per_block": per_block, "radii": list(ks),
            "m_lro_sq": (float(mean[len(ks)]), float(err[len(ks)])),
            "chi": (float(mean[len(ks) + 1]), float(err[len(ks) + 1])),
            "n_measurements": len(series)}


# ---------------------------------------------------------------------------
# even-observable mixing scan
# ---------------------------------------------------------------------------

def even_observable_mixing_scan(region: Region, cfg: ChainConfig, separations,
                                n_bins: int = 32) -> list:
    """Covariance decay of the bond observable s_0 s_(e1) under translation.

    Estimates |<A * A_x> - <A><A_x>| for A = s_c s_(c+e1) at the requested
    separations along the first axis; a trend table, nothing asserted.
    """
    center = region.center_site()
    d = region.dimension
    cc = region.coords[center]

    def site_at(offset0):
        target = cc.copy()
        target[0] += offset0
        if region.shape == "torus":
            target %= region.extent
        return region.site_index(target)

    base = (center, site_at(1))
    obs_pairs = [base]
    for x in separations:
        obs_pairs.append((site_at(int(x)), site_at(int(x) + 1)))

    def measure(s):
        a0 = s[base[0]] * s[base[1]]
        out = np.empty(1 + 2 * len(separations))
        out[0] = a0
        for i in range(len(separations)):
            ax = s[obs_pairs[1 + i][0]] * s[obs_pairs[1 + i][1]]
            out[1 + 2 * i] = ax
            out[2 + 2 * i] = a0 * ax
        return out

    series = run_spin_chain(region, cfg, measure, 1 + 2 * len(separations))
    mean, err = binned_stats(series, n_bins)
    rows = []
    for i, x in enumerate(separations):
        cov = mean[2 + 2 * i] - mean[0] * mean[1 + 2 * i]
        cov_err = combined_sigma(err[2 + 2 * i],
                                 abs(mean[0]) * err[1 + 2 * i],
                                 abs(mean[1 + 2 * i]) * err[0])
        rows.append({"separation": int(x), "abs_cov": abs(float(cov)),
                     "stderr": float(cov_err)})
    return rows
