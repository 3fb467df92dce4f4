"""Numba kernels: seeded RNG, Metropolis, Wolff, worm updates, union-find.

The RNG is splitmix64 with streams derived from (seed, chain id, purpose)
so that every chain is reproducible bit for bit and independent chains can
run on separate threads (kernels release the GIL).
"""

from __future__ import annotations

import numpy as np
from numba import njit

U64 = np.uint64
_GOLDEN = U64(0x9E3779B97F4A7C15)
_MIX1 = U64(0xBF58476D1CE4E5B9)
_MIX2 = U64(0x94D049BB133111EB)


@njit(cache=True, inline="always")
def _mix(z):
    z = (z ^ (z >> U64(30))) * _MIX1
    z = (z ^ (z >> U64(27))) * _MIX2
    return z ^ (z >> U64(31))


@njit(cache=True, inline="always")
def _next_u64(state):
    state[0] = state[0] + _GOLDEN
    return _mix(state[0])


@njit(cache=True, inline="always")
def _uniform(state):
    return float(_next_u64(state) >> U64(11)) * (1.0 / 9007199254740992.0)


def derive_stream(seed: int, chain: int = 0, tag: int = 0) -> np.ndarray:
    """Initial splitmix64 state for (seed, chain, tag), as a length-1 array."""
    mask = 0xFFFFFFFFFFFFFFFF
    z = seed & mask
    for salt in ((chain * 0x9E3779B97F4A7C15 + 1) & mask,
                 (tag * 0xD1B54A32D192ED03 + 2) & mask):
        z = (z + salt) & mask
        z = ((z ^ (z >> 30)) * 0xBF58476D1CE4E5B9) & mask
        z = ((z ^ (z >> 27)) * 0x94D049BB133111EB) & mask
        z = z ^ (z >> 31)
    out = np.zeros(1, dtype=np.uint64)
    out[0] = np.uint64(z)
    return out


# ---------------------------------------------------------------------------
# spin-model kernels
# ---------------------------------------------------------------------------

@njit(cache=True, nogil=True)
def metropolis_run(spins, ptr, idx, jw, hfield, beta, n_sweeps, state):
    """Single-site Metropolis sweeps over a CSR adjacency; ghost couplings are
    folded into the per-site field."""
    n = spins.shape[0]
    for _ in range(n_sweeps):
        for i in range(n):
            h = hfield[i]
            for k in range(ptr[i], ptr[i + 1]):
                h += jw[k] * spins[idx[k]]
            d_e = 2.0 * spins[i] * h
            if d_e <= 0.0:
                spins[i] = -spins[i]
            elif _uniform(state) < np.exp(-beta * d_e):
                spins[i] = -spins[i]


@njit(cache=True, nogil=True)
def wolff_run(spins, ptr, idx, padd, target_touch, state, ghost_site, queue, mark):
    """Wolff cluster updates at zero field, until the summed cluster sizes
    reach target_touch (one lattice sweep worth of work per n_sites touched).

    When ghost_site >= 0 the adjacency includes the frozen +1 ghost; clusters
    that absorb it are left unflipped, which simulates the plus-boundary
    ensemble.  Returns the number of clusters grown.
    """
    n_lat = spins.shape[0] - (1 if ghost_site >= 0 else 0)
    touched = 0
    clusters = 0
    while touched < target_touch:
        seed = np.int64(_next_u64(state) % U64(n_lat))
        s0 = spins[seed]
        queue[0] = seed
        mark[seed] = 1
        head, tail = 0, 1
        has_ghost = False
        while head < tail:
            v = queue[head]
            head += 1
            for k in range(ptr[v], ptr[v + 1]):
                w = idx[k]
                if mark[w] == 0 and spins[w] == s0:
                    if _uniform(state) < padd[k]:
                        mark[w] = 1
                        if w == ghost_site:
                            has_ghost = True
                        queue[tail] = w
                        tail += 1
        if not has_ghost:
            for t in range(tail):
                spins[queue[t]] = -spins[queue[t]]
        for t in range(tail):
            mark[queue[t]] = 0
        touched += tail
        clusters += 1
    return clusters


# ---------------------------------------------------------------------------
# worm kernel
# ---------------------------------------------------------------------------

@njit(cache=True, inline="always")
def _worm_move(u, v, parity, eu, ev, ew, iptr, iedge, aprob, aidx, wsum,
               targets, eta, kappa, ghost_site, state):
    """One update of the defect-pair chain; returns (u, v, accepted).

    Diagonal states carry fugacity eta and states with exactly one ghost
    endpoint carry fugacity kappa, so that both the sourceless sector and the
    magnetization sector are visited at tunable rates; conditional
    distributions within each sector are unchanged.
    """
    r = _uniform(state)
    if r < 0.25:
        # teleport between diagonal states (symmetric, always accepted)
        if u == v:
            t = targets[np.int64(_next_u64(state) % U64(targets.shape[0]))]
            return t, t, 1
        return u, v, 0
    head = _uniform(state) < 0.5
    w0 = v if head else u
    lo = iptr[w0]
    dg = iptr[w0 + 1] - lo
    if dg == 0:
        return u, v, 0
    j = np.int64(_next_u64(state) % U64(dg))
    if _uniform(state) >= aprob[lo + j]:
        j = np.int64(aidx[lo + j])
    e = iedge[lo + j]
    z = ev[e] if eu[e] == w0 else eu[e]
    ratio = ew[e] if parity[e] == 0 else 1.0 / ew[e]
    ratio *= wsum[w0] / wsum[z]
    if head:
        nu, nv = u, z
    else:
        nu, nv = z, v
    old_closed = u == v
    new_closed = nu == nv
    if old_closed and not new_closed:
        ratio /= eta
    elif new_closed and not old_closed:
        ratio *= eta
    if ghost_site >= 0:
        old_g = (u == ghost_site) != (v == ghost_site)
        new_g = (nu == ghost_site) != (nv == ghost_site)
        if new_g and not old_g:
            ratio *= kappa
        elif old_g and not new_g:
            ratio /= kappa
    if ratio >= 1.0 or _uniform(state) < ratio:
        parity[e] ^= 1
        return nu, nv, 1
    return u, v, 0


@njit(cache=True, nogil=True)
def worm_steps(parity, uv, eu, ev, ew, iptr, iedge, aprob, aidx, wsum,
               targets, eta, kappa, ghost_site, n_steps, state,
               pair_keys, pair_counts, hist, pattern_counts, sample_every,
               counters):
    """Advance the worm chain n_steps, accumulating occupation statistics.

    counters: [0] diagonal visits, [1] ghost-defect visits, [2] open visits,
    [3] accepted moves.  hist is a flattened (n_tot, n_tot) pair histogram
    (size 0 disables); pair_keys/pair_counts track specific sorted pair keys
    a * n_tot + b; pattern_counts (size 0 disables) counts closed parity
    bitmasks every sample_every steps.
    """
    u = uv[0]
    v = uv[1]
    n_tot = wsum.shape[0]
    for step in range(n_steps):
        u, v, acc = _worm_move(u, v, parity, eu, ev, ew, iptr, iedge,
                               aprob, aidx, wsum, targets, eta, kappa,
                               ghost_site, state)
        counters[3] += acc
        if u == v:
            counters[0] += 1.0
            if pattern_counts.shape[0] > 0 and step % sample_every == 0:
                key = 0
                for k in range(parity.shape[0]):
                    if parity[k] != 0:
                        key |= 1 << k
                pattern_counts[key] += 1.0
        else:
            counters[2] += 1.0
            a, b = (u, v) if u < v else (v, u)
            if ghost_site >= 0 and b == ghost_site:
                counters[1] += 1.0
            if hist.shape[0] > 0:
                hist[a * n_tot + b] += 1.0
            if pair_keys.shape[0] > 0:
                key = a * n_tot + b
                lo, hi = 0, pair_keys.shape[0]
                while lo < hi:
                    mid = (lo + hi) // 2
                    if pair_keys[mid] < key:
                        lo = mid + 1
                    else:
                        hi = mid
                if lo < pair_keys.shape[0] and pair_keys[lo] == key:
                    pair_counts[lo] += 1.0
    uv[0] = u
    uv[1] = v


@njit(cache=True, nogil=True)
def worm_collect_closed(parity, uv, eu, ev, ew, iptr, iedge, aprob, aidx,
                        wsum, targets, eta, kappa, ghost_site, gap, out,
                        max_steps, state):
    """Record the parity configuration at every gap-th step that finds the
    chain in a diagonal (sourceless) state; returns rows filled."""
    u = uv[0]
    v = uv[1]
    row = 0
    step = 0
    while row < out.shape[0] and step < max_steps:
        u, v, _ = _worm_move(u, v, parity, eu, ev, ew, iptr, iedge,
                             aprob, aidx, wsum, targets, eta, kappa,
                             ghost_site, state)
        step += 1
        if step % gap == 0 and u == v:
            for k in range(parity.shape[0]):
                out[row, k] = parity[k]
            row += 1
    uv[0] = u
    uv[1] = v
    return row


# ---------------------------------------------------------------------------
# union-find batch kernels
# ---------------------------------------------------------------------------

@njit(cache=True, inline="always")
def _uf_find(parent, a):
    while parent[a] != a:
        parent[a] = parent[parent[a]]
        a = parent[a]
    return a


@njit(cache=True, nogil=True)
def label_components(open_edges, eu, ev, n_vert):
    """Root label per vertex for one open-edge configuration."""
    parent = np.arange(n_vert, dtype=np.int64)
    for k in range(eu.shape[0]):
        if open_edges[k] != 0:
            ra = _uf_find(parent, eu[k])
            rb = _uf_find(parent, ev[k])
            if ra != rb:
                parent[ra] = rb
    for v in range(n_vert):
        parent[v] = _uf_find(parent, v)
    return parent


@njit(cache=True, nogil=True)
def batch_pairs_connected(open_mat, eu, ev, n_vert, pa, pb):
    """(samples, pairs) connectivity indicators."""
    S = open_mat.shape[0]
    P = pa.shape[0]
    out = np.zeros((S, P), dtype=np.uint8)
    parent = np.empty(n_vert, dtype=np.int64)
    for s in range(S):
        for v in range(n_vert):
            parent[v] = v
        row = open_mat[s]
        for k in range(eu.shape[0]):
            if row[k] != 0:
                ra = _uf_find(parent, eu[k])
                rb = _uf_find(parent, ev[k])
                if ra != rb:
                    parent[ra] = rb
        for p in range(P):
            if _uf_find(parent, pa[p]) == _uf_find(parent, pb[p]):
                out[s, p] = 1
    return out


@njit(cache=True, nogil=True)
def batch_connected_to_set(open_mat, eu, ev, n_vert, src, target_mask):
    """Per sample: is src joined to any vertex with target_mask set."""
    S = open_mat.shape[0]
    out = np.zeros(S, dtype=np.uint8)
    parent = np.empty(n_vert, dtype=np.int64)
    for s in range(S):
        for v in range(n_vert):
            parent[v] = v
        row = open_mat[s]
        for k in range(eu.shape[0]):
            if row[k] != 0:
                ra = _uf_find(parent, eu[k])
                rb = _uf_find(parent, ev[k])
                if ra != rb:
                    parent[ra] = rb
        r0 = _uf_find(parent, src)
        for v in range(n_vert):
            if target_mask[v] != 0 and _uf_find(parent, v) == r0:
                out[s] = 1
                break
    return out


@njit(cache=True, nogil=True)
def batch_two_giants(open_mat, eu, ev, n_vert, boundary, min_size):
    """Per sample: do two distinct clusters each have >= min_size vertices and
    touch the boundary set?"""
    S = open_mat.shape[0]
    out = np.zeros(S, dtype=np.uint8)
    parent = np.empty(n_vert, dtype=np.int64)
    size = np.empty(n_vert, dtype=np.int64)
    touches = np.empty(n_vert, dtype=np.uint8)
    for s in range(S):
        for v in range(n_vert):
            parent[v] = v
        row = open_mat[s]
        for k in range(eu.shape[0]):
            if row[k] != 0:
                ra = _uf_find(parent, eu[k])
                rb = _uf_find(parent, ev[k])
                if ra != rb:
                    parent[ra] = rb
        for v in range(n_vert):
            size[v] = 0
            touches[v] = 0
        for v in range(n_vert):
            r = _uf_find(parent, v)
            size[r] += 1
            if boundary[v] != 0:
                touches[r] = 1
        giants = 0
        for v in range(n_vert):
            if parent[v] == v and size[v] >= min_size and touches[v] != 0:
                giants += 1
                if giants >= 2:
                    out[s] = 1
                    break
    return out


@njit(cache=True, nogil=True)
def batch_block_pair_sum(open_mat, eu, ev, n_vert, block_mask):
    """Per sample: sum over x, y in the block of 1[x joined to y], computed as
    the sum of squared within-block cluster counts (diagonal included)."""
    S = open_mat.shape[0]
    out = np.zeros(S)
    parent = np.empty(n_vert, dtype=np.int64)
    count = np.empty(n_vert, dtype=np.int64)
    for s in range(S):
        for v in range(n_vert):
            parent[v] = v
        row = open_mat[s]
        for k in range(eu.shape[0]):
            if row[k] != 0:
                ra = _uf_find(parent, eu[k])
                rb = _uf_find(parent, ev[k])
                if ra != rb:
                    parent[ra] = rb
        for v in range(n_vert):
            count[v] = 0
        for v in range(n_vert):
            if block_mask[v] != 0:
                count[_uf_find(parent, v)] += 1
        acc = 0.0
        for v in range(n_vert):
            if count[v] > 0:
                acc += float(count[v]) * float(count[v])
        out[s] = acc
    return out


# ---------------------------------------------------------------------------
# alias tables (Walker method)
# ---------------------------------------------------------------------------

def build_alias(weights: np.ndarray):
    """Alias table (prob, alias) for sampling an index proportional to weights."""
    n = len(weights)
    prob = np.zeros(n)
    alias = np.zeros(n, dtype=np.int32)
    total = weights.sum()
    if n == 0 or total <= 0.0:
        return prob, alias
    scaled = weights * (n / total)
    small = [i for i in range(n) if scaled[i] < 1.0]
    large = [i for i in range(n) if scaled[i] >= 1.0]
    while small and large:
        s = small.pop()
        l = large.pop()
        prob[s] = scaled[s]
        alias[s] = l
        scaled[l] = scaled[l] - (1.0 - scaled[s])
        if scaled[l] < 1.0:
            small.append(l)
        else:
            large.append(l)
    for i in large + small:
        prob[i] = 1.0
        alias[i] = i
    return prob, alias
