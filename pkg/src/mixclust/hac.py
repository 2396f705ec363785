"""Model-based agglomerative clustering for discrete naive-Bayes mixtures.

Each cluster is summarised by integer value counts.  Its contribution to the
classification log-likelihood at the ML parameters is

    L = sum_i sum_v n_iv ln(n_iv / m) = sum_i [sum_v n_iv ln n_iv - m ln m]

and merging clusters a and b costs d(a, b) = L_a + L_b - L_ab >= 0.

The agglomeration keeps, for every active cluster, a cached nearest neighbour.
After a merge only the new cluster's distances are computed.  A cluster whose
cached neighbour disappeared keeps its old distance as a lower bound and is
rescanned lazily, only when that bound reaches the front of the selection.
Memory is O(N * sum r_i); time is O(N^2) per typical run and O(N^3) in the
worst case.  Ties on distance go to the lexicographically smallest
(left, right) id pair; a merged cluster gets the id N + step.

A variable whose counts all sit on value 0 contributes exactly 0 to L, so the
kernels only visit variables where a cluster has some non-zero value; sparse
data (most clickstream cases hit a handful of stories) is cheap to agglomerate.
"""

from __future__ import annotations

import math
import time
from dataclasses import dataclass

import numpy as np
from numba import njit

from .core import Dataset, SuffStats, VariableSchema

_TABLE: list[float] = [0.0, 0.0]


def xlogx_table(n: int) -> np.ndarray:
    """Table of c ln c for c = 0..n, built with scalar libm logs so values never
    depend on the table size."""
    while len(_TABLE) <= n:
        c = len(_TABLE)
        _TABLE.append(c * math.log(c))
    return np.asarray(_TABLE[: n + 1], dtype=np.float64)


@njit(cache=True, inline="always")
def _var_term(counts, a, b, s0, w, m, table):
    # sum_v f(n_v) - f(m) over one variable of clusters a + b; value 0 holds
    # the remaining mass.  b < 0 means cluster a alone.
    acc = 0.0
    tot = 0
    for v in range(s0, s0 + w):
        c = counts[a, v]
        if b >= 0:
            c += counts[b, v]
        acc += table[c]
        tot += c
    return acc + table[m - tot] - table[m]


@njit(cache=True)
def _pair_loglik(counts, nz, nnz, a, b, m, starts, widths, table):
    """Log-likelihood of the union of clusters a and b (b < 0: a alone).

    Only variables where either side has a non-reference value contribute;
    they are visited in increasing variable order on the merged index lists.
    """
    na = nnz[a]
    nb = nnz[b] if b >= 0 else 0
    s = 0.0
    i = 0
    j = 0
    big = 1 << 62
    while i < na or j < nb:
        va = nz[a, i] if i < na else big
        vb = nz[b, j] if j < nb else big
        v = va if va < vb else vb
        if va == v:
            i += 1
        if vb == v:
            j += 1
        s += _var_term(counts, a, b, starts[v], widths[v], m, table)
    return s


@njit(cache=True)
def _singleton_distance(a, b, counts, nz, nnz, starts, widths, table):
    # two single cases: a variable contributes exactly -f(2) when their values
    # differ and exactly 0 otherwise, so only the mismatches need counting
    na = nnz[a]
    nb = nnz[b]
    i = 0
    j = 0
    diff = 0
    big = 1 << 62
    while i < na or j < nb:
        va = nz[a, i] if i < na else big
        vb = nz[b, j] if j < nb else big
        if va == vb:
            s0 = starts[va]
            for v in range(s0, s0 + widths[va]):
                if counts[a, v] != counts[b, v]:
                    diff += 1
                    break
            i += 1
            j += 1
        elif va < vb:
            diff += 1
            i += 1
        else:
            diff += 1
            j += 1
    s = 0.0
    t = (0.0 + 0.0) - table[2]
    for _ in range(diff):
        s += t
    return 0.0 - s


@njit(cache=True)
def _distance(a, b, counts, nz, nnz, mass, loglik, psum, starts, widths, table):
    # a singleton against a larger cluster y: y's own terms at mass m_y + 1 are
    # cached in psum[y], so only the singleton's variables need visiting
    if mass[a] == 1 and mass[b] == 1:
        return _singleton_distance(a, b, counts, nz, nnz, starts, widths, table)
    if mass[a] == 1 and mass[b] != 1:
        y = b
        x = a
    elif mass[b] == 1 and mass[a] != 1:
        y = a
        x = b
    else:
        merged = _pair_loglik(counts, nz, nnz, a, b, mass[a] + mass[b], starts, widths, table)
        return (loglik[a] + loglik[b]) - merged
    m = mass[y] + 1
    s = psum[y]
    for t in range(nnz[x]):
        v = nz[x, t]
        s += _var_term(counts, y, x, starts[v], widths[v], m, table) - _var_term(
            counts, y, -1, starts[v], widths[v], m, table
        )
    return (loglik[y] + loglik[x]) - s


@njit(cache=True)
def _merge_into(c, a, b, counts, nz, nnz, mass, loglik, psum, starts, widths, table):
    for v in range(counts.shape[1]):
        counts[c, v] = counts[a, v] + counts[b, v]
    mass[c] = mass[a] + mass[b]
    i = 0
    j = 0
    k = 0
    big = 1 << 62
    while i < nnz[a] or j < nnz[b]:
        va = nz[a, i] if i < nnz[a] else big
        vb = nz[b, j] if j < nnz[b] else big
        v = va if va < vb else vb
        if va == v:
            i += 1
        if vb == v:
            j += 1
        nz[c, k] = v
        k += 1
    nnz[c] = k
    loglik[c] = _pair_loglik(counts, nz, nnz, a, b, mass[c], starts, widths, table)
    psum[c] = _pair_loglik(counts, nz, nnz, c, -1, mass[c] + 1, starts, widths, table)


@njit(cache=True)
def _rescan(x, counts, nz, nnz, mass, loglik, psum, active, n_slots, starts, widths, table):
    best = -1
    bestd = np.inf
    for y in range(n_slots):
        if y == x or not active[y]:
            continue
        d = _distance(x, y, counts, nz, nnz, mass, loglik, psum, starts, widths, table)
        if d < bestd:
            bestd = d
            best = y
    return best, bestd


@njit(cache=True)
def _agglomerate(counts, nz, nnz, mass, loglik, n, target_k, starts, widths, table):
    n_slots = 2 * n - 1
    psum = np.zeros(n_slots)
    for j in range(n):
        psum[j] = _pair_loglik(counts, nz, nnz, j, -1, mass[j] + 1, starts, widths, table)
    active = np.zeros(n_slots, dtype=np.bool_)
    active[:n] = True
    # stale nodes lost their cached neighbour; nnd then holds a lower bound on
    # their distance to every active node
    stale = np.zeros(n_slots, dtype=np.bool_)
    nn = np.full(n_slots, -1, dtype=np.int64)
    nnd = np.full(n_slots, np.inf)
    # all-pairs scan, each pair computed once; scanning b upward keeps the
    # smallest index on ties
    for a in range(n):
        for b in range(a + 1, n):
            d = _distance(a, b, counts, nz, nnz, mass, loglik, psum, starts, widths, table)
            if d < nnd[a]:
                nnd[a] = d
                nn[a] = b
            if d < nnd[b]:
                nnd[b] = d
                nn[b] = a
    steps = n - target_k
    left = np.empty(steps, dtype=np.int64)
    right = np.empty(steps, dtype=np.int64)
    dist = np.empty(steps)
    size = np.empty(steps, dtype=np.int64)
    rescans = 0
    for step in range(steps):
        c = n + step
        while True:
            bx = -1
            bd = np.inf
            bl = -1
            br = -1
            for x in range(c):
                if not active[x]:
                    continue
                d = nnd[x]
                if stale[x]:
                    # a stale bound wins ties so it gets resolved first
                    if bx < 0 or d <= bd:
                        bx = x
                        bd = d
                        bl = -1
                    continue
                y = nn[x]
                lo = x if x < y else y
                hi = y if x < y else x
                if bx < 0 or d < bd or (d == bd and bl >= 0 and (lo < bl or (lo == bl and hi < br))):
                    bx = x
                    bd = d
                    bl = lo
                    br = hi
            if not stale[bx]:
                break
            y, d = _rescan(bx, counts, nz, nnz, mass, loglik, psum, active, c, starts, widths, table)
            nn[bx] = y
            nnd[bx] = d
            stale[bx] = False
            rescans += 1
        _merge_into(c, bl, br, counts, nz, nnz, mass, loglik, psum, starts, widths, table)
        active[bl] = False
        active[br] = False
        active[c] = True
        left[step] = bl
        right[step] = br
        dist[step] = bd
        size[step] = mass[c]
        cbest = -1
        cbestd = np.inf
        for x in range(c):
            if not active[x]:
                continue
            d = _distance(x, c, counts, nz, nnz, mass, loglik, psum, starts, widths, table)
            if d < cbestd:
                cbestd = d
                cbest = x
            if stale[x] or nn[x] == bl or nn[x] == br:
                # nnd[x] bounds every other active node, so beating it strictly
                # makes c the unique nearest neighbour
                if d < nnd[x]:
                    nn[x] = c
                    nnd[x] = d
                    stale[x] = False
                else:
                    stale[x] = True
            elif d < nnd[x] or (d == nnd[x] and c < nn[x]):
                nnd[x] = d
                nn[x] = c
        nn[c] = cbest
        nnd[c] = cbestd
    return left, right, dist, size, active, rescans


@dataclass
class ClusterNode:
    """One cluster: flattened integer value counts plus cached quantities."""

    schema: VariableSchema
    counts: np.ndarray
    mass: int
    loglik: float
    nn_index: int = -1
    nn_distance: float = math.inf
    active: bool = True

    @property
    def stats(self) -> SuffStats:
        off = self.schema.offsets
        counts = [
            self.counts[off[i] : off[i + 1]][None, :].astype(np.float64)
            for i in range(self.schema.n)
        ]
        return SuffStats(self.schema, np.array([float(self.mass)]), counts)


@dataclass(frozen=True)
class MergeRecord:
    left: int
    right: int
    distance: float
    resulting_size: int
    step: int


@dataclass
class HacResult:
    stats: SuffStats
    cluster_ids: np.ndarray
    merges: list[MergeRecord]
    assignments: np.ndarray
    seconds: float
    rescans: int = 0

    @property
    def K(self) -> int:
        return self.stats.K


def flat_counts(data: Dataset) -> np.ndarray:
    """(N, sum r_i) one-hot count rows for the cases."""
    off = data.schema.offsets
    out = np.zeros((data.N, data.schema.total_values), dtype=np.int64)
    rows = np.arange(data.N)
    for i in range(data.schema.n):
        out[rows, off[i] + data.cases[:, i]] = 1
    return out


def _layout(schema: VariableSchema) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Kernel layout: columns for values 1..r_i-1 of each variable.

    Returns (start column per variable, width per variable, column index of
    every non-reference value in the full one-hot layout).
    """
    widths = np.asarray(schema.cardinalities, dtype=np.int64) - 1
    starts = np.concatenate([[0], np.cumsum(widths)[:-1]]).astype(np.int64)
    off = schema.offsets
    cols = np.concatenate([np.arange(off[i] + 1, off[i + 1]) for i in range(schema.n)])
    return starts, widths, cols


def _pack(schema: VariableSchema, full_counts: np.ndarray, slots: int):
    """Kernel arrays for the given one-hot count rows, with room for ``slots`` rows."""
    starts, widths, cols = _layout(schema)
    rows = full_counts.shape[0]
    counts = np.zeros((slots, cols.shape[0]), dtype=np.int64)
    counts[:rows] = full_counts[:, cols]
    # a variable is listed when any of its non-reference values is present
    present = np.add.reduceat(counts[:rows], starts, axis=1) > 0 if rows else np.zeros((0, schema.n), bool)
    nz = np.zeros((slots, schema.n), dtype=np.int64)
    nnz = np.zeros(slots, dtype=np.int64)
    for j in range(rows):
        idx = np.flatnonzero(present[j])
        nz[j, : idx.shape[0]] = idx
        nnz[j] = idx.shape[0]
    return counts, nz, nnz, starts, widths


def _node(schema: VariableSchema, counts: np.ndarray, mass: int) -> ClusterNode:
    counts = np.ascontiguousarray(counts, dtype=np.int64)
    kc, nz, nnz, starts, widths = _pack(schema, counts[None, :], 1)
    table = xlogx_table(int(mass) + 1)
    ll = _pair_loglik(kc, nz, nnz, 0, -1, int(mass), starts, widths, table)
    return ClusterNode(schema, counts, int(mass), float(ll))


def singleton_stats(data: Dataset) -> list[ClusterNode]:
    """One cluster per case, each with loglik exactly 0."""
    rows = flat_counts(data)
    return [_node(data.schema, rows[j], 1) for j in range(data.N)]


def cluster_loglik(stats: SuffStats) -> float:
    """sum_i sum_v n ln(n/m) for a single-cluster SuffStats (0 ln 0 = 0)."""
    m = float(np.ravel(stats.mass)[0])
    if m <= 0:
        raise ValueError("cluster log-likelihood needs positive mass")
    total = 0.0
    for c in stats.counts:
        row = np.asarray(c, dtype=np.float64).reshape(-1)
        nz = row[row > 0]
        total += float(np.sum(nz * np.log(nz / m)))
    return total


def cluster_distance(a: ClusterNode, b: ClusterNode) -> float:
    """Drop in classification log-likelihood caused by merging a and b.

    Uses the same compiled arithmetic as ``run_hac``, so values agree bit for bit.
    """
    counts, nz, nnz, starts, widths = _pack(a.schema, np.stack([a.counts, b.counts]), 2)
    mass = np.array([a.mass, b.mass], dtype=np.int64)
    loglik = np.array([a.loglik, b.loglik])
    table = xlogx_table(a.mass + b.mass + 1)
    psum = np.array([_pair_loglik(counts, nz, nnz, j, -1, mass[j] + 1, starts, widths, table) for j in (0, 1)])
    return float(_distance(0, 1, counts, nz, nnz, mass, loglik, psum, starts, widths, table))


def merge(a: ClusterNode, b: ClusterNode) -> ClusterNode:
    """Sum the two clusters' counts; both inputs are deactivated."""
    out = _node(a.schema, a.counts + b.counts, a.mass + b.mass)
    a.active = False
    b.active = False
    return out


def partition_from_merges(n: int, merges, k: int) -> tuple[np.ndarray, np.ndarray]:
    """Replay the first n - k merges; return (assignment per case, surviving ids).

    Surviving clusters are numbered 0..k-1 in increasing id order.
    """
    if not 1 <= k <= n or n - k > len(merges):
        raise ValueError(f"cannot cut {n} cases with {len(merges)} merges into {k} clusters")
    parent = np.arange(2 * n - 1)
    for rec in merges[: n - k]:
        c = n + rec.step
        parent[rec.left] = c
        parent[rec.right] = c
    root = parent[:n].copy()
    # ids only ever point to larger ids, so a bounded number of hops resolves all
    while True:
        nxt = parent[root]
        if np.array_equal(nxt, root):
            break
        root = nxt
    ids = np.unique(root)
    return np.searchsorted(ids, root), ids


def run_hac(data: Dataset, target_k: int) -> HacResult:
    """Agglomerate the dataset's cases down to ``target_k`` clusters."""
    n = data.N
    if not 1 <= target_k <= n:
        raise ValueError(f"target_k must be in [1, {n}], got {target_k}")
    t0 = time.perf_counter()
    table = xlogx_table(n)
    counts, nz, nnz, starts, widths = _pack(data.schema, flat_counts(data), 2 * n - 1)
    mass = np.zeros(2 * n - 1, dtype=np.int64)
    mass[:n] = 1
    loglik = np.zeros(2 * n - 1)
    left, right, dist, size, active, rescans = _agglomerate(
        counts, nz, nnz, mass, loglik, n, target_k, starts, widths, table
    )
    merges = [
        MergeRecord(int(l), int(r), float(d), int(s), step)
        for step, (l, r, d, s) in enumerate(zip(left, right, dist, size))
    ]
    ids = np.flatnonzero(active)
    assign, _ = partition_from_merges(n, merges, target_k)
    stats = SuffStats.from_assignments(data, assign, target_k)
    return HacResult(stats, ids, merges, assign, time.perf_counter() - t0, int(rescans))


def hac_to_stats(result: HacResult) -> SuffStats:
    """The surviving clusters as a K-cluster SuffStats."""
    return result.stats
