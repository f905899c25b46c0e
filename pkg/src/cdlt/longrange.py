"""Long-range pair interactions dominated by a distance majorant J.

Distances inside a truncation at depth D equal the distances in any deeper
truncation: mapping every vertex of layer t+1 to its tree parent is a
graph map that never increases distance and fixes layers <= t, so no
shortest path between two vertices of layers <= D needs layers above D.
:func:`check_conditions` uses this to evaluate several depths from one
breadth-first search per probe vertex.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Callable, Sequence

import numba
import numpy as np

from .gibbs import PairPotential, SpinConfiguration
from .triangulation import Triangulation, bfs_distances


@dataclass(frozen=True)
class Majorant:
    func: Callable[[np.ndarray], np.ndarray]
    descriptor: str

    def __call__(self, r) -> np.ndarray:
        return self.func(np.asarray(r))


def j_default(r):
    """min(1, (1/(r ln r))^3) for r >= 2, and 1 for r in {0, 1}."""
    r = np.asarray(r, dtype=np.float64)
    out = np.ones(r.shape)
    big = r >= 2
    rb = r[big]
    out[big] = np.minimum(1.0, (1.0 / (rb * np.log(rb))) ** 3)
    return out if out.ndim else float(out)


DEFAULT_MAJORANT = Majorant(j_default, "inv_rlogr_cubed")
ZERO_MAJORANT = Majorant(lambda r: np.zeros(np.shape(r)), "zero")


# ---------------------------------------------------------------------------
# energies
# ---------------------------------------------------------------------------

@dataclass(frozen=True, eq=False)
class ScaledPotential(PairPotential):
    base: PairPotential
    weight: float

    @property
    def dim(self):
        return self.base.dim

    @property
    def descriptor(self):
        return {"scaled": self.weight, "base": self.base.descriptor}

    def __call__(self, x, y):
        return self.weight * self.base(x, y)

    def grad_x(self, x, y):
        return self.weight * self.base.grad_x(x, y)

    def grad_y(self, x, y):
        return self.weight * self.base.grad_y(x, y)


class NearestNeighborFamily:
    """U_{v,v'} = multiplicity(v, v') * U for adjacent pairs, loops(v) * U on the diagonal."""

    def __init__(self, T: Triangulation, U: PairPotential):
        self.T, self.U = T, U
        indptr, indices = T.adjacency
        self._indptr, self._indices = indptr, indices

    def __call__(self, v: int, w: int, dist: int):
        if dist == 0:
            loops = int(self.T.loop_counts[v])
            return ScaledPotential(self.U, loops) if loops else None
        if dist == 1:
            nb = self._indices[self._indptr[v]:self._indptr[v + 1]]
            return ScaledPotential(self.U, int(np.count_nonzero(nb == w)))
        return None


class DistanceFamily:
    """U_{v,v'} = weight(d(v, v')) * U for v != v'; nothing on the diagonal."""

    def __init__(self, U: PairPotential, weight: Callable[[int], float]):
        self.U, self.weight = U, weight

    def __call__(self, v: int, w: int, dist: int):
        if dist == 0:
            return None
        wt = float(self.weight(dist))
        return ScaledPotential(self.U, wt) if wt else None


def longrange_energy(T: Triangulation, A, config: SpinConfiguration, family,
                     cutoff: int) -> float:
    """sum of U_{v,v'}(x_v, x_v') over unordered pairs with v in A and d(v, v') <= cutoff.

    ``family(v, w, d)`` returns the pair potential for (v, w) or None.
    """
    ids = T.ids(A)
    inA = np.zeros(T.n_vertices, dtype=bool)
    inA[ids] = True
    indptr, indices = T.adjacency
    x = config.angles
    total = []
    for v in ids.tolist():
        dist = bfs_distances(indptr, indices, v, T.n_vertices)
        near = np.flatnonzero((dist >= 0) & (dist <= cutoff))
        for w in near.tolist():
            if inA[w] and w < v:
                continue
            U = family(v, w, int(dist[w]))
            if U is None:
                continue
            if max(v, w) >= config.n:
                raise KeyError(f"configuration is missing the spin of vertex {max(v, w)}")
            total.append(float(U(x[v], x[w])))
    return math.fsum(total)


# ---------------------------------------------------------------------------
# summability conditions
# ---------------------------------------------------------------------------

@numba.njit(cache=True)
def _distance_histograms(indptr, indices, bucket, sources, n_depths, max_dist):
    # Bit-parallel BFS: up to 64 sources share one sweep, bit b of a mask
    # standing for sources[base + b].  bucket[u] = index of the shallowest
    # depth containing u; bucket counts are cumulated into depths at the end.
    n = indptr.size - 1
    hist = np.zeros((sources.size, n_depths, max_dist + 1), dtype=np.int64)
    seen = np.zeros(n, dtype=np.uint64)
    cur = np.zeros(n, dtype=np.uint64)
    nxt = np.zeros(n, dtype=np.uint64)
    front = np.empty(n, dtype=np.int32)
    grown = np.empty(n, dtype=np.int32)
    one = np.uint64(1)
    for base in range(0, sources.size, 64):
        nb = min(64, sources.size - base)
        seen[:] = 0
        n_front = 0
        for b in range(nb):
            s = sources[base + b]
            if cur[s] == 0:
                front[n_front] = s
                n_front += 1
            cur[s] |= one << np.uint64(b)
            seen[s] |= one << np.uint64(b)
        d = 0
        while n_front > 0:
            n_grown = 0
            for i in range(n_front):
                u = front[i]
                m = cur[u]
                for p in range(indptr[u], indptr[u + 1]):
                    w = indices[p]
                    new = m & ~seen[w]
                    if new != 0:
                        if nxt[w] == 0:
                            grown[n_grown] = w
                            n_grown += 1
                        nxt[w] |= new
                cur[u] = 0
            d += 1
            for i in range(n_grown):
                w = grown[i]
                m = nxt[w]
                seen[w] |= m
                cur[w] = m
                nxt[w] = 0
                k = bucket[w]
                for b in range(nb):
                    if (m >> np.uint64(b)) & one:
                        hist[base + b, k, d] += 1
                front[i] = w
            n_front = n_grown
    for a in range(sources.size):
        for j in range(1, n_depths):
            hist[a, j] += hist[a, j - 1]
    return hist


@dataclass
class ConditionReport:
    depths: list[int]
    probe_radius: int
    majorant: str
    S1: np.ndarray              # per depth
    L_grid: list[int]
    S2: np.ndarray              # (depth, L)
    histograms: np.ndarray = field(repr=False, default=None)  # (probe, depth, distance)

    def S1_at(self, depth: int) -> float:
        return float(self.S1[self.depths.index(depth)])

    def S2_at(self, depth: int, L: int) -> float:
        return float(self.S2[self.depths.index(depth), self.L_grid.index(L)])

    @property
    def passed(self) -> bool:
        """S1 finite, S2 non-increasing along the L grid and ending below where it starts."""
        ok = bool(np.all(np.isfinite(self.S1)))
        for row in self.S2:
            ok &= bool(np.all(np.diff(row) <= 0))
            ok &= bool(row[-1] < row[0]) or bool(row[0] == 0)
        return ok

    def rows(self):
        for a, D in enumerate(self.depths):
            for b, L in enumerate(self.L_grid):
                yield D, self.probe_radius, float(self.S1[a]), L, float(self.S2[a, b])


def check_conditions(T: Triangulation, J: Majorant = DEFAULT_MAJORANT, probe=None,
                     L_grid: Sequence[int] = (1, 4, 16, 64, 256),
                     depths: Sequence[int] | None = None, probe_radius: int | None = None
                     ) -> ConditionReport:
    """S1 = sup_v sum_{v'} J(d) d^2 and S2(L) = sup_v sum_{v'} J(d) 1(d^2 >= L).

    The sup runs over the probe set (default T_32, or T_{probe_radius}); the
    sums run over all v' != v in the truncation at each depth of ``depths``
    (default: the full height).
    """
    depths = [T.height] if depths is None else sorted(int(D) for D in depths)
    if depths[0] < 0 or depths[-1] > T.height:
        raise ValueError("depths must lie in 0..height")
    if probe is None:
        rho = min(32 if probe_radius is None else probe_radius, depths[0])
        probe = np.arange(int(T.offsets[rho + 1]))
    ids = T.ids(probe)
    if ids.size == 0:
        raise ValueError("empty probe set")
    rho = int(T.layers[ids].max())
    if rho > depths[0]:
        raise ValueError("probe set reaches outside the shallowest truncation")
    sub = T.truncate(depths[-1]) if depths[-1] < T.height else T
    indptr, indices = sub.adjacency
    max_dist = 2 * depths[-1] + 2
    bucket = np.searchsorted(np.asarray(depths), sub.layers).astype(np.int32)
    hist = _distance_histograms(indptr.astype(np.int64), indices.astype(np.int32), bucket,
                                ids.astype(np.int32), len(depths), max_dist)
    d = np.arange(max_dist + 1, dtype=np.float64)
    Jd = np.asarray(J(d), dtype=np.float64)
    w1 = Jd * d * d
    S1 = (hist * w1).sum(axis=2).max(axis=0)
    L_grid = [int(L) for L in L_grid]
    S2 = np.empty((len(depths), len(L_grid)))
    for b, L in enumerate(L_grid):
        w2 = Jd * (d * d >= L)
        S2[:, b] = (hist * w2).sum(axis=2).max(axis=0)
    return ConditionReport(depths, rho, J.descriptor, S1, L_grid, S2, hist)


def s1_tail_bound(layer_sizes, J: Majorant, depth: int, deeper: int, probe_radius: int) -> float:
    """Upper bound on S1(deeper) - S1(depth).

    A vertex of layer t > depth is at distance between t - rho and t + rho
    from every probe vertex (rho = probe radius), so it contributes at most
    max J(d) d^2 over that window.
    """
    k = np.asarray(layer_sizes, dtype=np.int64)
    if deeper >= k.size or depth >= deeper:
        raise ValueError("need depth < deeper <= height")
    rho = int(probe_radius)
    d = np.arange(0, deeper + rho + 1, dtype=np.float64)
    w = np.asarray(J(d)) * d * d
    total = []
    for t in range(depth + 1, deeper + 1):
        total.append(float(k[t]) * float(w[t - rho: t + rho + 1].max()))
    return math.fsum(total)
