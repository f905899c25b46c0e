"""Layered triangulations of the cylinder and the tree bijection.

Vertex ``(t, i)`` is the i-th vertex, in cyclic order, of layer ``t``; its
global id is ``offsets[t] + i``, which coincides with the breadth-first id of
the corresponding tree vertex.

Arc convention: the children of vertex ``(t, i)`` sit at consecutive
positions ``start_i .. start_i + c_i - 1`` of layer ``t + 1`` (``start_i`` is
the number of children of the vertices left of it) and its leftmost up-edge
goes to position ``(start_i - 1) mod k_{t+1}``.  Vertex 0's leftmost edge
therefore wraps round to the last position of the next layer.
"""

from __future__ import annotations

from collections import deque
from dataclasses import dataclass, field
from functools import cached_property
from typing import Iterable, NamedTuple, TextIO

import numba
import numpy as np

from .branching import LayeredTree


class VertexRef(NamedTuple):
    layer: int
    index: int


def _canonical_vertical(layer_sizes: np.ndarray, arc_lengths: np.ndarray) -> np.ndarray:
    """Vertical edges ``(t, i, j, mult)`` from per-vertex up-arc lengths.

    ``arc_lengths`` covers the vertices of layers 0..N-1 (global order).  The
    arc of the first vertex of a layer starts at the last position of the
    next layer; each later arc starts where the previous one ended.
    """
    k = np.asarray(layer_sizes, dtype=np.int64)
    n_low = int(k[:-1].sum())
    s = np.asarray(arc_lengths, dtype=np.int64)[:n_low]
    if n_low == 0:
        return np.zeros((0, 4), dtype=np.int64)
    t_of = np.repeat(np.arange(len(k) - 1), k[:-1])
    offsets = np.concatenate(([0], np.cumsum(k)))
    i_of = np.arange(n_low) - offsets[t_of]
    # left_i = K - 1 + sum_{u < i in layer} (s_u - 1)
    excl = np.cumsum(s - 1) - (s - 1)
    excl = excl - excl[offsets[t_of]]
    K = k[t_of + 1]
    left = K - 1 + excl
    rep = np.repeat(np.arange(n_low), s)
    step = np.arange(rep.size) - np.repeat(np.cumsum(s) - s, s)
    j = (left[rep] + step) % K[rep]
    key = np.stack([t_of[rep], i_of[rep], j])
    order = np.lexsort(key[::-1])
    key = key[:, order]
    change = np.ones(key.shape[1], dtype=bool)
    change[1:] = np.any(key[:, 1:] != key[:, :-1], axis=0)
    starts = np.flatnonzero(change)
    mult = np.diff(np.append(starts, key.shape[1]))
    return np.column_stack([key[:, starts].T, mult]).astype(np.int64)


@dataclass(frozen=True, eq=False)
class Triangulation:
    """A rooted layered triangulation truncated at layer N = len(layer_sizes) - 1.

    ``vertical`` holds one row ``(t, i, j, multiplicity)`` per distinct
    vertical edge between ``(t, i)`` and ``(t + 1, j)``, sorted
    lexicographically.  Horizontal edges are implicit: layer t carries the k_t
    cyclic edges (a single self-loop when k_t = 1).
    """

    layer_sizes: np.ndarray
    vertical: np.ndarray
    meta: dict = field(default_factory=dict)

    def __post_init__(self):
        k = np.ascontiguousarray(self.layer_sizes, dtype=np.int64)
        v = np.asarray(self.vertical, dtype=np.int64).reshape(-1, 4)
        v = np.ascontiguousarray(v[np.lexsort(v[:, 2::-1].T)])
        k.setflags(write=False)
        v.setflags(write=False)
        object.__setattr__(self, "layer_sizes", k)
        object.__setattr__(self, "vertical", v)

    @property
    def height(self) -> int:
        return len(self.layer_sizes) - 1

    @cached_property
    def offsets(self) -> np.ndarray:
        return np.concatenate(([0], np.cumsum(self.layer_sizes)))

    @property
    def n_vertices(self) -> int:
        return int(self.offsets[-1])

    @cached_property
    def layers(self) -> np.ndarray:
        """Layer index of every vertex, by global id."""
        return np.repeat(np.arange(self.height + 1), self.layer_sizes)

    def gid(self, v) -> int:
        """Global id of a (layer, index) pair; plain integers are checked and passed through."""
        if isinstance(v, (int, np.integer)):
            if not 0 <= v < self.n_vertices:
                raise IndexError(f"vertex {v} out of bounds")
            return int(v)
        t, i = v
        if not (0 <= t <= self.height and 0 <= i < self.layer_sizes[t]):
            raise IndexError(f"vertex {tuple(v)} out of bounds")
        return int(self.offsets[t] + i)

    def ref(self, g: int) -> VertexRef:
        t = int(self.layers[g])
        return VertexRef(t, int(g - self.offsets[t]))

    def ids(self, vertices) -> np.ndarray:
        """Global ids from VertexRefs / (t, i) pairs, or from plain integer ids."""
        arr = np.asarray(list(vertices) if not isinstance(vertices, np.ndarray) else vertices)
        if arr.size == 0:
            return np.zeros(0, dtype=np.int64)
        if arr.ndim == 2 and arr.shape[1] == 2:
            t, i = arr[:, 0].astype(np.int64), arr[:, 1].astype(np.int64)
            if np.any((t < 0) | (t > self.height)) or np.any((i < 0) | (i >= self.layer_sizes[np.clip(t, 0, self.height)])):
                raise IndexError("vertex ref out of bounds")
            return self.offsets[t] + i
        out = arr.astype(np.int64).ravel()
        if out.min() < 0 or out.max() >= self.n_vertices:
            raise IndexError("vertex id out of bounds")
        return out

    @property
    def root_face(self) -> tuple[VertexRef, VertexRef, VertexRef]:
        """(x, y, z): the layer-0 loop (x = y) and its apex at position 0 of layer 1."""
        return VertexRef(0, 0), VertexRef(0, 0), VertexRef(1, 0)

    # -- edges -----------------------------------------------------------
    def strip_edge_counts(self) -> np.ndarray:
        """E_{t,t+1} with multiplicity, for t = 0..N-1."""
        out = np.zeros(self.height, dtype=np.int64)
        np.add.at(out, self.vertical[:, 0], self.vertical[:, 3])
        return out

    @cached_property
    def edges(self) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
        """All edges as global-id arrays ``(u, v, multiplicity)``; loops have u == v."""
        off = self.offsets
        vt = self.vertical
        vu = off[vt[:, 0]] + vt[:, 1]
        vv = off[vt[:, 0] + 1] + vt[:, 2]
        hu, hv = [], []
        for t, kt in enumerate(self.layer_sizes.tolist()):
            a = np.arange(kt)
            hu.append(off[t] + a)
            hv.append(off[t] + (a + 1) % kt)
        hu = np.concatenate(hu)
        hv = np.concatenate(hv)
        u = np.concatenate([hu, vu])
        v = np.concatenate([hv, vv])
        m = np.concatenate([np.ones(hu.size, dtype=np.int64), vt[:, 3]])
        return u, v, m

    @cached_property
    def adjacency(self) -> tuple[np.ndarray, np.ndarray]:
        """CSR ``(indptr, indices)``; neighbours repeated by multiplicity, loops dropped."""
        u, v, m = self.edges
        keep = u != v
        u, v, m = u[keep], v[keep], m[keep]
        src = np.concatenate([np.repeat(u, m), np.repeat(v, m)])
        dst = np.concatenate([np.repeat(v, m), np.repeat(u, m)])
        order = np.lexsort((dst, src))
        indptr = np.zeros(self.n_vertices + 1, dtype=np.int64)
        np.add.at(indptr, src + 1, 1)
        return np.cumsum(indptr), dst[order].astype(np.int64)

    @cached_property
    def loop_counts(self) -> np.ndarray:
        u, v, m = self.edges
        out = np.zeros(self.n_vertices, dtype=np.int64)
        np.add.at(out, u[u == v], m[u == v])
        return out

    def up_degrees(self) -> np.ndarray:
        out = np.zeros(self.n_vertices, dtype=np.int64)
        vt = self.vertical
        np.add.at(out, self.offsets[vt[:, 0]] + vt[:, 1], vt[:, 3])
        return out

    def truncate(self, r: int) -> "Triangulation":
        """The triangulation of the first r layers (T_r as a graph)."""
        if not 0 <= r <= self.height:
            raise ValueError(f"cannot truncate height {self.height} at {r}")
        vt = self.vertical[self.vertical[:, 0] < r]
        return Triangulation(self.layer_sizes[: r + 1], vt, dict(self.meta))


# ---------------------------------------------------------------------------
# bijection
# ---------------------------------------------------------------------------

def tree_to_lt(tree: LayeredTree) -> Triangulation:
    k = np.diff(tree.offsets)
    if np.any(k == 0):
        t = int(np.flatnonzero(k == 0)[0])
        raise ValueError(f"layer {t} of the tree is empty")
    vertical = _canonical_vertical(k, tree.child_counts + 1)
    meta = {key: tree.meta[key] for key in ("law", "seed") if key in tree.meta}
    return Triangulation(k, vertical, meta)


def lt_to_tree(T: Triangulation) -> LayeredTree:
    """Drop every vertex's leftmost up-edge and all horizontal edges."""
    report = validate(T)
    if not report.ok:
        raise ValueError(f"invalid triangulation: {report.violation}")
    k, off = T.layer_sizes, T.offsets
    parent = np.full(T.n_vertices, -1, dtype=np.int64)
    s = T.up_degrees()
    for t in range(T.height):
        K = int(k[t + 1])
        lo = slice(int(off[t]), int(off[t + 1]))
        st = s[lo]
        left = (K - 1 + np.cumsum(st - 1) - (st - 1)) % K
        # positions left+1 .. left+s-1 are the children (leftmost edge removed)
        owner = np.repeat(np.arange(off[t], off[t + 1]), st - 1)
        step = 1 + np.arange(owner.size) - np.repeat(np.cumsum(st - 1) - (st - 1), st - 1)
        pos = (np.repeat(left, st - 1) + step) % K
        parent[off[t + 1] + pos] = owner
    counts = np.bincount(parent[1:], minlength=T.n_vertices).astype(np.int64)
    tree = LayeredTree(counts, T.height, meta=dict(T.meta))
    if not np.array_equal(tree.parents, parent):
        raise ValueError("triangulation does not follow the canonical arc order")
    return tree


# ---------------------------------------------------------------------------
# validation
# ---------------------------------------------------------------------------

@dataclass
class ValidationReport:
    ok: bool
    violation: str | None = None
    strip_triangles: list[int] = field(default_factory=list)
    strip_edges: list[int] = field(default_factory=list)

    def __str__(self):
        head = "ok" if self.ok else f"FAIL: {self.violation}"
        return f"{head} ({len(self.strip_triangles)} strips checked)"


def validate(T: Triangulation) -> ValidationReport:
    """Check layer sizes, arc contiguity, edge counts and triangle counts per strip."""
    rep = ValidationReport(ok=True)

    def fail(msg):
        rep.ok = False
        rep.violation = msg
        return rep

    k = T.layer_sizes
    if k.size == 0 or k[0] != 1:
        return fail("layer sizes: k_0 must be 1")
    if np.any(k < 1):
        return fail(f"layer sizes: layer {int(np.flatnonzero(k < 1)[0])} is empty")
    vt = T.vertical
    if vt.size:
        t, i, j, m = vt.T
        bad = (t < 0) | (t >= T.height) | (i < 0) | (j < 0) | (m < 1)
        bad |= ~bad & ((i >= k[np.clip(t, 0, T.height)]) | (j >= k[np.clip(t + 1, 0, T.height)]))
        if np.any(bad):
            row = vt[int(np.flatnonzero(bad)[0])].tolist()
            return fail(f"vertex ref out of bounds: vertical edge {row}")
    s = T.up_degrees()
    off = T.offsets
    bounds = np.searchsorted(vt[:, 0], np.arange(T.height + 1))
    for t in range(T.height):
        kt, K = int(k[t]), int(k[t + 1])
        st = s[off[t]:off[t + 1]]
        if np.any(st < 1):
            i = int(np.flatnonzero(st < 1)[0])
            return fail(f"arc contiguity: vertex ({t},{i}) has no upward edge")
        got = vt[bounds[t]:bounds[t + 1]]
        want = _canonical_vertical(np.array([kt, K]), st)
        want[:, 0] = t
        if got.shape != want.shape or not np.array_equal(got, want):
            i = _first_arc_mismatch(got, want)
            return fail(f"arc contiguity: up-arc of vertex ({t},{i}) is not the expected cyclic interval")
        if int((st - 1).sum()) != K:
            return fail(f"arc contiguity: arcs of strip {t} do not close up around layer {t + 1}")
        e = int(got[:, 3].sum())
        rep.strip_edges.append(e)
        if e != kt + K:
            return fail(f"edge count: strip {t} has {e} vertical edges, expected {kt + K}")
        left = (K - 1 + np.cumsum(st - 1) - (st - 1)) % K
        right = (left + st - 1) % K
        up_tri = int((st - 1).sum())
        down_tri = int(np.count_nonzero(right == np.roll(left, -1)))
        rep.strip_triangles.append(up_tri + down_tri)
        if up_tri + down_tri != kt + K:
            return fail(f"triangle count: strip {t} has {up_tri + down_tri} faces, expected {kt + K}")
    return rep


def _first_arc_mismatch(got: np.ndarray, want: np.ndarray) -> int:
    vertices = sorted(set(got[:, 1].tolist()) | set(want[:, 1].tolist()))
    for i in vertices:
        if not np.array_equal(got[got[:, 1] == i], want[want[:, 1] == i]):
            return i
    return vertices[0] if vertices else 0


# ---------------------------------------------------------------------------
# distances and slabs
# ---------------------------------------------------------------------------

@numba.njit(cache=True)
def bfs_distances(indptr, indices, source, limit):
    """Distances from ``source`` to every vertex with id < ``limit`` (-1 if unreachable)."""
    n = indptr.size - 1
    dist = np.full(n, -1, dtype=np.int64)
    queue = np.empty(n, dtype=np.int64)
    dist[source] = 0
    queue[0] = source
    head, tail = 0, 1
    while head < tail:
        u = queue[head]
        head += 1
        du = dist[u] + 1
        for p in range(indptr[u], indptr[u + 1]):
            w = indices[p]
            if w < limit and dist[w] < 0:
                dist[w] = du
                queue[tail] = w
                tail += 1
    return dist


def graph_distance(T: Triangulation, v, w) -> int:
    a, b = T.gid(v), T.gid(w)
    if a == b:
        return 0
    indptr, indices = T.adjacency
    seen = {a}
    frontier = deque([(a, 0)])
    while frontier:
        u, d = frontier.popleft()
        for x in indices[indptr[u]:indptr[u + 1]].tolist():
            if x == b:
                return d + 1
            if x not in seen:
                seen.add(x)
                frontier.append((x, d + 1))
    raise ValueError("vertices are not connected")


def slab(T: Triangulation, r: int) -> list[VertexRef]:
    """T_r: every vertex in layers 0..r."""
    if not 0 <= r <= T.height:
        raise ValueError(f"slab radius {r} outside 0..{T.height}")
    return [VertexRef(t, i) for t in range(r + 1) for i in range(int(T.layer_sizes[t]))]


def slab_ids(T: Triangulation, r: int) -> np.ndarray:
    if not 0 <= r <= T.height:
        raise ValueError(f"slab radius {r} outside 0..{T.height}")
    return np.arange(int(T.offsets[r + 1]), dtype=np.int64)


# ---------------------------------------------------------------------------
# persistence
# ---------------------------------------------------------------------------

LT_MAGIC = "# cdlt-triangulation v1"


def write_triangulation(T: Triangulation, fh: TextIO) -> None:
    meta = " ".join(f"{key}={T.meta[key]}" for key in sorted(T.meta))
    fh.write(LT_MAGIC + "\n")
    fh.write(f"# height={T.height} {meta}".rstrip() + "\n")
    fh.write("# layer_sizes " + " ".join(map(str, T.layer_sizes.tolist())) + "\n")
    fh.write("# columns: t i j multiplicity\n")
    fh.write("".join(f"{a} {b} {c} {d}\n" for a, b, c, d in T.vertical.tolist()))


def read_triangulation(fh: Iterable[str], check: bool = True) -> Triangulation:
    lines = iter(fh)
    if next(lines).rstrip("\n") != LT_MAGIC:
        raise ValueError("not a cdlt triangulation file")
    meta = {}
    for item in next(lines).lstrip("#").split():
        key, _, val = item.partition("=")
        meta[key] = int(val) if val.lstrip("-").isdigit() else val
    sizes = next(lines).split()
    if sizes[:2] != ["#", "layer_sizes"]:
        raise ValueError("missing layer_sizes header")
    k = np.array([int(x) for x in sizes[2:]], dtype=np.int64)
    next(lines)
    body = [ln for ln in lines if ln.strip()]
    vert = np.array([[int(x) for x in ln.split()] for ln in body], dtype=np.int64).reshape(-1, 4)
    height = meta.pop("height")
    if height != len(k) - 1:
        raise ValueError("height header disagrees with layer sizes")
    T = Triangulation(k, vert, meta)
    if check:
        rep = validate(T)
        if not rep.ok:
            raise ValueError(f"invalid triangulation: {rep.violation}")
    return T
