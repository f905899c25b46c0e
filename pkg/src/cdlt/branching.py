"""Offspring laws, Galton-Watson trees and the single-spine (Kesten) tree.

Trees are stored in breadth-first planar order: vertex ids run layer by
layer and, inside a layer, left to right, so the children of any vertex
occupy a contiguous id range.  That order is also the cyclic vertex order of
the triangulation built from the tree, see :mod:`cdlt.triangulation`.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from fractions import Fraction
from functools import cached_property
from typing import Callable, Iterable, Sequence, TextIO

import numpy as np

from .rng import counter_uniforms, make_rng

CRITICAL_TOL = 1e-12
TAIL_MASS = 1e-15


def _tabulate(pmf: Callable[[int], float], chunk: int = 16, cap: int = 100_000) -> np.ndarray:
    """Extend the table chunk by chunk until the remaining tail mass is below TAIL_MASS."""
    terms: list[float] = []
    while len(terms) < cap:
        terms.extend(pmf(k) for k in range(len(terms), len(terms) + chunk))
        if 1.0 - math.fsum(terms) < TAIL_MASS:
            break
    else:
        raise ValueError("offspring table did not converge")
    probs = np.array(terms)
    last = int(np.flatnonzero(probs)[-1])
    probs = probs[: last + 1]
    return probs / math.fsum(probs)


@dataclass(frozen=True, eq=False)
class OffspringLaw:
    """An offspring distribution on {0, 1, 2, ...}.

    ``probs`` is the (possibly truncated and renormalized) table p_0..p_K.
    ``exact`` carries rational probabilities for finite laws, which makes
    the moment identities checkable without rounding.
    """

    name: str
    probs: np.ndarray
    exact: tuple[Fraction, ...] | None = None
    truncated: bool = False

    def __post_init__(self):
        p = np.asarray(self.probs, dtype=np.float64)
        if p.ndim != 1 or p.size == 0 or np.any(p < 0):
            raise ValueError("probabilities must be a non-empty non-negative vector")
        if abs(math.fsum(p) - 1.0) > CRITICAL_TOL:
            raise ValueError(f"probabilities sum to {math.fsum(p)!r}, not 1")
        p.setflags(write=False)
        object.__setattr__(self, "probs", p)

    # -- constructors -----------------------------------------------------
    @classmethod
    def finite(cls, probs: Sequence, name: str | None = None) -> "OffspringLaw":
        exact = None
        if all(isinstance(q, (int, Fraction)) for q in probs):
            exact = tuple(Fraction(q) for q in probs)
            if sum(exact) != 1:
                raise ValueError("exact probabilities must sum to 1")
        if name is None:
            name = "finite:" + ",".join(str(q) for q in probs)
        return cls(name, np.array([float(q) for q in probs]), exact)

    @classmethod
    def deterministic(cls) -> "OffspringLaw":
        return cls.finite([Fraction(0), Fraction(1)], name="deterministic")

    @classmethod
    def binary(cls) -> "OffspringLaw":
        """p_0 = p_2 = 1/2."""
        return cls.finite([Fraction(1, 2), Fraction(0), Fraction(1, 2)], name="binary")

    @classmethod
    def geometric(cls) -> "OffspringLaw":
        """p_k = 2^-(k+1), the only critical geometric law; sigma^2 = 2."""
        return cls("geometric", _tabulate(lambda k: 0.5 ** (k + 1)), truncated=True)

    @classmethod
    def poisson(cls) -> "OffspringLaw":
        """Poisson(1); sigma^2 = 1."""
        return cls("poisson", _tabulate(lambda k: math.exp(-1.0 - math.lgamma(k + 1))),
                   truncated=True)

    @classmethod
    def parse(cls, text: str) -> "OffspringLaw":
        text = text.strip()
        builtin = {"deterministic": cls.deterministic, "binary": cls.binary,
                   "geometric": cls.geometric, "poisson": cls.poisson}
        if text in builtin:
            return builtin[text]()
        if text.startswith("finite:"):
            items = [Fraction(s.strip()) for s in text[len("finite:"):].split(",")]
            return cls.finite(items, name=text)
        raise ValueError(f"unknown offspring law {text!r}")

    # -- moments ----------------------------------------------------------
    @property
    def support_bound(self) -> int | None:
        return len(self.probs) - 1 if self.truncated else None

    @cached_property
    def mean(self):
        if self.exact is not None:
            return sum(k * q for k, q in enumerate(self.exact))
        return math.fsum(np.arange(len(self.probs)) * self.probs)

    @cached_property
    def variance(self):
        if self.exact is not None:
            m2 = sum(k * k * q for k, q in enumerate(self.exact))
            return m2 - self.mean ** 2
        k = np.arange(len(self.probs), dtype=np.float64)
        return math.fsum(k * k * self.probs) - self.mean ** 2

    @property
    def is_critical(self) -> bool:
        return abs(float(self.mean) - 1.0) <= CRITICAL_TOL

    @cached_property
    def cdf(self) -> np.ndarray:
        c = np.cumsum(self.probs)
        c[-1] = 1.0
        return c

    def quantile(self, u) -> np.ndarray:
        """Inverse CDF, vectorized over ``u`` in [0, 1)."""
        k = np.searchsorted(self.cdf, u, side="right")
        return np.minimum(k, len(self.probs) - 1)


@dataclass(frozen=True, eq=False)
class SizeBiasedLaw:
    """p~_k = k p_k for a critical law."""

    base: OffspringLaw
    probs: np.ndarray
    exact: tuple[Fraction, ...] | None = None

    @cached_property
    def mean(self):
        if self.exact is not None:
            return sum(k * q for k, q in enumerate(self.exact))
        return math.fsum(np.arange(len(self.probs)) * self.probs)

    @cached_property
    def variance(self):
        if self.exact is not None:
            return sum(k * k * q for k, q in enumerate(self.exact)) - self.mean ** 2
        k = np.arange(len(self.probs), dtype=np.float64)
        return math.fsum(k * k * self.probs) - self.mean ** 2

    @cached_property
    def cdf(self) -> np.ndarray:
        c = np.cumsum(self.probs)
        c[-1] = 1.0
        return c

    def quantile(self, u) -> np.ndarray:
        k = np.searchsorted(self.cdf, u, side="right")
        return np.minimum(k, len(self.probs) - 1)


def size_bias(law: OffspringLaw) -> SizeBiasedLaw:
    cached = law.__dict__.get("_size_biased")
    if cached is not None:
        return cached
    if not law.is_critical:
        raise ValueError(f"offspring law {law.name!r} has mean {float(law.mean)!r}; "
                         "size-biasing needs a critical law")
    k = np.arange(len(law.probs), dtype=np.float64)
    probs = k * law.probs
    probs = probs / math.fsum(probs)
    exact = None
    if law.exact is not None:
        exact = tuple(i * q for i, q in enumerate(law.exact))
    out = SizeBiasedLaw(law, probs, exact)
    law.__dict__["_size_biased"] = out
    return out


# ---------------------------------------------------------------------------
# trees
# ---------------------------------------------------------------------------

@dataclass(frozen=True, eq=False)
class LayeredTree:
    """Ordered rooted tree in breadth-first planar order.

    ``child_counts[v]`` is the number of children of vertex ``v``; together
    with ``height`` (the declared maximal layer N) it determines the tree.
    Layers above the last occupied one are empty for extinct GW trees.
    """

    child_counts: np.ndarray
    height: int
    spine: np.ndarray | None = None
    meta: dict = field(default_factory=dict)

    def __post_init__(self):
        cc = np.ascontiguousarray(self.child_counts, dtype=np.int64)
        cc.setflags(write=False)
        object.__setattr__(self, "child_counts", cc)
        if self.height < 0:
            raise ValueError("height must be >= 0")
        if np.any(cc < 0):
            raise ValueError("negative child count")
        offsets = [0, 1]
        while offsets[-1] < cc.size:
            a, b = offsets[-2], offsets[-1]
            if a == b:
                raise ValueError("child counts list vertices beyond an empty layer")
            offsets.append(b + int(cc[a:b].sum()))
        if offsets[-1] != cc.size or (offsets[-1] > offsets[-2] and
                                      int(cc[offsets[-2]:offsets[-1]].sum()) != 0):
            raise ValueError("child counts are inconsistent with breadth-first order")
        n_layers = len(offsets) - 1
        if n_layers - 1 > self.height:
            raise ValueError(f"tree reaches layer {n_layers - 1} beyond height {self.height}")
        offsets += [offsets[-1]] * (self.height + 1 - n_layers)
        off = np.array(offsets, dtype=np.int64)
        off.setflags(write=False)
        object.__setattr__(self, "offsets", off)
        if self.spine is not None:
            sp = np.asarray(self.spine, dtype=bool)
            if sp.shape != cc.shape:
                raise ValueError("spine flag array has the wrong length")
            sp.setflags(write=False)
            object.__setattr__(self, "spine", sp)

    offsets: np.ndarray = field(init=False, repr=False)

    # -- constructors -----------------------------------------------------
    @classmethod
    def from_nested(cls, root: list, height: int | None = None) -> "LayeredTree":
        """Build from nested lists, each node being the list of its children."""
        counts, layer, depth = [], [root], 0
        while layer:
            counts.extend(len(node) for node in layer)
            nxt = [c for node in layer for c in node]
            if nxt:
                depth += 1
            layer = nxt
        return cls(np.array(counts, dtype=np.int64), depth if height is None else height)

    @classmethod
    def path(cls, height: int) -> "LayeredTree":
        return cls(np.array([1] * height + [0], dtype=np.int64), height)

    # -- derived arrays ---------------------------------------------------
    @property
    def n_vertices(self) -> int:
        return int(self.child_counts.size)

    @cached_property
    def heights(self) -> np.ndarray:
        return np.repeat(np.arange(self.height + 1), np.diff(self.offsets))

    @cached_property
    def first_child(self) -> np.ndarray:
        fc = np.empty_like(self.child_counts)
        fc[:] = 1 + np.concatenate(([0], np.cumsum(self.child_counts)[:-1]))
        return fc

    @cached_property
    def parents(self) -> np.ndarray:
        par = np.repeat(np.arange(self.n_vertices), self.child_counts)
        return np.concatenate(([-1], par))

    @cached_property
    def child_ranks(self) -> np.ndarray:
        ids = np.arange(self.n_vertices)
        rank = ids - self.first_child[self.parents]
        rank[0] = 0
        return rank

    def children(self, v: int) -> range:
        s = int(self.first_child[v])
        return range(s, s + int(self.child_counts[v]))

    def spine_path(self) -> list[int]:
        if self.spine is None:
            return []
        return [int(v) for v in np.flatnonzero(self.spine)]

    def same_structure(self, other: "LayeredTree") -> bool:
        """Equality as planar rooted trees of a given height (spine/meta ignored)."""
        return self.height == other.height and np.array_equal(self.child_counts,
                                                              other.child_counts)


def layer_sizes(tree: LayeredTree) -> np.ndarray:
    """(k_0, ..., k_N)."""
    return np.diff(tree.offsets)


# ---------------------------------------------------------------------------
# samplers
# ---------------------------------------------------------------------------

def sample_gw_tree(law: OffspringLaw, max_height: int, seed: int) -> LayeredTree:
    """Critical (or any) GW tree cut at ``max_height``; vertex v draws from stream v."""
    if max_height < 0:
        raise ValueError("max_height must be >= 0")
    counts = []
    start, size = 0, 1
    for t in range(max_height):
        ids = np.arange(start, start + size)
        c = law.quantile(counter_uniforms(seed, ids))
        counts.append(c)
        start, size = start + size, int(c.sum())
        if size == 0:
            break
    if size:
        counts.append(np.zeros(size, dtype=np.int64))
    return LayeredTree(np.concatenate(counts).astype(np.int64), max_height,
                       meta={"law": law.name, "seed": int(seed), "height": max_height,
                             "kind": "gw"})


def sample_kesten_tree(law: OffspringLaw, height: int, seed: int) -> LayeredTree:
    """Single-spine tree of the given height.

    Spine vertices draw from the size-biased law and pass the spine to a
    uniformly chosen child (second draw of the same vertex stream); every
    other vertex draws from ``law``.  Side branches are cut at ``height``.
    """
    if height < 1:
        raise ValueError("height must be >= 1")
    biased = size_bias(law)
    counts, spine_ids = [], [0]
    start, size, s = 0, 1, 0
    for t in range(height):
        ids = np.arange(start, start + size)
        u = counter_uniforms(seed, ids)
        c = law.quantile(u)
        j = s - start
        c[j] = biased.quantile(u[j])
        pick = int(counter_uniforms(seed, s, sub=1) * c[j])
        s = start + size + int(c[:j].sum()) + pick
        spine_ids.append(s)
        counts.append(c)
        start, size = start + size, int(c.sum())
    counts.append(np.zeros(size, dtype=np.int64))
    cc = np.concatenate(counts).astype(np.int64)
    spine = np.zeros(cc.size, dtype=bool)
    spine[spine_ids] = True
    return LayeredTree(cc, height, spine=spine,
                       meta={"law": law.name, "seed": int(seed), "height": height,
                             "kind": "kesten"})


def _sum_iid(law: OffspringLaw, n: int, rng: np.random.Generator) -> int:
    # sum of n iid draws = sum_k k * (multinomial count of value k)
    if n == 0:
        return 0
    return int(np.dot(np.arange(len(law.probs)), rng.multinomial(n, law.probs)))


def sample_layer_step(law: OffspringLaw, current: int, seed) -> int:
    """k_t given k_{t-1} = current: one size-biased particle plus current-1 ordinary ones."""
    if current < 1:
        raise ValueError("current layer size must be >= 1")
    rng = make_rng(seed)
    biased = size_bias(law)
    xi0 = int(biased.quantile(rng.random()))
    return xi0 + _sum_iid(law, current - 1, rng)


def sample_layer_process(law: OffspringLaw, height: int, seed) -> np.ndarray:
    """(k_0..k_N) of the size-biased process by iterated layer steps."""
    rng = make_rng(seed)
    biased = size_bias(law)
    k = np.empty(height + 1, dtype=np.int64)
    k[0] = 1
    xi0 = biased.quantile(rng.random(height))
    for t in range(1, height + 1):
        k[t] = int(xi0[t - 1]) + _sum_iid(law, int(k[t - 1]) - 1, rng)
    return k


def sample_layer_process_batch(law: OffspringLaw, height: int, replicas: int,
                               seed) -> np.ndarray:
    """``replicas`` independent layer processes at once, shape (replicas, N + 1)."""
    rng = make_rng(seed)
    biased = size_bias(law)
    values = np.arange(len(law.probs), dtype=np.int64)
    k = np.empty((replicas, height + 1), dtype=np.int64)
    k[:, 0] = 1
    for t in range(1, height + 1):
        xi0 = biased.quantile(rng.random(replicas))
        rest = rng.multinomial(k[:, t - 1] - 1, law.probs) @ values
        k[:, t] = xi0 + rest
    return k


# ---------------------------------------------------------------------------
# exact layer-step law
# ---------------------------------------------------------------------------

def _probs(law) -> list:
    return list(law.exact) if law.exact is not None else list(law.probs)


def layer_step_pmf(law: OffspringLaw, current: int) -> list:
    """Exact law of one layer step from ``current`` (rational for exact laws)."""
    if current < 1:
        raise ValueError("current layer size must be >= 1")
    biased = size_bias(law)
    base = _probs(law)
    out = _probs(biased)
    for _ in range(current - 1):
        nxt = [0] * (len(out) + len(base) - 1)
        for i, a in enumerate(out):
            if a:
                for j, b in enumerate(base):
                    nxt[i + j] += a * b
        out = nxt
    return out


def layer_step_moments(law: OffspringLaw, current: int) -> tuple:
    """(mean, variance) of one layer step: (m + sigma^2, Var(size-biased) + (m-1) sigma^2)."""
    biased = size_bias(law)
    s2 = law.variance
    return current + s2, biased.variance + (current - 1) * s2


# ---------------------------------------------------------------------------
# persistence
# ---------------------------------------------------------------------------

TREE_MAGIC = "# cdlt-tree v1"


def _format_meta(meta: dict) -> str:
    return " ".join(f"{k}={meta[k]}" for k in sorted(meta))


def _parse_meta(line: str) -> dict:
    out = {}
    for item in line.lstrip("#").split():
        k, _, v = item.partition("=")
        out[k] = int(v) if v.lstrip("-").isdigit() else v
    return out


def write_tree(tree: LayeredTree, fh: TextIO) -> None:
    """One vertex per line: ``id parent_id height child_rank spine_flag``."""
    meta = dict(tree.meta)
    meta["height"] = tree.height
    fh.write(TREE_MAGIC + "\n")
    fh.write("# " + _format_meta(meta) + "\n")
    fh.write("# columns: id parent_id height child_rank spine_flag\n")
    spine = tree.spine if tree.spine is not None else np.zeros(tree.n_vertices, dtype=bool)
    rows = np.column_stack([np.arange(tree.n_vertices), tree.parents, tree.heights,
                            tree.child_ranks, spine.astype(np.int64)])
    fh.write("".join(f"{a} {b} {c} {d} {e}\n" for a, b, c, d, e in rows.tolist()))


def read_tree(fh: Iterable[str]) -> LayeredTree:
    lines = iter(fh)
    if next(lines).rstrip("\n") != TREE_MAGIC:
        raise ValueError("not a cdlt tree file")
    meta = _parse_meta(next(lines))
    next(lines)
    data = np.loadtxt(lines, dtype=np.int64, ndmin=2)
    if data.size == 0:
        raise ValueError("tree file has no vertices")
    ids, par, hts, ranks, sp = data.T
    if not np.array_equal(ids, np.arange(len(ids))):
        raise ValueError("vertex ids must be 0..n-1 in order")
    counts = np.bincount(par[1:], minlength=len(ids)) if len(ids) > 1 else np.zeros(1, np.int64)
    has_spine = bool(sp.any())
    tree = LayeredTree(counts.astype(np.int64), int(meta.pop("height")),
                       spine=sp.astype(bool) if has_spine else None, meta=meta)
    if not (np.array_equal(tree.parents, par) and np.array_equal(tree.heights, hts)
            and np.array_equal(tree.child_ranks, ranks)):
        raise ValueError("tree file is not in breadth-first planar order")
    return tree
