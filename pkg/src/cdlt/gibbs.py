"""Torus spins, the translation action, pair potentials and Metropolis dynamics.

Spins live on the d-torus [0, 2pi)^d; a group element of the d'-torus acts
by translating the first d' coordinates.  The reference measure is the
uniform (Haar) measure.  Inverse temperature is folded into the potential
coefficients.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Sequence, TextIO

import numba
import numpy as np

from .reports import write_table
from .rng import make_rng
from .triangulation import Triangulation

TWO_PI = 2.0 * np.pi


def wrap(a) -> np.ndarray:
    """Reduce angles into [0, 2pi)."""
    out = np.mod(np.asarray(a, dtype=np.float64), TWO_PI)
    # np.mod can return 2pi for tiny negative inputs
    return np.where(out >= TWO_PI, 0.0, out)


def torus_point(angles) -> np.ndarray:
    return wrap(np.atleast_1d(angles))


@dataclass(frozen=True)
class GroupElement:
    """An element of the d'-torus, acting on the first d' spin coordinates."""

    angles: np.ndarray

    def __post_init__(self):
        object.__setattr__(self, "angles", wrap(np.atleast_1d(self.angles)))

    @classmethod
    def identity(cls, dim: int) -> "GroupElement":
        return cls(np.zeros(dim))

    @property
    def dim(self) -> int:
        return self.angles.size

    def __add__(self, other: "GroupElement") -> "GroupElement":
        if other.dim != self.dim:
            raise ValueError("group elements of different dimension")
        return GroupElement(self.angles + other.angles)

    def norm(self) -> float:
        return float(np.linalg.norm(self.angles))


def act(g: GroupElement, x) -> np.ndarray:
    """g * x on the last axis of ``x`` (a point, or any stack of points)."""
    x = np.asarray(x, dtype=np.float64)
    d = x.shape[-1]
    if g.dim > d:
        raise ValueError(f"group dimension {g.dim} exceeds spin dimension {d}")
    out = x.copy()
    out[..., : g.dim] = wrap(out[..., : g.dim] + g.angles)
    return out


def torus_distance(x, y) -> np.ndarray | float:
    x = np.asarray(x, dtype=np.float64)
    y = np.asarray(y, dtype=np.float64)
    if x.shape[-1] != y.shape[-1]:
        raise ValueError("points of different dimension")
    diff = np.abs(np.mod(x - y, TWO_PI))
    diff = np.minimum(diff, TWO_PI - diff)
    out = np.sqrt(np.sum(diff * diff, axis=-1))
    return float(out) if out.ndim == 0 else out


# ---------------------------------------------------------------------------
# potentials
# ---------------------------------------------------------------------------

class PairPotential:
    """U(x, y) on d-torus points; evaluators broadcast over leading axes."""

    dim: int
    descriptor: dict

    def __call__(self, x, y) -> np.ndarray:
        raise NotImplementedError

    def grad_x(self, x, y) -> np.ndarray:
        raise NotImplementedError

    def grad_y(self, x, y) -> np.ndarray:
        raise NotImplementedError


@dataclass(frozen=True, eq=False)
class HarmonicPotential(PairPotential):
    """U(x, y) = -sum_i sum_m a[i, m] cos((m+1)(x_i - y_i)) - sum_i h_i (cos x_i + cos y_i).

    ``coef`` has shape (d, M).  The field ``h`` must vanish on coordinates the
    group acts on for the potential to be invariant; it is there so that
    partially invariant potentials (d' < d) can be exercised.
    """

    coef: np.ndarray
    field: np.ndarray | None = None
    name: str = "harmonic"

    def __post_init__(self):
        coef = np.atleast_2d(np.asarray(self.coef, dtype=np.float64))
        fld = np.zeros(coef.shape[0]) if self.field is None else np.asarray(self.field, float)
        if fld.shape != (coef.shape[0],):
            raise ValueError("field must have one entry per spin coordinate")
        object.__setattr__(self, "coef", coef)
        object.__setattr__(self, "field", fld)

    @property
    def dim(self) -> int:
        return self.coef.shape[0]

    @property
    def descriptor(self) -> dict:
        return {"family": self.name, "coef": self.coef.tolist(), "field": self.field.tolist()}

    def invariant_dims(self) -> int:
        """Largest d' such that translations of the first d' coordinates leave U invariant."""
        nz = np.flatnonzero(self.field)
        return int(nz[0]) if nz.size else self.dim

    def _harm(self):
        return np.arange(1, self.coef.shape[1] + 1, dtype=np.float64)

    def __call__(self, x, y):
        x = np.asarray(x, dtype=np.float64)
        y = np.asarray(y, dtype=np.float64)
        m = self._harm()
        diff = (x - y)[..., :, None] * m
        out = -np.sum(self.coef * np.cos(diff), axis=(-2, -1))
        if np.any(self.field):
            out = out - np.sum(self.field * (np.cos(x) + np.cos(y)), axis=-1)
        return out

    def grad_x(self, x, y):
        x = np.asarray(x, dtype=np.float64)
        y = np.asarray(y, dtype=np.float64)
        m = self._harm()
        diff = (x - y)[..., :, None] * m
        return np.sum(self.coef * m * np.sin(diff), axis=-1) + self.field * np.sin(x)

    def grad_y(self, x, y):
        x = np.asarray(x, dtype=np.float64)
        y = np.asarray(y, dtype=np.float64)
        m = self._harm()
        diff = (x - y)[..., :, None] * m
        return -np.sum(self.coef * m * np.sin(diff), axis=-1) + self.field * np.sin(y)


def zero_potential(d: int = 1) -> HarmonicPotential:
    return HarmonicPotential(np.zeros((d, 1)), name="zero")


def xy_potential(betas: Sequence[float] | float = 1.0) -> HarmonicPotential:
    """U(x, y) = -sum_i beta_i cos(x_i - y_i)."""
    b = np.atleast_1d(np.asarray(betas, dtype=np.float64))
    return HarmonicPotential(b[:, None], name="xy")


def harmonic_potential(coef) -> HarmonicPotential:
    return HarmonicPotential(np.atleast_2d(coef), name="harmonic")


def xy_field_potential(betas, field) -> HarmonicPotential:
    b = np.atleast_1d(np.asarray(betas, dtype=np.float64))
    return HarmonicPotential(b[:, None], np.asarray(field, dtype=np.float64), name="xyfield")


def builtin_potentials() -> list[HarmonicPotential]:
    """One representative of every built-in family."""
    return [zero_potential(1), xy_potential(1.0), xy_potential([1.0, 0.5]),
            harmonic_potential([[1.0, 0.3, -0.2]]), xy_field_potential([1.0, 0.7], [0.0, 0.4])]


def parse_potential(text: str) -> HarmonicPotential:
    """``zero[:d]``, ``xy:b1,b2,..``, ``harmonic:a1,a2,..`` (d = 1), ``xyfield:b1,..;h1,..``."""
    name, _, rest = text.strip().partition(":")
    nums = lambda s: [float(v) for v in s.split(",") if v.strip()]
    if name == "zero":
        return zero_potential(int(rest) if rest else 1)
    if name == "xy":
        return xy_potential(nums(rest) if rest else [1.0])
    if name == "harmonic":
        return harmonic_potential([nums(rest)])
    if name == "xyfield":
        b, _, h = rest.partition(";")
        return xy_field_potential(nums(b), nums(h))
    raise ValueError(f"unknown potential {text!r}")


# ---------------------------------------------------------------------------
# configurations and energies
# ---------------------------------------------------------------------------

@dataclass(eq=False)
class SpinConfiguration:
    """Spins of the vertices with global id < n (a slab, in layer order); shape (n, d)."""

    angles: np.ndarray

    def __post_init__(self):
        a = np.asarray(self.angles, dtype=np.float64)
        if a.ndim != 2:
            raise ValueError("angles must have shape (n_vertices, d)")
        self.angles = wrap(a)

    @classmethod
    def constant(cls, n: int, d: int = 1, value: float = 0.0) -> "SpinConfiguration":
        return cls(np.full((n, d), value))

    @classmethod
    def uniform(cls, n: int, d: int, seed) -> "SpinConfiguration":
        return cls(make_rng(seed).uniform(0.0, TWO_PI, size=(n, d)))

    @property
    def n(self) -> int:
        return self.angles.shape[0]

    @property
    def dim(self) -> int:
        return self.angles.shape[1]

    def copy(self) -> "SpinConfiguration":
        return SpinConfiguration(self.angles.copy())

    def acted(self, g: GroupElement) -> "SpinConfiguration":
        return SpinConfiguration(act(g, self.angles))


def _mask(T: Triangulation, A) -> np.ndarray:
    inA = np.zeros(T.n_vertices, dtype=bool)
    inA[T.ids(A)] = True
    return inA


def energy(T: Triangulation, A, config: SpinConfiguration, potential: PairPotential,
           include_boundary: bool = True) -> float:
    """H(x_A | x_{V \\ A}): edges inside A plus edges from A to its complement.

    Edges count with multiplicity; a self-loop at v in A contributes U(x_v, x_v).
    With ``include_boundary=False`` only edges inside A are summed.
    """
    inA = _mask(T, A)
    u, v, m = T.edges
    sel = (inA[u] & inA[v]) if not include_boundary else (inA[u] | inA[v])
    u, v, m = u[sel], v[sel], m[sel]
    if u.size and max(int(u.max()), int(v.max())) >= config.n:
        raise KeyError("configuration is missing a spin needed for this energy")
    x = config.angles
    return float(np.dot(potential(x[u], x[v]), m))


@dataclass(eq=False)
class ConditionalDensity:
    """Unnormalized exp(-H(x_A | boundary)) as a function of x_A (shape (..., |A|, d))."""

    T: Triangulation
    A: np.ndarray
    boundary: SpinConfiguration
    potential: PairPotential
    _edges: tuple = field(init=False, repr=False)

    def __post_init__(self):
        inA = np.zeros(self.T.n_vertices, dtype=bool)
        inA[self.A] = True
        u, v, m = self.T.edges
        sel = inA[u] | inA[v]
        u, v, m = u[sel], v[sel], m[sel]
        if u.size and max(int(u.max()), int(v.max())) >= self.boundary.n:
            raise KeyError("boundary configuration is missing a spin")
        pos = np.full(self.T.n_vertices, -1, dtype=np.int64)
        pos[self.A] = np.arange(self.A.size)
        self._edges = (u, v, m, pos[u], pos[v])

    @property
    def dim(self) -> int:
        return self.boundary.dim

    def energy(self, xA) -> np.ndarray:
        xA = np.asarray(xA, dtype=np.float64)
        u, v, m, pu, pv = self._edges
        bnd = self.boundary.angles
        batch = xA.shape[:-2]
        xu = np.where((pu >= 0)[:, None], xA[..., np.maximum(pu, 0), :], bnd[u])
        xv = np.where((pv >= 0)[:, None], xA[..., np.maximum(pv, 0), :], bnd[v])
        vals = self.potential(xu, xv)
        return np.tensordot(vals, m, axes=([-1], [0])) if u.size else np.zeros(batch)

    def __call__(self, xA) -> np.ndarray:
        return np.exp(-self.energy(xA))

    def _check_quadrature(self):
        if self.dim != 1 or self.A.size > 2:
            raise ValueError("quadrature is only supported for |A| <= 2 and d = 1")

    def _grid(self, points: int):
        h = TWO_PI / points
        g = np.arange(points) * h
        if self.A.size == 1:
            pts = g[:, None, None]
        else:
            a, b = np.meshgrid(g, g, indexing="ij")
            pts = np.stack([a.ravel(), b.ravel()], axis=-1)[:, :, None]
        return pts, h

    def normalizer(self, points: int = 256) -> float:
        """Periodic trapezoid rule (spectrally accurate for smooth periodic U)."""
        self._check_quadrature()
        pts, h = self._grid(points)
        return float(np.sum(self(pts)) * h ** self.A.size)

    def marginal_bin_probs(self, bins: int, site: int = 0, order: int = 24,
                           points: int = 256) -> np.ndarray:
        """Probability of each of ``bins`` equal arcs for the spin of A[site]."""
        self._check_quadrature()
        nodes, weights = np.polynomial.legendre.leggauss(order)
        width = TWO_PI / bins
        xs = (np.arange(bins)[:, None] + (nodes + 1.0) / 2.0) * width
        w = weights * width / 2.0
        if self.A.size == 1:
            dens = self(xs[..., None, None])
        else:
            g, h = np.arange(points) * (TWO_PI / points), TWO_PI / points
            X, G = np.broadcast_arrays(xs[..., None], g)
            pair = [X, G] if site == 0 else [G, X]
            dens = self(np.stack(pair, axis=-1)[..., None]).sum(axis=-1) * h
        probs = np.sum(dens * w, axis=-1)
        return probs / probs.sum()


def conditional_density(T: Triangulation, A, boundary: SpinConfiguration,
                        potential: PairPotential) -> ConditionalDensity:
    return ConditionalDensity(T, T.ids(A), boundary, potential)


# ---------------------------------------------------------------------------
# Metropolis
# ---------------------------------------------------------------------------

@numba.njit(cache=True)
def _sweeps(indptr, indices, present, loops, active, x, coef, fld, delta, rnd,
            region_ptr, region_ids, mags):
    n, d = x.shape
    M = coef.shape[1]
    cm = np.empty((n, d, M))
    sm = np.empty((n, d, M))
    for v in range(n):
        for i in range(d):
            for h in range(M):
                cm[v, i, h] = math.cos((h + 1) * x[v, i])
                sm[v, i, h] = math.sin((h + 1) * x[v, i])
    has_field = False
    for i in range(d):
        if fld[i] != 0.0:
            has_field = True
    nC = np.empty((d, M))
    nS = np.empty((d, M))
    xn = np.empty(d)
    accepted = 0
    n_regions = region_ptr.size - 1
    for s in range(rnd.shape[0]):
        for a in range(active.size):
            v = active[a]
            nC[:, :] = 0.0
            nS[:, :] = 0.0
            deg = 2 * loops[v]
            for p in range(indptr[v], indptr[v + 1]):
                w = indices[p]
                if not present[w]:
                    continue
                deg += 1
                for i in range(d):
                    for h in range(M):
                        nC[i, h] += cm[w, i, h]
                        nS[i, h] += sm[w, i, h]
            dH = 0.0
            for i in range(d):
                t = x[v, i] + delta * (2.0 * rnd[s, a, i] - 1.0)
                t = t % (2.0 * math.pi)
                xn[i] = t
                for h in range(M):
                    c = math.cos((h + 1) * t)
                    sn = math.sin((h + 1) * t)
                    dH -= coef[i, h] * ((c - cm[v, i, h]) * nC[i, h] + (sn - sm[v, i, h]) * nS[i, h])
                if has_field:
                    dH -= fld[i] * deg * (math.cos(t) - math.cos(x[v, i]))
            if dH <= 0.0 or rnd[s, a, d] < math.exp(-dH):
                accepted += 1
                for i in range(d):
                    x[v, i] = xn[i]
                    for h in range(M):
                        cm[v, i, h] = math.cos((h + 1) * xn[i])
                        sm[v, i, h] = math.sin((h + 1) * xn[i])
        for r in range(n_regions):
            cnt = region_ptr[r + 1] - region_ptr[r]
            for i in range(d):
                sc = 0.0
                ss = 0.0
                for q in range(region_ptr[r], region_ptr[r + 1]):
                    sc += cm[region_ids[q], i, 0]
                    ss += sm[region_ids[q], i, 0]
                mags[s, r, i, 0] = sc / cnt
                mags[s, r, i, 1] = ss / cnt
    return accepted


@numba.njit(cache=True)
def _sweeps_xy1(indptr, indices, present, active, x, beta, delta, rnd,
                region_ptr, region_ids, mags):
    # d = 1, single harmonic, no field: same arithmetic as _sweeps, cheaper bookkeeping
    n = x.shape[0]
    c = np.empty(n)
    s = np.empty(n)
    for v in range(n):
        c[v] = math.cos(x[v, 0])
        s[v] = math.sin(x[v, 0])
    accepted = 0
    n_regions = region_ptr.size - 1
    for sw in range(rnd.shape[0]):
        for a in range(active.size):
            v = active[a]
            C = 0.0
            S = 0.0
            for p in range(indptr[v], indptr[v + 1]):
                w = indices[p]
                if present[w]:
                    C += c[w]
                    S += s[w]
            t = (x[v, 0] + delta * (2.0 * rnd[sw, a, 0] - 1.0)) % (2.0 * math.pi)
            ct = math.cos(t)
            st = math.sin(t)
            dH = 0.0
            dH -= beta * ((ct - c[v]) * C + (st - s[v]) * S)
            if dH <= 0.0 or rnd[sw, a, 1] < math.exp(-dH):
                accepted += 1
                x[v, 0] = t
                c[v] = ct
                s[v] = st
        for r in range(n_regions):
            cnt = region_ptr[r + 1] - region_ptr[r]
            sc = 0.0
            ss = 0.0
            for q in range(region_ptr[r], region_ptr[r + 1]):
                sc += c[region_ids[q]]
                ss += s[region_ids[q]]
            mags[sw, r, 0, 0] = sc / cnt
            mags[sw, r, 0, 1] = ss / cnt
    return accepted


@dataclass
class SweepStats:
    sweeps: int
    proposed: int
    accepted: int

    @property
    def acceptance(self) -> float:
        return self.accepted / self.proposed if self.proposed else 0.0


@dataclass
class MetropolisRun:
    config: SpinConfiguration
    stats: SweepStats
    magnetization: np.ndarray  # (sweeps, regions, d, 2): per-sweep region means of (cos, sin)
    energies: np.ndarray = field(default_factory=lambda: np.zeros(0))
    energy_sweeps: np.ndarray = field(default_factory=lambda: np.zeros(0, dtype=np.int64))


def run_metropolis(T: Triangulation, active, config: SpinConfiguration,
                   potential: HarmonicPotential, delta: float, boundary: str = "fixed",
                   sweeps: int = 1, seed=0, regions: Sequence = (), record_every: int = 0,
                   block: int | None = None, use_fast: bool = True) -> MetropolisRun:
    """Systematic-scan single-site Metropolis, ``sweeps`` sweeps over ``active``.

    ``boundary="fixed"``: covered vertices outside ``active`` are pinned and
    interact with it; ``boundary="free"``: they are ignored.  Proposals are
    uniform in [-delta, delta]^d around the current spin.
    """
    if delta <= 0:
        raise ValueError("proposal width must be positive")
    if boundary not in ("free", "fixed"):
        raise ValueError(f"unknown boundary condition {boundary!r}")
    if not isinstance(potential, HarmonicPotential):
        raise TypeError("the sampler needs a HarmonicPotential")
    if potential.dim != config.dim:
        raise ValueError("potential and configuration dimensions differ")
    act_ids = T.ids(active)
    if act_ids.size and act_ids.max() >= config.n:
        raise KeyError("configuration does not cover the active set")
    indptr, indices = T.adjacency
    present = np.zeros(T.n_vertices, dtype=bool)
    if boundary == "fixed":
        present[: config.n] = True
        nbr = indices[np.concatenate([np.arange(indptr[v], indptr[v + 1]) for v in act_ids])] \
            if act_ids.size else np.zeros(0, np.int64)
        if nbr.size and nbr.max() >= config.n:
            raise KeyError("fixed boundary needs spins on every neighbour of the active set")
    else:
        present[act_ids] = True
    loops = T.loop_counts
    x = np.zeros((T.n_vertices, config.dim))
    x[: config.n] = config.angles
    reg = [T.ids(r) for r in regions]
    region_ptr = np.concatenate(([0], np.cumsum([r.size for r in reg]))).astype(np.int64)
    region_ids = np.concatenate(reg).astype(np.int64) if reg else np.zeros(0, np.int64)
    rng = make_rng(seed)
    d = config.dim
    fast = use_fast and d == 1 and potential.coef.shape[1] == 1 and not np.any(potential.field)
    per = max(1, act_ids.size * (d + 1))
    block = block or max(1, min(sweeps, 2_000_000 // per))
    mags = np.zeros((sweeps, len(reg), d, 2))
    energies, e_sweeps = [], []
    accepted = 0
    done = 0
    while done < sweeps:
        b = min(block, sweeps - done)
        if record_every:
            b = min(b, record_every - done % record_every)
        rnd = rng.random((b, act_ids.size, d + 1))
        if fast:
            accepted += _sweeps_xy1(indptr, indices, present, act_ids, x,
                                    float(potential.coef[0, 0]), float(delta), rnd,
                                    region_ptr, region_ids, mags[done:done + b])
        else:
            accepted += _sweeps(indptr, indices, present, loops, act_ids, x, potential.coef,
                                potential.field, float(delta), rnd, region_ptr, region_ids,
                                mags[done:done + b])
        done += b
        if record_every and done % record_every == 0:
            cfg = SpinConfiguration(x[: config.n])
            energies.append(energy(T, act_ids, cfg, potential,
                                   include_boundary=(boundary == "fixed")))
            e_sweeps.append(done)
    out = SpinConfiguration(x[: config.n].copy())
    stats = SweepStats(sweeps, sweeps * int(act_ids.size), accepted)
    return MetropolisRun(out, stats, mags, np.array(energies), np.array(e_sweeps, dtype=np.int64))


def metropolis_sweep(T: Triangulation, slab, config: SpinConfiguration,
                     potential: HarmonicPotential, delta: float, boundary: str = "fixed",
                     seed=0) -> tuple[SpinConfiguration, SweepStats]:
    """One systematic sweep over ``slab``."""
    run = run_metropolis(T, slab, config, potential, delta, boundary, sweeps=1, seed=seed)
    return run.config, run.stats


def local_energy_change(T: Triangulation, v: int, new, config: SpinConfiguration,
                        potential: PairPotential, present=None) -> float:
    """dH for moving the spin of ``v`` to ``new``, from its incident edges only."""
    indptr, indices = T.adjacency
    nbrs = indices[indptr[v]:indptr[v + 1]]
    if present is not None:
        nbrs = nbrs[present[nbrs]]
    x = config.angles
    new = wrap(np.asarray(new, dtype=np.float64))
    loops = int(T.loop_counts[v])
    d_edges = np.sum(potential(new, x[nbrs]) - potential(x[v], x[nbrs]))
    d_loop = loops * (potential(new, new) - potential(x[v], x[v]))
    return float(d_edges + d_loop)


def magnetization(config: SpinConfiguration, region, T: Triangulation | None = None):
    """Per-coordinate mean of (cos, sin) over ``region`` and the overall modulus.

    The modulus is the root mean square of the per-coordinate moduli, so it
    lies in [0, 1].  ``region`` is an id array, or VertexRefs when ``T`` is given.
    """
    ids = T.ids(region) if T is not None else np.asarray(region, dtype=np.int64)
    if ids.size == 0:
        raise ValueError("empty region")
    x = config.angles[ids]
    vec = np.stack([np.cos(x).mean(axis=0), np.sin(x).mean(axis=0)], axis=-1)
    return vec, float(np.sqrt(np.mean(np.sum(vec * vec, axis=-1))))


def modulus(vec: np.ndarray) -> np.ndarray:
    """Modulus of (..., d, 2) magnetization vectors."""
    return np.sqrt(np.mean(np.sum(vec * vec, axis=-1), axis=-1))


def write_spin_trace(fh: TextIO, run: MetropolisRun, region_names: Sequence[str],
                     meta: dict, every: int = 1) -> None:
    """Table of kind ``spin_trace``: sweep, energy (nan where not recorded), then per
    region the per-coordinate mean cos / mean sin and the region modulus."""
    d = run.magnetization.shape[2]
    cols = ["sweep", "energy"]
    for name in region_names:
        cols += [f"{name}_c{i}_{part}" for i in range(d) for part in ("cos", "sin")]
        cols.append(f"{name}_modulus")
    emap = dict(zip(run.energy_sweeps.tolist(), run.energies.tolist()))
    mods = modulus(run.magnetization) if run.magnetization.size else None

    def rows():
        for s in range(every - 1, run.magnetization.shape[0], every):
            row = [s + 1, float(emap.get(s + 1, math.nan))]
            for r in range(len(region_names)):
                row += [float(val) for val in run.magnetization[s, r].ravel()]
                row.append(float(mods[s, r]))
            yield row

    write_table(fh, "spin_trace", cols, rows(), meta)
