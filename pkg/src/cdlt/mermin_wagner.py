"""Growth diagnostics, the gauge profile, its energy cost, and the symmetry experiment.

All logarithms are natural.  Sums indexed by t start at t = 2 because
1/(t ln t) and a_t = t (ln t)^(1/2+eps) are undefined at t = 1.
"""

from __future__ import annotations

import math
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field

import numpy as np

from .branching import OffspringLaw, sample_kesten_tree, sample_layer_process_batch, size_bias
from .gibbs import GroupElement, HarmonicPotential, SpinConfiguration, modulus, run_metropolis
from .rng import derive_seed
from .triangulation import Triangulation, tree_to_lt

DEFAULT_EPSILON = 0.1


def _inv_tlogt(m: int) -> np.ndarray:
    """1/(t ln t) for t = 0..m, with zeros at t = 0, 1."""
    out = np.zeros(m + 1)
    t = np.arange(2, m + 1, dtype=np.float64)
    out[2:] = 1.0 / (t * np.log(t))
    return out


def q_sum(m: int) -> float:
    """Q(m) = sum_{t=2}^m 1/(t ln t)."""
    if m < 2:
        raise ValueError("Q(m) needs m >= 2")
    return math.fsum(_inv_tlogt(m)[2:])


@dataclass(frozen=True, eq=False)
class GaugeProfile:
    """Layer multipliers c_0..c_n; the group element on layer j is c_j * theta."""

    r: int
    n: int
    theta: GroupElement
    c: np.ndarray
    q: float

    def multiplier(self, j) -> np.ndarray:
        j = np.asarray(j)
        out = np.zeros(j.shape)
        inside = j <= self.n
        out[inside] = self.c[j[inside]]
        return out

    def element(self, j: int) -> np.ndarray:
        return float(self.multiplier(j)) * self.theta.angles


def gauge_profile(r: int, n: int, theta: GroupElement) -> GaugeProfile:
    """c_j = 1 up to layer r+1, (1/Q(n-r)) sum_{t=j+1-r}^{n-j} 1/(t ln t) in between
    (empty sums are 0), and 0 from layer n on."""
    if not (n > r + 1 >= 2):
        raise ValueError(f"need n > r + 1 >= 2, got r={r}, n={n}")
    f = _inv_tlogt(n)
    F = np.cumsum(f)
    q = q_sum(n - r)
    c = np.zeros(n + 1)
    c[: r + 2] = 1.0
    j = np.arange(r + 2, n)
    lo, hi = j + 1 - r, n - j
    sums = np.where(hi >= lo, F[np.maximum(hi, 0)] - F[np.clip(lo - 1, 0, n)], 0.0)
    c[r + 2: n] = sums / q
    c[n] = 0.0
    return GaugeProfile(r, n, theta, c, q)


def _strip_counts(T) -> np.ndarray:
    if isinstance(T, Triangulation):
        return T.strip_edge_counts()
    k = np.asarray(T, dtype=np.int64)
    return k[:-1] + k[1:]


def phi(T: Triangulation, profile: GaugeProfile) -> float:
    """sum over edges <v, v'> (with multiplicity) of |g_n(v) - g_n(v')|^2, edge by edge."""
    if profile.n > T.height:
        raise ValueError(f"profile radius {profile.n} exceeds triangulation height {T.height}")
    u, v, m = T.edges
    layers = T.layers
    cu = profile.multiplier(layers[u])
    cv = profile.multiplier(layers[v])
    th2 = float(np.dot(profile.theta.angles, profile.theta.angles))
    return th2 * math.fsum(m * (cu - cv) ** 2)


def phi_strips(T, profile: GaugeProfile) -> float:
    """|theta|^2 sum_t E_{t,t+1} (c_t - c_{t+1})^2.

    ``T`` is a Triangulation, or a layer-size vector (then E_{t,t+1} = k_t + k_{t+1}).
    """
    E = _strip_counts(T)
    if profile.n > E.size:
        raise ValueError(f"profile radius {profile.n} exceeds height {E.size}")
    c = profile.c
    dc = c[:-1] - c[1:]
    th2 = float(np.dot(profile.theta.angles, profile.theta.angles))
    return th2 * math.fsum(E[: profile.n] * dc * dc)


def phi_upper_bound(T, r: int, n: int, theta: GroupElement) -> float:
    """|theta|^2 / ln ln(n-r) * sum_{t=2}^{n-r} E_{t,t+1} / (t^2 ln^2 t)."""
    if n - r < 3:
        raise ValueError("need n - r >= 3")
    E = _strip_counts(T)
    m = n - r
    if m >= E.size:
        raise ValueError(f"bound needs strips up to {m}, have {E.size - 1}")
    t = np.arange(2, m + 1, dtype=np.float64)
    th2 = float(np.dot(theta.angles, theta.angles))
    return th2 / math.log(math.log(m)) * math.fsum(E[2: m + 1] / (t * np.log(t)) ** 2)


# ---------------------------------------------------------------------------
# growth
# ---------------------------------------------------------------------------

def a_seq(t, epsilon: float) -> np.ndarray:
    t = np.asarray(t, dtype=np.float64)
    return t * np.log(t) ** (0.5 + epsilon)


@dataclass
class GrowthReport:
    epsilon: float
    t: np.ndarray               # 2..N
    ratio: np.ndarray           # k_t / (t (ln t)^(1/2+eps))
    partial_sums: np.ndarray    # s_T = sum_{t=2}^T k_t / (t^2 ln^2 t)
    martingale: np.ndarray | None = None  # B_n for n = 2..N

    @property
    def C(self) -> float:
        return float(self.ratio.max())

    def s(self, T: int) -> float:
        return float(self.partial_sums[T - 2])


def growth_report(sizes, epsilon: float = DEFAULT_EPSILON, variance: float | None = None
                  ) -> GrowthReport:
    if epsilon <= 0:
        raise ValueError("epsilon must be positive")
    k = np.asarray(sizes, dtype=np.float64)
    N = k.size - 1
    if N < 2:
        raise ValueError("need layer sizes up to at least t = 2")
    t = np.arange(2, N + 1, dtype=np.float64)
    lt = np.log(t)
    ratio = k[2:] / (t * lt ** (0.5 + epsilon))
    partial = np.cumsum(k[2:] / (t * t * lt * lt))
    mart = None
    if variance is not None:
        mart = np.cumsum((k[2:] - k[1:-1] - float(variance)) / a_seq(t, epsilon))
    return GrowthReport(epsilon, t.astype(np.int64), ratio, partial, mart)


@dataclass
class MartingaleStats:
    n: np.ndarray
    mean: np.ndarray
    se_mean: np.ndarray
    second_moment: np.ndarray
    se_second_moment: np.ndarray
    series: np.ndarray          # exact E B_n^2 evaluated termwise
    replicas: int


def martingale_series(law: OffspringLaw, epsilon: float, n: int) -> np.ndarray:
    """E B_m^2 for m = 2..n: sum_{t=2}^m (Var(size-biased) + sigma^4 (t-1)) / a_t^2.

    Uses Var(k_t | k_{t-1}) = Var(size-biased) + (k_{t-1} - 1) sigma^2 and
    E k_{t-1} = 1 + sigma^2 (t-1).
    """
    s2 = float(law.variance)
    vb = float(size_bias(law).variance)
    t = np.arange(2, n + 1, dtype=np.float64)
    return np.cumsum((vb + s2 * s2 * (t - 1)) / a_seq(t, epsilon) ** 2)


def martingale_check(law: OffspringLaw, epsilon: float, n: int, replicas: int, seed,
                     grid=None) -> MartingaleStats:
    if replicas < 100:
        raise ValueError("need at least 100 replicas")
    k = sample_layer_process_batch(law, n, replicas, seed).astype(np.float64)
    t = np.arange(2, n + 1, dtype=np.float64)
    B = np.cumsum((k[:, 2:] - k[:, 1:-1] - float(law.variance)) / a_seq(t, epsilon), axis=1)
    grid = np.arange(2, n + 1) if grid is None else np.asarray(grid)
    cols = grid - 2
    Bg = B[:, cols]
    sq = Bg * Bg
    return MartingaleStats(grid, Bg.mean(axis=0), Bg.std(axis=0, ddof=1) / math.sqrt(replicas),
                           sq.mean(axis=0), sq.std(axis=0, ddof=1) / math.sqrt(replicas),
                           martingale_series(law, epsilon, n)[cols], replicas)


# ---------------------------------------------------------------------------
# symmetry experiment
# ---------------------------------------------------------------------------

@dataclass
class ReplicaRecord:
    n: int
    replica: int
    tree_seed: int
    mcmc_seed: int
    slab_size: int
    region_size: int
    acceptance: float
    modulus: float          # time-averaged magnetization projected on the boundary direction
    vector_modulus: float   # modulus of the time-averaged magnetization vector
    mean_modulus: float     # time average of the instantaneous modulus
    mean_modulus_sq: float  # time average of the squared instantaneous modulus


@dataclass
class SymmetryReport:
    r: int
    n_list: list[int]
    replicas: int
    sweeps: int
    delta: float
    seed: int
    records: list[ReplicaRecord] = field(default_factory=list)

    def values(self, n: int, attr: str = "modulus") -> np.ndarray:
        recs = sorted((x for x in self.records if x.n == n), key=lambda x: x.replica)
        return np.array([getattr(x, attr) for x in recs])

    def median(self, n: int, attr: str = "modulus") -> float:
        return float(np.median(self.values(n, attr)))

    def paired_fraction_lower(self, n_small: int, n_large: int, attr: str = "modulus") -> float:
        """Fraction of replicas whose value at n_large is below the value at n_small."""
        return float(np.mean(self.values(n_large, attr) < self.values(n_small, attr)))


def _replica(args) -> list[ReplicaRecord]:
    law_text, coef, fld, r, n_list, i, sweeps, delta, seed = args
    law = OffspringLaw.parse(law_text)
    potential = HarmonicPotential(np.array(coef), np.array(fld))
    tree_seed = derive_seed(seed, i, 0)
    T_full = tree_to_lt(sample_kesten_tree(law, max(n_list), tree_seed))
    out = []
    for n in n_list:
        T = T_full.truncate(n)
        config = SpinConfiguration.constant(T.n_vertices, potential.dim, 0.0)
        active = np.arange(int(T.offsets[n]))
        region = np.arange(int(T.offsets[r + 1]))
        mcmc_seed = derive_seed(seed, i, n)
        run = run_metropolis(T, active, config, potential, delta, "fixed", sweeps=sweeps,
                             seed=mcmc_seed, regions=[region])
        tail = run.magnetization[sweeps // 2:, 0]          # (S, d, 2)
        avg = tail.mean(axis=0)
        # the boundary spins all sit at angle 0, so the boundary direction is (1, 0)
        # per coordinate and reflection symmetry makes the sin part vanish in expectation
        projected = float(np.sqrt(np.mean(avg[:, 0] ** 2)))
        inst = modulus(tail)
        out.append(ReplicaRecord(n, i, tree_seed, mcmc_seed, int(active.size), int(region.size),
                                 run.stats.acceptance, projected, float(modulus(avg)),
                                 float(inst.mean()), float(np.mean(inst * inst))))
    return out


def symmetry_experiment(law: OffspringLaw, potential: HarmonicPotential, r: int, n_list,
                        replicas: int, sweeps: int, seed: int, delta: float = 1.0,
                        workers: int = 1) -> SymmetryReport:
    """Ordered (all-zero) boundary on layer n, cold start, burn-in of half the sweeps,
    magnetization over T_r measured on the second half.

    The primary statistic ``modulus`` is |time average of the magnetization
    along the boundary direction|.  ``vector_modulus`` keeps the sin part too;
    it is biased upwards whenever the direction of a locally ordered region
    drifts slowly compared with the measurement window.

    Replica i samples one Kesten tree of height max(n_list) and truncates it at
    each n, so the comparison across n is paired on the same inner geometry.
    """
    n_list = sorted(int(n) for n in n_list)
    if not n_list or n_list[0] <= r + 1 or r < 0:
        raise ValueError("every n must exceed r + 1")
    if sweeps < 2:
        raise ValueError("need at least 2 sweeps")
    tasks = [(law.name, potential.coef.tolist(), potential.field.tolist(), r, n_list, i,
              sweeps, float(delta), int(seed)) for i in range(replicas)]
    if workers > 1:
        with ProcessPoolExecutor(max_workers=workers) as pool:
            results = list(pool.map(_replica, tasks))
    else:
        results = [_replica(t) for t in tasks]
    report = SymmetryReport(r, n_list, replicas, sweeps, float(delta), int(seed))
    for recs in results:
        report.records.extend(recs)
    report.records.sort(key=lambda x: (x.n, x.replica))
    return report
