import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from cdlt.branching import LayeredTree, OffspringLaw, sample_kesten_tree, sample_layer_process
from cdlt.gibbs import GroupElement, SpinConfiguration, modulus, xy_potential, zero_potential
from cdlt.mermin_wagner import (a_seq, gauge_profile, growth_report, martingale_check,
                                martingale_series, phi, phi_strips, phi_upper_bound, q_sum,
                                symmetry_experiment)
from cdlt.triangulation import tree_to_lt

PI = GroupElement([math.pi])


def test_q_sum_values():
    assert q_sum(2) == pytest.approx(1 / (2 * math.log(2)), abs=1e-12)
    assert q_sum(5) == pytest.approx(sum(1 / (t * math.log(t)) for t in range(2, 6)), abs=1e-14)
    assert q_sum(5) == pytest.approx(1.3293645, abs=1e-7)
    with pytest.raises(ValueError):
        q_sum(1)


def test_q_sum_tracks_loglog():
    gaps = [q_sum(m) - math.log(math.log(m)) for m in (10, 100, 10 ** 4, 10 ** 6)]
    assert max(gaps) - min(gaps) < 0.5


def test_profile_fixture():
    prof = gauge_profile(1, 6, PI)
    assert prof.c[:3].tolist() == [1, 1, 1]
    assert prof.c[3] == pytest.approx((1 / (3 * math.log(3))) / q_sum(5), abs=1e-12)
    assert prof.c[3] == pytest.approx(0.22824, abs=1e-5)
    assert prof.c[4:].tolist() == [0, 0, 0]
    assert prof.multiplier(np.array([10])).tolist() == [0]
    with pytest.raises(ValueError):
        gauge_profile(1, 2, PI)


@settings(max_examples=60, deadline=None)
@given(st.integers(1, 30), st.integers(3, 400))
def test_profile_invariants(r, extra):
    n = r + extra
    prof = gauge_profile(r, n, PI)
    c = prof.c
    assert np.all((c >= 0) & (c <= 1))
    assert np.all(np.diff(c) <= 1e-15)
    assert np.sum(c[:-1] - c[1:]) == pytest.approx(1.0, abs=1e-12)


def test_phi_path_fixture():
    T = tree_to_lt(LayeredTree.path(8))
    for th in (1.0, math.pi, 0.3):
        prof = gauge_profile(1, 6, GroupElement([th]))
        c3 = prof.c[3]
        assert phi(T, prof) == pytest.approx(2 * th ** 2 * ((1 - c3) ** 2 + c3 ** 2), abs=1e-12)
        assert phi(T, prof) == pytest.approx(1.2954157 * th ** 2, abs=1e-6 * th ** 2)
    assert phi(T, gauge_profile(1, 6, GroupElement([0.0]))) == 0.0


def test_phi_code_paths_agree():
    for seed in range(5):
        T = tree_to_lt(sample_kesten_tree(OffspringLaw.geometric(), 60, seed))
        for n in (5, 20, 60):
            prof = gauge_profile(2, n, GroupElement([1.0, 2.0]))
            assert phi(T, prof) == pytest.approx(phi_strips(T, prof), rel=1e-12, abs=1e-12)
            assert phi_strips(T, prof) == pytest.approx(phi_strips(T.layer_sizes, prof), rel=1e-12)


def test_phi_rejects_short_triangulation():
    T = tree_to_lt(LayeredTree.path(4))
    with pytest.raises(ValueError):
        phi(T, gauge_profile(1, 6, PI))


def test_phi_bound_path():
    T = tree_to_lt(LayeredTree.path(20))
    m = 10 - 1
    direct = math.pi ** 2 / math.log(math.log(m)) * sum(2 / (t * math.log(t)) ** 2
                                                         for t in range(2, m + 1))
    assert phi_upper_bound(T, 1, 10, PI) == pytest.approx(direct, rel=1e-12)
    assert phi_upper_bound(T, 1, 10, GroupElement([0.0])) == 0.0
    with pytest.raises(ValueError):
        phi_upper_bound(T, 1, 3, PI)


def test_phi_decays_on_sampled_sizes():
    k = sample_layer_process(OffspringLaw.geometric(), 10 ** 4, seed=3)
    vals = [phi_strips(k, gauge_profile(1, n, PI)) for n in (100, 1000, 10 ** 4)]
    assert vals[0] > vals[1] > vals[2]


def test_growth_report_path():
    g = growth_report(np.ones(101, dtype=np.int64), epsilon=0.1)
    t = np.arange(2, 101)
    assert np.allclose(g.ratio, 1 / (t * np.log(t) ** 0.6), rtol=0, atol=1e-12)
    assert np.all(np.diff(g.partial_sums) > 0)
    assert g.C == pytest.approx(g.ratio[0])
    assert g.s(100) == pytest.approx(np.sum(1 / (t * np.log(t)) ** 2))
    with pytest.raises(ValueError):
        growth_report(np.ones(50), epsilon=0)


def test_martingale_degenerate_law():
    stats = martingale_check(OffspringLaw.deterministic(), 0.1, 50, 100, seed=1)
    assert np.all(stats.mean == 0) and np.all(stats.second_moment == 0)
    assert np.all(stats.series == 0)


def test_martingale_geometric():
    law = OffspringLaw.geometric()
    stats = martingale_check(law, 0.1, 200, 10 ** 4, seed=5, grid=[10, 50, 200])
    assert np.all(np.abs(stats.mean) < 3 * stats.se_mean)
    assert np.all(np.abs(stats.second_moment - stats.series) < 3 * stats.se_second_moment)
    assert np.all(np.diff(stats.second_moment) > 0)
    assert np.all(np.diff(martingale_series(law, 0.1, 400)) > 0)


def test_martingale_needs_replicas():
    with pytest.raises(ValueError):
        martingale_check(OffspringLaw.geometric(), 0.1, 10, 50, seed=0)


def test_a_seq():
    assert a_seq(math.e, 0.5) == pytest.approx(math.e)


def test_symmetry_experiment_free_case_and_determinism():
    kw = dict(r=2, n_list=[6, 10], replicas=4, sweeps=400, seed=3)
    rep = symmetry_experiment(OffspringLaw.geometric(), zero_potential(1), **kw)
    again = symmetry_experiment(OffspringLaw.geometric(), zero_potential(1), **kw)
    assert rep.records == again.records
    # free spins: the instantaneous modulus over the region matches the uniform-spin null
    for x in rep.records:
        null = [modulus(np.stack([np.cos(a), np.sin(a)], -1).mean(0)[None])
                for a in np.random.default_rng(x.replica).uniform(0, 2 * np.pi,
                                                                  (2000, x.region_size))]
        assert abs(x.mean_modulus - np.mean(null)) < 0.05
    assert [x.n for x in rep.records] == [6] * 4 + [10] * 4


def test_symmetry_experiment_validates():
    with pytest.raises(ValueError):
        symmetry_experiment(OffspringLaw.geometric(), xy_potential(1.0), 5, [6], 2, 10, seed=0)


def test_ordered_boundary_pins_small_slab():
    rep = symmetry_experiment(OffspringLaw.geometric(), xy_potential(3.0), 1, [4], 3, 400, seed=1)
    assert rep.median(4) > 0.8
