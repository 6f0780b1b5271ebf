import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from mycosat.richness import (AbundanceVector, RichnessSample, biome_filter, biome_thresholds, chao1,
                              estimate_richness, extrapolate, parse_counts)

counts_st = st.lists(st.integers(1, 30), min_size=1, max_size=40).map(np.array)


def _samples(values, biome="B"):
    return [RichnessSample(f"s{k}", 0.0, 0.0, biome, float(v)) for k, v in enumerate(values)]


def test_chao1_hand_cases():
    av = AbundanceVector(np.array([1, 1, 1, 1, 2, 2, 5, 5, 6, 6]))
    assert (av.s_obs, av.f1, av.f2, av.n) == (10, 4, 2, 30)
    assert abs(chao1(av) - (10 + 29 / 30 * 16 / 4)) < 1e-9
    assert abs(chao1(av) - 13.866666666666667) < 1e-9
    av = AbundanceVector(np.array([1, 1, 1, 3, 4]))
    assert abs(chao1(av) - 7.7) < 1e-9


def test_chao1_no_singletons():
    assert chao1(np.array([2, 3, 7])) == 3


def test_empty_counts_rejected():
    with pytest.raises(ValueError):
        AbundanceVector(np.array([], dtype=int))
    with pytest.raises(ValueError):
        AbundanceVector(np.array([0, 2]))


@given(counts_st)
def test_chao1_lower_bound(c):
    av = AbundanceVector(c)
    est = chao1(av)
    assert est >= av.s_obs
    if av.f2 > 0:
        assert (est == av.s_obs) == (av.f1 == 0)
    else:
        assert (est == av.s_obs) == (av.f1 <= 1)


def test_extrapolate_endpoints():
    av = AbundanceVector(np.array([1, 1, 1, 2, 3, 9]))
    assert extrapolate(av, 0) == av.s_obs
    assert abs(extrapolate(av, 1e6 * av.n) - chao1(av)) < 1e-6


@given(counts_st, st.floats(0, 500), st.floats(0, 500))
def test_extrapolate_monotone_bounded(c, m1, m2):
    av = AbundanceVector(c)
    lo, hi = sorted((m1, m2))
    a, b = extrapolate(av, lo), extrapolate(av, hi)
    assert av.s_obs <= a <= b + 1e-12
    assert b <= chao1(av) + 1e-9


def test_extrapolate_no_unseen_species():
    av = AbundanceVector(np.array([2, 2, 3]))
    assert extrapolate(av, 100) == 3


def test_extrapolate_within_multinomial_oracle_interval():
    # every one of 20 equally common species seen twice in 40 reads
    av = AbundanceVector(np.full(20, 2))
    rng = np.random.default_rng(0)
    draws = rng.multinomial(2 * av.n, np.full(20, 1 / 20), size=10_000)
    observed = (draws > 0).sum(axis=1)
    lo, hi = np.percentile(observed, [0.5, 99.5])
    assert lo <= extrapolate(av, av.n) <= hi


def test_estimate_richness_methods():
    av = np.array([1, 1, 2, 4])
    assert estimate_richness(av) == chao1(av)
    assert estimate_richness(av, "double_depth") == extrapolate(av, 8)
    with pytest.raises(ValueError):
        estimate_richness(av, "ace")


def test_parse_counts():
    assert parse_counts("3;0;5").tolist() == [3, 0, 5]
    assert parse_counts("").size == 0


def test_filter_planted_outlier():
    samples = _samples([1, 2, 3, 4, 5, 6, 7, 8, 100])
    assert biome_thresholds(samples)["B"] == 25.0
    kept, removed = biome_filter(samples)
    assert [s.richness_hat for s in removed] == [100.0]
    assert len(kept) == 8
    assert biome_filter(kept)[1] == []


def test_filter_constant_biome_keeps_all():
    kept, removed = biome_filter(_samples([7, 7, 7, 7]))
    assert len(kept) == 4 and not removed


def test_filter_biomes_independent():
    a = _samples([1, 2, 3, 4, 5, 6, 7, 8, 100], "A")
    b = _samples([90, 95, 100, 105, 110], "B")
    kept, removed = biome_filter(a + b)
    assert [(s.biome_id, s.richness_hat) for s in removed] == [("A", 100.0)]
    assert [s.sample_id for s in kept] == [s.sample_id for s in a + b if s not in removed]
