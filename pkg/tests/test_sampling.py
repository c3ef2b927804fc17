import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from dbtune.params import ParameterSpace, ParameterSpec
from dbtune.sampling import (apply_random_subset, count_non_default, lhs, make_design, read_design,
                             symmetric_lhs, write_design)

from conftest import make_space


def _stratum_counts(values, edges):
    return np.histogram(values, bins=edges)[0]


def test_lhs_one_sample_per_quarter():
    space = ParameterSpace((ParameterSpec("u", 0.5, "continuous", 0.0, 1.0),))
    d = lhs(space, 4, seed=3)
    np.testing.assert_array_equal(_stratum_counts(d.configs[:, 0], [0, .25, .5, .75, 1.0]), [1, 1, 1, 1])


@pytest.mark.parametrize("seed", range(5))
def test_lhs_gives_ten_of_hundred_strata_to_the_low_side(unit_space, seed):
    # strata are 0.099 wide; ten of them reach into [0.1, 1], the tenth straddles the default
    x = lhs(unit_space, 100, seed=seed).configs[:, 0]
    stratum = np.floor((x - 0.1) / 0.099).astype(int)
    assert np.sum(stratum * 0.099 + 0.1 <= 1.0) == 10
    assert np.sum(x < 1.0) in (9, 10)


def test_symmetric_lhs_balances_halves(unit_space):
    d = symmetric_lhs(unit_space, 100, seed=0)
    x = d.configs[:, 0]
    assert np.sum(x < 1.0) == 50 and np.sum(x >= 1.0) == 50
    assert np.all((x >= 0.1) & (x <= 10.0))


def test_symmetric_lhs_odd_n_extra_goes_low(unit_space):
    x = symmetric_lhs(unit_space, 5, seed=1).configs[:, 0]
    assert np.sum(x < 1.0) == 3


def test_symmetric_lhs_default_on_bound_uses_one_half():
    space = ParameterSpace((ParameterSpec("a", 0.0, "continuous", 0.0, 4.0),))
    x = symmetric_lhs(space, 8, seed=2).configs[:, 0]
    np.testing.assert_array_equal(_stratum_counts(x, np.linspace(0, 4, 9)), np.ones(8))


@settings(max_examples=30, deadline=None)
@given(st.integers(1, 60), st.integers(0, 2**32 - 1))
def test_lhs_stratification_property(n, seed):
    space = make_space([1.0, 7.5, 0.02])
    d = lhs(space, n, seed)
    for j, p in enumerate(space.params):
        edges = np.linspace(p.lo, p.hi, n + 1)
        k = np.clip(np.searchsorted(edges, d.configs[:, j], side="right") - 1, 0, n - 1)
        assert sorted(k.tolist()) == list(range(n))


@settings(max_examples=30, deadline=None)
@given(st.integers(2, 60), st.integers(0, 2**32 - 1))
def test_symmetric_lhs_stratification_property(n, seed):
    space = make_space([1.0, 40.0])
    d = symmetric_lhs(space, n, seed)
    n_low, n_high = (n + 1) // 2, n // 2
    for j, p in enumerate(space.params):
        x = d.configs[:, j]
        low, high = np.sort(x[x < p.default]), np.sort(x[x >= p.default])
        assert len(low) == n_low and len(high) == n_high
        lo_k = np.floor((low - p.lo) / (p.default - p.lo) * n_low).astype(int)
        hi_k = np.minimum(np.floor((high - p.default) / (p.hi - p.default) * n_high).astype(int), n_high - 1)
        assert lo_k.tolist() == list(range(n_low))
        assert hi_k.tolist() == list(range(n_high))


def test_integer_parameters_stay_integral_and_in_range():
    space = make_space([10, 3, 1000], kinds=["integer"] * 3)
    for fn in (lhs, symmetric_lhs):
        d = fn(space, 37, seed=4)
        assert np.all(d.configs == np.round(d.configs))
        for j in range(3):
            space.validate(d.configs[j])


def test_untunable_parameters_stay_at_default():
    space = make_space([1.0, 0.0, 5.0])
    d = symmetric_lhs(space, 20, seed=0)
    assert np.all(d.configs[:, 1] == 0.0)


def test_design_determinism(full_space):
    a = make_design(full_space, 50, 9, "symmetric_lhs", 50)
    b = make_design(full_space, 50, 9, "symmetric_lhs", 50)
    assert np.array_equal(a.configs, b.configs)
    c = make_design(full_space, 50, 10, "symmetric_lhs", 50)
    assert not np.array_equal(a.configs, c.configs)


def test_rss_fifty_of_350(full_space):
    d = make_design(full_space, 200, 0, "symmetric_lhs", 50)
    counts = count_non_default(d.configs, full_space)
    assert np.all(counts == 50)


def test_rss_only_resets_to_default(full_space):
    base = symmetric_lhs(full_space, 30, seed=5)
    sub = apply_random_subset(base, 20, full_space, seed=6)
    changed = sub.configs != base.configs
    assert np.all(sub.configs[changed] == np.broadcast_to(full_space.defaults, sub.configs.shape)[changed])


def test_rss_equal_to_tunable_count_is_identity():
    space = make_space([1.0, 2.0, 3.0])
    base = symmetric_lhs(space, 10, seed=0)
    assert np.array_equal(apply_random_subset(base, 3, space, seed=1).configs, base.configs)


def test_rss_too_large_rejected():
    space = make_space([1.0, 2.0])
    with pytest.raises(ValueError):
        apply_random_subset(symmetric_lhs(space, 4, 0), 3, space, 0)


@pytest.mark.parametrize("n", [0, -1, 2.5])
def test_bad_design_size(unit_space, n):
    with pytest.raises(ValueError):
        lhs(unit_space, n, 0)


def test_unknown_strategy(unit_space):
    with pytest.raises(ValueError):
        make_design(unit_space, 4, 0, "sobol")


def test_design_file_round_trip_is_byte_stable(tmp_path, full_space):
    d = make_design(full_space, 12, 3, "symmetric_lhs", 50)
    p1, p2 = tmp_path / "a.jsonl", tmp_path / "b.jsonl"
    write_design(d, full_space, p1, {"note": 1})
    write_design(make_design(full_space, 12, 3, "symmetric_lhs", 50), full_space, p2, {"note": 1})
    assert p1.read_bytes() == p2.read_bytes()
    back = read_design(p1, full_space)
    np.testing.assert_array_equal(back.configs, d.configs)
    assert back.rss == 50 and back.strategy == "symmetric_lhs"
