import csv
import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from condot.data import (CovariateGroup, DataError, Dataset, SplitSpec, SyntheticFamily,
                         group_rows, load_csv, normalize_covariate, save_csv, split,
                         synth_generate)


def write_rows(path, header, rows):
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(header)
        w.writerows(rows)


def make(counts, d=1):
    return Dataset([CovariateGroup([float(i)] * d, np.arange(c, dtype=float))
                    for i, c in enumerate(counts)], d)


def test_grouping_by_covariate(tmp_path):
    p = tmp_path / "d.csv"
    write_rows(p, ["a", "b", "y"], [[1, 0, 5.0], [2, 2, 1.0], [1, 0, 6.0]])
    ds = load_csv(p)
    assert len(ds) == 2
    assert list(ds.counts) == [2, 1]
    assert np.array_equal(ds.groups[0].x, [1.0, 0.0])
    assert np.array_equal(ds.groups[0].responses, [5.0, 6.0])


def test_header_only_is_empty_error(tmp_path):
    p = tmp_path / "d.csv"
    write_rows(p, ["a", "y"], [])
    with pytest.raises(DataError, match="no rows"):
        load_csv(p)


def test_load_errors(tmp_path):
    with pytest.raises(DataError, match="no such file"):
        load_csv(tmp_path / "missing.csv")
    p = tmp_path / "d.csv"
    write_rows(p, ["a", "y"], [[1, 2], ["oops", 3]])
    with pytest.raises(DataError, match="non-numeric"):
        load_csv(p)
    write_rows(p, ["a", "b"], [[1, 2]])
    with pytest.raises(DataError, match="response column"):
        load_csv(p)


def test_earnings_table_group_count(tmp_path, rng):
    cols = ["earning74", "earning75", "black", "hispanic", "married", "age", "education",
            "nodegree", "earning78"]
    rows = []
    for _ in range(600):
        cov = [rng.choice([0, 1000, 2500]), rng.choice([0, 500]), rng.integers(0, 2),
               rng.integers(0, 2), rng.integers(0, 2), rng.integers(20, 24),
               rng.integers(10, 12), rng.integers(0, 2)]
        rows.append([str(int(v)) for v in cov] + [f"{rng.uniform(0, 30000):.2f}"])
    p = tmp_path / "earnings.csv"
    write_rows(p, cols, rows)
    # independent count of distinct covariate rows straight from the text
    with open(p) as fh:
        lines = fh.read().splitlines()[1:]
    distinct = len({",".join(line.split(",")[:-1]) for line in lines})
    ds = load_csv(p, "earning78")
    assert ds.d == 8
    assert len(ds) == distinct
    assert ds.n_obs == 600


def test_split_rule():
    tr, va, te = split(make([35, 25, 1]))
    assert list(te.counts) == [35]
    assert list(va.counts) == [25]
    assert list(tr.counts) == [1]
    tr, va, te = split(make([30, 31, 20, 21]))
    assert sorted(va.counts) == [21, 30]
    assert list(te.counts) == [31]
    assert list(tr.counts) == [20]
    tr, va, te = split(make([1, 1, 1]))
    assert len(tr) == 3 and len(va) == 0 and len(te) == 0


def test_split_shares_train_normalizer():
    ds = Dataset([CovariateGroup([0.0], [1.0]), CovariateGroup([2.0], [1.0]),
                  CovariateGroup([10.0], np.zeros(40))], 1)
    tr, va, te = split(ds)
    assert te.normalizer is tr.normalizer and va.normalizer is tr.normalizer
    assert tr.normalizer.x_mean[0] == 1.0 and tr.normalizer.x_std[0] == 1.0


@settings(max_examples=40, deadline=None)
@given(st.lists(st.integers(1, 60), min_size=0, max_size=25))
def test_split_partitions(counts):
    ds = make(counts)
    parts = split(ds)
    ids = [tuple(g.x) for p in parts for g in p.groups]
    assert sorted(ids) == sorted(tuple(g.x) for g in ds.groups)
    assert len(set(ids)) == len(ids)


def test_split_spec_invariant():
    with pytest.raises(ValueError):
        SplitSpec(test_min_freq=10, val_min_freq=10)


def test_normalize_covariate(rng):
    X = rng.standard_normal((6, 3)) * [1, 5, 0.1] + [0, 3, -2]
    ds = Dataset([CovariateGroup(x, [0.0]) for x in X], 3)
    assert np.allclose(normalize_covariate(ds, ds.normalizer.x_mean), 0.0)
    x = rng.standard_normal(3)
    mean = [sum(X[i, k] for i in range(6)) / 6 for k in range(3)]
    std = [math.sqrt(sum((X[i, k] - mean[k]) ** 2 for i in range(6)) / 6) for k in range(3)]
    expect = [(x[k] - mean[k]) / std[k] for k in range(3)]
    assert np.allclose(normalize_covariate(ds, x), expect, rtol=0, atol=1e-12)
    with pytest.raises(ValueError):
        normalize_covariate(ds, np.zeros(2))


def test_single_group_std_fallback():
    ds = Dataset([CovariateGroup([2.0, -1.0], [0.0, 1.0])], 2)
    x = np.array([5.0, 5.0])
    assert np.array_equal(normalize_covariate(ds, x), x - [2.0, -1.0])


def test_csv_roundtrip(tmp_path, rng):
    groups = [CovariateGroup(rng.standard_normal(2), rng.standard_normal(rng.integers(1, 4)))
              for _ in range(8)]
    ds = Dataset(groups, 2, columns=["u", "v"])
    p = tmp_path / "rt.csv"
    save_csv(ds, p)
    back = load_csv(p)
    assert back.columns == ["u", "v"]
    assert len(back) == len(ds)
    for a, b in zip(ds.groups, back.groups):
        assert a.x.tobytes() == b.x.tobytes()
        assert a.responses.tobytes() == b.responses.tobytes()


def test_grouping_row_order_independent(rng):
    X = rng.integers(0, 3, size=(30, 2)).astype(float)
    y = rng.standard_normal(30)
    perm = rng.permutation(30)
    a = {g.x.tobytes(): sorted(g.responses) for g in group_rows(X, y)}
    b = {g.x.tobytes(): sorted(g.responses) for g in group_rows(X[perm], y[perm])}
    assert a == b


def test_synth_deterministic():
    fam = SyntheticFamily("two-component-mixture", seed=7, d=2)
    a = synth_generate(fam, 20, (1, 3), n_val=3, n_test=3, eval_responses=5)
    b = synth_generate(fam, 20, (1, 3), n_val=3, n_test=3, eval_responses=5)
    for pa, pb in zip((a.train, a.val, a.test), (b.train, b.val, b.test)):
        for ga, gb in zip(pa.groups, pb.groups):
            assert ga.x.tobytes() == gb.x.tobytes()
            assert ga.responses.tobytes() == gb.responses.tobytes()


def test_synth_zero_noise_hits_mean():
    fam = SyntheticFamily("location-scale-gaussian", {"noise": 0.0}, seed=3)
    sp = synth_generate(fam, 10, (2, 4))
    for g in sp.train.groups:
        assert np.all(g.responses == fam.mean(g.x))


def test_synth_splits_disjoint():
    fam = SyntheticFamily("heteroscedastic-sine", seed=1)
    sp = synth_generate(fam, 50, (1, 5), n_val=20, n_test=20, eval_responses=3)
    keys = [g.x.tobytes() for p in (sp.train, sp.val, sp.test) for g in p.groups]
    assert len(keys) == len(set(keys)) == 90
    assert set(sp.train.counts) <= {1, 2, 3, 4, 5}


@pytest.mark.parametrize("name", ["location-scale-gaussian", "two-component-mixture",
                                  "heteroscedastic-sine"])
def test_oracle_mean_and_cdf(name):
    fam = SyntheticFamily(name, seed=0, d=2)
    x = np.array([0.3, 0.8])
    rng = np.random.default_rng(99)
    s = fam.sample(x, 100_000, rng)
    se = s.std() / math.sqrt(s.size)
    assert abs(s.mean() - fam.mean(x)) < 3 * se
    # empirical CDF agrees with the closed form (DKW-scale tolerance)
    ys = np.quantile(s, [0.1, 0.5, 0.9])
    emp = np.array([(s <= y).mean() for y in ys])
    assert np.abs(emp - fam.cdf(x, ys)).max() < 0.01


def test_unknown_family():
    with pytest.raises(ValueError, match="unknown synthetic family"):
        SyntheticFamily("banana")
