import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from hypothesis.extra import numpy as hnp

from conftest import make_dataset
from dialog_expertise.errors import SchemaMismatchError, TrainingError
from dialog_expertise.features import ALL, FIRST_TURN
from dialog_expertise.prep import (
    CfsEvaluator,
    Conditioner,
    Dataset,
    apply_conditioner,
    best_first_select,
    cfs_merit,
    discretize,
    equal_frequency_bins,
    fit_conditioner,
    spread_subsample,
    symmetrical_uncertainty,
)


def mutual_information(x, y):
    """Direct plug-in estimate from a contingency table, natural logs."""
    xs, xi = np.unique(x, return_inverse=True)
    ys, yi = np.unique(y, return_inverse=True)
    table = np.zeros((len(xs), len(ys)))
    np.add.at(table, (xi, yi), 1)
    p = table / table.sum()
    px, py = p.sum(1, keepdims=True), p.sum(0, keepdims=True)
    nz = p > 0
    return float((p[nz] * np.log(p[nz] / (px @ py)[nz])).sum())


def entropy(x):
    _, c = np.unique(x, return_counts=True)
    p = c / c.sum()
    return float(-(p * np.log(p)).sum())


# -- Dataset ---------------------------------------------------------------------


def test_dataset_shape_checked():
    with pytest.raises(SchemaMismatchError):
        Dataset(np.zeros((3, 2)), [0, 1, 0], ("a",))
    with pytest.raises(SchemaMismatchError):
        Dataset(np.zeros((2, 1)), [0, 2], ("a",))


def test_dataset_from_vectors(balanced_dataset):
    assert balanced_dataset.features == ALL.features
    assert len(balanced_dataset) == 160
    assert tuple(balanced_dataset.class_counts()) == (80, 80)
    ft = balanced_dataset.project(FIRST_TURN)
    assert ft.X.shape == (160, 6)
    with pytest.raises(ValueError):
        balanced_dataset.project(())


# -- spread subsample ------------------------------------------------------------


def lopsided(n0=235, n1=80):
    X = np.arange(n0 + n1, dtype=float).reshape(-1, 1)
    return make_dataset(X, [0] * n0 + [1] * n1)


def test_spread_subsample_counts():
    out = spread_subsample(lopsided(), seed=3)
    assert tuple(out.class_counts()) == (80, 80)


def test_spread_subsample_balanced_unchanged():
    ds = lopsided(50, 50)
    out = spread_subsample(ds, seed=9)
    assert out.ids == ds.ids


def test_spread_subsample_deterministic_and_ordered():
    a = spread_subsample(lopsided(), seed=4)
    b = spread_subsample(lopsided(), seed=4)
    assert a.ids == b.ids
    rows = [int(i) for i in a.ids]
    assert rows == sorted(rows)
    assert spread_subsample(lopsided(), seed=5).ids != a.ids


def test_spread_subsample_needs_two_classes():
    with pytest.raises(TrainingError):
        spread_subsample(lopsided(10, 0), seed=1)


@settings(max_examples=60, deadline=None)
@given(st.integers(1, 60), st.integers(1, 60), st.integers(0, 2**31))
def test_spread_subsample_property(n0, n1, seed):
    ds = lopsided(n0, n1)
    out = spread_subsample(ds, seed)
    assert out.class_counts()[0] == out.class_counts()[1] == min(n0, n1)
    assert set(out.ids) <= set(ds.ids)
    for i, row_id in enumerate(out.ids):
        assert out.X[i, 0] == float(row_id)


# -- conditioner -----------------------------------------------------------------


def test_conditioner_examples():
    train = make_dataset([[0.0], [10.0]], [0, 1])
    c = fit_conditioner(train)
    test = make_dataset([[5.0], [20.0], [np.nan]], [0, 1, 0])
    out = apply_conditioner(c, test).X[:, 0]
    assert out.tolist() == [0.5, 2.0, 0.5]


def test_conditioner_all_missing_column_names_feature():
    train = make_dataset([[1.0, np.nan], [2.0, np.nan]], [0, 1], ("a", "b"))
    with pytest.raises(TrainingError, match="b"):
        fit_conditioner(train)


def test_conditioner_without_normalization_only_imputes():
    train = make_dataset([[1.0], [3.0], [np.nan]], [0, 1, 0])
    c = fit_conditioner(train, normalize=False)
    assert apply_conditioner(c, train).X[:, 0].tolist() == [1.0, 3.0, 2.0]


def test_conditioner_constant_column_maps_to_zero():
    train = make_dataset([[4.0], [4.0]], [0, 1])
    assert apply_conditioner(fit_conditioner(train), train).X[:, 0].tolist() == [0.0, 0.0]


def test_conditioner_schema_check_and_round_trip():
    train = make_dataset([[0.0, 1.0], [10.0, 3.0]], [0, 1], ("a", "b"))
    c = fit_conditioner(train)
    with pytest.raises(SchemaMismatchError):
        apply_conditioner(c, train.project(("b", "a")))
    back = Conditioner.from_dict(c.to_dict())
    assert np.array_equal(back.transform(train.X), c.transform(train.X))


@settings(max_examples=100, deadline=None)
@given(
    hnp.arrays(
        np.float64,
        st.tuples(st.integers(2, 30), st.integers(1, 4)),
        elements=st.one_of(st.just(np.nan), st.floats(-1e6, 1e6)),
    )
)
def test_conditioner_maps_training_into_unit_interval(X):
    X[0] = np.nan_to_num(X[0], nan=0.0)  # every column needs one observed value
    ds = make_dataset(X, [i % 2 for i in range(len(X))])
    out = apply_conditioner(fit_conditioner(ds), ds).X
    assert not np.isnan(out).any()
    assert (out >= 0.0).all() and (out <= 1.0).all()


# -- symmetrical uncertainty -----------------------------------------------------


def test_su_identical_is_one():
    y = np.array([0, 1] * 50)
    assert symmetrical_uncertainty(y, y) == pytest.approx(1.0)


def test_su_constant_is_zero():
    assert symmetrical_uncertainty(np.zeros(20), np.array([0, 1] * 10)) == 0.0


def test_su_length_mismatch():
    with pytest.raises(ValueError):
        symmetrical_uncertainty([0, 1, 2], [0, 1])


def test_su_independent_noise_small_and_matches_direct_computation():
    rng = np.random.default_rng(0)
    x = rng.uniform(size=10_000)
    y = rng.integers(0, 2, size=10_000)
    codes = discretize(x, equal_frequency_bins(x, 10))
    assert len(np.unique(codes)) == 10
    su = symmetrical_uncertainty(codes, y)
    assert su < 0.05
    oracle = 2 * mutual_information(codes, y) / (entropy(codes) + entropy(y))
    assert su == pytest.approx(oracle, abs=1e-12)


@settings(max_examples=100, deadline=None)
@given(
    st.lists(st.tuples(st.integers(0, 4), st.integers(0, 2)), min_size=1, max_size=60),
)
def test_su_symmetric_bounded_and_matches_oracle(pairs):
    x = np.array([p[0] for p in pairs])
    y = np.array([p[1] for p in pairs])
    su = symmetrical_uncertainty(x, y)
    assert 0.0 <= su <= 1.0
    assert su == pytest.approx(symmetrical_uncertainty(y, x), abs=1e-12)
    hx, hy = entropy(x), entropy(y)
    oracle = 0.0 if hx == 0 or hy == 0 else 2 * mutual_information(x, y) / (hx + hy)
    assert su == pytest.approx(min(1.0, max(0.0, oracle)), abs=1e-9)


def test_equal_frequency_bins_missing_get_own_code():
    v = np.array([np.nan, 1.0, 2.0, 3.0, 4.0])
    codes = discretize(v, equal_frequency_bins(v, 2))
    assert codes[0] == -1
    assert (codes[1:] >= 0).all()


# -- CFS merit -------------------------------------------------------------------


def informative_dataset(n=400, n_noise=5, seed=0):
    rng = np.random.default_rng(seed)
    y = rng.integers(0, 2, size=n)
    signal = y + rng.normal(0, 0.3, size=n)
    noise = rng.uniform(size=(n, n_noise))
    names = ("signal",) + tuple(f"noise{i}" for i in range(n_noise))
    return make_dataset(np.column_stack([signal, noise]), y, names)


def test_single_feature_merit_is_su_with_class():
    ds = informative_dataset()
    ev = CfsEvaluator(ds)
    assert cfs_merit(["signal"], ds) == pytest.approx(ev.class_su[0], abs=1e-15)
    assert cfs_merit(["signal"], ds) > 0.3


def test_duplicate_copies_do_not_raise_merit():
    # r_ff = 1, k = 2: 2r / sqrt(2 + 2) = r, so the pair ties the single copy.
    ds = informative_dataset()
    dup = ds.with_columns(ds.X[:, 0], ["copy"])
    single = cfs_merit(["signal"], dup)
    pair = cfs_merit(["signal", "copy"], dup)
    assert pair == pytest.approx(single, abs=1e-12)
    assert not pair > single + 1e-12


def test_noise_subset_merit_near_zero():
    ds = informative_dataset(n=2000)
    noise = [f"noise{i}" for i in range(5)]
    assert cfs_merit(noise, ds) < 0.05


def test_cfs_merit_requires_subset():
    with pytest.raises(ValueError):
        cfs_merit([], informative_dataset())


@settings(max_examples=40, deadline=None)
@given(st.permutations(["signal", "noise0", "noise1", "noise2"]))
def test_cfs_merit_permutation_invariant(order):
    ds = informative_dataset(n=200)
    assert cfs_merit(order, ds) == cfs_merit(["signal", "noise0", "noise1", "noise2"], ds)


def test_cfs_merit_formula_oracle():
    ds = informative_dataset(n=300)
    ev = CfsEvaluator(ds)
    sub = [0, 2, 4]
    r_cf = np.mean([symmetrical_uncertainty(ev.codes[j], ds.y) for j in sub])
    r_ff = np.mean([symmetrical_uncertainty(ev.codes[a], ev.codes[b]) for a, b in ((0, 2), (0, 4), (2, 4))])
    expected = 3 * r_cf / math.sqrt(3 + 6 * r_ff)
    assert cfs_merit([ds.features[j] for j in sub], ds) == pytest.approx(expected, abs=1e-12)


# -- best-first ------------------------------------------------------------------


def test_best_first_picks_informative_feature():
    res = best_first_select(informative_dataset(seed=2))
    assert res.selected == ("signal",)
    assert res.merit == pytest.approx(cfs_merit(res.selected, informative_dataset(seed=2)))


def test_best_first_identical_copies_selects_one():
    ds = informative_dataset(n_noise=0)
    copies = make_dataset(np.repeat(ds.X, 4, axis=1), ds.y, ("a", "b", "c", "d"))
    res = best_first_select(copies)
    assert res.selected == ("a",)


def test_best_first_termination_in_trace():
    ds = informative_dataset(seed=3)
    res = best_first_select(ds, termination=5)
    # Replay the expansions: after the last improvement there are at most 5 stagnant ones.
    improving, best = [], -math.inf
    ev = CfsEvaluator(ds)
    for names in res.expanded:
        node = tuple(ds.features.index(f) for f in names)
        children = [tuple(sorted(node + (j,))) for j in range(len(ds.features)) if j not in node]
        top = max((ev.merit(c) for c in children), default=-math.inf)
        improving.append(top > best + 1e-12)
        best = max(best, top)
    stale_tail = len(improving) - 1 - max(i for i, up in enumerate(improving) if up)
    assert stale_tail <= 5
    assert len(res.expanded) <= 64  # 2^6 subsets bound the search
    short = best_first_select(ds, termination=1)
    assert len(short.expanded) <= len(res.expanded)


def test_best_first_single_feature():
    ds = informative_dataset(n_noise=0)
    assert best_first_select(ds).selected == ("signal",)


def test_best_first_tie_prefers_lexicographic_order():
    # Two perfect copies with no redundancy penalty difference: the smaller, earlier name wins.
    y = np.array([0, 1] * 20)
    ds = make_dataset(np.column_stack([y, y]).astype(float), y, ("b", "a"))
    assert best_first_select(ds).selected == ("a",)


@settings(max_examples=15, deadline=None)
@given(st.integers(0, 10_000))
def test_best_first_dominates_singletons(seed):
    rng = np.random.default_rng(seed)
    n = 120
    y = rng.integers(0, 2, size=n)
    X = np.column_stack([y + rng.normal(0, s, size=n) for s in (0.4, 0.8, 1.5)] + [rng.uniform(size=n)])
    ds = make_dataset(X, y)
    res = best_first_select(ds)
    assert res.selected
    assert res.merit == pytest.approx(cfs_merit(res.selected, ds), abs=1e-12)
    for f in ds.features:
        assert res.merit >= cfs_merit([f], ds) - 1e-12
