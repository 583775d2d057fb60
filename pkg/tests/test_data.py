import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from unideal.data import (
    ClientDataView,
    CsvSchema,
    DomainSpec,
    TabularDataset,
    dirichlet_label_skew,
    feature_subsample,
    full_view,
    load_csv_dataset,
    rotation_matrix,
    standardize_numeric,
    synth_cross_domain,
    train_test_split,
    uniform_partition,
)
from unideal.errors import ConfigurationError, IngestionError, InvalidInputError


def dataset(n=10, d=6, c=2):
    x = np.arange(n * d, dtype=float).reshape(n, d)
    y = np.arange(n) % c
    return TabularDataset(x, y, tuple(f"f{j}" for j in range(d)), c)


def lstsq_probe(x, y, c):
    X = np.c_[x, np.ones(len(x))]
    return np.linalg.lstsq(X, np.eye(c)[y], rcond=None)[0]


def probe_accuracy(w, x, y):
    return float(np.mean((np.c_[x, np.ones(len(x))] @ w).argmax(axis=1) == y))


class TestTypes:
    def test_validation(self):
        with pytest.raises(InvalidInputError):
            TabularDataset(np.zeros((0, 2)), np.zeros(0, dtype=int), ("a", "b"), 2)
        with pytest.raises(InvalidInputError):
            TabularDataset(np.array([[np.nan]]), np.array([0]), ("a",), 2)
        with pytest.raises(InvalidInputError):
            TabularDataset(np.zeros((1, 1)), np.array([2]), ("a",), 2)

    def test_view_rejects_overlap(self):
        ds = dataset()
        with pytest.raises(InvalidInputError):
            ClientDataView(ds, np.arange(2), np.arange(4), np.array([0, 1]), np.array([1, 2]))


class TestSynthetic:
    def test_rotation_matrix_is_orthogonal(self):
        r = rotation_matrix(5, 0.7)
        assert np.allclose(r @ r.T, np.eye(5), atol=1e-12)
        assert np.allclose(rotation_matrix(2, math.pi / 2), [[0, -1], [1, 0]], atol=1e-12)

    def test_deterministic(self):
        spec = DomainSpec.rotated(3, 4, 3, seed=1)
        a = synth_cross_domain(spec, 3, 60, seed=2)
        b = synth_cross_domain(spec, 3, 60, seed=2)
        for da, db in zip(a, b):
            assert np.array_equal(da.features, db.features) and np.array_equal(da.labels, db.labels)

    def test_balanced_shared_prior(self):
        for ds in synth_cross_domain(DomainSpec.rotated(3, 4, 3), 3, 600, seed=0):
            assert np.bincount(ds.labels).tolist() == [200, 200, 200]

    def test_identity_transforms_give_iid_clients(self):
        means = np.array([[2.0, 0.0, 0.0], [0.0, 2.0, 0.0]])
        a, b = synth_cross_domain(DomainSpec.identity(2, means), 2, 4000, seed=0)
        for c in range(2):
            diff = a.features[a.labels == c].mean(axis=0) - b.features[b.labels == c].mean(axis=0)
            assert np.all(np.abs(diff) < 0.15)
        assert abs(a.features.std() - b.features.std()) < 0.05

    def test_rotation_probe_fixture(self):
        spec = DomainSpec.rotated(2, 10, 3, 90.0, 2.0, 1.0, seed=0)
        d1, d2 = synth_cross_domain(spec, 2, 600, seed=0)
        w1 = lstsq_probe(d1.features[:300], d1.labels[:300], 3)
        w2 = lstsq_probe(d2.features[:300], d2.labels[:300], 3)
        cross = probe_accuracy(w1, d2.features[300:], d2.labels[300:])
        own1 = probe_accuracy(w1, d1.features[300:], d1.labels[300:])
        own2 = probe_accuracy(w2, d2.features[300:], d2.labels[300:])
        assert (cross, own1, own2) == (0.34, 0.87, 0.89)

    def test_invalid_specs(self):
        with pytest.raises(ConfigurationError):
            DomainSpec.rotated(2, 1, 3)
        with pytest.raises(ConfigurationError):
            DomainSpec(np.zeros((2, 2)), (np.zeros((2, 2)),), (np.zeros(2),), 1.0)
        with pytest.raises(ConfigurationError):
            synth_cross_domain(DomainSpec.rotated(2, 4, 3), 3, 60, 0)
        with pytest.raises(ConfigurationError):
            synth_cross_domain(DomainSpec.rotated(2, 4, 3), 2, 2, 0)


class TestFeatureSubsample:
    def test_full(self):
        assert feature_subsample(dataset(), 1.0, 0).feature_idx.tolist() == list(range(6))

    def test_half_of_ten(self):
        assert feature_subsample(dataset(d=10), 0.5, 4).feature_idx.size == 5

    def test_fixture(self):
        assert feature_subsample(dataset(d=6), 0.5, 3).feature_idx.tolist() == [0, 1, 3]

    def test_errors(self):
        with pytest.raises(ConfigurationError):
            feature_subsample(dataset(d=6), 0.0, 0)
        with pytest.raises(ConfigurationError):
            feature_subsample(dataset(d=6), 0.05, 0)

    @given(st.integers(1, 20), st.floats(0.05, 1.0), st.integers(0, 2**32 - 1))
    def test_distinct_and_deterministic(self, d, frac, seed):
        ds = dataset(n=2, d=d)
        k = math.floor(frac * d + 0.5)
        if k == 0:
            with pytest.raises(ConfigurationError):
                feature_subsample(ds, frac, seed)
            return
        idx = feature_subsample(ds, frac, seed).feature_idx
        assert idx.size == k == np.unique(idx).size
        assert idx.tolist() == feature_subsample(ds, frac, seed).feature_idx.tolist()


class TestDirichlet:
    labels = np.repeat(np.arange(3), 100)

    def test_single_client(self):
        (part,) = dirichlet_label_skew(self.labels, 0.5, 1, 0)
        assert sorted(part.tolist()) == list(range(300))

    def test_fixture(self):
        parts = dirichlet_label_skew(self.labels, 0.5, 3, 11)
        hist = [np.bincount(self.labels[p], minlength=3).tolist() for p in parts]
        assert hist == [[0, 7, 80], [34, 35, 17], [66, 58, 3]]

    @settings(max_examples=40, deadline=None)
    @given(st.integers(3, 40), st.integers(1, 4), st.floats(0.1, 5.0), st.integers(0, 10_000))
    def test_exact_partition(self, n, k, alpha, seed):
        labels = np.arange(n) % 3
        try:
            parts = dirichlet_label_skew(labels, alpha, k, seed)
        except ConfigurationError:
            return  # an empty client on every retry is an accepted outcome for tiny n
        joined = np.concatenate(parts)
        assert sorted(joined.tolist()) == list(range(n))
        assert all(p.size > 0 for p in parts)

    def test_errors(self):
        with pytest.raises(ConfigurationError):
            dirichlet_label_skew(self.labels, 0.0, 3, 0)
        with pytest.raises(ConfigurationError):
            dirichlet_label_skew(np.array([0, 1]), 0.5, 3, 0)
        with pytest.raises(ConfigurationError):
            dirichlet_label_skew(np.array([0, 0, 0, 0]), 0.01, 4, 0, max_retries=2)

    def test_uniform_partition(self):
        parts = uniform_partition(10, 3, 0)
        assert sorted(np.concatenate(parts).tolist()) == list(range(10))
        assert sorted(p.size for p in parts) == [3, 3, 4]


class TestSplit:
    def test_balanced(self):
        view = train_test_split(full_view(dataset(n=10, c=2)), 0.5, 0)
        ds = view.dataset
        assert view.test_idx.size == view.train_idx.size == 5
        assert sorted(np.bincount(ds.labels[view.test_idx]).tolist()) == [2, 3]
        assert view.stratified

    def test_rounding(self):
        view = train_test_split(full_view(dataset(n=100, c=3)), 0.2, 7)
        assert view.test_idx.size == 20

    def test_deterministic(self):
        a = train_test_split(full_view(dataset(n=30, c=3)), 0.3, 5)
        b = train_test_split(full_view(dataset(n=30, c=3)), 0.3, 5)
        assert a.test_idx.tolist() == b.test_idx.tolist()

    def test_singleton_class_falls_back(self):
        ds = TabularDataset(np.zeros((5, 1)), np.array([0, 0, 0, 0, 1]), ("a",), 2)
        view = train_test_split(full_view(ds), 0.4, 0)
        assert not view.stratified
        assert view.test_idx.size == 2

    def test_errors(self):
        with pytest.raises(ConfigurationError):
            train_test_split(full_view(dataset()), 1.0, 0)

    @given(st.integers(4, 80), st.floats(0.05, 0.95), st.integers(0, 999))
    def test_disjoint_cover(self, n, frac, seed):
        view = train_test_split(full_view(dataset(n=n, c=2)), frac, seed)
        both = np.concatenate([view.train_idx, view.test_idx])
        assert sorted(both.tolist()) == list(range(n))
        # both sides stay non-empty
        assert view.test_idx.size == min(max(math.floor(frac * n + 0.5), 1), n - 1)


class TestCsv:
    schema = CsvSchema("label", ("a", "b"), ("c",))

    def write(self, tmp_path, text):
        p = tmp_path / "d.csv"
        p.write_text(text, encoding="utf-8")
        return p

    def test_two_rows(self, tmp_path):
        p = self.write(tmp_path, "a,b,c,label\n1,10,x,yes\n3,30,y,no\n")
        ds = load_csv_dataset(p, self.schema)
        assert ds.features.tolist() == [[-1.0, -1.0, 1.0, 0.0], [1.0, 1.0, 0.0, 1.0]]
        assert ds.feature_names == ("a", "b", "c=x", "c=y")
        assert ds.class_names == ("no", "yes") and ds.labels.tolist() == [1, 0]

    def test_header_only(self, tmp_path):
        with pytest.raises(IngestionError):
            load_csv_dataset(self.write(tmp_path, "a,b,c,label\n"), self.schema)

    def test_empty_file(self, tmp_path):
        with pytest.raises(IngestionError):
            load_csv_dataset(self.write(tmp_path, ""), self.schema)

    def test_one_hot(self, tmp_path):
        p = self.write(tmp_path, "c,label\na,0\nb,1\na,1\n")
        ds = load_csv_dataset(p, CsvSchema("label", (), ("c",)))
        assert ds.features.tolist() == [[1, 0], [0, 1], [1, 0]]
        assert np.all(ds.features.sum(axis=1) == 1)

    def test_missing_rows_dropped(self, tmp_path):
        p = self.write(tmp_path, "a,b,c,label\n1,2,x,p\n?,2,x,q\n3,,y,q\n4,5,y,q\n")
        ds = load_csv_dataset(p, self.schema, standardize=False)
        assert ds.n_samples == 2 and ds.dropped_rows == 2

    def test_malformed_rows_reported(self, tmp_path):
        p = self.write(tmp_path, "a,b,c,label\n1,2,x,p\nfoo,2,x,q\n3,4,y\n4,5,y,q\n")
        with pytest.raises(IngestionError) as err:
            load_csv_dataset(p, self.schema)
        assert err.value.rows == [3, 4]
        ds = load_csv_dataset(p, self.schema, max_bad_rows=2)
        assert ds.n_samples == 2

    def test_missing_column(self, tmp_path):
        with pytest.raises(IngestionError):
            load_csv_dataset(self.write(tmp_path, "a,label\n1,0\n2,1\n"), self.schema)

    def test_train_fold_statistics(self, rng):
        x = rng.normal(3.0, 2.0, size=(50, 3))
        ds = TabularDataset(x, np.arange(50) % 2, ("a", "b", "c"), 2)
        fit = np.arange(0, 50, 2)
        out = standardize_numeric(ds, 2, fit)
        assert np.all(np.abs(out.features[fit, :2].mean(axis=0)) < 1e-9)
        assert np.all(np.abs(out.features[fit, :2].std(axis=0) - 1) < 1e-9)
        assert np.array_equal(out.features[:, 2], x[:, 2])

    def test_constant_column_is_centred(self):
        ds = TabularDataset(np.array([[5.0], [5.0]]), np.array([0, 1]), ("a",), 2)
        assert standardize_numeric(ds, 1).features.tolist() == [[0.0], [0.0]]
