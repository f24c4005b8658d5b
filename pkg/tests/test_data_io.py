import numpy as np
import pytest

from svtp.data_io import (
    Dataset,
    load_csv,
    minibatch_indices,
    split_standardize,
    synthetic_t_regression,
)


class TestDataset:
    def test_rejects_nan(self):
        with pytest.raises(ValueError):
            Dataset(X=[[1.0], [float("nan")]], y=[0.0, 1.0])

    def test_rejects_row_mismatch(self):
        with pytest.raises(ValueError):
            Dataset(X=[[1.0], [2.0]], y=[0.0])

    def test_unstandardize_roundtrip(self):
        d = Dataset(X=[[0.0]], y=[0.0], y_mean=3.0, y_sd=2.0)
        assert np.allclose(d.unstandardize_y(np.array([0.0, 1.0])), [3.0, 5.0])


class TestLoadCsv:
    def test_header_target_by_name(self, tmp_path):
        p = tmp_path / "d.csv"
        p.write_text("a,b,target\n1,2,3\n4,5,6\n")
        d = load_csv(str(p), "target")
        assert d.feature_names == ["a", "b"]
        assert np.allclose(d.X, [[1, 2], [4, 5]])
        assert np.allclose(d.y, [3, 6])

    def test_no_header_target_by_index(self, tmp_path):
        p = tmp_path / "d.csv"
        p.write_text("1,2,3\n4,5,6\n")
        d = load_csv(str(p), 0, has_header=False)
        assert np.allclose(d.y, [1, 4])
        assert np.allclose(d.X, [[2, 3], [5, 6]])

    def test_malformed_rows_dropped_with_line_numbers(self, tmp_path):
        p = tmp_path / "d.csv"
        p.write_text("a,b\n1,2\noops,4\n5,6\n7\n")
        with pytest.warns(UserWarning, match=r"line\(s\) \[3, 5\]"):
            d = load_csv(str(p), "b")
        assert np.allclose(d.y, [2, 6])

    def test_missing_target_column(self, tmp_path):
        p = tmp_path / "d.csv"
        p.write_text("a,b\n1,2\n")
        with pytest.raises(ValueError, match="target column"):
            load_csv(str(p), "c")

    def test_header_detected_when_claimed_absent(self, tmp_path):
        p = tmp_path / "d.csv"
        p.write_text("a,b\n1,2\n")
        with pytest.raises(ValueError, match="row 1"):
            load_csv(str(p), 0, has_header=False)

    def test_missing_file(self):
        with pytest.raises(FileNotFoundError):
            load_csv("/nonexistent/file.csv", "y")

    def test_empty_file(self, tmp_path):
        p = tmp_path / "d.csv"
        p.write_text("")
        with pytest.raises(ValueError):
            load_csv(str(p), "y")


class TestSplitStandardize:
    def test_train_statistics_applied_to_both(self):
        rng = np.random.default_rng(0)
        d = Dataset(X=rng.normal(2.0, 3.0, (200, 3)), y=rng.normal(5.0, 2.0, 200))
        tr, te = split_standardize(d, 0.8, seed=1)
        assert tr.n == 160 and te.n == 40
        assert np.allclose(tr.X.mean(axis=0), 0.0, atol=1e-12)
        assert np.allclose(tr.X.std(axis=0), 1.0, atol=1e-12)
        assert tr.y.mean() == pytest.approx(0.0, abs=1e-12)
        # test rows must unstandardize back into the original value range
        assert np.allclose(te.unstandardize_y(te.y).mean(), d.y.mean(), atol=1.5)

    def test_split_is_a_partition(self):
        d = Dataset(X=np.arange(50, dtype=float).reshape(-1, 1), y=np.arange(50, dtype=float))
        tr, te = split_standardize(d, 0.7, seed=2)
        orig_tr = tr.X[:, 0] * tr.x_sd[0] + tr.x_mean[0]
        orig_te = te.X[:, 0] * te.x_sd[0] + te.x_mean[0]
        recovered = np.sort(np.concatenate([orig_tr, orig_te]))
        assert np.allclose(recovered, np.arange(50))

    def test_deterministic_in_seed(self):
        d = Dataset(X=np.random.default_rng(3).normal(size=(30, 2)), y=np.arange(30, dtype=float))
        a = split_standardize(d, 0.5, seed=9)
        b = split_standardize(d, 0.5, seed=9)
        assert np.array_equal(a[0].X, b[0].X) and np.array_equal(a[1].y, b[1].y)

    def test_zero_variance_column_dropped(self):
        rng = np.random.default_rng(4)
        X = np.column_stack([rng.normal(size=40), np.full(40, 7.0)])
        d = Dataset(X=X, y=rng.normal(size=40), feature_names=["good", "flat"])
        with pytest.warns(UserWarning, match="flat"):
            tr, te = split_standardize(d, 0.5, seed=5)
        assert tr.d == 1 and tr.feature_names == ["good"]

    def test_constant_target_rejected(self):
        d = Dataset(X=np.random.default_rng(5).normal(size=(20, 1)), y=np.full(20, 1.0))
        with pytest.raises(ValueError, match="constant"):
            split_standardize(d, 0.5, seed=0)

    def test_bad_fraction(self):
        d = Dataset(X=np.zeros((10, 1)), y=np.arange(10, dtype=float))
        with pytest.raises(ValueError):
            split_standardize(d, 1.0, seed=0)


class TestSynthetic:
    def test_shapes_and_determinism(self):
        a = synthetic_t_regression(100, 2, 3.0, 0.1, seed=7)
        b = synthetic_t_regression(100, 2, 3.0, 0.1, seed=7)
        assert a.X.shape == (100, 2) and a.y.shape == (100,)
        assert np.array_equal(a.X, b.X) and np.array_equal(a.y, b.y)

    def test_noiseless_signal(self):
        d = synthetic_t_regression(50, 2, 3.0, 0.0, seed=8)
        assert np.allclose(d.y, np.sin(3 * d.X[:, 0]) + 0.5 * d.X[:, 1])

    def test_heavy_tails_present(self):
        # t3 noise produces excess kurtosis that Gaussian noise would not
        d = synthetic_t_regression(20000, 1, 3.0, 1.0, seed=9)
        resid = d.y - np.sin(3 * d.X[:, 0])
        z = (resid - resid.mean()) / resid.std()
        assert np.mean(z**4) > 4.0

    def test_rejects_low_dof(self):
        with pytest.raises(ValueError):
            synthetic_t_regression(10, 1, 2.0, 1.0, seed=0)


class TestMinibatch:
    def test_deterministic_and_distinct(self):
        a = minibatch_indices(100, 10, seed=1, t=5)
        b = minibatch_indices(100, 10, seed=1, t=5)
        assert np.array_equal(a, b)
        assert len(set(a.tolist())) == 10

    def test_varies_with_iteration(self):
        a = minibatch_indices(1000, 50, seed=1, t=1)
        b = minibatch_indices(1000, 50, seed=1, t=2)
        assert not np.array_equal(a, b)

    def test_oversized_batch_warns(self):
        with pytest.warns(UserWarning):
            idx = minibatch_indices(5, 10, seed=0, t=0)
        assert np.array_equal(idx, np.arange(5))

    def test_coverage_over_many_draws(self):
        seen = set()
        for t in range(200):
            seen.update(minibatch_indices(30, 5, seed=2, t=t).tolist())
        assert seen == set(range(30))
