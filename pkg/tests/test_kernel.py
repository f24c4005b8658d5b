import math

import numpy as np
import pytest
import torch

from svtp.kernel import KernelParams, gram, gram_with_jitter
from svtp.linalg import NumericalError, chol_np, chol_torch, jitter_ladder


def make_params(lengthscale=1.0, signal_sd=1.0):
    return KernelParams(math.log(lengthscale), math.log(signal_sd))


class TestGram:
    def test_pairwise_values_against_direct_formula(self):
        rng = np.random.default_rng(0)
        A = rng.normal(size=(7, 3))
        B = rng.normal(size=(5, 3))
        ell, s = 0.7, 1.9
        K = gram(make_params(ell, s), A, B).numpy()
        for i in range(7):
            for j in range(5):
                d2 = np.sum((A[i] - B[j]) ** 2)
                assert K[i, j] == pytest.approx(s**2 * math.exp(-d2 / (2 * ell**2)), rel=1e-12)

    def test_diagonal_is_signal_variance(self):
        rng = np.random.default_rng(1)
        A = rng.normal(size=(10, 2))
        K = gram(make_params(1.3, 2.0), A, A).numpy()
        assert np.allclose(np.diag(K), 4.0, atol=1e-10)

    def test_symmetry_and_psd(self):
        rng = np.random.default_rng(2)
        for ell in (0.1, 1.0, 10.0):
            A = rng.normal(size=(20, 4))
            K = gram(make_params(ell, 1.5), A, A).numpy()
            assert np.allclose(K, K.T, atol=1e-12)
            w = np.linalg.eigvalsh(0.5 * (K + K.T))
            assert w.min() >= -1e-10 * w.max()

    def test_distant_points_decorrelate(self):
        A = np.array([[0.0], [100.0]])
        K = gram(make_params(1.0, 1.0), A, A).numpy()
        assert abs(K[0, 1]) < 1e-12

    def test_dimension_mismatch(self):
        with pytest.raises(ValueError):
            gram(make_params(), np.zeros((3, 2)), np.zeros((3, 4)))

    def test_gradient_flows_to_hyperparameters(self):
        p = KernelParams(
            torch.tensor(0.2, dtype=torch.float64, requires_grad=True),
            torch.tensor(-0.1, dtype=torch.float64, requires_grad=True),
        )
        A = torch.randn(6, 2, dtype=torch.float64)
        gram(p, A, A).sum().backward()
        assert p.log_lengthscale.grad is not None and torch.isfinite(p.log_lengthscale.grad)
        assert p.log_signal_sd.grad is not None and torch.isfinite(p.log_signal_sd.grad)

    def test_hyperparameter_gradients_match_finite_differences(self):
        rng = np.random.default_rng(3)
        A = torch.as_tensor(rng.normal(size=(8, 3)))
        w = torch.as_tensor(rng.normal(size=(8, 8)))

        def value(ll, ls):
            p = KernelParams(torch.tensor(ll, dtype=torch.float64), torch.tensor(ls, dtype=torch.float64))
            return float((w * gram(p, A, A)).sum())

        ll0, ls0 = 0.3, -0.2
        p = KernelParams(
            torch.tensor(ll0, dtype=torch.float64, requires_grad=True),
            torch.tensor(ls0, dtype=torch.float64, requires_grad=True),
        )
        (w * gram(p, A, A)).sum().backward()
        h = 1e-6
        fd_ll = (value(ll0 + h, ls0) - value(ll0 - h, ls0)) / (2 * h)
        fd_ls = (value(ll0, ls0 + h) - value(ll0, ls0 - h)) / (2 * h)
        assert float(p.log_lengthscale.grad) == pytest.approx(fd_ll, rel=1e-6)
        assert float(p.log_signal_sd.grad) == pytest.approx(fd_ls, rel=1e-6)


class TestJitter:
    def test_ladder_values(self):
        vals = list(jitter_ladder(1.0))
        assert vals[0] == 0.0
        assert vals[1] == pytest.approx(1e-8)
        assert vals[-1] == pytest.approx(1e-4)
        assert len(vals) == 6

    def test_chol_np_clean_matrix_needs_no_jitter(self):
        rng = np.random.default_rng(4)
        A = rng.normal(size=(5, 5))
        S = A @ A.T + 5 * np.eye(5)
        L, jit = chol_np(S)
        assert jit == 0.0
        assert np.allclose(L @ L.T, S, atol=1e-10)

    def test_chol_np_rescues_rank_deficient(self):
        # rank-1 plus zero diagonal elsewhere: singular but rescuable
        v = np.ones(4)
        S = np.outer(v, v)
        L, jit = chol_np(S)
        assert jit > 0.0
        assert np.allclose(L @ L.T, S + jit * np.eye(4), atol=1e-8)

    def test_chol_np_gives_up_on_indefinite(self):
        S = np.diag([1.0, -1.0])
        with pytest.raises(NumericalError):
            chol_np(S)

    def test_chol_torch_matches_numpy(self):
        rng = np.random.default_rng(5)
        A = rng.normal(size=(6, 6))
        S = A @ A.T + 6 * np.eye(6)
        Lt, jt = chol_torch(torch.as_tensor(S))
        Ln, jn = chol_np(S)
        assert jt == jn == 0.0
        assert np.allclose(Lt.numpy(), Ln, atol=1e-12)

    def test_gram_with_jitter_duplicate_points(self):
        # exact duplicates make the plain Gram singular; the wrapper must
        # still return a usable factor
        A = np.array([[0.0, 0.0], [0.0, 0.0], [1.0, 1.0]])
        Kj, L, jit = gram_with_jitter(make_params(), A)
        assert jit > 0.0
        assert np.allclose((L @ L.T).numpy(), Kj.numpy(), atol=1e-10)

    def test_gram_with_jitter_reports_total_jitter(self):
        rng = np.random.default_rng(6)
        A = rng.normal(size=(10, 2))
        Kj, L, jit = gram_with_jitter(make_params(2.0, 1.0), A)
        K = gram(make_params(2.0, 1.0), A, A)
        assert np.allclose(Kj.numpy(), K.numpy() + jit * np.eye(10), atol=1e-14)
