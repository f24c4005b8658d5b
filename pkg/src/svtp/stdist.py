"""Multivariate Student-t distributions in the (nu - 2)-scaled parameterization.

With the quadratic form divided by (nu - 2) instead of nu, the matrix
parameter of the dense form *is* the covariance whenever nu > 2, and the
diagonal form has covariance diag(sigma^2) exactly.  The dense form backs
the sparse prior p(u); the diagonal form is the variational posterior.
"""

import math
from dataclasses import dataclass

import numpy as np
import torch

from svtp.linalg import chol_torch
from svtp.special import digamma

__all__ = [
    "DenseStudentT",
    "DiagStudentT",
    "TSampleBatch",
    "log_density_dense",
    "log_density_diag",
    "sample_diag",
    "score",
]

_DTYPE = torch.float64


def _as_tensor(x):
    if isinstance(x, torch.Tensor):
        return x.to(_DTYPE)
    return torch.as_tensor(np.asarray(x, dtype=np.float64))


@dataclass
class DenseStudentT:
    """Student-t with dof nu > 2, mean vector and full covariance matrix."""

    nu: float
    mean: torch.Tensor
    cov: torch.Tensor

    def __post_init__(self):
        self.mean = _as_tensor(self.mean).reshape(-1)
        self.cov = _as_tensor(self.cov)
        if float(self.nu) <= 2.0:
            raise ValueError(f"dof must exceed 2, got {float(self.nu)}")
        if self.cov.shape != (self.dim, self.dim):
            raise ValueError("cov must be square and match the mean length")

    @property
    def dim(self) -> int:
        return self.mean.shape[0]


@dataclass
class DiagStudentT:
    """Variational family: Student-t with diagonal covariance diag(sigma^2).

    Parameter vector ordering everywhere is (m_1..m_M, nu_tilde, s_1..s_M),
    a point in R^{2M+1}.
    """

    nu_tilde: float
    m: torch.Tensor
    sigma: torch.Tensor

    def __post_init__(self):
        self.m = _as_tensor(self.m).reshape(-1)
        self.sigma = _as_tensor(self.sigma).reshape(-1)
        if float(self.nu_tilde) <= 2.0:
            raise ValueError(f"dof must exceed 2, got {float(self.nu_tilde)}")
        if self.sigma.shape != self.m.shape:
            raise ValueError("sigma and m must have the same length")
        if bool((self.sigma <= 0).any()):
            raise ValueError("all sigma_i must be positive")

    @property
    def dim(self) -> int:
        return self.m.shape[0]


@dataclass
class TSampleBatch:
    """Cached reparameterized draws u = m + sigma * z * sqrt((nu-2)/w).

    z are standard normals, w are chi-square(nu_tilde) draws; both are kept
    so pathwise gradients and the construction identity can be replayed.
    """

    u: torch.Tensor
    z: np.ndarray
    w: np.ndarray
    seed: int


def log_density_dense(d: DenseStudentT, y) -> torch.Tensor:
    """Log density of the dense Student-t at y (scalar tensor)."""
    y = _as_tensor(y).reshape(-1)
    n = d.dim
    nu = d.nu if isinstance(d.nu, torch.Tensor) else torch.tensor(float(d.nu), dtype=_DTYPE)
    L, _ = chol_torch(d.cov)
    diff = (y - d.mean).unsqueeze(1)
    sol = torch.linalg.solve_triangular(L, diff, upper=False)
    quad = (sol**2).sum()
    logdet = 2.0 * torch.log(L.diagonal()).sum()
    return (
        torch.lgamma((nu + n) / 2)
        - torch.lgamma(nu / 2)
        - 0.5 * logdet
        - 0.5 * n * torch.log((nu - 2) * math.pi)
        - 0.5 * (nu + n) * torch.log1p(quad / (nu - 2))
    )


def log_density_diag(q: DiagStudentT, u) -> torch.Tensor:
    """Log density of the diagonal Student-t at u.

    Accepts a single point (M,) or a batch (n, M); returns a scalar or (n,)
    tensor.  Differentiable in q's parameters when they carry gradients.
    """
    u = _as_tensor(u)
    single = u.ndim == 1
    U = u.reshape(1, -1) if single else u
    M = q.dim
    nu = q.nu_tilde if isinstance(q.nu_tilde, torch.Tensor) else torch.tensor(float(q.nu_tilde), dtype=_DTYPE)
    delta = (U - q.m) / q.sigma
    quad = (delta**2).sum(dim=1)
    out = (
        torch.lgamma((nu + M) / 2)
        - torch.lgamma(nu / 2)
        - 0.5 * M * torch.log(nu - 2)
        - 0.5 * M * math.log(math.pi)
        - torch.log(q.sigma).sum()
        - 0.5 * (nu + M) * torch.log1p(quad / (nu - 2))
    )
    return out[0] if single else out


def _chi2_dof_sensitivity(w: np.ndarray, nu: float) -> np.ndarray:
    """dw/dnu of a chi-square draw at fixed quantile level.

    Implicit differentiation of F(w; nu) = const gives
    dw/dnu = -(dF/dnu) / pdf(w); the CDF derivative in the dof is taken by
    central differences on the regularized incomplete gamma.
    """
    from scipy.special import gammainc
    from scipy.stats import chi2

    a = nu / 2.0
    x = w / 2.0
    h = 1e-6 * max(a, 1.0)
    dF_dnu = (gammainc(a + h, x) - gammainc(a - h, x)) / (2.0 * h) * 0.5
    pdf = chi2.pdf(w, nu)
    return -dF_dnu / np.maximum(pdf, 1e-300)


def _sample_diag_rng(q: DiagStudentT, n_samples: int, rng: np.random.Generator, seed: int = -1) -> TSampleBatch:
    """Draw from q via the normal/chi-square representation.

    When nu_tilde carries gradients the chi-square draws are linearized in
    the dof around the sampled value (implicit reparameterization), so the
    dof gradient accounts for the draw distribution to first order.
    """
    M = q.dim
    nu_val = float(q.nu_tilde.detach()) if isinstance(q.nu_tilde, torch.Tensor) else float(q.nu_tilde)
    z = rng.standard_normal((n_samples, M))
    w = rng.chisquare(nu_val, n_samples)
    zt = torch.from_numpy(z)
    if isinstance(q.nu_tilde, torch.Tensor) and q.nu_tilde.requires_grad:
        nu = q.nu_tilde
        dwdnu = torch.from_numpy(_chi2_dof_sensitivity(w, nu_val))
        wt = torch.from_numpy(w) + (nu - nu_val) * dwdnu
    else:
        nu = q.nu_tilde if isinstance(q.nu_tilde, torch.Tensor) else torch.tensor(nu_val, dtype=_DTYPE)
        wt = torch.from_numpy(w)
    u = q.m + q.sigma * zt * torch.sqrt((nu - 2) / wt).unsqueeze(1)
    return TSampleBatch(u=u, z=z, w=w, seed=seed)


def sample_diag(q: DiagStudentT, n_samples: int, seed: int) -> TSampleBatch:
    """Deterministic reparameterized sampling from q given an integer seed."""
    if n_samples < 1:
        raise ValueError("n_samples must be >= 1")
    rng = np.random.default_rng(seed)
    return _sample_diag_rng(q, n_samples, rng, seed=seed)


def _score_np(nu: float, m: np.ndarray, sigma: np.ndarray, U: np.ndarray) -> np.ndarray:
    """Vectorized score of the diagonal log density, rows are samples."""
    M = m.shape[0]
    diff = U - m
    delta2 = (diff / sigma) ** 2
    T = delta2.sum(axis=1)
    D = 1.0 + T / (nu - 2.0)
    s_m = (nu + M) / ((nu - 2.0) * sigma**2) * diff / D[:, None]
    s_sig = -1.0 / sigma + (nu + M) / ((nu - 2.0) * sigma**3) * diff**2 / D[:, None]
    alpha = -0.5 * digamma(nu / 2) + 0.5 * digamma((nu + M) / 2) - M / (2.0 * (nu - 2.0))
    s_nu = alpha - 0.5 * np.log(D) + (nu + M) / (2.0 * (nu - 2.0) ** 2) * T / D
    return np.concatenate([s_m, s_nu[:, None], s_sig], axis=1)


def score(q: DiagStudentT, u) -> np.ndarray:
    """Gradient of log q with respect to (m, nu_tilde, sigma) at u.

    A single point gives a (2M+1,) vector; a batch (n, M) gives (n, 2M+1).
    """
    U = np.atleast_2d(np.asarray(u, dtype=np.float64))
    out = _score_np(
        float(q.nu_tilde),
        q.m.detach().numpy(),
        q.sigma.detach().numpy(),
        U,
    )
    return out[0] if np.asarray(u).ndim == 1 else out
