"""Squared-exponential kernel with log-space hyperparameters.

A single isotropic lengthscale and a signal standard deviation, both kept
in log space so unconstrained optimizer steps preserve positivity.
"""

from dataclasses import dataclass

import numpy as np
import torch

from svtp.linalg import chol_torch

__all__ = ["KernelParams", "gram", "gram_with_jitter"]

_DTYPE = torch.float64


def _scalar_tensor(x):
    if isinstance(x, torch.Tensor):
        return x.to(_DTYPE)
    return torch.tensor(float(x), dtype=_DTYPE)


@dataclass
class KernelParams:
    log_lengthscale: torch.Tensor
    log_signal_sd: torch.Tensor

    def __post_init__(self):
        self.log_lengthscale = _scalar_tensor(self.log_lengthscale)
        self.log_signal_sd = _scalar_tensor(self.log_signal_sd)

    @property
    def lengthscale(self) -> float:
        return float(torch.exp(self.log_lengthscale))

    @property
    def signal_sd(self) -> float:
        return float(torch.exp(self.log_signal_sd))


def gram(p: KernelParams, A, B) -> torch.Tensor:
    """Gram matrix s^2 exp(-|a_i - b_j|^2 / (2 l^2)), shape (n, m)."""
    A = A if isinstance(A, torch.Tensor) else torch.as_tensor(np.asarray(A, dtype=np.float64))
    B = B if isinstance(B, torch.Tensor) else torch.as_tensor(np.asarray(B, dtype=np.float64))
    if A.ndim != 2 or B.ndim != 2 or A.shape[1] != B.shape[1]:
        raise ValueError(f"feature dimensions must match, got {tuple(A.shape)} vs {tuple(B.shape)}")
    ell = torch.exp(p.log_lengthscale)
    s2 = torch.exp(2.0 * p.log_signal_sd)
    d2 = torch.cdist(A, B, p=2.0) ** 2
    d2 = torch.clamp(d2, min=0.0)
    return s2 * torch.exp(-d2 / (2.0 * ell**2))


def gram_with_jitter(p: KernelParams, A):
    """Self-Gram of A plus the smallest jitter that makes Cholesky succeed.

    Returns (K_jittered, L, jitter): at least the base rung of the ladder is
    always added so duplicated inputs cannot produce an exactly singular
    matrix.
    """
    K = gram(p, A, A)
    K = 0.5 * (K + K.T)
    mean_diag = float(K.diagonal().mean().detach())
    base = 1e-8 * mean_diag
    Kj = K + base * torch.eye(K.shape[0], dtype=_DTYPE)
    L, extra = chol_torch(Kj)
    if extra > 0.0:
        Kj = Kj + extra * torch.eye(K.shape[0], dtype=_DTYPE)
    return Kj, L, base + extra
