"""Cholesky factorization with a shared jitter-escalation policy.

The ladder starts at 1e-8 times the mean diagonal and multiplies by 10 up
to four times before giving up.  Both numpy and torch matrices are
supported; the torch path keeps the autograd graph intact.
"""

import numpy as np
import torch

JITTER_BASE = 1e-8
JITTER_GROWTH = 10.0
JITTER_STEPS = 4


class NumericalError(RuntimeError):
    """Raised when a matrix stays non-positive-definite after max jitter."""


def jitter_ladder(mean_diag: float):
    """Yield the jitter values tried in order: 0, then the escalating ladder."""
    yield 0.0
    jit = JITTER_BASE * mean_diag
    for _ in range(JITTER_STEPS + 1):
        yield jit
        jit *= JITTER_GROWTH


def chol_np(a: np.ndarray):
    """Lower Cholesky factor of ``a`` plus the smallest rescuing jitter.

    Returns (L, jitter).  Raises NumericalError with the last attempted
    jitter if the ladder is exhausted.
    """
    mean_diag = float(np.mean(np.diag(a)))
    jit = 0.0
    for jit in jitter_ladder(mean_diag):
        try:
            L = np.linalg.cholesky(a + jit * np.eye(a.shape[0]))
            return L, jit
        except np.linalg.LinAlgError:
            continue
    raise NumericalError(f"Cholesky failed after max jitter {jit:.3e}")


def chol_torch(a: torch.Tensor):
    """Torch analogue of chol_np; differentiable through the jittered matrix."""
    mean_diag = float(a.diagonal().mean().detach())
    eye = torch.eye(a.shape[0], dtype=a.dtype)
    jit = 0.0
    for jit in jitter_ladder(mean_diag):
        L, info = torch.linalg.cholesky_ex(a + jit * eye)
        if int(info) == 0:
            return L, jit
    raise NumericalError(f"Cholesky failed after max jitter {jit:.3e}")
