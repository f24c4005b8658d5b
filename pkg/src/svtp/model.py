"""Sparse variational Student-t process: conditional, ELBO, prediction.

The generative model puts a Student-t process prior on M inducing values
u at inputs Z; conditioning on u gives a Student-t over the latent
function at the batch inputs whose scale is inflated by the quadratic form
beta = u^T K_zz^{-1} u.  Observations are the latent function plus
Gaussian noise with a learned standard deviation.

All Monte-Carlo estimators are deterministic functions of (state, inputs,
seed).  Gradients are pathwise; the variational dof additionally picks up
an implicit-reparameterization term that linearizes the chi-square draws
in the dof, so its gradient is first-order accurate while the mean and
scale gradients are exact for the seeded estimator.
"""

import math
from dataclasses import dataclass

import numpy as np
import torch

from svtp.kernel import KernelParams, gram, gram_with_jitter
from svtp.stdist import DenseStudentT, DiagStudentT, _sample_diag_rng, log_density_dense, log_density_diag

__all__ = [
    "SVTPState",
    "ConditionalParams",
    "ElboGrads",
    "conditional_given_u",
    "expected_log_lik",
    "kl_q_p",
    "elbo_minibatch",
    "predict",
]

_DTYPE = torch.float64

TRAINABLE_FIELDS = ("m", "nu_tilde", "sigma", "Z", "log_lengthscale", "log_signal_sd", "log_noise_sd")


@dataclass
class SVTPState:
    """Full trainable state: inducing inputs, variational q, and hypers."""

    Z: torch.Tensor
    q: DiagStudentT
    prior_nu: float
    kernel: KernelParams
    log_noise_sd: torch.Tensor

    def __post_init__(self):
        self.Z = self.Z.to(_DTYPE) if isinstance(self.Z, torch.Tensor) else torch.as_tensor(np.asarray(self.Z, dtype=np.float64))
        if not isinstance(self.log_noise_sd, torch.Tensor):
            self.log_noise_sd = torch.tensor(float(self.log_noise_sd), dtype=_DTYPE)
        if self.Z.shape[0] != self.q.dim:
            raise ValueError("number of inducing inputs must match q's dimension")
        if float(self.prior_nu) <= 2.0:
            raise ValueError("prior dof must exceed 2")

    @property
    def n_inducing(self) -> int:
        return self.Z.shape[0]

    def params_numpy(self) -> dict:
        """Trainable parameters as a name -> numpy array dict."""
        return {
            "m": self.q.m.detach().numpy().copy(),
            "nu_tilde": np.asarray(float(self.q.nu_tilde)),
            "sigma": self.q.sigma.detach().numpy().copy(),
            "Z": self.Z.detach().numpy().copy(),
            "log_lengthscale": np.asarray(float(self.kernel.log_lengthscale)),
            "log_signal_sd": np.asarray(float(self.kernel.log_signal_sd)),
            "log_noise_sd": np.asarray(float(self.log_noise_sd)),
        }

    def with_params(self, p: dict) -> "SVTPState":
        """New state with trainable parameters replaced from a numpy dict."""
        return SVTPState(
            Z=torch.as_tensor(np.asarray(p["Z"], dtype=np.float64)),
            q=DiagStudentT(
                nu_tilde=float(p["nu_tilde"]),
                m=torch.as_tensor(np.asarray(p["m"], dtype=np.float64)),
                sigma=torch.as_tensor(np.asarray(p["sigma"], dtype=np.float64)),
            ),
            prior_nu=self.prior_nu,
            kernel=KernelParams(
                log_lengthscale=float(p["log_lengthscale"]),
                log_signal_sd=float(p["log_signal_sd"]),
            ),
            log_noise_sd=float(p["log_noise_sd"]),
        )


@dataclass
class ConditionalParams:
    """Parameters of p(f | u) at a batch of inputs."""

    dof: float
    mean: torch.Tensor
    scale_factor: torch.Tensor
    base_cov: torch.Tensor


@dataclass
class ElboGrads:
    """Gradients of the mini-batch ELBO with respect to every trainable."""

    m: np.ndarray
    nu_tilde: float
    sigma: np.ndarray
    Z: np.ndarray
    log_lengthscale: float
    log_signal_sd: float
    log_noise_sd: float

    def theta(self) -> np.ndarray:
        """(m, nu_tilde, sigma) gradient in the canonical ordering."""
        return np.concatenate([self.m, [self.nu_tilde], self.sigma])

    def hypers(self) -> dict:
        return {
            "Z": self.Z,
            "log_lengthscale": np.asarray(self.log_lengthscale),
            "log_signal_sd": np.asarray(self.log_signal_sd),
            "log_noise_sd": np.asarray(self.log_noise_sd),
        }


def _leaf_state(s: SVTPState):
    """Clone of s whose trainable tensors are autograd leaves."""
    leaves = {
        "m": s.q.m.detach().clone().requires_grad_(True),
        "nu_tilde": torch.tensor(float(s.q.nu_tilde), dtype=_DTYPE, requires_grad=True),
        "sigma": s.q.sigma.detach().clone().requires_grad_(True),
        "Z": s.Z.detach().clone().requires_grad_(True),
        "log_lengthscale": s.kernel.log_lengthscale.detach().clone().requires_grad_(True),
        "log_signal_sd": s.kernel.log_signal_sd.detach().clone().requires_grad_(True),
        "log_noise_sd": s.log_noise_sd.detach().clone().requires_grad_(True),
    }
    # bypass __post_init__ validation so leaf tensors are stored untouched
    q = DiagStudentT.__new__(DiagStudentT)
    q.nu_tilde = leaves["nu_tilde"]
    q.m = leaves["m"]
    q.sigma = leaves["sigma"]
    kern = KernelParams.__new__(KernelParams)
    kern.log_lengthscale = leaves["log_lengthscale"]
    kern.log_signal_sd = leaves["log_signal_sd"]
    st = SVTPState(
        Z=leaves["Z"],
        q=q,
        prior_nu=s.prior_nu,
        kernel=kern,
        log_noise_sd=leaves["log_noise_sd"],
    )
    return st, leaves


def _kzz_chol(s: SVTPState):
    return gram_with_jitter(s.kernel, s.Z)


def conditional_given_u(s: SVTPState, Xb, u) -> ConditionalParams:
    """Exact conditional p(f | u) at batch inputs Xb (full covariance)."""
    Xb = Xb if isinstance(Xb, torch.Tensor) else torch.as_tensor(np.asarray(Xb, dtype=np.float64))
    u = u if isinstance(u, torch.Tensor) else torch.as_tensor(np.asarray(u, dtype=np.float64))
    M = s.n_inducing
    _, L, _ = _kzz_chol(s)
    Kxz = gram(s.kernel, Xb, s.Z)
    v = torch.cholesky_solve(u.reshape(-1, 1), L)
    mean = (Kxz @ v).reshape(-1)
    beta = (u.reshape(-1) * v.reshape(-1)).sum()
    W = torch.linalg.solve_triangular(L, Kxz.T, upper=False)
    base_cov = gram(s.kernel, Xb, Xb) - W.T @ W
    nu = s.prior_nu
    scale_factor = (nu + beta - 2.0) / (nu + M - 2.0)
    return ConditionalParams(dof=nu + M, mean=mean, scale_factor=scale_factor, base_cov=base_cov)


def _conditional_batch_diag(s: SVTPState, Xb: torch.Tensor, U: torch.Tensor):
    """Conditional means, shared marginal variances and scale factors.

    U has one u sample per row.  Only the diagonal of the conditional
    covariance is formed, keeping the per-batch cost at O(B M^2).
    """
    M = s.n_inducing
    _, L, _ = _kzz_chol(s)
    Kxz = gram(s.kernel, Xb, s.Z)
    V = torch.cholesky_solve(U.T, L)          # (M, n_mc)
    means = (Kxz @ V).T                       # (n_mc, B)
    betas = (U.T * V).sum(dim=0)              # (n_mc,)
    W = torch.linalg.solve_triangular(L, Kxz.T, upper=False)
    s2 = torch.exp(2.0 * s.kernel.log_signal_sd)
    var_diag = torch.clamp(s2 - (W**2).sum(dim=0), min=0.0)  # (B,)
    nu = s.prior_nu
    sf = (nu + betas - 2.0) / (nu + M - 2.0)
    return means, var_diag, sf


def _expected_log_lik_given_u(s, Xb, yb, U, rng):
    """MC likelihood term given u draws; f sampled from marginal conditionals."""
    n_mc = U.shape[0]
    means, var_diag, sf = _conditional_batch_diag(s, Xb, U)
    d = s.prior_nu + s.n_inducing
    zf = torch.from_numpy(rng.standard_normal(means.shape))
    wf = torch.from_numpy(rng.chisquare(d, n_mc))
    scale = torch.sqrt(torch.clamp(sf.unsqueeze(1) * var_diag, min=0.0))
    f = means + scale * zf * torch.sqrt(torch.tensor(d - 2.0, dtype=_DTYPE) / wf).unsqueeze(1)
    noise_var = torch.exp(2.0 * s.log_noise_sd)
    yb = yb if isinstance(yb, torch.Tensor) else torch.as_tensor(np.asarray(yb, dtype=np.float64))
    ll = -0.5 * math.log(2.0 * math.pi) - 0.5 * torch.log(noise_var) - 0.5 * (yb - f) ** 2 / noise_var
    return ll.mean(dim=0).sum()


def expected_log_lik(s: SVTPState, Xb, yb, n_mc: int, seed: int):
    """MC estimate of E[log p(y|f)] summed over the batch points."""
    if n_mc < 1:
        raise ValueError("n_mc must be >= 1")
    Xb = Xb if isinstance(Xb, torch.Tensor) else torch.as_tensor(np.asarray(Xb, dtype=np.float64))
    rng = np.random.default_rng(seed)
    batch = _sample_diag_rng(s.q, n_mc, rng, seed=seed)
    return _expected_log_lik_given_u(s, Xb, yb, batch.u, rng)


def _kl_given_u(s: SVTPState, U: torch.Tensor):
    Kzz, _, _ = _kzz_chol(s)
    prior = DenseStudentT.__new__(DenseStudentT)
    prior.nu = s.prior_nu
    prior.mean = torch.zeros(s.n_inducing, dtype=_DTYPE)
    prior.cov = Kzz
    log_q = log_density_diag(s.q, U)
    log_p = torch.stack([log_density_dense(prior, U[i]) for i in range(U.shape[0])])
    return (log_q - log_p).mean()


def kl_q_p(s: SVTPState, n_mc: int, seed: int):
    """MC estimate of KL(q || p) over the inducing values."""
    if n_mc < 1:
        raise ValueError("n_mc must be >= 1")
    rng = np.random.default_rng(seed)
    batch = _sample_diag_rng(s.q, n_mc, rng, seed=seed)
    return _kl_given_u(s, batch.u)


def elbo_minibatch(s: SVTPState, Xb, yb, N_total: int, n_mc: int, seed: int):
    """Mini-batch ELBO value and gradients for every trainable parameter.

    value = (N/B) * likelihood term - KL, with the KL sharing the same u
    draws as the likelihood (common random numbers).  Returns (value,
    ElboGrads); the gradients are of the ELBO, so negate for descent.
    """
    Xb = np.asarray(Xb, dtype=np.float64)
    yb = np.asarray(yb, dtype=np.float64)
    B = Xb.shape[0]
    if B > N_total:
        raise ValueError("batch larger than the dataset it represents")
    st, leaves = _leaf_state(s)
    rng = np.random.default_rng(seed)
    batch = _sample_diag_rng(st.q, n_mc, rng, seed=seed)
    ell = _expected_log_lik_given_u(st, torch.as_tensor(Xb), torch.as_tensor(yb), batch.u, rng)
    kl = _kl_given_u(st, batch.u)
    value = (N_total / B) * ell - kl
    if not torch.isfinite(value):
        raise FloatingPointError(
            f"non-finite ELBO: likelihood term {float(ell)!r}, KL term {float(kl)!r}"
        )
    value.backward()

    def g(name):
        gr = leaves[name].grad
        return np.zeros(leaves[name].shape) if gr is None else gr.detach().numpy().copy()

    grads = ElboGrads(
        m=g("m"),
        nu_tilde=float(g("nu_tilde")),
        sigma=g("sigma"),
        Z=g("Z"),
        log_lengthscale=float(g("log_lengthscale")),
        log_signal_sd=float(g("log_signal_sd")),
        log_noise_sd=float(g("log_noise_sd")),
    )
    return float(value.detach()), grads


def predict(s: SVTPState, Xstar, n_mc: int = 0, seed: int = 0):
    """Predictive mean and variance at new inputs.

    Everything needed is available in closed form under q: the conditional
    mean is linear in u, its spread over q is a quadratic form in diag
    (sigma^2), and the expected quadratic form beta has an exact value, so
    no sampling happens.  ``n_mc`` and ``seed`` are accepted for interface
    stability and ignored.
    """
    Xstar = torch.as_tensor(np.asarray(Xstar, dtype=np.float64))
    with torch.no_grad():
        M = s.n_inducing
        _, L, _ = _kzz_chol(s)
        Kxz = gram(s.kernel, Xstar, s.Z)
        A = torch.cholesky_solve(Kxz.T, L).T          # (B, M) = Kxz Kzz^{-1}
        m = s.q.m
        sig2 = s.q.sigma**2
        mean = A @ m
        spread = (A**2 * sig2).sum(dim=1)
        # E[beta] = m^T Kzz^{-1} m + tr(Kzz^{-1} diag(sigma^2))
        v = torch.cholesky_solve(m.reshape(-1, 1), L).reshape(-1)
        Linv = torch.linalg.solve_triangular(L, torch.eye(M, dtype=_DTYPE), upper=False)
        tr_term = ((Linv**2).sum(dim=0) * sig2).sum()
        e_beta = (m * v).sum() + tr_term
        nu = s.prior_nu
        sf = (nu + e_beta - 2.0) / (nu + M - 2.0)
        W = torch.linalg.solve_triangular(L, Kxz.T, upper=False)
        s2 = torch.exp(2.0 * s.kernel.log_signal_sd)
        var_diag = torch.clamp(s2 - (W**2).sum(dim=0), min=0.0)
        noise_var = torch.exp(2.0 * s.log_noise_sd)
        var = spread + sf * var_diag + noise_var
    return mean.numpy(), var.numpy()
