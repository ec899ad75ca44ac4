"""Training objectives for mean/variance regressors.

Every objective is evaluated per sample on arrays and returns a
:class:`PerSampleLoss` holding the loss value together with the gradients the
network should back-propagate. The split between the mean path and the
variance path is what encodes stop-gradient routing: a gradient that is
detached is simply reported as zero, and ``var_to_trunk`` tells the network
whether variance-branch gradients may enter the shared trunk.

For the variance-parameterised objectives ``d_var`` is the derivative with
respect to sigma^2. For the natural-parameter objective the mean head emits
eta1, the variance head emits eta2, and ``d_mu_for_mean_path``/``d_var`` are
derivatives with respect to eta1/eta2.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import ConfigError, NumericError, ParameterizationError

KINDS = ("nll", "decoupled", "beta_nll", "faithful", "natural")


@dataclass(frozen=True)
class ObjectiveKind:
    kind: str = "decoupled"
    lam: float = 0.1
    beta_nll: float = 0.5

    def __post_init__(self):
        if self.kind not in KINDS:
            raise ConfigError(f"unknown objective kind {self.kind!r}; expected one of {KINDS}")
        if not self.lam >= 0:
            raise ConfigError(f"lambda must be >= 0, got {self.lam}")
        if not 0.0 <= self.beta_nll <= 1.0:
            raise ConfigError(f"beta_nll must lie in [0, 1], got {self.beta_nll}")

    @property
    def natural(self) -> bool:
        return self.kind == "natural"

    def evaluate(self, mean_out, var_out, y) -> "PerSampleLoss":
        """Dispatch on the kind. ``mean_out``/``var_out`` are (mu, sigma2) or (eta1, eta2)."""
        if self.kind == "nll":
            return eval_nll(mean_out, var_out, y)
        if self.kind == "decoupled":
            return eval_decoupled(mean_out, var_out, y, self.lam)
        if self.kind == "beta_nll":
            return eval_beta_nll(mean_out, var_out, y, self.beta_nll)
        if self.kind == "faithful":
            return eval_faithful(mean_out, var_out, y)
        return eval_natural(mean_out, var_out, y)

    def to_dict(self) -> dict:
        return {"kind": self.kind, "lambda": self.lam, "beta_nll": self.beta_nll}


@dataclass
class PerSampleLoss:
    loss: np.ndarray
    d_mu_for_mean_path: np.ndarray
    d_mu_for_var_path: np.ndarray
    d_var: np.ndarray
    var_to_trunk: bool = True


def _check_variance(sigma2):
    sigma2 = np.asarray(sigma2, dtype=float)
    if not np.all(sigma2 > 0):
        raise NumericError("predicted variance must be strictly positive")
    return sigma2


def _nll_parts(mu, sigma2, y):
    resid = np.asarray(y, dtype=float) - np.asarray(mu, dtype=float)
    loss = 0.5 * np.log(sigma2) + resid**2 / (2.0 * sigma2)
    d_mu = -resid / sigma2
    d_s2 = 0.5 / sigma2 - resid**2 / (2.0 * sigma2**2)
    return resid, loss, d_mu, d_s2


def eval_nll(mu, sigma2, y) -> PerSampleLoss:
    """Gaussian negative log-likelihood (constant dropped)."""
    sigma2 = _check_variance(sigma2)
    _, loss, d_mu, d_s2 = _nll_parts(mu, sigma2, y)
    return PerSampleLoss(loss, d_mu, np.zeros_like(d_mu), d_s2, True)


def eval_decoupled(mu, sigma2, y, lam: float = 0.1) -> PerSampleLoss:
    """Squared error for the mean plus lam times an NLL whose residual is detached."""
    sigma2 = _check_variance(sigma2)
    resid, nll, _, d_s2 = _nll_parts(mu, sigma2, y)
    loss = resid**2 + lam * nll
    return PerSampleLoss(loss, -2.0 * resid, np.zeros_like(resid), lam * d_s2, True)


def eval_beta_nll(mu, sigma2, y, beta_nll: float) -> PerSampleLoss:
    sigma2 = _check_variance(sigma2)
    _, nll, d_mu, d_s2 = _nll_parts(mu, sigma2, y)
    weight = sigma2**beta_nll  # detached
    return PerSampleLoss(weight * nll, weight * d_mu, np.zeros_like(d_mu), weight * d_s2, True)


def eval_faithful(mu, sigma2, y) -> PerSampleLoss:
    """Same value as the decoupled loss at lam=1; the NLL part only reaches the variance head."""
    out = eval_decoupled(mu, sigma2, y, 1.0)
    out.var_to_trunk = False
    return out


def natural_to_moments(eta1, eta2):
    eta2 = np.asarray(eta2, dtype=float)
    if not np.all(eta2 < 0):
        raise ParameterizationError("eta2 must be strictly negative")
    sigma2 = -0.5 / eta2
    return np.asarray(eta1, dtype=float) * sigma2, sigma2


def eval_natural(eta1, eta2, y) -> PerSampleLoss:
    """Gaussian NLL written in natural parameters.

    dL/deta1 = mu - y and dL/deta2 = mu^2 + sigma^2 - y^2.
    """
    mu, sigma2 = natural_to_moments(eta1, eta2)
    y = np.asarray(y, dtype=float)
    resid = y - mu
    loss = 0.5 * np.log(sigma2) + resid**2 / (2.0 * sigma2)
    d_eta1 = mu - y
    d_eta2 = mu**2 + sigma2 - y**2
    return PerSampleLoss(loss, d_eta1, np.zeros_like(d_eta1), d_eta2, True)
