"""Exact noise predictors for Gaussian-mixture priors.

Under the forward process ``x_t = sqrt(ab) x0 + sqrt(1 - ab) eps`` a mixture
prior ``sum_k w_k N(mu_k, s_k^2 I)`` stays a mixture with component means
``sqrt(ab) mu_k`` and variances ``v_k = ab s_k^2 + (1 - ab)``. Within one
component the clean sample is conjugate-Gaussian, so

    E[x0 | x_t, k] = mu_k + (sqrt(ab) s_k^2 / v_k) (x_t - sqrt(ab) mu_k)

and the posterior mean weights these by the responsibilities. The predicted
noise is whatever makes Tweedie's estimate equal that posterior mean.
"""

from dataclasses import dataclass
from typing import Protocol

import numpy as np

from . import _kernels
from .errors import ContractError

__all__ = [
    "GaussianMixture",
    "NoisePredictor",
    "GMMPredictor",
    "gmm_posterior_mean",
    "gmm_predict_eps",
]

_MIN_NOISE_VAR = 1e-12


@dataclass(frozen=True)
class GaussianMixture:
    """Isotropic Gaussian mixture over fields of shape ``means.shape[1:]``.

    With ``pixelwise=True`` every element is an independent 1-D mixture with
    the shared weights and variances and its own entry of each mean field.
    Otherwise the mixture is joint over the whole field.
    """

    weights: np.ndarray
    means: np.ndarray
    variances: np.ndarray
    pixelwise: bool = False

    def __post_init__(self):
        w = np.asarray(self.weights, dtype=np.float64).ravel()
        mu = np.asarray(self.means, dtype=np.float64)
        var = np.asarray(self.variances, dtype=np.float64).ravel()
        if mu.ndim < 2:
            raise ContractError("means must have shape (K, *field_shape)")
        if not (w.size == var.size == mu.shape[0] >= 1):
            raise ContractError("weights, means and variances disagree on the component count")
        if np.any(w <= 0.0) or abs(w.sum() - 1.0) > 1e-12:
            raise ContractError("weights must be positive and sum to 1")
        if np.any(var <= 0.0):
            raise ContractError("variances must be positive")
        if not np.all(np.isfinite(mu)):
            raise ContractError("means must be finite")
        for name, arr in (("weights", w), ("means", mu), ("variances", var)):
            arr.setflags(write=False)
            object.__setattr__(self, name, arr)

    @property
    def shape(self):
        return self.means.shape[1:]

    @property
    def n_components(self):
        return self.weights.size

    def marginal_moments(self):
        """Per-element mean and variance of the prior."""
        w = self.weights.reshape((-1,) + (1,) * len(self.shape))
        mean = (w * self.means).sum(axis=0)
        second = (w * (self.variances.reshape(w.shape) + self.means**2)).sum(axis=0)
        return mean, second - mean**2

    def component_log_likelihood(self, x0):
        """Unnormalised log of ``w_k N(x0; mu_k, s_k^2)``.

        Shape ``(K, *field)`` when pixelwise, ``(K,)`` for a joint mixture.
        """
        x0 = np.asarray(x0, dtype=np.float64)
        k_shape = (-1,) + (1,) * len(self.shape)
        var = self.variances.reshape(k_shape)
        sq = (x0 - self.means) ** 2 / var
        if self.pixelwise:
            return np.log(self.weights).reshape(k_shape) - 0.5 * sq - 0.5 * np.log(var)
        d = int(np.prod(self.shape))
        sq = sq.reshape(self.n_components, -1).sum(axis=1)
        return np.log(self.weights) - 0.5 * sq - 0.5 * d * np.log(self.variances)


class NoisePredictor(Protocol):
    """Anything mapping a noisy field at timestep ``t`` to predicted noise."""

    def predict(self, x_t, t, sched): ...


def _noise_level(t, sched):
    if int(t) != t or not 1 <= t <= sched.T_train:
        raise ContractError(f"noise prediction needs 1 <= t <= {sched.T_train}, got {t}")
    ab = sched.alphas_bar[int(t)]
    return np.sqrt(ab), max(1.0 - ab, _MIN_NOISE_VAR)


def gmm_posterior_mean(x_t, t, sched, gmm):
    """``E[x0 | x_t]`` under the mixture prior."""
    x_t = np.asarray(x_t, dtype=np.float64)
    if x_t.shape != gmm.shape:
        raise ContractError(f"field shape {x_t.shape} does not match prior shape {gmm.shape}")
    sa, noise_var = _noise_level(t, sched)
    if gmm.pixelwise:
        flat = _kernels.pixelwise_posterior_mean(
            np.ascontiguousarray(x_t.ravel()),
            sa,
            noise_var,
            np.log(gmm.weights),
            np.ascontiguousarray(gmm.means.reshape(gmm.n_components, -1)),
            np.ascontiguousarray(gmm.variances),
        )
        return flat.reshape(x_t.shape)

    d = x_t.size
    mu = gmm.means.reshape(gmm.n_components, -1)
    marg_var = sa * sa * gmm.variances + noise_var
    resid = x_t.ravel()[None, :] - sa * mu
    logits = np.log(gmm.weights) - 0.5 * d * np.log(marg_var) - 0.5 * (resid**2).sum(axis=1) / marg_var
    r = np.exp(logits - logits.max())
    r /= r.sum()
    post = mu + (sa * gmm.variances / marg_var)[:, None] * resid
    return (r[:, None] * post).sum(axis=0).reshape(x_t.shape)


def gmm_predict_eps(x_t, t, sched, gmm):
    """Noise whose Tweedie estimate is the exact posterior mean."""
    x0 = gmm_posterior_mean(x_t, t, sched, gmm)
    sa, noise_var = _noise_level(t, sched)
    return (np.asarray(x_t, dtype=np.float64) - sa * x0) / np.sqrt(noise_var)


class GMMPredictor:
    """:class:`NoisePredictor` backed by :func:`gmm_predict_eps`."""

    def __init__(self, gmm):
        self.gmm = gmm

    @property
    def shape(self):
        return self.gmm.shape

    def predict(self, x_t, t, sched):
        return gmm_predict_eps(x_t, t, sched, self.gmm)

    def __repr__(self):
        kind = "pixelwise" if self.gmm.pixelwise else "joint"
        return f"GMMPredictor({kind}, K={self.gmm.n_components}, shape={self.gmm.shape})"
