"""Probes for comparing synchronisation strategies at small scale."""

from dataclasses import dataclass, field
from itertools import combinations

import numpy as np

from .errors import ContractError
from .spaces import project

__all__ = [
    "MetricReport",
    "case_divergence",
    "divergence_matrix",
    "cross_view_consistency",
    "variance_series",
    "prior_moment_check",
]


@dataclass
class MetricReport:
    name: str
    value: float
    context: str = ""
    series: list = None
    details: dict = field(default_factory=dict)

    def __post_init__(self):
        if not np.isfinite(self.value):
            raise ContractError(f"metric {self.name} is not finite")


def _canon(result):
    return getattr(result, "final_canonical", result).slabs


def case_divergence(results):
    """Largest pairwise L-infinity gap between final canonical states."""
    results = list(results)
    if len(results) < 2:
        raise ContractError("case_divergence needs at least two results")
    arrays = [_canon(r) for r in results]
    for a in arrays[1:]:
        if a.shape != arrays[0].shape:
            raise ContractError(f"canonical shapes differ: {arrays[0].shape} vs {a.shape}")
    return max(float(np.max(np.abs(a - b))) for a, b in combinations(arrays, 2))


def divergence_matrix(results):
    """Pairwise L-infinity gaps as an ``(n, n)`` array."""
    arrays = [_canon(r) for r in results]
    n = len(arrays)
    out = np.zeros((n, n))
    for i, j in combinations(range(n), 2):
        out[i, j] = out[j, i] = float(np.max(np.abs(arrays[i] - arrays[j])))
    return out


def cross_view_consistency(result, ops):
    """Mean over views of ``||w_i - f_i(z)||^2`` for the final state."""
    ops = list(ops)
    if len(ops) != len(result.final_instances):
        raise ContractError("result and operator list disagree on the number of views")
    total = 0.0
    for op, w in zip(ops, result.final_instances):
        total += float(np.sum((w - project(op, result.final_canonical)) ** 2))
    return total / len(ops)


def variance_series(result):
    """Per traced step, the variance of each view averaged over views.

    Entries follow the trace order, i.e. from ``t = T`` down to 0.
    """
    if not result.trace:
        raise ContractError("variance_series needs a run with trace enabled")
    return [float(np.mean([np.var(w) for w in step.instances])) for step in result.trace]


def _separated(gmm, sigmas=6.0):
    mu = gmm.means.reshape(gmm.n_components, -1)
    s = np.sqrt(gmm.variances)
    for a, b in combinations(range(gmm.n_components), 2):
        if np.min(np.abs(mu[a] - mu[b])) <= sigmas * max(s[a], s[b]):
            return False
    return True


def prior_moment_check(samples, gmm, occupancy=None):
    """Standardised deviation of samples from the prior's moments.

    Samples are canonical states (or plain fields); multiplane states are
    rendered first. Each element is standardised by the prior's marginal
    mean and variance there and the pooled values are tested for mean 0 and
    variance 1. For well separated mixtures (or ``occupancy=True``) the share
    of samples nearest to each component is compared with its weight.
    ``value`` is the largest of the resulting z-scores.
    """
    fields = []
    for s in samples:
        if hasattr(s, "render"):
            s = s.render()
        fields.append(np.asarray(s, dtype=np.float64).reshape(gmm.shape))
    x = np.stack(fields)
    mean, var = gmm.marginal_moments()
    u = ((x - mean) / np.sqrt(var)).ravel()
    n = u.size
    if n < 2:
        raise ContractError("need at least two sample values")
    m, v = float(u.mean()), float(u.var(ddof=1))
    z_mean = float(abs(m) * np.sqrt(n))
    z_var = float(abs(v - 1.0) / np.sqrt(2.0 / (n - 1)))
    details = {"n": n, "std_mean": m, "std_var": v, "z_mean": z_mean, "z_var": z_var}
    zs = [z_mean, z_var]

    if occupancy is None:
        occupancy = gmm.n_components > 1 and _separated(gmm)
    if occupancy:
        ll = np.stack([gmm.component_log_likelihood(f) for f in fields])  # (S, K, ...) or (S, K)
        labels = np.argmax(ll, axis=1).ravel()
        share = np.bincount(labels, minlength=gmm.n_components) / labels.size
        z_occ = np.abs(share - gmm.weights) / np.sqrt(gmm.weights * (1 - gmm.weights) / labels.size + 1e-300)
        details["occupancy"] = share.tolist()
        details["weights"] = gmm.weights.tolist()
        details["z_occupancy"] = z_occ.tolist()
        zs.extend(z_occ.tolist())
    return MetricReport(
        "prior_moment_deviation",
        float(max(zs)),
        "max z-score of pooled standardised mean/variance and component occupancy",
        details=details,
    )
