"""Noise schedules and the deterministic DDIM layers.

Fields are plain float64 numpy arrays. The three layers of one sampling
step are

* the noise predictor (see :mod:`diffsync.denoiser`),
* :func:`tweedie`, the clean-sample estimate from a noisy sample and noise,
* :func:`ddim_step`, the deterministic (``sigma_t = 0``) DDIM update.

Both :func:`tweedie` and :func:`ddim_step` are linear in their field
arguments; the synchronisation engine relies on that.
"""

from dataclasses import dataclass

import numpy as np

from .errors import ConfigError, ContractError

__all__ = [
    "NoiseSchedule",
    "make_schedule",
    "as_field",
    "forward_diffuse",
    "tweedie",
    "ddim_step",
]


def as_field(values, shape=None):
    """Return ``values`` as a finite float64 array, optionally reshaped."""
    arr = np.asarray(values, dtype=np.float64)
    if shape is not None:
        arr = arr.reshape(shape)
    if not np.all(np.isfinite(arr)):
        raise ContractError("field contains non-finite values")
    return arr


@dataclass(frozen=True)
class NoiseSchedule:
    """Cumulative signal rates ``alphas_bar[t]`` for ``t = 0..T_train`` and
    the DDIM timestep subsequence ``steps`` (ascending, ending at ``T_train``)."""

    alphas_bar: np.ndarray
    steps: tuple

    def __post_init__(self):
        ab = np.asarray(self.alphas_bar, dtype=np.float64)
        ab.setflags(write=False)
        object.__setattr__(self, "alphas_bar", ab)
        object.__setattr__(self, "steps", tuple(int(s) for s in self.steps))
        if ab.ndim != 1 or ab.size < 2:
            raise ContractError("alphas_bar must hold T_train + 1 >= 2 entries")
        if ab[0] != 1.0:
            raise ContractError("alphas_bar[0] must equal 1")
        if not (np.all(ab > 0.0) and np.all(ab <= 1.0)):
            raise ContractError("alphas_bar must lie in (0, 1]")
        if not np.all(np.diff(ab) < 0.0):
            raise ContractError("alphas_bar must be strictly decreasing")
        s = self.steps
        if not s:
            raise ContractError("steps must be nonempty")
        if any(b <= a for a, b in zip(s, s[1:])) or s[0] < 1 or s[-1] != self.T_train:
            raise ContractError("steps must be strictly increasing in 1..T_train and end at T_train")

    @property
    def T_train(self):
        return self.alphas_bar.size - 1

    def transitions(self):
        """``(t, t_prev)`` pairs in sampling order, from ``T_train`` down to 0."""
        ts = (0,) + self.steps
        return [(ts[k], ts[k - 1]) for k in range(len(ts) - 1, 0, -1)]


def make_schedule(T_train=1000, num_steps=30, beta_min=1e-4, beta_max=0.02):
    """Linear-beta DDPM schedule with ``num_steps`` uniformly spaced DDIM steps.

    Step ``k`` (1-based) is ``floor(k * T_train / num_steps)``, so the last
    step is always ``T_train``.

    >>> s = make_schedule(1, 1, 0.25, 0.25)
    >>> float(s.alphas_bar[1])
    0.75
    """
    if int(T_train) != T_train or T_train < 1:
        raise ConfigError("T_train must be a positive integer", "schedule.T_train")
    if int(num_steps) != num_steps or num_steps < 1:
        raise ConfigError("num_steps must be a positive integer", "schedule.num_steps")
    if num_steps > T_train:
        raise ConfigError("num_steps must not exceed T_train", "schedule.num_steps")
    if not (0.0 < beta_min <= beta_max < 1.0):
        raise ConfigError("need 0 < beta_min <= beta_max < 1", "schedule.beta_min")
    T_train, num_steps = int(T_train), int(num_steps)
    betas = np.linspace(beta_min, beta_max, T_train)
    alphas_bar = np.concatenate(([1.0], np.cumprod(1.0 - betas)))
    steps = [(k * T_train) // num_steps for k in range(1, num_steps + 1)]
    return NoiseSchedule(alphas_bar, steps)


def _check_t(t, sched):
    if int(t) != t or not 0 <= t <= sched.T_train:
        raise ContractError(f"timestep {t} outside 0..{sched.T_train}")
    return int(t)


def _same_shape(a, b):
    if a.shape != b.shape:
        raise ContractError(f"shape mismatch: {a.shape} vs {b.shape}")


def forward_diffuse(x0, eps, t, sched):
    """Sample of the forward process: ``sqrt(ab_t) x0 + sqrt(1 - ab_t) eps``."""
    x0, eps = as_field(x0), as_field(eps)
    _same_shape(x0, eps)
    ab = sched.alphas_bar[_check_t(t, sched)]
    return np.sqrt(ab) * x0 + np.sqrt(1.0 - ab) * eps


def tweedie(x_t, eps_pred, t, sched):
    """Clean-sample estimate ``(x_t - sqrt(1 - ab_t) eps) / sqrt(ab_t)``."""
    x_t, eps_pred = as_field(x_t), as_field(eps_pred)
    _same_shape(x_t, eps_pred)
    t = _check_t(t, sched)
    if t < 1:
        raise ContractError("Tweedie's estimate needs t >= 1")
    ab = sched.alphas_bar[t]
    return (x_t - np.sqrt(1.0 - ab) * eps_pred) / np.sqrt(ab)


def ddim_step(x_t, x0_hat, t, t_prev, sched):
    """Deterministic DDIM update from ``t`` to ``t_prev`` given a clean estimate.

    At ``t_prev = 0`` the residual coefficient vanishes and ``x0_hat`` is
    returned unchanged.
    """
    x_t, x0_hat = as_field(x_t), as_field(x0_hat)
    _same_shape(x_t, x0_hat)
    t, t_prev = _check_t(t, sched), _check_t(t_prev, sched)
    if t_prev >= t:
        raise ContractError(f"t_prev={t_prev} must be below t={t}")
    ab, ab_prev = sched.alphas_bar[t], sched.alphas_bar[t_prev]
    coef = np.sqrt((1.0 - ab_prev) / (1.0 - ab))
    return np.sqrt(ab_prev) * x0_hat + coef * (x_t - np.sqrt(ab) * x0_hat)
