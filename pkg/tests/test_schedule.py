import mpmath
import numpy as np
import pytest

from diffsync import (
    ConfigError,
    ContractError,
    GaussianMixture,
    ddim_step,
    forward_diffuse,
    gmm_posterior_mean,
    make_schedule,
    tweedie,
)


def _alphas_bar_mp(T, lo, hi):
    mpmath.mp.dps = 40
    out, prod = [mpmath.mpf(1)], mpmath.mpf(1)
    for i in range(T):
        beta = mpmath.mpf(lo) + (mpmath.mpf(hi) - mpmath.mpf(lo)) * i / (T - 1)
        prod *= 1 - beta
        out.append(prod)
    return out


def test_alphas_bar_matches_high_precision_product():
    sched = make_schedule()
    ref = _alphas_bar_mp(1000, "1e-4", "0.02")
    ref = np.array([float(v) for v in ref])
    np.testing.assert_allclose(sched.alphas_bar, ref, rtol=1e-12, atol=0)
    assert sched.alphas_bar[0] == 1.0
    assert np.all(np.diff(sched.alphas_bar) < 0)


def test_steps_are_evenly_spaced_and_end_at_T():
    sched = make_schedule(num_steps=30)
    assert sched.steps[-1] == 1000 and len(sched.steps) == 30
    pairs = sched.transitions()
    assert pairs[0][0] == 1000 and pairs[-1][1] == 0
    assert all(t > tp for t, tp in pairs)
    assert all(a[1] == b[0] for a, b in zip(pairs, pairs[1:]))


@pytest.mark.parametrize(
    "kwargs",
    [dict(num_steps=0), dict(num_steps=2000), dict(T_train=0), dict(beta_min=0.0), dict(beta_min=0.1, beta_max=0.01)],
)
def test_bad_schedule_is_a_config_error(kwargs):
    with pytest.raises(ConfigError):
        make_schedule(**kwargs)


def test_round_trip_and_linearity(sched30, rng):
    x0 = rng.normal(size=(4, 5))
    eps = rng.normal(size=(4, 5))
    for t in (1, 17, 500, 1000):
        xt = forward_diffuse(x0, eps, t, sched30)
        np.testing.assert_allclose(tweedie(xt, eps, t, sched30), x0, rtol=1e-10, atol=1e-12)
    a, b = rng.normal(size=(2, 3)), rng.normal(size=(2, 3))
    e1, e2 = rng.normal(size=(2, 3)), rng.normal(size=(2, 3))
    lhs = tweedie(2 * a + b, 2 * e1 + e2, 300, sched30)
    rhs = 2 * tweedie(a, e1, 300, sched30) + tweedie(b, e2, 300, sched30)
    np.testing.assert_allclose(lhs, rhs, atol=1e-10)


def test_ddim_step_against_high_precision(sched30):
    # the step is affine in (x_t, x0); evaluate it independently with mpmath
    ab = _alphas_bar_mp(1000, "1e-4", "0.02")
    x, x0 = 0.37, -1.25
    for t, tp in sched30.transitions():
        ref = mpmath.sqrt(ab[tp]) * x0 + mpmath.sqrt((1 - ab[tp]) / (1 - ab[t])) * (x - mpmath.sqrt(ab[t]) * x0)
        got = ddim_step(np.array([x]), np.array([x0]), t, tp, sched30)[0]
        assert abs(got - float(ref)) < 1e-12
    # the last step lands on the clean estimate
    assert ddim_step(np.array([x]), np.array([x0]), 33, 0, sched30)[0] == pytest.approx(x0, abs=1e-15)


def test_contract_errors(sched30):
    a = np.zeros(3)
    with pytest.raises(ContractError):
        forward_diffuse(a, np.zeros(4), 10, sched30)
    with pytest.raises(ContractError):
        tweedie(a, a, 0, sched30)
    with pytest.raises(ContractError):
        forward_diffuse(a, a, 1001, sched30)
    with pytest.raises(ContractError):
        ddim_step(a, a, 10, 10, sched30)
    with pytest.raises(ContractError):
        forward_diffuse(np.array([np.nan]), np.zeros(1), 10, sched30)


def test_small_cases():
    sched = make_schedule(1, 1, 0.3, 0.3)
    assert sched.alphas_bar[1] == pytest.approx(0.7, abs=1e-15)
    assert list(make_schedule(num_steps=50).steps[:2]) == [20, 40]
    eps = np.array([0.5, -2.0])
    s = make_schedule()
    assert np.array_equal(forward_diffuse(np.array([1.5, 2.0]), eps, 0, s), [1.5, 2.0])
    np.testing.assert_allclose(forward_diffuse(np.zeros(2), eps, 400, s), np.sqrt(1 - s.alphas_bar[400]) * eps)
    np.testing.assert_allclose(tweedie(eps, np.zeros(2), 400, s), eps / np.sqrt(s.alphas_bar[400]))


def test_ddim_is_consistent_on_exact_prediction(sched30, rng):
    x0, eps = rng.normal(size=6), rng.normal(size=6)
    for t, tp in sched30.transitions():
        step = ddim_step(forward_diffuse(x0, eps, t, sched30), x0, t, tp, sched30)
        np.testing.assert_allclose(step, forward_diffuse(x0, eps, tp, sched30), atol=1e-12)


def test_full_loop_with_single_gaussian_matches_affine_recursion(sched30):
    # one Gaussian prior makes every step an affine map of x; iterate it exactly
    m, s2, c = 0.8, 0.3, 1.7
    ab = _alphas_bar_mp(1000, "1e-4", "0.02")
    x = mpmath.mpf(c)
    for t, tp in sched30.transitions():
        sa = mpmath.sqrt(ab[t])
        x0 = m + sa * s2 / (ab[t] * s2 + 1 - ab[t]) * (x - sa * m)
        x = mpmath.sqrt(ab[tp]) * x0 + mpmath.sqrt((1 - ab[tp]) / (1 - ab[t])) * (x - sa * x0)

    gmm = GaussianMixture([1.0], [[m]], [s2])
    y = np.array([c])
    for t, tp in sched30.transitions():
        y = ddim_step(y, gmm_posterior_mean(y, t, sched30, gmm), t, tp, sched30)
    assert abs(y[0] - float(x)) < 1e-12
