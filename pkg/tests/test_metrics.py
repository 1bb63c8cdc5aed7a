import numpy as np
import pytest

from diffsync import (
    CanonicalState,
    ContractError,
    GaussianMixture,
    GMMPredictor,
    case_divergence,
    cross_view_consistency,
    divergence_matrix,
    make_identity,
    make_transpose,
    prior_moment_check,
    run_case,
    seeded_gaussian_noise,
    variance_series,
)
from diffsync.sync import SyncRunResult


def _result(values, instances=()):
    return SyncRunResult(CanonicalState.single(np.asarray(values, dtype=float)), list(instances))


def test_divergence_is_a_pseudometric(rng):
    rs = [_result(rng.normal(size=(3, 3))) for _ in range(4)]
    d = divergence_matrix(rs)
    assert np.all(np.diag(d) == 0) and np.array_equal(d, d.T)
    for i in range(4):
        for j in range(4):
            for k in range(4):
                assert d[i, k] <= d[i, j] + d[j, k] + 1e-15
    assert case_divergence(rs) == d.max()
    assert case_divergence([rs[0], _result(rs[0].final_canonical.slabs[0])]) == 0.0
    assert divergence_matrix(rs[:1]).shape == (1, 1)


def test_divergence_needs_two_of_one_shape():
    with pytest.raises(ContractError):
        case_divergence([_result(np.zeros(2))])
    with pytest.raises(ContractError):
        case_divergence([_result(np.zeros(2)), _result(np.zeros(3))])


def test_consistency_zero_for_synced_views():
    z = np.arange(9.0).reshape(3, 3)
    ops = [make_identity((3, 3)), make_transpose((3, 3))]
    assert cross_view_consistency(_result(z, [z, z.T]), ops) == 0.0
    assert cross_view_consistency(_result(z, [z, z]), ops) == pytest.approx(np.sum((z - z.T) ** 2) / 2)


def test_variance_series_needs_trace(sched30):
    gmm = GaussianMixture([1.0], np.zeros((1, 4, 4)), [1.0], pixelwise=True)
    r = run_case(2, [make_identity((4, 4))], GMMPredictor(gmm), sched30, 0, trace=True)
    series = variance_series(r)
    assert len(series) == 31
    with pytest.raises(ContractError):
        variance_series(run_case(2, [make_identity((4, 4))], GMMPredictor(gmm), sched30, 0))


def test_prior_moment_check_on_exact_samples():
    gmm = GaussianMixture([0.3, 0.7], [np.full((50, 50), -4.0), np.full((50, 50), 4.0)], [0.1, 0.1], pixelwise=True)
    labels = seeded_gaussian_noise((4, 50, 50), 1, 0) > 0.5244005127080407  # P(z > q) = 0.3
    x = np.where(labels, -4.0, 4.0) + np.sqrt(0.1) * seeded_gaussian_noise((4, 50, 50), 1, 1)
    rep = prior_moment_check(list(x), gmm)
    assert "z_occupancy" in rep.details
    assert rep.value < 5
    bad = prior_moment_check(list(np.full((4, 50, 50), 4.0)), gmm)
    assert bad.value > 50


def test_metric_report_rejects_nan():
    from diffsync import MetricReport

    with pytest.raises(ContractError):
        MetricReport("x", float("nan"))
