import numpy as np
import pytest

import diffcollage as dc


def test_schedule_and_grid():
    s = dc.NoiseSchedule.linear(0.01, 20.0)
    assert s.sigma(3.0) == pytest.approx(3.0)
    grid = dc.karras_grid(s, 10)
    assert len(grid) == 11
    assert grid[0] == pytest.approx(20.0)
    assert grid[-1] == pytest.approx(0.01)
    assert all(a > b for a, b in zip(grid, grid[1:]))
    with pytest.raises(ValueError):
        s.sigma(100.0)


def test_chain_graph_sum_rule():
    g = dc.build_chain(4, 8, 4)
    assert g.total_dim == 20
    assert g.validate() == []
    assert g.is_acyclic()
    np.testing.assert_allclose(g.coefficient_sums(), np.ones(20))


def test_custom_graph_reports_coverage():
    g = dc.FactorGraph(6, [[0, 1, 2], [2, 3]], [[2]])
    report = g.validate()
    assert any("coordinate 4" in line for line in report)


def test_composed_gaussian_score_matches_bethe_precision():
    g = dc.build_chain(3, 4, 2)
    n = g.total_dim
    cov = dc.ou_covariance(n, 3.0)
    s = dc.NoiseSchedule.linear(0.01, 10.0)
    collage = dc.GaussianCollage(g, np.zeros(n), cov, s)
    t = 0.5
    # oracle: sum of lifted node precisions with Bethe coefficients
    fc, vc = g.bethe_coefficients()
    prec = np.zeros((n, n))
    for coeff, coords in list(zip(fc, g.factors)) + list(zip(vc, g.variables)):
        if coeff == 0.0:
            continue
        idx = np.array(coords)
        block = cov[np.ix_(idx, idx)] + t * t * np.eye(len(idx))
        prec[np.ix_(idx, idx)] += coeff * np.linalg.inv(block)
    rng = np.random.default_rng(0)
    for _ in range(5):
        u = rng.normal(size=n)
        np.testing.assert_allclose(collage.score(u, t), -prec @ u, atol=1e-10)


def test_sampling_is_deterministic_and_matches_oracle():
    g = dc.build_chain(3, 4, 2)
    n = g.total_dim
    cov = dc.ou_covariance(n, 3.0)
    s = dc.NoiseSchedule.linear(0.01, 20.0)
    a = dc.GaussianCollage(g, np.zeros(n), cov, s, workers=1).sample(2000, steps=25, seed=5)
    b = dc.GaussianCollage(g, np.zeros(n), cov, s, workers=3).sample(2000, steps=25, seed=5)
    assert a.shape == (2000, n)
    assert np.array_equal(a, b)
    emp = np.cov(a, rowvar=False)
    assert np.linalg.norm(emp - cov) / np.linalg.norm(cov) < 0.15


def test_linear_operator_against_dense_pinv():
    op = dc.LinearOperator.boxdown(8, 2)
    H = np.stack([op.apply(e) for e in np.eye(8)], axis=1)
    y = np.array([1.0, -2.0, 0.5, 3.0])
    np.testing.assert_allclose(op.apply_pinv(y), np.linalg.pinv(H) @ y, atol=1e-12)
    u = np.arange(8.0)
    np.testing.assert_allclose(op.apply(op.project(u, y)), y, atol=1e-12)


def test_frechet_against_closed_form():
    d = dc.frechet_gaussian(np.array([0.0]), np.array([[1.0]]), np.array([2.0]), np.array([[4.0]]))
    # (mu diff)^2 + (sqrt(a) - sqrt(b))^2
    assert d == pytest.approx(4.0 + 1.0)
    rng = np.random.default_rng(1)
    A = rng.normal(size=(3, 3))
    S = A @ A.T + np.eye(3)
    assert dc.frechet_gaussian(np.ones(3), S, np.ones(3), S) == pytest.approx(0.0, abs=1e-9)


def test_seam_and_kendall():
    ramp = np.tile(np.arange(20.0), (4, 1))
    assert dc.seam_statistic(ramp, [5, 10]) == pytest.approx(1.0)
    assert dc.kendall_tau([1.0, 2.0, 3.0, 4.0]) == pytest.approx(1.0)
    assert dc.kendall_tau([4.0, 3.0, 2.0, 1.0]) == pytest.approx(-1.0)


def test_fd_plus_orders_naive_concatenation_worse():
    n = 20
    cov = dc.ou_covariance(n, 4.0)
    joint = dc.sample_gaussian(np.zeros(n), cov, 4000, 3)
    ref = dc.sample_gaussian(np.zeros(8), dc.ou_covariance(8, 4.0), 4000, 4)
    halves = dc.sample_gaussian(np.zeros(10), dc.ou_covariance(10, 4.0), 8000, 5)
    naive = np.concatenate([halves[:4000], halves[4000:]], axis=1)
    assert dc.fd_plus(naive, ref, 8, 0) > 3 * dc.fd_plus(joint, ref, 8, 0)
