import math

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from radcal.errors import InsufficientData, NotEnoughInliers
from radcal.geometry import radial_from_full
from radcal.robust import (
    CauchyLoss,
    RansacConfig,
    cauchy_cost,
    cauchy_derivative,
    make_rng,
    ransac,
    required_iterations,
)
from radcal.solvers import fit_radial_pose_linear, solve_p5p_radial

from conftest import random_pose


def radial_problem(rng, n_in, n_out, sigma=0.0):
    P = random_pose(rng)
    Xc = np.column_stack([rng.uniform(-2, 2, n_in + n_out), rng.uniform(-2, 2, n_in + n_out), rng.uniform(2, 6, n_in + n_out)])
    X = P.inverse().apply(Xc)
    v = 500 * Xc[:, :2] / Xc[:, 2:3] + rng.normal(size=(len(Xc), 2)) * sigma
    v[n_in:] = rng.uniform(-500, 500, (n_out, 2))
    return P, X, v


def run_radial_ransac(X, v, threshold=2.0, seed=0, min_inliers=5):
    def scorer(pose):
        u = pose.apply(X)
        return np.abs(u[:, 0] * v[:, 1] - u[:, 1] * v[:, 0]) / np.linalg.norm(u, axis=1)

    cfg = RansacConfig(threshold=threshold, seed=seed, min_inliers=min_inliers)
    return ransac(
        len(X),
        5,
        lambda idx: solve_p5p_radial((v[idx], X[idx])),
        scorer,
        cfg,
        refit=lambda model, mask: fit_radial_pose_linear(v[mask], X[mask]),
    )


def test_ransac_clean_data(rng):
    P, X, v = radial_problem(rng, 100, 0)
    res = run_radial_ransac(X, v)
    assert res.inlier_mask.all()
    assert np.allclose(res.model.matrix(), radial_from_full(P).matrix(), atol=1e-6)


def test_ransac_recovers_true_membership(rng):
    P, X, v = radial_problem(rng, 70, 30)
    truth = np.arange(100) < 70
    # Outliers that happen to fall within the threshold of their true line are
    # geometric inliers; the oracle counts only those that do not.
    u = radial_from_full(P).apply(X)
    dist = np.abs(u[:, 0] * v[:, 1] - u[:, 1] * v[:, 0]) / np.linalg.norm(u, axis=1)
    truth |= dist <= 2.0
    res = run_radial_ransac(X, v)
    assert np.array_equal(res.inlier_mask, truth)
    assert res.inlier_rms <= 2.0


def test_ransac_deterministic(rng):
    _, X, v = radial_problem(rng, 60, 40, sigma=0.5)
    a = run_radial_ransac(X, v, seed=7)
    b = run_radial_ransac(X, v, seed=7)
    assert np.array_equal(a.model.matrix(), b.model.matrix())
    assert np.array_equal(a.inlier_mask, b.inlier_mask)
    assert a.iterations_used == b.iterations_used and a.inlier_rms == b.inlier_rms


def test_ransac_too_few_points(rng):
    _, X, v = radial_problem(rng, 4, 0)
    with pytest.raises(InsufficientData):
        run_radial_ransac(X, v)


def test_ransac_min_inliers(rng):
    _, X, v = radial_problem(rng, 8, 40)
    with pytest.raises(NotEnoughInliers):
        run_radial_ransac(X, v, min_inliers=30)


def test_ransac_config_validation():
    with pytest.raises(ValueError):
        RansacConfig(confidence=1.0)
    with pytest.raises(ValueError):
        RansacConfig(threshold=0.0)


def test_required_iterations():
    assert required_iterations(1.0, 5, 0.99) == 1
    assert required_iterations(0.0, 5, 0.99) == math.inf
    assert required_iterations(0.5, 5, 0.99) == math.ceil(math.log(0.01) / math.log(1 - 0.5**5))


def test_make_rng_streams():
    a = make_rng(3, 1, 2).integers(0, 2**62, 4)
    b = make_rng(3, 1, 2).integers(0, 2**62, 4)
    c = make_rng(3, 2, 1).integers(0, 2**62, 4)
    assert np.array_equal(a, b)
    assert not np.array_equal(a, c)


# --- Cauchy loss -------------------------------------------------------------


def test_cauchy_values():
    assert cauchy_cost(0.0) == 0.0
    assert cauchy_cost(1.0) == pytest.approx(0.693147, abs=1e-6)
    assert cauchy_cost(1.0) == pytest.approx(math.log(2), rel=1e-15)


def test_cauchy_derivative_matches_finite_differences():
    s = np.logspace(-6, 6, 61)
    h = 1e-6 * s
    fd = (np.log1p(s + h) - np.log1p(s - h)) / (2 * h)
    assert np.allclose(cauchy_derivative(s), fd, rtol=1e-6)
    assert np.allclose(CauchyLoss().weight(s), cauchy_derivative(s))


@given(st.floats(min_value=0, max_value=1e12), st.floats(min_value=0, max_value=1e12))
def test_cauchy_properties(a, b):
    lo, hi = min(a, b), max(a, b)
    assert cauchy_cost(lo) <= cauchy_cost(hi)
    assert cauchy_cost(hi) <= hi
    mid = 0.5 * (lo + hi)
    assert cauchy_cost(mid) >= 0.5 * (cauchy_cost(lo) + cauchy_cost(hi)) - 1e-12 * (1 + cauchy_cost(hi))


def test_cauchy_rejects_negative():
    with pytest.raises(ValueError):
        cauchy_cost(-1.0)
