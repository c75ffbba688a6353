import numpy as np
import pytest

from elglm.families import Bernoulli, Gaussian, Poisson
from elglm.glm import (
    ExactObjective,
    GlmDataset,
    GlmParams,
    exact_loglik,
    load_dataset,
    load_dataset_csv,
    save_dataset,
    simulate_responses,
)


def _dataset(family, seed=0, N=120, p=5):
    rng = np.random.default_rng(seed)
    X = rng.standard_normal((N, p))
    theta = rng.standard_normal(p) * 0.4
    params = GlmParams(theta, theta0=-0.3)
    r = simulate_responses(family, X, params, seed + 1)
    return GlmDataset(X, r, family), params


def _naive_loglik(data, params):
    fam = data.family
    total = 0.0
    for n in range(data.N):
        u = params.theta0 + float(data.X[n] @ params.theta)
        total += data.r[n] * u - fam.weight * fam.g(np.array([u]))[0]
    return fam.scale * total


@pytest.mark.parametrize("family", [Gaussian(sigma2=1.7), Poisson(dt=0.3), Bernoulli()])
def test_value_matches_naive_sum(family):
    data, params = _dataset(family)
    ev = exact_loglik(data, params)
    assert ev.value == pytest.approx(_naive_loglik(data, params), rel=1e-12)


@pytest.mark.parametrize("family", [Gaussian(), Poisson(), Bernoulli()])
def test_gradient_matches_finite_differences(family):
    data, params = _dataset(family, seed=3)
    ev = exact_loglik(data, params)
    eps = 1e-6
    # offset coordinate first, then theta
    g0 = (
        exact_loglik(data, GlmParams(params.theta, params.theta0 + eps)).value
        - exact_loglik(data, GlmParams(params.theta, params.theta0 - eps)).value
    ) / (2 * eps)
    assert ev.grad[0] == pytest.approx(g0, rel=1e-5, abs=1e-7)
    for j in range(data.p):
        step = np.zeros(data.p)
        step[j] = eps
        gj = (
            exact_loglik(data, GlmParams(params.theta + step, params.theta0)).value
            - exact_loglik(data, GlmParams(params.theta - step, params.theta0)).value
        ) / (2 * eps)
        assert ev.grad[1 + j] == pytest.approx(gj, rel=1e-5, abs=1e-7)


@pytest.mark.parametrize("family", [Gaussian(), Poisson(), Bernoulli()])
def test_hess_action_matches_gradient_differences(family):
    data, params = _dataset(family, seed=4)
    ev = exact_loglik(data, params)
    rng = np.random.default_rng(0)
    v = rng.standard_normal(data.p + 1)
    eps = 1e-6
    up = exact_loglik(
        data, GlmParams(params.theta + eps * v[1:], params.theta0 + eps * v[0])
    ).grad
    dn = exact_loglik(
        data, GlmParams(params.theta - eps * v[1:], params.theta0 - eps * v[0])
    ).grad
    np.testing.assert_allclose(ev.hess_action(v), (up - dn) / (2 * eps), rtol=1e-4, atol=1e-6)


def test_hess_dense_matches_hess_action():
    data, params = _dataset(Poisson(), seed=5)
    for fit_offset in (False, True):
        obj = ExactObjective(data, fit_offset=fit_offset, theta0=params.theta0)
        x = (
            np.concatenate(([params.theta0], params.theta))
            if fit_offset
            else params.theta.copy()
        )
        H = obj.hess_dense(x)
        act = obj.hess_action(x)
        for j in range(H.shape[0]):
            e = np.zeros(H.shape[0])
            e[j] = 1.0
            np.testing.assert_allclose(H[:, j], act(e), rtol=1e-10, atol=1e-12)


def test_offset_vector_shifts_predictor():
    data, params = _dataset(Poisson(), seed=6)
    off = np.full(data.N, 0.25)
    shifted = GlmParams(params.theta, params.theta0 + 0.25)
    assert exact_loglik(data, params, offset=off).value == pytest.approx(
        exact_loglik(data, shifted).value, rel=1e-12
    )


def test_nonfinite_predictor_error_names_index():
    X = np.zeros((3, 1))
    X[2, 0] = 1.0
    data = GlmDataset(X, np.array([0.0, 1.0, 2.0]), Poisson())
    with pytest.raises(FloatingPointError, match="2"):
        exact_loglik(data, GlmParams(np.array([800.0])))


def test_dataset_validates_responses_per_family():
    X = np.ones((2, 1))
    with pytest.raises(ValueError):
        GlmDataset(X, np.array([0.5, 1.0]), Poisson())
    with pytest.raises(ValueError):
        GlmDataset(X, np.array([0.0, 2.0]), Bernoulli())
    GlmDataset(X, np.array([0.5, -1.2]), Gaussian())


def test_sufficient_stats_cached_and_read_only():
    data, _ = _dataset(Gaussian(), seed=7)
    np.testing.assert_allclose(data.s, data.X.T @ data.r)
    assert data.N_s == pytest.approx(float(np.sum(data.r)))
    with pytest.raises(ValueError):
        data.s[0] = 0.0


def test_simulate_deterministic_and_family_typed():
    rng = np.random.default_rng(1)
    X = rng.standard_normal((500, 3))
    params = GlmParams(np.array([0.2, -0.1, 0.4]))
    for fam in (Gaussian(), Poisson(), Bernoulli()):
        a = simulate_responses(fam, X, params, 9)
        b = simulate_responses(fam, X, params, 9)
        np.testing.assert_array_equal(a, b)
    r = simulate_responses(Bernoulli(), X, params, 9)
    assert set(np.unique(r)) <= {0.0, 1.0}


def test_save_load_round_trip(tmp_path):
    data, _ = _dataset(Poisson(dt=0.5), seed=8)
    stem = tmp_path / "ds"
    save_dataset(data, str(stem))
    back = load_dataset(str(stem))
    np.testing.assert_array_equal(back.X, data.X)
    np.testing.assert_array_equal(back.r, data.r)
    assert type(back.family) is Poisson
    assert back.family.dt == pytest.approx(0.5)


def test_csv_loader(tmp_path):
    path = tmp_path / "data.csv"
    path.write_text("x1,x2,y\n1.0,2.0,0\n0.5,-1.0,3\n")
    data = load_dataset_csv(str(path), Poisson())
    assert data.N == 2 and data.p == 2
    np.testing.assert_allclose(data.r, [0.0, 3.0])
    np.testing.assert_allclose(data.X[1], [0.5, -1.0])
