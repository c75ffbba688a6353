"""Risk formulas against Wishart/MP moment identities and Monte Carlo."""

import numpy as np
import pytest
import scipy.integrate

from elglm.risk import (
    KINDS,
    MPLaw,
    RiskSpec,
    crossover_rho,
    mc_mse,
    mp_density,
    mse_asymptotic,
    mse_closed_form,
    optimal_ridge,
)


def test_riskspec_validation():
    RiskSpec(kind="mele", N=10, p=2, theta_norm2=1.0)
    with pytest.raises(ValueError, match="kind"):
        RiskSpec(kind="ols", N=10, p=2, theta_norm2=1.0)
    with pytest.raises(ValueError, match=">= 1"):
        RiskSpec(kind="mele", N=0, p=2, theta_norm2=1.0)
    with pytest.raises(ValueError, match="nonnegative"):
        RiskSpec(kind="mele", N=10, p=2, theta_norm2=-1.0)
    with pytest.raises(ValueError, match="nonnegative"):
        RiskSpec(kind="map", N=10, p=2, theta_norm2=1.0, c=-0.5)


def test_mele_closed_form_formula():
    # independent derivation: E||(W-I)theta||^2 = (p+1) snr / N for W = X'X/N,
    # plus the noise term p/N
    for N, p, snr in [(50, 5, 2.0), (200, 30, 0.3), (10, 1, 0.0)]:
        got = mse_closed_form(RiskSpec(kind="mele", N=N, p=p, theta_norm2=snr))
        want = (p + 1) * snr / N + p / N
        assert got == pytest.approx(want, rel=1e-14)


def test_mpele_closed_form_formula():
    # ((p+1) snr N + N p + c^2 p^2 snr) / (N + c p)^2, derived by expanding
    # theta_hat - theta = ((X'X - N I) theta + X'eps - c p theta) / (N + c p)
    for N, p, snr, c in [(80, 10, 1.5, 0.7), (40, 40, 3.0, 2.0)]:
        got = mse_closed_form(RiskSpec(kind="mpele", N=N, p=p, theta_norm2=snr, c=c))
        want = (N * (p + 1) * snr + N * p + c * c * p * p * snr) / (N + c * p) ** 2
        assert got == pytest.approx(want, rel=1e-12)
    # c = 0 reduces to the MELE
    a = mse_closed_form(RiskSpec(kind="mpele", N=60, p=8, theta_norm2=1.0, c=0.0))
    b = mse_closed_form(RiskSpec(kind="mele", N=60, p=8, theta_norm2=1.0))
    assert a == pytest.approx(b, rel=1e-14)


def test_mle_closed_form_guard():
    assert mse_closed_form(RiskSpec(kind="mle", N=20, p=5, theta_norm2=9.0)) == pytest.approx(
        5 / 14
    )
    with pytest.raises(ValueError, match="N > p \\+ 1"):
        mse_closed_form(RiskSpec(kind="mle", N=6, p=5, theta_norm2=1.0))
    with pytest.raises(ValueError, match="MAP"):
        mse_closed_form(RiskSpec(kind="map", N=20, p=5, theta_norm2=1.0, c=1.0))


@pytest.mark.parametrize(
    "kind,c", [("mele", 0.0), ("mle", 0.0), ("mpele", 0.8), ("map", 0.8)]
)
def test_mc_agrees_with_theory(kind, c):
    N, p, snr = 60, 8, 1.5
    rng = np.random.default_rng(100)
    theta = rng.standard_normal(p)
    theta *= np.sqrt(snr) / np.linalg.norm(theta)
    est, se = mc_mse(kind, N, p, theta, trials=400, seed=7, c=c)
    if kind == "map":
        # no closed form; check against a second independent MC stream
        est2, se2 = mc_mse(kind, N, p, theta, trials=400, seed=8, c=c)
        assert abs(est - est2) < 4 * np.hypot(se, se2)
    else:
        want = mse_closed_form(RiskSpec(kind=kind, N=N, p=p, theta_norm2=snr, c=c))
        assert abs(est - want) < 4 * se


def test_mc_determinism_and_guards():
    theta = np.ones(3)
    a = mc_mse("mele", 20, 3, theta, trials=5, seed=1)
    b = mc_mse("mele", 20, 3, theta, trials=5, seed=1)
    assert a == b
    with pytest.raises(ValueError, match="trials"):
        mc_mse("mele", 20, 3, theta, trials=1, seed=1)
    with pytest.raises(ValueError, match="p < N - 1"):
        mc_mse("mle", 4, 3, theta, trials=5, seed=1)
    with pytest.raises(ValueError, match="shape"):
        mc_mse("mele", 20, 4, theta, trials=5, seed=1)
    with pytest.raises(ValueError, match="kind"):
        mc_mse("ols", 20, 3, theta, trials=5, seed=1)


def test_asymptotic_is_large_N_limit():
    snr, c = 2.0, 0.6
    N = 2_000_000
    for kind, rho in [("mele", 0.3), ("mle", 0.4), ("mpele", 1.5)]:
        p = int(rho * N)
        exact = mse_closed_form(RiskSpec(kind=kind, N=N, p=p, theta_norm2=snr, c=c))
        limit = mse_asymptotic(kind, rho, snr, c=c)
        assert exact == pytest.approx(limit, rel=1e-4)


def test_asymptotic_guards():
    with pytest.raises(ValueError, match="rho < 1"):
        mse_asymptotic("mle", 1.0, 1.0)
    with pytest.raises(ValueError, match="positive"):
        mse_asymptotic("mele", 0.0, 1.0)
    with pytest.raises(ValueError, match="c > 0"):
        mse_asymptotic("map", 1.5, 1.0, c=0.0)
    with pytest.raises(ValueError, match="kind"):
        mse_asymptotic("ols", 0.5, 1.0)


# --- Marchenko-Pastur law ---------------------------------------------------

@pytest.mark.parametrize("rho", [0.25, 0.5, 0.9, 1.0, 2.0])
def test_mp_moments(rho):
    law = mp_density(rho)
    # total mass 1, E[l] = 1, E[l^2] = 1 + rho
    assert law.expect(lambda l: np.ones_like(np.asarray(l, float))) == pytest.approx(1.0, abs=1e-10)
    assert law.expect(lambda l: l) == pytest.approx(1.0, abs=1e-9)
    assert law.expect(lambda l: l * l) == pytest.approx(1.0 + rho, rel=1e-8)


def test_mp_density_callable_matches_quad():
    law = mp_density(0.5)
    mass, _ = scipy.integrate.quad(law, law.a, law.b, limit=200)
    assert mass == pytest.approx(1.0, abs=1e-6)
    assert law(law.a - 0.01) == 0.0 and law(law.b + 0.01) == 0.0
    big = mp_density(4.0)
    assert big.zero_mass == pytest.approx(0.75)
    mass, _ = scipy.integrate.quad(big, big.a, big.b, limit=200)
    assert mass + big.zero_mass == pytest.approx(1.0, abs=1e-6)


def test_mp_inverse_moment_gives_mle_risk():
    # E[1/l] = 1/(1-rho) for rho < 1, so rho E[1/l] is the MLE limit
    rho = 0.35
    law = mp_density(rho)
    assert rho * law.expect(lambda l: 1.0 / l) == pytest.approx(
        mse_asymptotic("mle", rho, 123.0), rel=1e-6
    )


def test_map_asymptotics():
    snr = 2.0
    # c -> 0 with rho < 1 recovers the MLE limit
    assert mse_asymptotic("map", 0.5, snr, c=1e-9) == pytest.approx(
        mse_asymptotic("mle", 0.5, snr), rel=1e-6
    )
    # rho > 1 with the zero point mass: bias contributes snr * (1 - 1/rho)
    rho, c = 2.0, 1.0
    law = mp_density(rho)
    cr = c * rho
    want = rho * law.expect(lambda l: l / (l + cr) ** 2) + snr * law.expect(
        lambda l: (l / (l + cr) - 1.0) ** 2
    )
    assert mse_asymptotic("map", rho, snr, c=c) == pytest.approx(want, rel=1e-12)
    # MC spot check at moderate size
    rng = np.random.default_rng(5)
    N, p = 300, 150
    theta = rng.standard_normal(p)
    theta *= np.sqrt(snr) / np.linalg.norm(theta)
    est, se = mc_mse("map", N, p, theta, trials=120, seed=11, c=c)
    assert abs(est - mse_asymptotic("map", 0.5, snr, c=c)) < 4 * se + 0.02


def test_mp_rejects_bad_rho():
    with pytest.raises(ValueError, match="positive"):
        MPLaw(0.0)


# --- crossover and optimal ridge -------------------------------------------

def test_crossover_rho():
    for snr in (0.2, 1.0, 5.0):
        rho_star = crossover_rho(snr)
        assert rho_star == pytest.approx(snr / (1 + snr))
        below = mse_asymptotic("mele", rho_star * 0.9, snr) - mse_asymptotic(
            "mle", rho_star * 0.9, snr
        )
        above = mse_asymptotic("mele", min(rho_star * 1.1, 0.999), snr) - mse_asymptotic(
            "mle", min(rho_star * 1.1, 0.999), snr
        )
        assert below > 0 > above  # MLE wins below the crossover, MELE above
    with pytest.raises(ValueError, match="nonnegative"):
        crossover_rho(-1.0)


def test_optimal_ridge_mpele_closed_form():
    # stationarity of (rho + snr(c^2 rho^2 + rho))/(1 + c rho)^2 gives
    # c* = (1 + snr)/snr independent of rho
    for rho, snr in [(0.5, 2.0), (2.0, 0.5)]:
        c_star, mse_star = optimal_ridge("mpele", rho, snr)
        assert c_star == pytest.approx((1 + snr) / snr, rel=1e-4)
        assert mse_star == pytest.approx(mse_asymptotic("mpele", rho, snr, c=c_star), rel=1e-12)
        assert mse_star <= mse_asymptotic("mpele", rho, snr, c=0.0)


def test_optimal_ridge_map_is_bayes_weight():
    # the classic ridge oracle: c* = 1/snr (prior variance matched)
    rho, snr = 0.5, 2.0
    c_star, mse_star = optimal_ridge("map", rho, snr)
    assert c_star == pytest.approx(1.0 / snr, rel=1e-3)
    assert mse_star < mse_asymptotic("mle", rho, snr)
    with pytest.raises(ValueError, match="mpele"):
        optimal_ridge("mele", 0.5, 1.0)
