"""MSE theory for the linear-Gaussian model: closed forms, rho-asymptotics,
Marchenko-Pastur integration, and Monte Carlo oracles.

Model: r|x ~ N(x'theta, 1), x ~ N(0, I), ridge penalty log f(theta)
= -c p ||theta||^2 / 2 (the ridge weight scales with p so the asymptotics
stay finite). With unit noise and identity covariance theta'theta is the SNR.

Estimator kinds: "mele" X'r/N, "mle" (X'X)^{-1}X'r, "mpele" X'r/(N+cp),
"map" (X'X+cpI)^{-1}X'r.
"""

from __future__ import annotations

import dataclasses
import math

import numpy as np

__all__ = [
    "RiskSpec",
    "KINDS",
    "mse_closed_form",
    "mse_asymptotic",
    "MPLaw",
    "mp_density",
    "mc_mse",
    "crossover_rho",
    "optimal_ridge",
]

KINDS = ("mele", "mle", "mpele", "map")


@dataclasses.dataclass(frozen=True)
class RiskSpec:
    kind: str
    N: int
    p: int
    theta_norm2: float
    c: float = 0.0

    def __post_init__(self):
        if self.kind not in KINDS:
            raise ValueError(f"kind must be one of {KINDS}")
        if self.N < 1 or self.p < 1:
            raise ValueError("N and p must be >= 1")
        if self.c < 0 or self.theta_norm2 < 0:
            raise ValueError("c and theta_norm2 must be nonnegative")


def mse_closed_form(spec: RiskSpec) -> float:
    """Finite-sample E||theta_hat - theta||^2; no closed form exists for the
    ridge MAP (use mc_mse or the asymptotic formula)."""
    snr, N, p, c = spec.theta_norm2, spec.N, spec.p, spec.c
    if spec.kind == "mele":
        return (snr + p * (snr + 1.0)) / N
    if spec.kind == "mle":
        if N <= p + 1:
            raise ValueError("MLE closed form requires N > p + 1")
        return p / (N - p - 1.0)
    if spec.kind == "mpele":
        shrink = N / (N + c * p) - 1.0
        return shrink * shrink * snr + (N * p * (1.0 + snr) + N * snr) / (N + c * p) ** 2
    raise ValueError("no finite-sample closed form for the MAP; use mc_mse")


class MPLaw:
    """Marchenko-Pastur law for eigenvalues of X'X/N, aspect ratio rho = p/N.

    Callable as the continuous density on [a, b] = [(1-sqrt(rho))^2,
    (1+sqrt(rho))^2]; ``expect`` integrates a function against the full law,
    including the point mass of weight 1 - 1/rho at zero when rho > 1. The
    inverse-square-root endpoint behavior is removed by the substitution
    l = a + (b - a) sin^2 t before Gauss-Legendre quadrature.
    """

    def __init__(self, rho: float, n_quad: int = 400):
        if rho <= 0:
            raise ValueError("rho must be positive")
        self.rho = float(rho)
        self.a = (1.0 - math.sqrt(rho)) ** 2
        self.b = (1.0 + math.sqrt(rho)) ** 2
        self.zero_mass = max(0.0, 1.0 - 1.0 / rho)
        x, w = np.polynomial.legendre.leggauss(n_quad)
        t = 0.25 * math.pi * (x + 1.0)
        s, cth = np.sin(t), np.cos(t)
        self._l = self.a + (self.b - self.a) * s * s
        # dmu = (1/(2 pi rho l)) sqrt((b-l)(l-a)) dl with dl = 2(b-a) s c dt
        self._w = (
            0.25 * math.pi * w * (self.b - self.a) ** 2 * (s * cth) ** 2 / (math.pi * self.rho * self._l)
        )

    def __call__(self, l):
        l = np.asarray(l, dtype=float)
        inside = (l > self.a) & (l < self.b)
        dens = np.zeros_like(l)
        li = l[inside]
        dens[inside] = np.sqrt((self.b - li) * (li - self.a)) / (2.0 * math.pi * li * self.rho)
        return dens if dens.ndim else float(dens)

    def expect(self, f) -> float:
        """E[f(l)] under the full law (continuous part + point mass at 0)."""
        val = float(np.sum(self._w * f(self._l)))
        if self.zero_mass > 0:
            val += self.zero_mass * float(f(0.0))
        return val


def mp_density(rho: float, n_quad: int = 400) -> MPLaw:
    return MPLaw(rho, n_quad=n_quad)


def mse_asymptotic(kind: str, rho: float, theta_norm2: float, c: float = 0.0) -> float:
    """Limiting MSE as N, p -> infinity with p/N -> rho.

    mele: rho (snr + 1); mle: rho/(1-rho) for rho < 1;
    mpele: (rho + snr (c^2 rho^2 + rho)) / (1 + c rho)^2;
    map: rho E[l/(l+c rho)^2] + snr E[(l/(l+c rho) - 1)^2] over the MP law.
    """
    if kind not in KINDS:
        raise ValueError(f"kind must be one of {KINDS}")
    if rho <= 0:
        raise ValueError("rho must be positive")
    snr = float(theta_norm2)
    if kind == "mele":
        return rho * (snr + 1.0)
    if kind == "mle":
        if rho >= 1:
            raise ValueError("MLE asymptotics require rho < 1 (non-unique beyond)")
        return rho / (1.0 - rho)
    if kind == "mpele":
        return (rho + snr * (c * c * rho * rho + rho)) / (1.0 + c * rho) ** 2
    if c <= 0 and rho >= 1:
        raise ValueError("MAP asymptotics at rho >= 1 require c > 0")
    law = MPLaw(rho)
    cr = c * rho
    var_term = law.expect(lambda l: l / (l + cr) ** 2)
    bias_term = law.expect(lambda l: (l / (l + cr) - 1.0) ** 2)
    return rho * var_term + snr * bias_term


def crossover_rho(snr: float) -> float:
    """The rho above which the MELE beats the MLE: snr / (1 + snr)."""
    if snr < 0:
        raise ValueError("snr must be nonnegative")
    return snr / (1.0 + snr)


def _estimate(kind, X, r, N, p, c):
    s = X.T @ r
    if kind == "mele":
        return s / N
    if kind == "mpele":
        return s / (N + c * p)
    G = X.T @ X
    if kind == "map":
        G = G + (c * p) * np.eye(p)
    return np.linalg.solve(G, s)


def mc_mse(kind: str, N: int, p: int, theta_true, trials: int, seed, c: float = 0.0):
    """Monte Carlo E||theta_hat - theta||^2 over fresh (X, r) draws.

    Returns (estimate, stderr). The RNG stream is consumed identically for
    every kind, so runs with the same seed see the same simulated datasets
    and paired comparisons across estimators are exact.
    """
    if kind not in KINDS:
        raise ValueError(f"kind must be one of {KINDS}")
    if trials < 2:
        raise ValueError("trials must be >= 2")
    if kind == "mle" and p >= N - 1:
        raise ValueError("MLE Monte Carlo requires p < N - 1")
    theta = np.asarray(theta_true, dtype=float)
    if theta.shape != (p,):
        raise ValueError(f"theta_true must have shape ({p},)")
    errs = np.empty(trials)
    for i, child in enumerate(np.random.SeedSequence(seed).spawn(trials)):
        rng = np.random.default_rng(child)
        X = rng.standard_normal((N, p))
        r = X @ theta + rng.standard_normal(N)
        diff = _estimate(kind, X, r, N, p, c) - theta
        errs[i] = float(diff @ diff)
    return float(errs.mean()), float(errs.std(ddof=1) / math.sqrt(trials))


def optimal_ridge(kind: str, rho: float, theta_norm2: float):
    """Golden-section minimization of the asymptotic MSE over log10 c in [-6, 6].

    Returns (c_star, mse_star). Only the penalized kinds make sense here.
    """
    if kind not in ("mpele", "map"):
        raise ValueError("optimal_ridge applies to 'mpele' or 'map'")

    def f(logc):
        return mse_asymptotic(kind, rho, theta_norm2, c=10.0**logc)

    phi = (math.sqrt(5.0) - 1.0) / 2.0
    lo, hi = -6.0, 6.0
    x1 = hi - phi * (hi - lo)
    x2 = lo + phi * (hi - lo)
    f1, f2 = f(x1), f(x2)
    for _ in range(80):
        if f1 <= f2:
            hi, x2, f2 = x2, x1, f1
            x1 = hi - phi * (hi - lo)
            f1 = f(x1)
        else:
            lo, x1, f1 = x1, x2, f2
            x2 = lo + phi * (hi - lo)
            f2 = f(x2)
    logc = x1 if f1 <= f2 else x2
    return 10.0**logc, f(logc)
