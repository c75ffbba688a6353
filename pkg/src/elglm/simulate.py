"""Stimulus generators and the coupled-population simulator.

Every generator hands back the exact population covariance it sampled from,
so downstream EL-vs-exact comparisons measure approximation error, not
covariance estimation error.
"""

from __future__ import annotations

import dataclasses
import math

import numpy as np

from .population import CoupledFilterSet, HistoryBasis, PopulationDataset
from .structured import Dense, Kronecker, ScaledIdentity, StructuredMatrix

__all__ = [
    "StimulusSpec",
    "gen_stimuli",
    "ar1_covariance",
    "fourier_1f_covariance",
    "spatiotemporal_covariance",
    "gen_coupled_population",
]

_KINDS = ("gaussian_iid", "gaussian_structured", "binary_iid", "weibull_iid")


@dataclasses.dataclass(frozen=True)
class StimulusSpec:
    kind: str
    N: int
    p: int
    sigma: float = 1.0
    C: StructuredMatrix = None
    mean: float = 0.36
    scale: float = 0.15
    shape: float = 0.5

    def __post_init__(self):
        if self.kind not in _KINDS:
            raise ValueError(f"unknown stimulus kind {self.kind!r}; choose from {_KINDS}")
        if self.N < 1 or self.p < 1:
            raise ValueError("N and p must be positive")
        if self.kind == "gaussian_iid" and self.sigma <= 0:
            raise ValueError("sigma must be positive")
        if self.kind == "gaussian_structured":
            if self.C is None:
                raise ValueError("gaussian_structured needs a covariance C")
            if self.C.p != self.p:
                raise ValueError(f"C is {self.C.p}-dimensional but p={self.p}")
        if self.kind == "binary_iid" and not 0.0 < self.mean < 1.0:
            raise ValueError("binary mean must lie in (0, 1)")
        if self.kind == "weibull_iid" and (self.scale <= 0 or self.shape <= 0):
            raise ValueError("Weibull scale and shape must be positive")

    def moments(self):
        """Population mean (scalar, None when centered) and covariance."""
        if self.kind == "gaussian_iid":
            return None, ScaledIdentity(self.p, self.sigma**2)
        if self.kind == "gaussian_structured":
            return None, self.C
        if self.kind == "binary_iid":
            # two levels with the stated mean and unit variance
            return self.mean, ScaledIdentity(self.p, 1.0)
        m1 = self.scale * math.gamma(1.0 + 1.0 / self.shape)
        m2 = self.scale**2 * math.gamma(1.0 + 2.0 / self.shape)
        return m1, ScaledIdentity(self.p, m2 - m1**2)

    def mean_vector(self) -> np.ndarray:
        mu, _ = self.moments()
        return np.zeros(self.p) if mu is None else np.full(self.p, mu)


def _psd_factor(C: StructuredMatrix) -> np.ndarray:
    """L with L L' = C, tolerant of zero eigenvalues."""
    w, V = np.linalg.eigh(C.to_dense())
    if np.min(w) < -1e-10 * max(np.max(w), 1.0):
        raise ValueError("covariance has a negative eigenvalue")
    return V * np.sqrt(np.clip(w, 0.0, None))


def gen_stimuli(spec: StimulusSpec, seed: int):
    """Sample X (N, p) and return it with the true covariance descriptor."""
    rng = np.random.default_rng(seed)
    N, p = spec.N, spec.p
    _, C = spec.moments()
    if spec.kind == "gaussian_iid":
        X = spec.sigma * rng.standard_normal((N, p))
    elif spec.kind == "gaussian_structured":
        X = rng.standard_normal((N, p)) @ _psd_factor(spec.C).T
    elif spec.kind == "binary_iid":
        m = spec.mean
        span = 1.0 / math.sqrt(m * (1.0 - m))
        low = m * (1.0 - span)
        X = low + span * (rng.uniform(size=(N, p)) < m)
    else:
        X = spec.scale * rng.weibull(spec.shape, size=(N, p))
    return X, C


def ar1_covariance(n: int, phi: float = 0.9) -> Dense:
    """Unit-variance AR(1) covariance, entries phi^|i-j|."""
    if not -1.0 < phi < 1.0:
        raise ValueError("phi must lie in (-1, 1)")
    idx = np.arange(n)
    return Dense(phi ** np.abs(idx[:, None] - idx[None, :]))


def fourier_1f_covariance(side: int) -> Dense:
    """side x side spatial covariance, diagonal in the 2-D Fourier basis with
    1/f radial power; DC power clamped to the first nonzero mode, overall
    power normalized so every site has unit variance."""
    if side < 2:
        raise ValueError("side must be at least 2")
    k = np.fft.fftfreq(side) * side
    f = np.sqrt(k[:, None] ** 2 + k[None, :] ** 2)
    P = np.zeros_like(f)
    nz = f > 0
    P[nz] = 1.0 / f[nz]
    P[0, 0] = 1.0  # clamp DC to the |k|=1 power
    P /= P.mean()
    kernel = np.fft.ifft2(P).real  # block-circulant covariance kernel
    I, J = np.divmod(np.arange(side * side), side)
    C = kernel[(I[:, None] - I[None, :]) % side, (J[:, None] - J[None, :]) % side]
    return Dense(0.5 * (C + C.T))


def spatiotemporal_covariance(side: int, T: int, phi: float = 0.9) -> Kronecker:
    """1/f spatial spectrum crossed with AR(1) temporal correlations.

    Covariate ordering: site-major, time within site (p = side^2 * T).
    """
    return Kronecker([fourier_1f_covariance(side), ar1_covariance(T, phi)])


def gen_coupled_population(
    M: int,
    stim_spec: StimulusSpec,
    filters: CoupledFilterSet,
    basis: HistoryBasis,
    seed: int,
    dt: float = 1.0,
    rate_cap: float = 1e6,
):
    """Simulate M coupled LNP neurons bin by bin (history forces causal,
    sequential generation). Returns (PopulationDataset, true C).

    The conditional intensity for neuron i at bin n is
    exp(theta0_i + alpha_i x_n' theta_s_i + self-history + couplings); counts
    are Poisson with mean dt * intensity, and any mean above rate_cap aborts.
    """
    if filters.M != M:
        raise ValueError(f"filter set is for M={filters.M}, requested M={M}")
    s_stim, s_spk = np.random.SeedSequence(seed).generate_state(2)
    X, C = gen_stimuli(stim_spec, int(s_stim))
    rng = np.random.default_rng(int(s_spk))
    N = stim_spec.N
    tau = basis.tau
    base = filters.theta0[:, None] + filters.alpha[:, None] * (
        filters.theta_s @ X.T
    )  # (M, N)
    hs = basis.B @ filters.self_coeffs.T  # (tau, M), self kernel per neuron
    kappa = basis.coupling_kernel
    W = filters.coupling_matrix()
    spikes = np.zeros((M, N), dtype=np.int64)
    for n in range(N):
        kmax = min(tau, n)
        u = base[:, n].copy()
        if kmax > 0:
            window = spikes[:, n - kmax : n][:, ::-1]  # lag 1 first
            u += np.einsum("mk,km->m", window, hs[:kmax, :])
            u += W @ (window @ kappa[:kmax])
        mean = dt * np.exp(u)
        if np.any(mean > rate_cap):
            i = int(np.argmax(mean))
            raise FloatingPointError(
                f"rate cap exceeded at bin {n}, neuron {i} (mean count {mean[i]:.3e}); "
                "couplings are likely unstable"
            )
        spikes[:, n] = rng.poisson(mean)
    return PopulationDataset(spikes, X, dt=dt), C
