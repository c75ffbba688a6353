"""GLM datasets and the exact log-likelihood with gradient and Hessian action.

The dataset caches the sufficient statistics s = X'r, N_s = sum(r), N once,
which is all the linear term of the likelihood ever needs; the nonlinear term
is what the EL approximation targets.

Likelihood values are reported up to const(theta): per-datum terms that do
not involve (theta0, theta), e.g. -log r_n! or -r_n^2/(2 sigma^2), are
dropped consistently across families and likelihood modes.
"""

from __future__ import annotations

import dataclasses
import json
import os

import numpy as np

from .families import CanonicalFamily, family_from_config

__all__ = [
    "GlmDataset",
    "GlmParams",
    "LikelihoodEval",
    "exact_loglik",
    "ExactObjective",
    "simulate_responses",
    "save_dataset",
    "load_dataset",
    "load_dataset_csv",
]


@dataclasses.dataclass(frozen=True)
class GlmParams:
    """Filter theta (length p) and scalar offset theta0."""

    theta: np.ndarray
    theta0: float = 0.0

    def __post_init__(self):
        theta = np.asarray(self.theta, dtype=float)
        if theta.ndim != 1:
            raise ValueError("theta must be a 1-D vector")
        if not (np.all(np.isfinite(theta)) and np.isfinite(self.theta0)):
            raise ValueError("parameters must be finite")
        theta.setflags(write=False)
        object.__setattr__(self, "theta", theta)
        object.__setattr__(self, "theta0", float(self.theta0))

    @property
    def p(self):
        return self.theta.size


class GlmDataset:
    """Design matrix X (N x p), responses r (N,), family; suff stats cached.

    Attributes
    ----------
    s : ndarray, shape (p,)
        X' r, the only data contraction the EL ever needs.
    N_s : float
        Total response sum (spike count for point-process families).
    """

    def __init__(self, X, r, family: CanonicalFamily):
        X = np.ascontiguousarray(X, dtype=float)
        r = np.ascontiguousarray(r, dtype=float)
        if X.ndim != 2:
            raise ValueError("X must be 2-D")
        if r.shape != (X.shape[0],):
            raise ValueError(f"r has shape {r.shape}, expected ({X.shape[0]},)")
        if not np.all(np.isfinite(X)):
            raise ValueError("X must be finite")
        family.validate_responses(r)
        X.setflags(write=False)
        r.setflags(write=False)
        self.X = X
        self.r = r
        self.family = family
        self.N, self.p = X.shape
        self.s = X.T @ r
        self.s.setflags(write=False)
        self.N_s = float(np.sum(r))

    def __repr__(self):
        return f"GlmDataset(N={self.N}, p={self.p}, family={self.family!r})"


@dataclasses.dataclass
class LikelihoodEval:
    value: float
    grad: np.ndarray  # length p+1, ordered (theta0, theta)
    hess_action: "callable"  # v (p+1,) -> H v (p+1,)


def _linear_predictor(data: GlmDataset, params: GlmParams, offset):
    if params.p != data.p:
        raise ValueError(f"theta has length {params.p}, expected {data.p}")
    u = params.theta0 + data.X @ params.theta
    if offset is not None:
        offset = np.asarray(offset, dtype=float)
        if offset.shape != (data.N,):
            raise ValueError(f"offset has shape {offset.shape}, expected ({data.N},)")
        u = u + offset
    return u


def exact_loglik(data: GlmDataset, params: GlmParams, offset=None) -> LikelihoodEval:
    """Exact log-likelihood over (theta0, theta), up to const(theta).

    value = scale * sum_n [ u_n r_n - weight * G(u_n) ] with
    u = theta0 + X theta (+ offset). The gradient is length p+1 ordered
    (theta0, theta); hess_action applies the (p+1)x(p+1) Hessian to a vector
    in O(Np) without forming it. Raises on non-finite intermediates, naming
    the offending data index.
    """
    fam = data.family
    u = _linear_predictor(data, params, offset)
    with np.errstate(over="ignore"):  # finiteness is checked explicitly below
        gu = fam.g(u)
    if not np.all(np.isfinite(gu)):
        bad = int(np.argmax(~np.isfinite(gu)))
        raise FloatingPointError(f"non-finite G(u) at data index {bad} (u={u[bad]})")
    w, scale = fam.weight, fam.scale
    value = scale * (float(u @ data.r) - w * float(np.sum(gu)))

    resid = data.r - w * fam.dg(u)
    grad = np.empty(data.p + 1)
    grad[0] = scale * float(np.sum(resid))
    grad[1:] = scale * (data.X.T @ resid)

    d2 = w * fam.d2g(u)

    def hess_action(v):
        v = np.asarray(v, dtype=float)
        if v.shape != (data.p + 1,):
            raise ValueError(f"vector has shape {v.shape}, expected ({data.p + 1},)")
        t = d2 * (v[0] + data.X @ v[1:])
        out = np.empty(data.p + 1)
        out[0] = -scale * float(np.sum(t))
        out[1:] = -scale * (data.X.T @ t)
        return out

    return LikelihoodEval(value=value, grad=grad, hess_action=hess_action)


class ExactObjective:
    """Callable view of the exact log-likelihood for optimizers and samplers.

    ``fit_offset=False`` freezes theta0 and exposes a p-dimensional
    objective; ``fit_offset=True`` exposes the joint (theta0, theta) problem
    over a (p+1)-vector ordered (theta0, theta).
    """

    def __init__(self, data: GlmDataset, fit_offset=False, theta0=0.0, offset=None):
        self.data = data
        self.fit_offset = bool(fit_offset)
        self.theta0 = float(theta0)
        self.offset = offset
        self.dim = data.p + 1 if fit_offset else data.p

    def _params(self, x):
        x = np.asarray(x, dtype=float)
        if self.fit_offset:
            return GlmParams(theta=x[1:], theta0=x[0])
        return GlmParams(theta=x, theta0=self.theta0)

    def value(self, x):
        return exact_loglik(self.data, self._params(x), offset=self.offset).value

    def value_grad(self, x):
        ev = exact_loglik(self.data, self._params(x), offset=self.offset)
        grad = ev.grad if self.fit_offset else ev.grad[1:]
        return ev.value, grad

    def hess_action(self, x):
        ev = exact_loglik(self.data, self._params(x), offset=self.offset)
        if self.fit_offset:
            return ev.hess_action

        def action(v):
            return ev.hess_action(np.concatenate(([0.0], v)))[1:]

        return action

    def hess_dense(self, x):
        """Explicit Hessian as one weighted gram product, O(N p^2)."""
        data, fam = self.data, self.data.family
        u = _linear_predictor(data, self._params(x), self.offset)
        d2 = fam.scale * fam.weight * fam.d2g(u)
        Xw = data.X * d2[:, None]
        Htt = -(data.X.T @ Xw)
        if not self.fit_offset:
            return Htt
        H = np.empty((data.p + 1, data.p + 1))
        H[0, 0] = -float(np.sum(d2))
        H[0, 1:] = H[1:, 0] = -Xw.sum(axis=0)
        H[1:, 1:] = Htt
        return H


def simulate_responses(family: CanonicalFamily, X, params: GlmParams, seed) -> np.ndarray:
    """Draw r per row of X under the family's observation model; deterministic by seed."""
    X = np.asarray(X, dtype=float)
    if not np.all(np.isfinite(X)):
        raise ValueError("X must be finite")
    if params.p != X.shape[1]:
        raise ValueError("theta length does not match X columns")
    rng = np.random.default_rng(seed)
    u = params.theta0 + X @ params.theta
    return family.simulate(u, rng)


# Dataset file format: one float64 little-endian binary holding X in
# column-major order followed by r, plus a JSON sidecar (same stem, .json)
# carrying {N, p, family params}. CSV import covers small hand-made data.


def save_dataset(data: GlmDataset, stem: str):
    """Write <stem>.bin and <stem>.json; returns the pair of paths."""
    bin_path, meta_path = stem + ".bin", stem + ".json"
    with open(bin_path, "wb") as f:
        f.write(np.asfortranarray(data.X).tobytes(order="F"))
        f.write(data.r.tobytes())
    meta = {"N": data.N, "p": data.p, **data.family.to_config()}
    with open(meta_path, "w") as f:
        json.dump(meta, f, indent=2)
        f.write("\n")
    return bin_path, meta_path


def load_dataset(stem: str) -> GlmDataset:
    bin_path, meta_path = stem + ".bin", stem + ".json"
    with open(meta_path) as f:
        meta = json.load(f)
    N, p = int(meta["N"]), int(meta["p"])
    family = family_from_config(meta)
    raw = np.fromfile(bin_path, dtype="<f8")
    if raw.size != N * p + N:
        raise ValueError(
            f"{os.path.basename(bin_path)}: expected {N * p + N} float64 values, found {raw.size}"
        )
    X = raw[: N * p].reshape((N, p), order="F")
    r = raw[N * p :]
    return GlmDataset(X, r, family)


def load_dataset_csv(path: str, family: CanonicalFamily) -> GlmDataset:
    """CSV import: every column but the last is a covariate, last column is r.

    A single header line is skipped if present (detected by non-numeric
    first field).
    """
    with open(path) as f:
        first = f.readline()
    try:
        float(first.split(",")[0])
        skip = 0
    except ValueError:
        skip = 1
    table = np.loadtxt(path, delimiter=",", skiprows=skip, ndmin=2)
    if table.shape[1] < 2:
        raise ValueError("CSV needs at least one covariate column plus the response column")
    return GlmDataset(table[:, :-1], table[:, -1], family)
