"""Finite-dimensional light transport where estimator expectations are exact.

The radiance field is a vector ``L`` over ``n`` states, transport is a
non-negative matrix ``T`` with max row sum ``lambda < 1`` and the cache is
tabular (``theta = L``), so ``dL/dtheta`` is the identity. A one-sample RHS
estimate for state ``i`` draws column ``j`` with probability ``p[i, j]`` and
returns ``E_i + T_ij L_j / p[i, j]``; averaging ``M`` draws gives ``<R>_i``
whose gradient in ``L`` is ``g[j] = sum_k [j_k = j] T_ij / (M p[i, j])``.

Expectations of every gradient estimator are computed by enumerating all
draw sequences, with per-state losses summed over states.
"""

from __future__ import annotations

import itertools
from dataclasses import dataclass

import numpy as np

from . import estimators as est
from .errors import EnumerationBudgetError, ValidationError

ENUMERATION_BUDGET = 10_000_000
ESTIMATORS = ("nr", "sg", "db", "wdb")


def contraction_factor(T) -> float:
    """Max row sum: the operator norm of a non-negative matrix under the max-norm."""
    T = np.asarray(T, dtype=float)
    if np.any(T < 0.0) or not np.all(np.isfinite(T)):
        raise ValidationError("transport matrix must be finite and non-negative")
    if T.size == 0:
        return 0.0
    return float(T.sum(axis=1).max())


@dataclass(frozen=True)
class TabularSystem:
    T: np.ndarray
    E: np.ndarray
    seed: int | None = None

    def __post_init__(self):
        T = np.array(self.T, dtype=float)
        E = np.array(self.E, dtype=float)
        if T.ndim != 2 or T.shape[0] != T.shape[1] or E.shape != (T.shape[0],):
            raise ValidationError(f"incompatible shapes T{T.shape}, E{E.shape}")
        if np.any(E < 0.0) or not np.all(np.isfinite(E)):
            raise ValidationError("emission must be finite and non-negative")
        lam = contraction_factor(T)
        if lam >= 1.0:
            raise ValidationError(
                f"transport is not a contraction (lambda = {lam:.6g} >= 1): energy absorption violated")
        T.setflags(write=False)
        E.setflags(write=False)
        object.__setattr__(self, "T", T)
        object.__setattr__(self, "E", E)

    @property
    def n(self) -> int:
        return len(self.E)

    @property
    def lam(self) -> float:
        return contraction_factor(self.T)


def random_system(n: int, lam: float, seed: int) -> TabularSystem:
    """Uniform entries, whole matrix rescaled so the max row sum equals ``lam``."""
    rng = np.random.default_rng(seed)
    T = rng.random((n, n))
    T *= lam / T.sum(axis=1).max()
    E = rng.random(n)
    return TabularSystem(T, E, seed)


def solve_exact(sys: TabularSystem) -> np.ndarray:
    A = np.eye(sys.n) - sys.T
    try:
        L = np.linalg.solve(A, sys.E)
    except np.linalg.LinAlgError as exc:
        raise ValidationError(f"I - T is singular: {exc}") from exc
    return L


def sg_descent_step(sys: TabularSystem, L, alpha=0.5) -> np.ndarray:
    """Gradient step on the unnormalized semi-gradient loss with exact gradient ``2(L - E - TL)``."""
    if not 0.0 < alpha <= 1.0:
        raise ValueError("alpha must lie in (0, 1]")
    L = np.asarray(L, dtype=float)
    return L - 2.0 * alpha * (L - sys.E - sys.T @ L)


def sg_trajectory(sys: TabularSystem, L0, steps: int, alpha=0.5) -> np.ndarray:
    out = [np.asarray(L0, dtype=float)]
    for _ in range(steps):
        out.append(sg_descent_step(sys, out[-1], alpha))
    return np.array(out)


def uniform_pmf(n: int) -> np.ndarray:
    return np.full((n, n), 1.0 / n)


def _pmf(sys: TabularSystem, p) -> np.ndarray:
    p = np.asarray(p, dtype=float)
    if p.ndim == 1:
        p = np.broadcast_to(p, (sys.n, sys.n))
    if p.shape != (sys.n, sys.n):
        raise ValidationError(f"pmf must have shape ({sys.n},) or ({sys.n}, {sys.n}), got {p.shape}")
    if np.any(p < 0.0) or not np.allclose(p.sum(axis=1), 1.0, atol=1e-12):
        raise ValidationError("each pmf row must be non-negative and sum to 1")
    if np.any((sys.T > 0.0) & (p <= 0.0)):
        raise ValidationError("pmf must be positive wherever T is non-zero")
    return p


def mc_estimate_row(sys: TabularSystem, L, i: int, p, M: int, rng: np.random.Generator) -> float:
    p = _pmf(sys, p)
    L = np.asarray(L, dtype=float)
    j = rng.choice(sys.n, size=M, p=p[i])
    return float(sys.E[i] + np.mean(sys.T[i, j] * L[j] / p[i, j]))


# -- exhaustive enumeration --------------------------------------------------------------------

@dataclass
class Outcomes:
    """All ``M``-draw sequences for one state: probabilities, estimates and their gradients."""

    prob: np.ndarray   # (K,)
    value: np.ndarray  # (K,)   <R>_i
    grad: np.ndarray   # (K, n) d<R>_i / dL


def row_outcomes(sys: TabularSystem, L, i: int, p, M: int) -> Outcomes:
    p = _pmf(sys, p)
    support = np.flatnonzero(p[i] > 0.0)
    seqs = np.array(list(itertools.product(support, repeat=M)), dtype=np.int64).reshape(-1, M)
    prob = np.prod(p[i, seqs], axis=1)
    coef = sys.T[i, seqs] / (M * p[i, seqs])  # (K, M)
    grad = np.zeros((len(seqs), sys.n))
    for k in range(M):
        np.add.at(grad, (np.arange(len(seqs)), seqs[:, k]), coef[:, k])
    value = sys.E[i] + grad @ np.asarray(L, dtype=float)
    return Outcomes(prob, value, grad)


def _budget(sys, p, M, buffers):
    p = _pmf(sys, p)
    worst = int((p > 0.0).sum(axis=1).max()) ** (M * buffers)
    if worst > ENUMERATION_BUDGET:
        raise EnumerationBudgetError(
            f"enumeration needs {worst} outcomes per state, above the budget of {ENUMERATION_BUDGET}")


def true_gradient(sys: TabularSystem, L, eps=est.DEFAULT_EPS) -> np.ndarray:
    """Gradient of ``sum_i (L_i - E_i - (TL)_i)^2 / (sg(L_i)^2 + eps)``."""
    L = np.asarray(L, dtype=float)
    r = L - sys.E - sys.T @ L
    c = 2.0 * r / (L * L + eps)
    return c - sys.T.T @ c


def _per_sample_grad(kind, i, n, L, o1: Outcomes, o2: Outcomes | None, eps, w):
    """Per-outcome gradient vectors for state ``i``; shape (K,) + (n,) or (K1, K2, n)."""
    Li = np.array([L[i]])
    e_i = np.zeros(n)
    e_i[i] = 1.0
    if kind in ("nr", "sg"):
        Lc = np.broadcast_to(Li, (len(o1.value), 1))
        R = o1.value[:, None]
        if kind == "nr":
            _, gL, gR = est.nr_terms(Lc, R, eps)
            return gL * e_i + gR * o1.grad
        _, gL = est.sg_terms(Lc, R, eps)
        return gL * e_i
    X = o1.value[:, None, None]
    Y = o2.value[None, :, None]
    Lc = np.broadcast_to(Li, (len(o1.value), len(o2.value), 1))
    if kind == "db":
        _, gL, gX, gY = est.db_terms(Lc, X, Y, eps)
    else:
        _, gL, gX, gY = est.wdb_terms(Lc, X, Y, w, eps)
    return gL * e_i + gX * o1.grad[:, None, :] + gY * o2.grad[None, :, :]


def gradient_moments(sys: TabularSystem, L, p, M: int, estimator: str, eps=est.DEFAULT_EPS, w=1.0):
    """Exact mean and total variance (sum over coordinates) of an estimator's gradient."""
    if estimator not in ESTIMATORS:
        raise ValueError(f"unknown estimator {estimator!r}")
    two = estimator in ("db", "wdb")
    _budget(sys, p, M, 2 if two else 1)
    L = np.asarray(L, dtype=float)
    mean = np.zeros(sys.n)
    second = 0.0
    for i in range(sys.n):
        o = row_outcomes(sys, L, i, p, M)
        if two:
            g = _per_sample_grad(estimator, i, sys.n, L, o, o, eps, w)
            pr = o.prob[:, None] * o.prob[None, :]
            m = np.einsum("ab,abn->n", pr, g)
            s = np.einsum("ab,abn->", pr, g * g)
        else:
            g = _per_sample_grad(estimator, i, sys.n, L, o, None, eps, w)
            m = o.prob @ g
            s = np.einsum("a,an->", o.prob, g * g)
        mean += m
        second += s - m @ m
    return mean, float(second)


def expected_gradient(sys: TabularSystem, L, p, M: int, estimator: str, eps=est.DEFAULT_EPS, w=1.0):
    return gradient_moments(sys, L, p, M, estimator, eps, w)[0]


def nr_covariance_term(sys: TabularSystem, L, p, M: int, eps=est.DEFAULT_EPS) -> np.ndarray:
    """``sum_i 2 Cov(d<R>_i/dL, <R>_i) / (L_i^2 + eps)``, enumerated."""
    L = np.asarray(L, dtype=float)
    out = np.zeros(sys.n)
    for i in range(sys.n):
        o = row_outcomes(sys, L, i, p, M)
        e_gr = (o.prob * o.value) @ o.grad
        cov = e_gr - (o.prob @ o.grad) * (o.prob @ o.value)
        out += 2.0 * cov / (L[i] * L[i] + eps)
    return out


def nr_stationary_point(sys: TabularSystem, p, M: int, eps=est.DEFAULT_EPS, L_init=None,
                        tol=1e-10, max_iter=500) -> np.ndarray:
    """Root of the expected NR gradient.

    Per state the NR gradient is ``2 (e_i - g)(e_i - g)^T L - 2 (e_i - g) E_i`` over
    ``d_i``, with ``g`` independent of ``L``. With the normalizers frozen this is a
    linear system in the enumerated second moments; the normalizers are then
    updated by damped fixed-point iteration until the enumerated expected
    gradient vanishes.
    """
    p = _pmf(sys, p)
    _budget(sys, p, M, 1)
    n = sys.n
    H = np.zeros((n, n, n))
    b = np.zeros((n, n))
    zero = np.zeros(n)
    for i in range(n):
        o = row_outcomes(sys, zero, i, p, M)
        a = -o.grad
        a[:, i] += 1.0
        H[i] = np.einsum("k,kn,km->nm", o.prob, a, a)
        b[i] = (o.prob @ a) * sys.E[i]
    L = solve_exact(sys) if L_init is None else np.asarray(L_init, dtype=float)
    damping = 1.0
    resid = np.inf
    for _ in range(max_iter):
        wts = 2.0 / (L * L + eps)
        target = np.linalg.solve(np.einsum("i,inm->nm", wts, H), wts @ b)
        cand = L + damping * (target - L)
        r = np.abs(expected_gradient(sys, cand, p, M, "nr", eps)).max()
        if r < tol:
            return cand
        if r > resid and damping > 1e-3:
            damping *= 0.5
            continue
        L, resid = cand, r
    raise RuntimeError(f"NR stationary point did not converge; last residual {resid:.3e}")


# -- bundled systems ---------------------------------------------------------------------------

def high_variance_system() -> TabularSystem:
    """Peaked rows sampled uniformly, so single-sample RHS estimates are noisy.

    With ``M=1`` the NR stationary point carries about a third less energy than ``L*``.
    """
    T = np.full((4, 4), 0.02)
    for i in range(4):
        T[i, (i + 1) % 4] = 0.3
    return TabularSystem(T, np.ones(4))


def low_variance_system() -> TabularSystem:
    """Flat 2-state rows: uniform sampling is nearly ideal and the NR bias is small."""
    return TabularSystem(np.full((2, 2), 0.1), np.array([1.0, 0.8]))


def zero_variance_system():
    """One non-zero per row, sampled with a matched (delta) pmf: ``<R>`` is deterministic."""
    T = np.array([[0.0, 0.8, 0.0],
                  [0.0, 0.0, 0.7],
                  [0.6, 0.0, 0.0]])
    E = np.array([1.0, 0.5, 0.0])
    p = (T > 0.0).astype(float)
    return TabularSystem(T, E), p
