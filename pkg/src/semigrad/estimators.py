"""Monte Carlo right-hand-side estimates and the residual-loss gradient estimators.

Each estimator first computes the per-sample loss and its partial derivatives
with respect to the LHS value ``L`` and the RHS buffer value(s) in closed
form, then pulls those upstream vectors back through the cache tapes. The
normalizer ``|L|^2 + eps`` is treated as a constant (stop-gradient) everywhere.

Estimators:

* ``nr``   full gradient of ``|L - <R>|^2 / d`` (LHS and RHS paths)
* ``sg``   semi-gradient: the RHS target is frozen
* ``db``   ``(L - <R>_X).(L - <R>_Y) / d`` with two uncorrelated buffers
* ``wdb``  semi-gradient toward ``(<R>_X + <R>_Y)/2`` plus ``w`` times the RHS
           derivatives of ``db``
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .cache.autodiff import Tape
from .cache.network import ForwardTrace
from .cache.network import (CacheParams, cache_backward, cache_evaluate, cache_forward,
                            query_features)
from .errors import ConfigurationError
from .transport.bsdf import scene_bsdf
from .transport.sampling import SurfacePoint, sample_direction
from .transport.scene import Scene
from .transport.trace import Ray, emission, trace

DEFAULT_EPS = 1e-2
PDF_FLOOR = 1e-12
GENERIC_KINDS = ("rmse", "huber", "mae")


@dataclass
class LhsEval:
    """``L = E + network`` at the query points; ``tape`` covers the network part."""

    value: np.ndarray
    emission: np.ndarray
    net: np.ndarray
    tape: ForwardTrace | Tape | None = None


def evaluate_lhs(params: CacheParams, scene: Scene, x: SurfacePoint, w, requires_grad=True) -> LhsEval:
    feats = query_features(scene, x, w, params.encoding)
    if requires_grad:
        net, tape = cache_forward(params, feats)
    else:
        net, tape = cache_evaluate(params, feats), None
    e = emission(scene, x, w)
    return LhsEval(e + net, e, net, tape)


@dataclass
class RhsEstimate:
    """``value = emission + sum_k weights[:, k] * hit_radiance[:, k]``.

    ``weights`` already include ``f_s |n.w_in| / (p K)`` and are zero for misses.
    ``tape`` records the network at the valid hits (in ``valid`` order) when
    gradients through the RHS are needed.
    """

    value: np.ndarray
    emission: np.ndarray
    directions: np.ndarray
    pdf: np.ndarray
    valid: np.ndarray
    weights: np.ndarray
    hit_radiance: np.ndarray
    tape: ForwardTrace | Tape | None = None
    stream_id: object = 0
    rejected: int = 0

    @property
    def sample_count(self) -> int:
        return self.directions.shape[1]

    def recompute(self) -> np.ndarray:
        return self.emission + (self.weights * self.hit_radiance).sum(axis=1)


def rhs_from_directions(scene: Scene, params: CacheParams, x: SurfacePoint, w, directions, pdf,
                        requires_grad=False, stream_id=0, rejected=0) -> RhsEstimate:
    """One-bounce estimate using caller-supplied incident directions of shape (B, K, 3)."""
    directions = np.asarray(directions, dtype=float)
    pdf = np.asarray(pdf, dtype=float)
    if np.any(pdf <= 0.0):
        raise ConfigurationError("incident direction pdfs must be positive")
    B, K = directions.shape[:2]
    w = np.asarray(w, dtype=float)
    rep = lambda a: np.repeat(a, K, axis=0)  # noqa: E731
    xr = x.take(np.repeat(np.arange(B), K))
    hit = trace(scene, Ray.spawn(xr, directions.reshape(-1, 3)))
    valid = hit.valid
    wi = directions.reshape(-1, 3)
    f = scene_bsdf(scene.packed, xr.material_id, xr.normal, rep(w), wi)
    cos = np.abs(np.einsum("ki,ki->k", xr.normal, wi))
    weights = f * (cos / (pdf.reshape(-1) * K))[:, None]
    weights = np.where(valid[:, None], weights, 0.0)

    hp = hit.point.take(valid)
    w_out = -wi[valid]
    feats = query_features(scene, hp, w_out, params.encoding)
    if requires_grad:
        net, tape = cache_forward(params, feats)
    else:
        net, tape = cache_evaluate(params, feats), None
    hit_rad = np.zeros((B * K, 3))
    hit_rad[valid] = emission(scene, hp, w_out) + net

    e = emission(scene, x, w)
    weights = weights.reshape(B, K, 3)
    hit_rad = hit_rad.reshape(B, K, 3)
    value = e + (weights * hit_rad).sum(axis=1)
    return RhsEstimate(value, e, directions, pdf, valid.reshape(B, K), weights, hit_rad,
                       tape, stream_id, rejected)


def draw_directions(n, M: int, strategy: str, rng: np.random.Generator):
    """``M`` hemisphere directions per normal; near-zero pdfs are redrawn and counted."""
    ds = sample_direction(n, strategy, rng, count=M)
    d, p = ds.direction, ds.pdf
    rejected = 0
    bad = p < PDF_FLOOR
    while bad.any():
        rejected += int(bad.sum())
        redo = sample_direction(np.broadcast_to(n[..., None, :], d.shape)[bad], strategy, rng)
        d[bad], p[bad] = redo.direction, redo.pdf
        bad = p < PDF_FLOOR
    return d, p, rejected


def estimate_rhs(scene: Scene, params: CacheParams, x: SurfacePoint, w, M: int, strategy: str,
                 rng: np.random.Generator, requires_grad=False, stream_id=0) -> RhsEstimate:
    if M < 1:
        raise ConfigurationError("M must be >= 1")
    d, p, rejected = draw_directions(x.normal, M, strategy, rng)
    return rhs_from_directions(scene, params, x, w, d, p, requires_grad, stream_id, rejected)


def rhs_backward(rhs: RhsEstimate, upstream) -> np.ndarray:
    """Gradient of ``sum(upstream * rhs.value)`` with respect to theta."""
    if rhs.tape is None:
        raise ConfigurationError("RHS estimate was evaluated without a tape")
    g = (np.asarray(upstream)[:, None, :] * rhs.weights).reshape(-1, 3)
    return cache_backward(rhs.tape, g[rhs.valid.reshape(-1)])


# -- closed-form per-sample terms -------------------------------------------------------------

def _check_eps(eps):
    if not eps > 0.0:
        raise ConfigurationError(f"eps must be positive, got {eps}")


def normalizer(L, eps):
    return (L * L).sum(axis=-1) + eps


def nr_terms(L, R, eps=DEFAULT_EPS):
    """Per-sample loss and partials ``(loss, dL, dR)`` of ``|L - R|^2 / d``."""
    _check_eps(eps)
    d = normalizer(L, eps)[..., None]
    r = L - R
    loss = (r * r).sum(axis=-1) / d[..., 0]
    gL = 2.0 * r / d
    return loss, gL, -gL


def sg_terms(L, R, eps=DEFAULT_EPS):
    loss, gL, _ = nr_terms(L, R, eps)
    return loss, gL


def db_terms(L, X, Y, eps=DEFAULT_EPS):
    """``((L - X).(L - Y)) / d`` and its partials ``(loss, dL, dX, dY)``."""
    _check_eps(eps)
    d = normalizer(L, eps)[..., None]
    rx, ry = L - X, L - Y
    loss = (rx * ry).sum(axis=-1) / d[..., 0]
    gL = (2.0 * L - (X + Y)) / d
    return loss, gL, -ry / d, -rx / d


def wdb_terms(L, X, Y, w, eps=DEFAULT_EPS):
    _check_eps(eps)
    if not w >= 0.0:
        raise ConfigurationError(f"weight w must be non-negative, got {w}")
    d = normalizer(L, eps)[..., None]
    rx, ry = L - X, L - Y
    target = (X + Y) / 2.0
    rt = L - target
    loss = (rt * rt).sum(axis=-1) / d[..., 0] + w * ((rx * ry).sum(axis=-1) / d[..., 0])
    gL = (2.0 * L - (X + Y)) / d
    return loss, gL, w * (-ry / d), w * (-rx / d)


def generic_terms(kind, L, R, eps=DEFAULT_EPS, delta=1.0):
    """Per-sample ``rho(L - R) / d`` for rmse/huber/mae and its partial in ``L``."""
    _check_eps(eps)
    s = 1.0 / normalizer(L, eps)
    r = L - R
    if kind == "mae":
        rho = np.abs(r).sum(axis=-1)
        g = np.sign(r)
    elif kind == "huber":
        if not delta > 0.0:
            raise ConfigurationError("huber delta must be positive")
        a = np.abs(r)
        quad = a <= delta
        rho = np.where(quad, 0.5 * r * r, delta * (a - 0.5 * delta)).sum(axis=-1)
        g = np.where(quad, r, delta * np.sign(r))
    elif kind == "rmse":
        rho = np.sqrt((r * r).mean(axis=-1))
        safe = np.where(rho > 0.0, rho, 1.0)
        g = np.where((rho > 0.0)[..., None], r / (r.shape[-1] * safe[..., None]), 0.0)
    else:
        raise ConfigurationError(f"unknown generic loss kind {kind!r}; expected one of {GENERIC_KINDS}")
    return rho * s, g * s[..., None]


# -- estimators with backprop -------------------------------------------------------------------

@dataclass
class LossSample:
    loss: float
    per_sample: np.ndarray
    upstream_lhs: np.ndarray
    upstream_rhs: list = field(default_factory=list)
    grad_lhs: np.ndarray | None = None
    grad_rhs: np.ndarray | None = None

    @property
    def grad(self) -> np.ndarray:
        if self.grad_rhs is None:
            return self.grad_lhs
        return self.grad_lhs + self.grad_rhs


def _scale(lhs, scale):
    return 1.0 / len(lhs.value) if scale is None else scale


def _finish(lhs: LhsEval, per_sample, gL, rhs_bufs, gRs, scale, backprop=True) -> LossSample:
    gL = gL * scale
    gRs = [g * scale for g in gRs]
    out = LossSample(float(per_sample.sum() * scale), per_sample, gL, gRs)
    if not backprop:
        return out
    if lhs.tape is None:
        raise ConfigurationError("LHS was evaluated without a tape")
    out.grad_lhs = cache_backward(lhs.tape, gL)
    grad_rhs = None
    for buf, g in zip(rhs_bufs, gRs):
        gr = rhs_backward(buf, g)
        grad_rhs = gr if grad_rhs is None else grad_rhs + gr
    out.grad_rhs = grad_rhs
    return out


def loss_grad_nr(lhs: LhsEval, rhs: RhsEstimate, eps=DEFAULT_EPS, scale=None, backprop=True) -> LossSample:
    loss, gL, gR = nr_terms(lhs.value, rhs.value, eps)
    return _finish(lhs, loss, gL, [rhs], [gR], _scale(lhs, scale), backprop)


def loss_grad_sg(lhs: LhsEval, rhs: RhsEstimate, eps=DEFAULT_EPS, scale=None, backprop=True) -> LossSample:
    loss, gL = sg_terms(lhs.value, rhs.value, eps)
    return _finish(lhs, loss, gL, [], [], _scale(lhs, scale), backprop)


def _check_buffers(X: RhsEstimate, Y: RhsEstimate):
    if X.stream_id == Y.stream_id:
        raise ConfigurationError(
            f"dual-buffer estimates share stream id {X.stream_id!r}; they must be uncorrelated")


def loss_grad_db(lhs: LhsEval, X: RhsEstimate, Y: RhsEstimate, eps=DEFAULT_EPS, scale=None,
                 backprop=True) -> LossSample:
    _check_buffers(X, Y)
    loss, gL, gX, gY = db_terms(lhs.value, X.value, Y.value, eps)
    return _finish(lhs, loss, gL, [X, Y], [gX, gY], _scale(lhs, scale), backprop)


def loss_grad_wdb(lhs: LhsEval, X: RhsEstimate, Y: RhsEstimate, w: float, eps=DEFAULT_EPS,
                  scale=None, backprop=True) -> LossSample:
    _check_buffers(X, Y)
    loss, gL, gX, gY = wdb_terms(lhs.value, X.value, Y.value, w, eps)
    if w == 0.0:
        return _finish(lhs, loss, gL, [], [], _scale(lhs, scale), backprop)
    return _finish(lhs, loss, gL, [X, Y], [gX, gY], _scale(lhs, scale), backprop)


def loss_grad_generic(kind: str, mode: str, lhs: LhsEval, rhs: RhsEstimate, eps=DEFAULT_EPS,
                      delta=1.0, scale=None, backprop=True) -> LossSample:
    if mode not in ("semi", "full"):
        raise ConfigurationError(f"mode must be 'semi' or 'full', got {mode!r}")
    loss, gL = generic_terms(kind, lhs.value, rhs.value, eps, delta)
    if mode == "semi":
        return _finish(lhs, loss, gL, [], [], _scale(lhs, scale), backprop)
    return _finish(lhs, loss, gL, [rhs], [-gL], _scale(lhs, scale), backprop)
