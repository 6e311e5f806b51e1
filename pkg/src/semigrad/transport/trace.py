"""Nearest-hit ray casting against the flat primitive list."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .sampling import SurfacePoint
from .scene import Scene

HIT_EPSILON = 1e-4
_PARALLEL = 1e-12


@dataclass
class Ray:
    origin: np.ndarray
    direction: np.ndarray
    t_min: float = 0.0
    t_max: float = np.inf

    @classmethod
    def spawn(cls, point: SurfacePoint, direction):
        """Ray leaving ``point`` with its origin pushed off the surface along the normal."""
        d = np.asarray(direction, dtype=float)
        side = np.sign(np.einsum("...i,...i->...", point.normal, d))
        side = np.where(side == 0.0, 1.0, side)
        o = point.position + HIT_EPSILON * side[..., None] * point.normal
        return cls(o, d)


@dataclass
class Hit:
    """Batch of trace results. Entries with ``valid == False`` are misses."""

    valid: np.ndarray
    t: np.ndarray
    point: SurfacePoint

    @property
    def any(self) -> bool:
        return bool(self.valid.any())


def _quads(pk, o, d, t_min, best_t, best_p):
    if len(pk["quad_idx"]) == 0:
        return
    n = pk["quad_n"]
    denom = d @ n.T
    with np.errstate(divide="ignore", invalid="ignore"):
        t = ((pk["quad_o"] * n).sum(-1)[None, :] - o @ n.T) / denom
    t = np.where(np.abs(denom) > _PARALLEL, t, np.inf)
    ok = np.isfinite(t) & (t >= t_min) & (t < best_t[:, None])
    if not ok.any():
        return
    ts = np.where(ok, t, 0.0)
    # u = w . ((p - o_q) x e2) = (p - o_q) . (e2 x w), likewise for v
    qa, qb = pk["quad_ua"], pk["quad_vb"]
    u = o @ qa.T - (pk["quad_o"] * qa).sum(-1)[None, :] + ts * (d @ qa.T)
    v = o @ qb.T - (pk["quad_o"] * qb).sum(-1)[None, :] + ts * (d @ qb.T)
    ok &= (u >= 0.0) & (u <= 1.0) & (v >= 0.0) & (v <= 1.0)
    _merge(np.where(ok, t, np.inf), pk["quad_idx"], best_t, best_p)


def _triangles(pk, o, d, t_min, best_t, best_p):
    if len(pk["tri_idx"]) == 0:
        return
    e1, e2 = pk["tri_e1"][None], pk["tri_e2"][None]
    dd = np.broadcast_to(d[:, None, :], (len(d), e1.shape[1], 3))
    pvec = np.cross(dd, e2)
    det = np.einsum("kpi,kpi->kp", e1, pvec)
    with np.errstate(divide="ignore", invalid="ignore"):
        inv = 1.0 / det
        s = o[:, None, :] - pk["tri_v0"][None]
        u = np.einsum("kpi,kpi->kp", s, pvec) * inv
        q = np.cross(s, e1)
        v = np.einsum("kpi,kpi->kp", dd, q) * inv
        t = np.einsum("kpi,kpi->kp", np.broadcast_to(e2, q.shape), q) * inv
    ok = (np.abs(det) > _PARALLEL) & (u >= 0.0) & (v >= 0.0) & (u + v <= 1.0) & (t >= t_min)
    _merge(np.where(ok, t, np.inf), pk["tri_idx"], best_t, best_p)


def _spheres(pk, o, d, t_min, best_t, best_p):
    if len(pk["sphere_idx"]) == 0:
        return
    oc = o[:, None, :] - pk["sph_c"][None]
    b = np.einsum("kpi,ki->kp", oc, d)
    c = np.einsum("kpi,kpi->kp", oc, oc) - pk["sph_r"][None] ** 2
    disc = b * b - c
    ok = disc >= 0.0
    sq = np.sqrt(np.where(ok, disc, 0.0))
    t0 = -b - sq
    t1 = -b + sq
    t = np.where(t0 >= t_min, t0, np.where(t1 >= t_min, t1, np.inf))
    _merge(np.where(ok, t, np.inf), pk["sphere_idx"], best_t, best_p)


def _merge(t, prim_ids, best_t, best_p):
    j = np.argmin(t, axis=1)
    tj = t[np.arange(len(t)), j]
    better = tj < best_t
    best_t[better] = tj[better]
    best_p[better] = prim_ids[j[better]]


def trace(scene: Scene, ray: Ray) -> Hit:
    """Nearest intersection with t in [t_min, t_max]; shapes (..., 3) are supported."""
    o = np.asarray(ray.origin, dtype=float)
    d = np.asarray(ray.direction, dtype=float)
    batch_shape = np.broadcast_shapes(o.shape, d.shape)[:-1]
    o = np.broadcast_to(o, batch_shape + (3,)).reshape(-1, 3)
    d = np.broadcast_to(d, batch_shape + (3,)).reshape(-1, 3)
    K = len(o)
    pk = scene.packed
    best_t = np.full(K, np.inf)
    best_p = np.full(K, -1, dtype=np.int64)
    _quads(pk, o, d, ray.t_min, best_t, best_p)
    _triangles(pk, o, d, ray.t_min, best_t, best_p)
    _spheres(pk, o, d, ray.t_min, best_t, best_p)
    valid = (best_p >= 0) & (best_t <= ray.t_max)
    best_p = np.where(valid, best_p, -1)
    t = np.where(valid, best_t, np.inf)
    pos = o + np.where(valid, t, 0.0)[:, None] * d
    ng = _geometric_normals(pk, scene, best_p, pos)
    facing = np.where(np.einsum("ki,ki->k", ng, d) > 0.0, -1.0, 1.0)
    safe = np.maximum(best_p, 0)
    point = SurfacePoint(
        position=pos,
        normal=ng * facing[:, None],
        material_id=np.where(valid, pk["material_id"][safe], -1),
        emission=np.where(valid[:, None], pk["emission"][safe], 0.0),
        pdf_area=np.where(valid, 1.0 / pk["total_area"], 0.0),
        prim_id=best_p,
        facing=facing,
    )
    if batch_shape != (K,):
        point = SurfacePoint(*(a.reshape(batch_shape + a.shape[1:])
                               for a in (getattr(point, f) for f in point.__dataclass_fields__)))
        valid = valid.reshape(batch_shape)
        t = t.reshape(batch_shape)
    return Hit(valid=valid, t=t, point=point)


def _geometric_normals(pk, scene, prim, pos):
    ng = np.zeros((len(prim), 3))
    ng[:, 2] = 1.0
    if len(pk["quad_idx"]):
        lut = np.full(len(scene.primitives), -1)
        lut[pk["quad_idx"]] = np.arange(len(pk["quad_idx"]))
        sel = (prim >= 0) & (lut[np.maximum(prim, 0)] >= 0)
        ng[sel] = pk["quad_unit_n"][lut[prim[sel]]]
    if len(pk["tri_idx"]):
        lut = np.full(len(scene.primitives), -1)
        lut[pk["tri_idx"]] = np.arange(len(pk["tri_idx"]))
        sel = (prim >= 0) & (lut[np.maximum(prim, 0)] >= 0)
        ng[sel] = pk["tri_unit_n"][lut[prim[sel]]]
    if len(pk["sphere_idx"]):
        lut = np.full(len(scene.primitives), -1)
        lut[pk["sphere_idx"]] = np.arange(len(pk["sphere_idx"]))
        sel = (prim >= 0) & (lut[np.maximum(prim, 0)] >= 0)
        k = lut[prim[sel]]
        v = (pos[sel] - pk["sph_c"][k]) * pk["sph_sign"][k][:, None]
        ng[sel] = v / np.linalg.norm(v, axis=1, keepdims=True)
    return ng


def emission(scene: Scene, x: SurfacePoint, w) -> np.ndarray:
    """Emitted radiance leaving ``x`` toward ``w``; zero on the back side."""
    geo = x.normal * x.facing[..., None]
    front = np.einsum("...i,...i->...", geo, np.asarray(w, dtype=float)) > 0.0
    return np.where(front[..., None], x.emission, 0.0)
