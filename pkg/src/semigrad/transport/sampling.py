"""Surface-point and hemisphere-direction sampling."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from ..errors import ConfigurationError
from .scene import Quad, Scene, Sphere, Triangle

UNIFORM = "uniform-hemisphere"
COSINE = "cosine-weighted"
STRATEGIES = (UNIFORM, COSINE)


@dataclass
class SurfacePoint:
    """A batch of surface points.

    ``normal`` is the shading normal. ``facing`` is +1 where it equals the
    geometric normal of the primitive and -1 where it was flipped to face an
    incoming ray; emission is one-sided with respect to the geometric normal.
    """

    position: np.ndarray
    normal: np.ndarray
    material_id: np.ndarray
    emission: np.ndarray
    pdf_area: np.ndarray
    prim_id: np.ndarray
    facing: np.ndarray

    def __len__(self):
        return len(self.position)

    def take(self, idx) -> "SurfacePoint":
        return SurfacePoint(*(getattr(self, f)[idx] for f in self.__dataclass_fields__))


@dataclass
class DirectionSample:
    direction: np.ndarray
    pdf: np.ndarray


def orthonormal_basis(n):
    """Tangent frame (t, b) with t x b = n (Duff et al. 2017), vectorized."""
    n = np.asarray(n, dtype=float)
    x, y, z = n[..., 0], n[..., 1], n[..., 2]
    sign = np.where(z >= 0.0, 1.0, -1.0)
    a = -1.0 / (sign + z)
    b = x * y * a
    t = np.stack([1.0 + sign * x * x * a, sign * b, -sign * x], axis=-1)
    bt = np.stack([b, sign + y * y * a, -y], axis=-1)
    return t, bt


def to_world(local, n):
    t, b = orthonormal_basis(n)
    return local[..., :1] * t + local[..., 1:2] * b + local[..., 2:3] * n


def sample_surface(scene: Scene, rng: np.random.Generator, count: int = 1) -> SurfacePoint:
    """Uniform points over the total surface area (pdf_area = 1/total_area)."""
    pk = scene.packed
    if len(scene.primitives) == 0 or not pk["total_area"] > 0.0:
        raise ConfigurationError("cannot sample an empty scene")
    u = rng.random((count, 3))
    prim = np.minimum(np.searchsorted(pk["area_cdf"], u[:, 0], side="right"),
                      len(scene.primitives) - 1)
    pos = np.empty((count, 3))
    nrm = np.empty((count, 3))
    for i in np.unique(prim):
        sel = prim == i
        s = scene.primitives[i].shape
        a, b = u[sel, 1], u[sel, 2]
        if isinstance(s, Quad):
            e1, e2 = np.asarray(s.edge1), np.asarray(s.edge2)
            pos[sel] = np.asarray(s.origin) + a[:, None] * e1 + b[:, None] * e2
            n = np.cross(e1, e2)
            nrm[sel] = n / np.linalg.norm(n)
        elif isinstance(s, Triangle):
            v0, v1, v2 = (np.asarray(v) for v in (s.v0, s.v1, s.v2))
            sa = np.sqrt(a)
            pos[sel] = ((1.0 - sa)[:, None] * v0 + (sa * (1.0 - b))[:, None] * v1
                        + (sa * b)[:, None] * v2)
            n = np.cross(v1 - v0, v2 - v0)
            nrm[sel] = n / np.linalg.norm(n)
        elif isinstance(s, Sphere):
            z = 1.0 - 2.0 * a
            r = np.sqrt(np.maximum(0.0, 1.0 - z * z))
            phi = 2.0 * np.pi * b
            d = np.stack([r * np.cos(phi), r * np.sin(phi), z], axis=-1)
            d /= np.linalg.norm(d, axis=-1, keepdims=True)
            pos[sel] = np.asarray(s.center) + s.radius * d
            nrm[sel] = -d if s.inward else d
    mid = pk["material_id"][prim]
    return SurfacePoint(
        position=pos,
        normal=nrm,
        material_id=mid,
        emission=pk["emission"][prim],
        pdf_area=np.full(count, 1.0 / pk["total_area"]),
        prim_id=prim,
        facing=np.ones(count),
    )


def sample_direction(n, strategy: str, rng: np.random.Generator, count: int | None = None) -> DirectionSample:
    """Directions on the hemisphere about ``n``.

    ``n`` has shape (3,) or (..., 3). With ``count`` given, ``count`` directions are
    drawn per normal and a trailing sample axis is inserted before the vector axis.
    """
    n = np.asarray(n, dtype=float)
    if count is not None:
        n = np.broadcast_to(n[..., None, :], n.shape[:-1] + (count, 3))
    u = rng.random(n.shape[:-1] + (2,))
    u1, u2 = u[..., 0], u[..., 1]
    phi = 2.0 * np.pi * u2
    if strategy == UNIFORM:
        z = u1
        pdf = np.full(z.shape, 1.0 / (2.0 * np.pi))
    elif strategy == COSINE:
        z = np.sqrt(1.0 - u1)
        pdf = z / np.pi
    else:
        raise ConfigurationError(f"unknown direction strategy {strategy!r}")
    r = np.sqrt(np.maximum(0.0, 1.0 - z * z))
    local = np.stack([r * np.cos(phi), r * np.sin(phi), z], axis=-1)
    w = to_world(local, n)
    w /= np.linalg.norm(w, axis=-1, keepdims=True)
    return DirectionSample(direction=w, pdf=pdf)


def direction_pdf(n, w, strategy: str):
    c = np.einsum("...i,...i->...", n, w)
    if strategy == UNIFORM:
        return np.where(c >= 0.0, 1.0 / (2.0 * np.pi), 0.0)
    if strategy == COSINE:
        return np.maximum(c, 0.0) / np.pi
    raise ConfigurationError(f"unknown direction strategy {strategy!r}")


def sample_bsdf_direction(albedo, lobe, exponent, n, wo, rng: np.random.Generator):
    """One-sample mixture of cosine and Phong-lobe sampling.

    Returns (wi, pdf). Directions below the surface are possible for the lobe
    and carry zero BSDF value.
    """
    n = np.asarray(n, dtype=float)
    u = rng.random(n.shape[:-1] + (3,))
    cos_dir = sample_direction_from_uniforms(n, u[..., 0], u[..., 1])
    cos_o = np.einsum("...i,...i->...", n, wo)
    refl = 2.0 * cos_o[..., None] * n - wo
    refl /= np.linalg.norm(refl, axis=-1, keepdims=True)
    ca = u[..., 0] ** (1.0 / (exponent + 1.0))
    sa = np.sqrt(np.maximum(0.0, 1.0 - ca * ca))
    phi = 2.0 * np.pi * u[..., 1]
    local = np.stack([sa * np.cos(phi), sa * np.sin(phi), ca], axis=-1)
    lobe_dir = to_world(local, refl)
    pick_lobe = u[..., 2] < lobe
    wi = np.where(pick_lobe[..., None], lobe_dir, cos_dir)
    wi /= np.linalg.norm(wi, axis=-1, keepdims=True)
    cos_i = np.einsum("...i,...i->...", n, wi)
    cos_a = np.maximum(np.einsum("...i,...i->...", refl, wi), 0.0)
    pdf = ((1.0 - lobe) * np.maximum(cos_i, 0.0) / np.pi
           + lobe * (exponent + 1.0) / (2.0 * np.pi) * cos_a**exponent)
    return wi, pdf


def sample_direction_from_uniforms(n, u1, u2):
    z = np.sqrt(1.0 - u1)
    r = np.sqrt(np.maximum(0.0, 1.0 - z * z))
    phi = 2.0 * np.pi * u2
    local = np.stack([r * np.cos(phi), r * np.sin(phi), z], axis=-1)
    w = to_world(local, n)
    return w / np.linalg.norm(w, axis=-1, keepdims=True)
