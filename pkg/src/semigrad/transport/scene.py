"""Scene description: shapes, materials, emitters and a pinhole camera.

All geometric queries are vectorized; the dataclasses here only hold the
immutable description plus packed numpy arrays derived from it.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Union

import numpy as np

from ..errors import ConfigurationError, ValidationError

Vec3 = tuple[float, float, float]

LAMBERTIAN = "lambertian"
PHONG = "phong-lobe"


def _vec3(v, name="vector") -> Vec3:
    a = tuple(float(c) for c in v)
    if len(a) != 3 or not all(np.isfinite(a)):
        raise ConfigurationError(f"{name} must be 3 finite numbers, got {v!r}")
    return a


@dataclass(frozen=True)
class Material:
    kind: str = LAMBERTIAN
    albedo: Vec3 = (0.5, 0.5, 0.5)
    phong_exponent: float = 1.0
    specular_weight: float = 0.0

    def __post_init__(self):
        object.__setattr__(self, "albedo", _vec3(self.albedo, "albedo"))
        if self.kind not in (LAMBERTIAN, PHONG):
            raise ConfigurationError(f"unknown material kind {self.kind!r}")
        if any(a < 0.0 or a > 1.0 for a in self.albedo):
            raise ConfigurationError(f"albedo must lie in [0, 1]^3, got {self.albedo}")
        if self.kind == PHONG:
            if not self.phong_exponent >= 1.0:
                raise ConfigurationError("phong_exponent must be >= 1")
            if not 0.0 <= self.specular_weight <= 1.0:
                raise ConfigurationError("specular_weight must lie in [0, 1]")

    @property
    def lobe_weight(self) -> float:
        return self.specular_weight if self.kind == PHONG else 0.0


@dataclass(frozen=True)
class Quad:
    origin: Vec3
    edge1: Vec3
    edge2: Vec3

    def __post_init__(self):
        for name in ("origin", "edge1", "edge2"):
            object.__setattr__(self, name, _vec3(getattr(self, name), name))
        if np.linalg.norm(np.cross(self.edge1, self.edge2)) <= 1e-12:
            raise ConfigurationError("quad edges are parallel")

    @property
    def area(self) -> float:
        return float(np.linalg.norm(np.cross(self.edge1, self.edge2)))


@dataclass(frozen=True)
class Sphere:
    center: Vec3
    radius: float
    inward: bool = False

    def __post_init__(self):
        object.__setattr__(self, "center", _vec3(self.center, "center"))
        object.__setattr__(self, "radius", float(self.radius))
        if not self.radius > 0.0:
            raise ConfigurationError("sphere radius must be positive")

    @property
    def area(self) -> float:
        return 4.0 * np.pi * self.radius**2


@dataclass(frozen=True)
class Triangle:
    v0: Vec3
    v1: Vec3
    v2: Vec3

    def __post_init__(self):
        for name in ("v0", "v1", "v2"):
            object.__setattr__(self, name, _vec3(getattr(self, name), name))
        if self.area <= 1e-14:
            raise ConfigurationError("degenerate triangle")

    @property
    def area(self) -> float:
        e1 = np.subtract(self.v1, self.v0)
        e2 = np.subtract(self.v2, self.v0)
        return 0.5 * float(np.linalg.norm(np.cross(e1, e2)))


Shape = Union[Quad, Sphere, Triangle]


@dataclass(frozen=True)
class Primitive:
    shape: Shape
    material_id: int
    emission: Vec3 = (0.0, 0.0, 0.0)

    def __post_init__(self):
        object.__setattr__(self, "emission", _vec3(self.emission, "emission"))
        if any(e < 0.0 for e in self.emission):
            raise ConfigurationError("emission must be non-negative")


@dataclass(frozen=True)
class Camera:
    position: Vec3
    look_at: Vec3
    up: Vec3 = (0.0, 1.0, 0.0)
    vfov: float = 40.0
    width: int = 64
    height: int = 64

    def __post_init__(self):
        for name in ("position", "look_at", "up"):
            object.__setattr__(self, name, _vec3(getattr(self, name), name))
        if not 0.0 < self.vfov < 180.0:
            raise ConfigurationError("vfov must lie in (0, 180) degrees")
        if self.width < 1 or self.height < 1:
            raise ConfigurationError("camera resolution must be positive")
        fwd = np.subtract(self.look_at, self.position)
        if np.linalg.norm(np.cross(fwd, self.up)) <= 1e-12:
            raise ConfigurationError("camera up vector is parallel to the view direction")

    def generate_rays(self, px: np.ndarray, py: np.ndarray):
        """Ray origins/directions through continuous pixel coords (0..width, 0..height).

        Row 0 is the top of the image.
        """
        fwd = np.subtract(self.look_at, self.position)
        fwd = fwd / np.linalg.norm(fwd)
        right = np.cross(fwd, self.up)
        right /= np.linalg.norm(right)
        up = np.cross(right, fwd)
        half_h = np.tan(np.radians(self.vfov) / 2.0)
        half_w = half_h * self.width / self.height
        sx = (2.0 * px / self.width - 1.0) * half_w
        sy = (1.0 - 2.0 * py / self.height) * half_h
        d = fwd + sx[..., None] * right + sy[..., None] * up
        d /= np.linalg.norm(d, axis=-1, keepdims=True)
        o = np.broadcast_to(np.asarray(self.position), d.shape).copy()
        return o, d


def _reflectance_quadrature(mat: Material, n_out=7) -> np.ndarray:
    """Max over outgoing zenith angles of the directional-hemispherical reflectance."""
    from .bsdf import hemispherical_reflectance

    best = np.zeros(3)
    for ct in np.linspace(0.05, 1.0, n_out):
        wo = np.array([np.sqrt(1.0 - ct * ct), 0.0, ct])
        best = np.maximum(best, hemispherical_reflectance(mat, wo))
    return best


@dataclass(frozen=True)
class Scene:
    primitives: tuple[Primitive, ...]
    materials: tuple[Material, ...]
    camera: Camera | None = None
    name: str = ""
    _packed: dict = field(init=False, repr=False, compare=False, hash=False)

    def __post_init__(self):
        object.__setattr__(self, "primitives", tuple(self.primitives))
        object.__setattr__(self, "materials", tuple(self.materials))
        if not self.primitives:
            raise ConfigurationError("scene has no primitives")
        for i, p in enumerate(self.primitives):
            if not 0 <= p.material_id < len(self.materials):
                raise ConfigurationError(
                    f"primitive {i} references material {p.material_id}, "
                    f"but only {len(self.materials)} materials exist")
        for i, m in enumerate(self.materials):
            rho = _reflectance_quadrature(m)
            if np.any(rho >= 1.0):
                raise ValidationError(
                    f"material {i} violates energy absorption: "
                    f"hemispherical reflectance {rho.max():.6f} >= 1")
        object.__setattr__(self, "_packed", _pack(self))

    @property
    def total_area(self) -> float:
        return self._packed["total_area"]

    @property
    def bounds(self) -> tuple[np.ndarray, np.ndarray]:
        return self._packed["bounds"]

    @property
    def packed(self) -> dict:
        return self._packed


def _pack(scene: Scene) -> dict:
    prims = scene.primitives
    mats = scene.materials
    P = len(prims)
    areas = np.array([p.shape.area for p in prims])
    total = float(areas.sum())
    if not total > 0.0:
        raise ConfigurationError("scene has zero surface area")

    def idx(kind):
        return np.array([i for i, p in enumerate(prims) if isinstance(p.shape, kind)], dtype=np.int64)

    qi, si, ti = idx(Quad), idx(Sphere), idx(Triangle)
    quads = [prims[i].shape for i in qi]
    spheres = [prims[i].shape for i in si]
    tris = [prims[i].shape for i in ti]

    packed = {
        "total_area": total,
        "areas": areas,
        "area_cdf": np.cumsum(areas) / total,
        "emission": np.array([p.emission for p in prims], dtype=float).reshape(P, 3),
        "material_id": np.array([p.material_id for p in prims], dtype=np.int64),
        "mat_albedo": np.array([m.albedo for m in mats], dtype=float).reshape(-1, 3),
        "mat_lobe": np.array([m.lobe_weight for m in mats], dtype=float),
        "mat_exponent": np.array([m.phong_exponent for m in mats], dtype=float),
        "quad_idx": qi,
        "sphere_idx": si,
        "tri_idx": ti,
    }
    if quads:
        o = np.array([q.origin for q in quads])
        e1 = np.array([q.edge1 for q in quads])
        e2 = np.array([q.edge2 for q in quads])
        n = np.cross(e1, e2)
        w = n / np.einsum("ij,ij->i", n, n)[:, None]
        packed.update(quad_o=o, quad_e1=e1, quad_e2=e2, quad_n=n, quad_w=w,
                      quad_ua=np.cross(e2, w), quad_vb=np.cross(w, e1),
                      quad_unit_n=n / np.linalg.norm(n, axis=1, keepdims=True))
    if spheres:
        packed.update(
            sph_c=np.array([s.center for s in spheres]),
            sph_r=np.array([s.radius for s in spheres]),
            sph_sign=np.array([-1.0 if s.inward else 1.0 for s in spheres]),
        )
    if tris:
        v0 = np.array([t.v0 for t in tris])
        e1 = np.array([t.v1 for t in tris]) - v0
        e2 = np.array([t.v2 for t in tris]) - v0
        n = np.cross(e1, e2)
        packed.update(tri_v0=v0, tri_e1=e1, tri_e2=e2,
                      tri_unit_n=n / np.linalg.norm(n, axis=1, keepdims=True))

    lo = np.full(3, np.inf)
    hi = np.full(3, -np.inf)
    for p in prims:
        s = p.shape
        if isinstance(s, Quad):
            o, a, b = map(np.asarray, (s.origin, s.edge1, s.edge2))
            pts = np.array([o, o + a, o + b, o + a + b])
        elif isinstance(s, Triangle):
            pts = np.array([s.v0, s.v1, s.v2])
        else:
            c = np.asarray(s.center)
            pts = np.array([c - s.radius, c + s.radius])
        lo = np.minimum(lo, pts.min(axis=0))
        hi = np.maximum(hi, pts.max(axis=0))
    packed["bounds"] = (lo, hi)
    return packed
