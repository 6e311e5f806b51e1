from .bsdf import eval_bsdf, hemispherical_reflectance, scene_bsdf
from .pathtrace import Image, path_trace_reference
from .sampling import (COSINE, UNIFORM, DirectionSample, SurfacePoint, sample_direction,
                       sample_surface)
from .scene import LAMBERTIAN, PHONG, Camera, Material, Primitive, Quad, Scene, Sphere, Triangle
from .trace import HIT_EPSILON, Hit, Ray, emission, trace

__all__ = [
    "COSINE", "UNIFORM", "LAMBERTIAN", "PHONG", "HIT_EPSILON",
    "Camera", "DirectionSample", "Hit", "Image", "Material", "Primitive", "Quad", "Ray",
    "Scene", "Sphere", "SurfacePoint", "Triangle",
    "emission", "eval_bsdf", "hemispherical_reflectance", "path_trace_reference",
    "sample_direction", "sample_surface", "scene_bsdf", "trace",
]
