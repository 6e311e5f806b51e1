"""Builders for the bundled desk scenes (the YAML files are generated from these)."""

from __future__ import annotations

from ..transport.scene import LAMBERTIAN, PHONG, Camera, Material, Primitive, Quad, Scene, Sphere

FURNACE_ALBEDO = 0.5
FURNACE_EMISSION = 1.0


def furnace(resolution=16) -> Scene:
    """Inward-facing sphere, uniform albedo and emission: radiance is E/(1 - albedo) everywhere."""
    mat = Material(LAMBERTIAN, (FURNACE_ALBEDO,) * 3)
    prim = Primitive(Sphere((0.0, 0.0, 0.0), 1.0, inward=True), 0, (FURNACE_EMISSION,) * 3)
    cam = Camera((0.0, 0.0, 0.0), (0.0, 0.0, 1.0), (0.0, 1.0, 0.0), 60.0, resolution, resolution)
    return Scene([prim], [mat], cam, "furnace")


def _box(floor, ceiling, back, front, left, right, light, light_emission, light_half=0.3):
    """Closed [-1, 1]^3 box with inward normals and a square ceiling light."""
    h = light_half
    g = 1.0 - h
    return [
        Primitive(Quad((-1, -1, -1), (0, 0, 2), (2, 0, 0)), floor),
        Primitive(Quad((-1, -1, -1), (2, 0, 0), (0, 2, 0)), back),
        Primitive(Quad((-1, -1, 1), (0, 2, 0), (2, 0, 0)), front),
        Primitive(Quad((-1, -1, -1), (0, 2, 0), (0, 0, 2)), left),
        Primitive(Quad((1, -1, -1), (0, 0, 2), (0, 2, 0)), right),
        # ceiling with a hole for the light
        Primitive(Quad((-1, 1, -1), (2, 0, 0), (0, 0, g)), ceiling),
        Primitive(Quad((-1, 1, h), (2, 0, 0), (0, 0, g)), ceiling),
        Primitive(Quad((-1, 1, -h), (g, 0, 0), (0, 0, 2 * h)), ceiling),
        Primitive(Quad((h, 1, -h), (g, 0, 0), (0, 0, 2 * h)), ceiling),
        Primitive(Quad((-h, 1, -h), (2 * h, 0, 0), (0, 0, 2 * h)), light, light_emission),
    ]


def cornell_box(resolution=64) -> Scene:
    mats = [
        Material(LAMBERTIAN, (0.73, 0.73, 0.73)),   # 0 white
        Material(LAMBERTIAN, (0.65, 0.05, 0.05)),   # 1 red
        Material(LAMBERTIAN, (0.12, 0.45, 0.15)),   # 2 green
        Material(LAMBERTIAN, (0.78, 0.78, 0.78)),   # 3 light
    ]
    prims = _box(0, 0, 0, 0, 1, 2, 3, (12.0, 12.0, 12.0))
    prims += [
        Primitive(Sphere((-0.4, -0.6, -0.3), 0.4), 0),
        Primitive(Sphere((0.45, -0.65, 0.25), 0.35), 0),
    ]
    cam = Camera((0.0, 0.0, 0.99), (0.0, 0.0, -1.0), (0.0, 1.0, 0.0), 60.0, resolution, resolution)
    return Scene(prims, mats, cam, "cornell-box")


def glossy_box(resolution=64) -> Scene:
    mats = [
        Material(LAMBERTIAN, (0.73, 0.73, 0.73)),              # 0 white
        Material(LAMBERTIAN, (0.65, 0.05, 0.05)),              # 1 red
        Material(LAMBERTIAN, (0.12, 0.45, 0.15)),              # 2 green
        Material(LAMBERTIAN, (0.78, 0.78, 0.78)),              # 3 light
        Material(PHONG, (0.75, 0.75, 0.75), 20.0, 0.6),        # 4 glossy floor
        Material(PHONG, (0.9, 0.75, 0.3), 40.0, 0.8),          # 5 glossy gold sphere
        Material(PHONG, (0.6, 0.65, 0.8), 10.0, 0.5),          # 6 glossy back wall
    ]
    prims = _box(4, 0, 6, 0, 1, 2, 3, (12.0, 12.0, 12.0))
    prims += [
        Primitive(Sphere((-0.4, -0.6, -0.3), 0.4), 5),
        Primitive(Sphere((0.45, -0.65, 0.25), 0.35), 0),
    ]
    cam = Camera((0.0, 0.0, 0.99), (0.0, 0.0, -1.0), (0.0, 1.0, 0.0), 60.0, resolution, resolution)
    return Scene(prims, mats, cam, "glossy-box")


BUILDERS = {"furnace": furnace, "cornell-box": cornell_box, "glossy-box": glossy_box}
