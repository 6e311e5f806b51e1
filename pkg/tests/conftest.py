import numpy as np
import pytest

from semigrad.cache.network import CacheParams, EncodingConfig, parameter_count
from semigrad.transport.scene import LAMBERTIAN, Camera, Material, Primitive, Quad, Scene, Sphere


def closed_box(albedo=0.5, light=(0.0, 0.0, 0.0)):
    """Unit-ish closed box with inward normals and an optional ceiling emitter."""
    from semigrad.harness.scenes import _box

    mats = [Material(LAMBERTIAN, (albedo,) * 3)]
    prims = _box(0, 0, 0, 0, 0, 0, 0, light)
    cam = Camera((0.0, 0.0, 0.9), (0.0, 0.0, -1.0), (0.0, 1.0, 0.0), 60.0, 8, 8)
    return Scene(prims, mats, cam, "box")


def furnace_scene(albedo=0.5, E=1.0, res=8):
    mat = Material(LAMBERTIAN, (albedo,) * 3)
    prim = Primitive(Sphere((0.0, 0.0, 0.0), 1.0, inward=True), 0, (E,) * 3)
    cam = Camera((0.0, 0.0, 0.0), (0.0, 0.0, 1.0), (0.0, 1.0, 0.0), 60.0, res, res)
    return Scene([prim], [mat], cam, "furnace")


def two_quads():
    mats = [Material(LAMBERTIAN, (0.5, 0.5, 0.5))]
    q1 = Primitive(Quad((0, 0, 0), (1, 0, 0), (0, 1, 0)), 0)
    q2 = Primitive(Quad((5, 0, 0), (3, 0, 0), (0, 1, 0)), 0)
    return Scene([q1, q2], mats)


def random_params(rng, hidden=(8, 8), frequencies=1, scale=0.5):
    enc = EncodingConfig(frequencies)
    topology = (enc.size, *hidden, 3)
    return CacheParams(rng.normal(size=parameter_count(topology)) * scale, topology, enc)


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


# one line per acceptance criterion, printed after the run
ACCEPTANCE: list[str] = []


def record(criterion, passed: bool, detail: str):
    line = f"criterion {criterion}: {'PASS' if passed else 'FAIL'}  {detail}"
    ACCEPTANCE.append(line)
    print(line)
    return passed


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE:
        terminalreporter.section("acceptance criteria")
        for line in ACCEPTANCE:
            terminalreporter.write_line(line)
