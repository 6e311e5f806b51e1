import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from conftest import closed_box, furnace_scene, two_quads
from semigrad.errors import ConfigurationError, ValidationError
from semigrad.transport import (COSINE, PHONG, UNIFORM, Camera, Material, Primitive, Quad, Ray, Scene,
                                Sphere, Triangle, emission, eval_bsdf, hemispherical_reflectance,
                                path_trace_reference, sample_direction, sample_surface, trace)
from semigrad.transport.sampling import direction_pdf

unit_vectors = st.tuples(*[st.floats(-1, 1)] * 3).filter(lambda v: 0.1 < np.linalg.norm(v)).map(
    lambda v: np.asarray(v) / np.linalg.norm(v))


def upper(n, v):
    """Reflect ``v`` into the hemisphere about ``n``."""
    return v if v @ n > 0 else v - 2 * (v @ n) * n


# ---------------------------------------------------------------- validation

def test_scene_rejects_bad_material_index():
    with pytest.raises(ConfigurationError, match="material"):
        Scene([Primitive(Quad((0, 0, 0), (1, 0, 0), (0, 1, 0)), 3)], [Material()])


def test_degenerate_shapes_rejected():
    with pytest.raises(ConfigurationError):
        Quad((0, 0, 0), (1, 0, 0), (2, 0, 0))
    with pytest.raises(ConfigurationError):
        Sphere((0, 0, 0), 0.0)
    with pytest.raises(ConfigurationError):
        Triangle((0, 0, 0), (1, 1, 1), (2, 2, 2))


def test_negative_emission_rejected():
    with pytest.raises(ConfigurationError):
        Primitive(Sphere((0, 0, 0), 1.0), 0, (-1.0, 0.0, 0.0))


def test_energy_absorption_enforced():
    # albedo 1 with a full lobe reflects everything
    with pytest.raises(ValidationError):
        Scene([Primitive(Sphere((0, 0, 0), 1.0), 0)], [Material(PHONG, (1.0,) * 3, 5.0, 1.0)])
    Scene([Primitive(Sphere((0, 0, 0), 1.0), 0)], [Material(PHONG, (0.9,) * 3, 5.0, 1.0)])


def test_empty_scene_rejected():
    with pytest.raises(ConfigurationError):
        Scene([], [Material()])


# ---------------------------------------------------------------- sampling

def test_surface_pdf_is_inverse_area():
    sc = two_quads()
    x = sample_surface(sc, np.random.default_rng(0), 10)
    np.testing.assert_allclose(x.pdf_area, 0.25)
    unit = Scene([Primitive(Quad((0, 0, 0), (1, 0, 0), (0, 1, 0)), 0)], [Material()])
    np.testing.assert_allclose(sample_surface(unit, np.random.default_rng(1), 3).pdf_area, 1.0)


def test_surface_selection_ratio():
    x = sample_surface(two_quads(), np.random.default_rng(2), 10**6)
    frac = np.mean(x.prim_id == 1)
    assert abs(frac - 0.75) < 0.0075
    assert abs(frac / (1 - frac) / 3.0 - 1.0) < 0.01


def test_surface_points_on_shapes():
    sc = furnace_scene()
    x = sample_surface(sc, np.random.default_rng(3), 1000)
    np.testing.assert_allclose(np.linalg.norm(x.position, axis=1), 1.0, atol=1e-12)
    # inward sphere: normal points at the centre
    np.testing.assert_allclose(x.normal, -x.position, atol=1e-12)
    np.testing.assert_allclose(np.linalg.norm(x.normal, axis=1), 1.0, atol=1e-12)


def test_uniform_direction_pdf_and_mean_cosine():
    n = np.array([0.0, 0.0, 1.0])
    s = sample_direction(n, UNIFORM, np.random.default_rng(4), count=10**5)
    np.testing.assert_allclose(s.pdf, 1.0 / (2.0 * np.pi))
    cos = s.direction @ n
    assert cos.min() >= 0.0
    assert abs(cos.mean() - 0.5) < 0.01


def test_cosine_pdf_at_normal():
    n = np.array([0.0, 1.0, 0.0])
    np.testing.assert_allclose(direction_pdf(n, n, COSINE), 1.0 / np.pi)
    s = sample_direction(n, COSINE, np.random.default_rng(5), count=1000)
    np.testing.assert_allclose(s.pdf, (s.direction @ n) / np.pi, rtol=1e-12)


@pytest.mark.parametrize("strategy", [UNIFORM, COSINE])
def test_pdf_integrates_to_one(strategy):
    n = np.array([0.3, -0.2, 0.9])
    n /= np.linalg.norm(n)
    mu, w = np.polynomial.legendre.leggauss(64)
    mu, w = 0.5 * (mu + 1.0), 0.5 * w
    from semigrad.transport.sampling import orthonormal_basis

    t, b = orthonormal_basis(n)
    phi = (np.arange(128) + 0.5) * 2 * np.pi / 128
    M, P = np.meshgrid(mu, phi, indexing="ij")
    s = np.sqrt(1 - M**2)
    dirs = (s * np.cos(P))[..., None] * t + (s * np.sin(P))[..., None] * b + M[..., None] * n
    total = (direction_pdf(n, dirs, strategy) * w[:, None]).sum() * 2 * np.pi / 128
    assert abs(total - 1.0) < 1e-3


@settings(max_examples=50, deadline=None)
@given(unit_vectors, st.sampled_from([UNIFORM, COSINE]), st.integers(0, 2**31))
def test_sampled_directions_unit_and_upper(n, strategy, seed):
    s = sample_direction(n, strategy, np.random.default_rng(seed), count=64)
    np.testing.assert_allclose(np.linalg.norm(s.direction, axis=-1), 1.0, atol=1e-12)
    assert (s.direction @ n).min() >= -1e-12
    assert (s.pdf > 0).all()


# ---------------------------------------------------------------- trace

def sphere_scene(*spheres):
    return Scene([Primitive(Sphere(c, r), 0) for c, r in spheres], [Material()])


def test_trace_sphere_distance():
    hit = trace(sphere_scene(((0, 0, 3), 1.0)), Ray(np.zeros((1, 3)), np.array([[0.0, 0, 1]])))
    assert hit.valid[0]
    np.testing.assert_allclose(hit.t[0], 2.0, atol=1e-12)
    np.testing.assert_allclose(hit.point.normal[0], [0, 0, -1], atol=1e-12)


def test_trace_parallel_to_quad_misses():
    sc = Scene([Primitive(Quad((-1, -1, 1), (2, 0, 0), (0, 2, 0)), 0)], [Material()])
    hit = trace(sc, Ray(np.array([[0.0, 0, 1]]), np.array([[1.0, 0, 0]])))
    assert not hit.valid[0]
    assert np.isinf(hit.t[0])


def test_trace_nearest_of_two_spheres():
    sc = sphere_scene(((0, 0, 10), 1.0), ((0, 0, 4), 1.0))
    hit = trace(sc, Ray(np.zeros((1, 3)), np.array([[0.0, 0, 1]])))
    np.testing.assert_allclose(hit.t[0], 3.0, atol=1e-12)
    assert hit.point.prim_id[0] == 1


def test_trace_respects_t_range():
    sc = sphere_scene(((0, 0, 3), 1.0))
    o, d = np.zeros((1, 3)), np.array([[0.0, 0, 1]])
    assert not trace(sc, Ray(o, d, t_max=1.5)).valid[0]
    hit = trace(sc, Ray(o, d, t_min=2.5))
    np.testing.assert_allclose(hit.t[0], 4.0, atol=1e-12)


def test_trace_normal_faces_ray_inside_sphere():
    sc = sphere_scene(((0, 0, 0), 1.0))
    d = np.random.default_rng(6).normal(size=(50, 3))
    d /= np.linalg.norm(d, axis=1, keepdims=True)
    hit = trace(sc, Ray(np.zeros((50, 3)), d))
    assert hit.valid.all()
    assert (np.einsum("ki,ki->k", hit.point.normal, d) < 0).all()
    assert (hit.point.facing == -1).all()


def test_trace_deterministic():
    sc = closed_box()
    rng = np.random.default_rng(7)
    o = rng.uniform(-0.5, 0.5, (200, 3))
    d = rng.normal(size=(200, 3))
    d /= np.linalg.norm(d, axis=1, keepdims=True)
    a, b = trace(sc, Ray(o, d)), trace(sc, Ray(o.copy(), d.copy()))
    assert np.array_equal(a.t, b.t) and np.array_equal(a.point.normal, b.point.normal)
    # closed box: every ray from inside hits
    assert a.valid.all()


# ---------------------------------------------------------------- bsdf

N = np.array([0.0, 0.0, 1.0])


def test_lambertian_value():
    wo = np.array([0.3, 0.0, 0.9539392014169457])
    wi = np.array([0.0, -0.6, 0.8])
    np.testing.assert_allclose(eval_bsdf(Material(albedo=(0.6,) * 3), N, wo, wi), 0.6 / np.pi, rtol=1e-15)
    np.testing.assert_allclose(0.6 / np.pi, 0.19099, atol=1e-5)


@pytest.mark.parametrize("mat", [Material(), Material(PHONG, (0.5, 0.6, 0.7), 10.0, 0.3)])
def test_bsdf_below_hemisphere_is_zero(mat):
    wo = np.array([0.0, 0.6, 0.8])
    np.testing.assert_array_equal(eval_bsdf(mat, N, wo, np.array([0.0, 0.6, -0.8])), 0.0)
    np.testing.assert_array_equal(eval_bsdf(mat, N, np.array([0.0, 0.6, -0.8]), wo), 0.0)


@settings(max_examples=100, deadline=None)
@given(unit_vectors, unit_vectors, st.floats(1, 60), st.floats(0, 1))
def test_bsdf_reciprocity(a, b, k, s):
    mat = Material(PHONG, (0.4, 0.5, 0.6), k, s)
    wo, wi = upper(N, a), upper(N, b)
    np.testing.assert_allclose(eval_bsdf(mat, N, wo, wi), eval_bsdf(mat, N, wi, wo), rtol=0, atol=1e-12)
    assert (eval_bsdf(mat, N, wo, wi) >= 0).all()


def test_phong_reflectance_bounded():
    mat = Material(PHONG, (1.0,) * 3, 10.0, 0.3)
    diffuse = Material(albedo=(0.7,) * 3)
    for ct in np.linspace(0.05, 1.0, 8):
        wo = np.array([np.sqrt(1 - ct * ct), 0.0, ct])
        rho = hemispherical_reflectance(mat, wo)
        rho_d = hemispherical_reflectance(diffuse, wo)
        assert (rho <= 0.3 + rho_d + 1e-9).all()
    # diffuse part alone integrates to the albedo
    np.testing.assert_allclose(hemispherical_reflectance(diffuse, N), 0.7, rtol=1e-12)


# ---------------------------------------------------------------- emission

def emitter_quad():
    return Scene([Primitive(Quad((-1, -1, 0), (2, 0, 0), (0, 2, 0)), 0, (5, 5, 5)),
                  Primitive(Sphere((0, 0, 5), 1.0), 0)], [Material()])


def test_emission_sides():
    sc = emitter_quad()
    hit = trace(sc, Ray(np.array([[0.0, 0, 1], [0.0, 0, -1]]), np.array([[0.0, 0, -1], [0.0, 0, 1]])))
    E = emission(sc, hit.point, -np.array([[0.0, 0, -1], [0.0, 0, 1]]))
    np.testing.assert_array_equal(E, [[5, 5, 5], [0, 0, 0]])


def test_non_emitter_zero():
    sc = emitter_quad()
    hit = trace(sc, Ray(np.array([[0.0, 0, 2]]), np.array([[0.0, 0, 1]])))
    assert hit.point.prim_id[0] == 1
    np.testing.assert_array_equal(emission(sc, hit.point, np.array([[0.0, 0, -1]])), 0.0)


# ---------------------------------------------------------------- path tracer

def covered_camera(E=2.0):
    wall = Primitive(Quad((-10, -10, 1), (0, 20, 0), (20, 0, 0)), 0, (E,) * 3)
    cam = Camera((0, 0, 0), (0, 0, 1), (0, 1, 0), 60.0, 8, 8)
    return Scene([wall], [Material(albedo=(0.0,) * 3)], cam)


@pytest.mark.parametrize("spp", [1, 3])
def test_covered_camera_exact(spp):
    sc = covered_camera()
    img = path_trace_reference(sc, sc.camera, spp, 8, seed=spp)
    np.testing.assert_array_equal(img.pixels, 2.0)


def test_black_box_is_direct_emission_only():
    sc = closed_box(albedo=0.0, light=(4.0, 4.0, 4.0))
    cam = Camera((0, 0, 0.9), (0, 1, 0.9), (0, 0, 1), 90.0, 8, 8)
    img = path_trace_reference(sc, cam, 1, 16, seed=1)
    assert set(np.unique(img.pixels)) <= {0.0, 4.0}
    assert (img.pixels == 4.0).any()
    direct = path_trace_reference(sc, cam, 1, 1, seed=1)
    np.testing.assert_array_equal(img.pixels, direct.pixels)


def test_furnace_small():
    sc = furnace_scene(0.5, 1.0, res=4)
    img = path_trace_reference(sc, sc.camera, 1024, 64, seed=2)
    assert abs(img.pixels.mean() - 2.0) < 0.04


def test_reference_invariant_to_workers():
    sc = closed_box(0.5, (3.0, 3.0, 3.0))
    cam = Camera((0, 0, 0.9), (0, 0, -1), (0, 1, 0), 60.0, 20, 18)
    a = path_trace_reference(sc, cam, 2, 8, seed=9, workers=1)
    b = path_trace_reference(sc, cam, 2, 8, seed=9, workers=3)
    np.testing.assert_array_equal(a.pixels, b.pixels)


def test_reference_argument_checks():
    sc = covered_camera()
    with pytest.raises(ConfigurationError):
        path_trace_reference(sc, sc.camera, 0, 4, seed=0)
    with pytest.raises(ConfigurationError):
        path_trace_reference(sc, sc.camera, 1, 0, seed=0)
