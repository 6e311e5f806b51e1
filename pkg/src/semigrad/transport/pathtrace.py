"""Reference path tracer used as ground truth for image metrics."""

from __future__ import annotations

from concurrent.futures import ThreadPoolExecutor

import numpy as np

from ..errors import ConfigurationError
from ..image import Image
from ..rng import Purpose, stream
from .bsdf import scene_bsdf
from .sampling import sample_bsdf_direction
from .scene import Camera, Scene
from .trace import Ray, emission, trace

TILE = 16
MAX_RAYS = 1 << 16


def tiles(camera: Camera):
    """Fixed tiling of the image; tile order defines the RNG key of each tile."""
    out = []
    for y0 in range(0, camera.height, TILE):
        for x0 in range(0, camera.width, TILE):
            out.append((x0, y0, min(TILE, camera.width - x0), min(TILE, camera.height - y0)))
    return out


def tile_pixels(tile, spp):
    x0, y0, w, h = tile
    ys, xs = np.mgrid[y0:y0 + h, x0:x0 + w]
    return np.repeat(xs.reshape(-1), spp), np.repeat(ys.reshape(-1), spp)


def run_tiles(camera: Camera, fn, workers: int = 1) -> Image:
    """Evaluate ``fn(tile_index, tile) -> (h, w, 3)`` for every tile and assemble."""
    ts = tiles(camera)
    if workers > 1:
        with ThreadPoolExecutor(workers) as ex:
            results = list(ex.map(lambda a: fn(*a), enumerate(ts)))
    else:
        results = [fn(i, t) for i, t in enumerate(ts)]
    img = np.zeros((camera.height, camera.width, 3))
    for (x0, y0, w, h), r in zip(ts, results):
        img[y0:y0 + h, x0:x0 + w] = r
    return Image(img)


def _radiance(scene: Scene, o, d, max_depth: int, rng) -> np.ndarray:
    pk = scene.packed
    K = len(o)
    L = np.zeros((K, 3))
    beta = np.ones((K, 3))
    alive = np.arange(K)
    for depth in range(max_depth + 1):
        hit = trace(scene, Ray(o, d))
        v = hit.valid
        alive, o, d, beta = alive[v], o[v], d[v], beta[v]
        x = hit.point.take(v)
        L[alive] += beta * emission(scene, x, -d)
        if depth == max_depth or len(alive) == 0:
            break
        mid = x.material_id
        wo = -d
        wi, pdf = sample_bsdf_direction(pk["mat_albedo"][mid], pk["mat_lobe"][mid],
                                        pk["mat_exponent"][mid], x.normal, wo, rng)
        f = scene_bsdf(pk, mid, x.normal, wo, wi)
        cos_i = np.einsum("ki,ki->k", x.normal, wi)
        ok = (pdf > 0.0) & (cos_i > 0.0)
        w = np.where(ok, cos_i / np.where(ok, pdf, 1.0), 0.0)
        beta = beta * f * w[:, None]
        keep = beta.max(axis=1) > 0.0
        alive, beta, wi = alive[keep], beta[keep], wi[keep]
        x = x.take(keep)
        ray = Ray.spawn(x, wi)
        o, d = ray.origin, ray.direction
    return L


def path_trace_reference(scene: Scene, camera: Camera, spp: int, max_depth: int,
                         seed: int, workers: int = 1) -> Image:
    """Unbiased (up to ``max_depth`` bounces) estimate of camera radiance.

    Each tile draws from its own counter-based stream, so the image does not
    depend on ``workers``.
    """
    if spp < 1 or max_depth < 1:
        raise ConfigurationError("spp and max_depth must be >= 1")

    def render_tile(index, tile):
        rng = stream(seed, Purpose.PATH, index)
        x0, y0, w, h = tile
        acc = np.zeros((h * w, 3))
        per_batch = max(1, MAX_RAYS // (w * h))
        done = 0
        while done < spp:
            n = min(per_batch, spp - done)
            px, py = tile_pixels(tile, n)
            jit = rng.random((len(px), 2))
            o, d = camera.generate_rays(px + jit[:, 0], py + jit[:, 1])
            L = _radiance(scene, o, d, max_depth, rng)
            acc += L.reshape(h * w, n, 3).sum(axis=1)
            done += n
        return (acc / spp).reshape(h, w, 3)

    return run_tiles(camera, render_tile, workers)
