"""Render the cache (LHS or one-bounce RHS) or a path-traced reference."""

from __future__ import annotations

import numpy as np

from ..cache.network import CacheParams, cache_radiance
from ..errors import ConfigurationError
from ..estimators import estimate_rhs
from ..image import Image
from ..rng import Purpose, stream
from ..transport.pathtrace import path_trace_reference, run_tiles, tile_pixels
from ..transport.sampling import UNIFORM
from ..transport.scene import Camera, Scene
from ..transport.trace import Ray, trace

MODES = ("lhs", "rhs", "reference")
LHS_SPP = 4


def _primary(scene, camera, tile, spp, rng):
    px, py = tile_pixels(tile, spp)
    jit = rng.random((len(px), 2))
    o, d = camera.generate_rays(px + jit[:, 0], py + jit[:, 1])
    return d, trace(scene, Ray(o, d))


def render(mode: str, scene: Scene, params: CacheParams | None = None, spp: int | None = None,
           M: int = 1, seed: int = 0, camera: Camera | None = None, max_depth: int = 64,
           strategy: str = UNIFORM, workers: int = 1) -> Image:
    """``lhs``: cache radiance at the primary hit. ``rhs``: emission plus a
    one-bounce estimate with the cache at the secondary hits. ``reference``:
    path tracing with ``max_depth`` bounces. Misses are black."""
    if mode not in MODES:
        raise ConfigurationError(f"mode must be one of {MODES}, got {mode!r}")
    camera = camera or scene.camera
    if camera is None:
        raise ConfigurationError("scene has no camera")
    if mode == "reference":
        return path_trace_reference(scene, camera, spp or 64, max_depth, seed, workers)
    if params is None:
        raise ConfigurationError(f"{mode} rendering needs a cache checkpoint")
    spp = spp or (LHS_SPP if mode == "lhs" else 1)
    if spp < 1 or M < 1:
        raise ConfigurationError("spp and M must be >= 1")

    def render_tile(index, tile):
        x0, y0, w, h = tile
        rng = stream(seed, Purpose.CAMERA, index)
        d, hit = _primary(scene, camera, tile, spp, rng)
        out = np.zeros((len(d), 3))
        v = hit.valid
        if v.any():
            x = hit.point.take(v)
            if mode == "lhs":
                out[v] = cache_radiance(params, scene, x, -d[v])
            else:
                out[v] = estimate_rhs(scene, params, x, -d[v], M, strategy,
                                      stream(seed, Purpose.RHS, index)).value
        return out.reshape(h * w, spp, 3).mean(axis=1).reshape(h, w, 3)

    return run_tiles(camera, render_tile, workers)
