"""Lambertian and normalized Phong-lobe reflectance."""

from __future__ import annotations

import numpy as np

from .scene import Material


def _dot(a, b):
    return np.einsum("...i,...i->...", a, b)


def bsdf_kernel(albedo, lobe, exponent, n, wo, wi):
    """Vectorized BSDF value (sr^-1), shape (..., 3).

    ``f = albedo * ((1 - s)/pi + s (k + 2)/(2 pi) max(0, r.wi)^k)`` where ``r`` is
    the mirror of ``wo`` about ``n``. Zero when either direction lies below the
    surface.
    """
    n = np.asarray(n, dtype=float)
    wo = np.asarray(wo, dtype=float)
    wi = np.asarray(wi, dtype=float)
    cos_o = _dot(n, wo)
    cos_i = _dot(n, wi)
    lobe = np.asarray(lobe, dtype=float)
    exponent = np.asarray(exponent, dtype=float)
    # r.wi = 2 (n.wo)(n.wi) - wo.wi is symmetric in (wo, wi)
    cos_r = np.maximum(2.0 * cos_o * cos_i - _dot(wo, wi), 0.0)
    with np.errstate(divide="ignore", invalid="ignore"):
        spec = np.where(lobe > 0.0, (exponent + 2.0) / (2.0 * np.pi) * cos_r**exponent, 0.0)
    shape = (1.0 - lobe) / np.pi + lobe * spec
    valid = (cos_o > 0.0) & (cos_i > 0.0)
    return np.where(valid[..., None], np.asarray(albedo, dtype=float) * shape[..., None], 0.0)


def eval_bsdf(mat: Material, n, wo, wi) -> np.ndarray:
    return bsdf_kernel(np.asarray(mat.albedo), mat.lobe_weight, mat.phong_exponent, n, wo, wi)


def hemispherical_reflectance(mat: Material, wo, n=(0.0, 0.0, 1.0), n_theta=64, n_phi=128):
    """Quadrature of ``f cos`` over the incident hemisphere for one outgoing direction."""
    n = np.asarray(n, dtype=float)
    mu, wq = np.polynomial.legendre.leggauss(n_theta)
    mu = 0.5 * (mu + 1.0)
    wq = 0.5 * wq
    phi = (np.arange(n_phi) + 0.5) * (2.0 * np.pi / n_phi)
    from .sampling import orthonormal_basis

    t, b = orthonormal_basis(n)
    MU, PHI = np.meshgrid(mu, phi, indexing="ij")
    st = np.sqrt(1.0 - MU**2)
    wi = (st * np.cos(PHI))[..., None] * t + (st * np.sin(PHI))[..., None] * b + MU[..., None] * n
    wi = wi.reshape(-1, 3)
    w = (wq[:, None] * np.full(n_phi, 2.0 * np.pi / n_phi)).reshape(-1)
    f = eval_bsdf(mat, n, np.broadcast_to(np.asarray(wo, dtype=float), wi.shape), wi)
    return (f * (_dot(wi, n) * w)[:, None]).sum(axis=0)


def scene_bsdf(packed: dict, material_id, n, wo, wi) -> np.ndarray:
    """BSDF values for per-point material ids using a scene's packed material table."""
    mid = np.maximum(np.asarray(material_id), 0)
    return bsdf_kernel(packed["mat_albedo"][mid], packed["mat_lobe"][mid],
                       packed["mat_exponent"][mid], n, wo, wi)
