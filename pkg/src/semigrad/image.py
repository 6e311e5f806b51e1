"""Linear-radiance images and their PFM/PPM encodings."""

from __future__ import annotations

import os
from dataclasses import dataclass

import numpy as np

from .errors import ConfigurationError


@dataclass
class Image:
    pixels: np.ndarray  # (height, width, 3), float64, linear radiance

    def __post_init__(self):
        self.pixels = np.asarray(self.pixels, dtype=np.float64)
        if self.pixels.ndim != 3 or self.pixels.shape[2] != 3:
            raise ConfigurationError(f"image must be (H, W, 3), got {self.pixels.shape}")

    @property
    def height(self) -> int:
        return self.pixels.shape[0]

    @property
    def width(self) -> int:
        return self.pixels.shape[1]

    @classmethod
    def zeros(cls, width, height):
        return cls(np.zeros((height, width, 3)))


def write_pfm(path, img: Image, dtype="<f8"):
    """Little-endian PFM. ``dtype='<f8'`` keeps float64 values bit-exact.

    Standard PFM readers expect ``'<f4'``; the double-precision variant uses
    the same header and is only read back by :func:`read_pfm`.
    """
    dt = np.dtype(dtype)
    if dt.byteorder not in ("<", "=") or dt.kind != "f":
        raise ConfigurationError("PFM output must be little-endian float")
    h, w = img.height, img.width
    header = f"PF\n{w} {h}\n-1.0\n".encode("ascii")
    # PFM stores rows bottom-to-top
    data = np.ascontiguousarray(img.pixels[::-1].astype(dt.newbyteorder("<")))
    with open(path, "wb") as f:
        f.write(header)
        if dt.itemsize == 8:
            f.write(b"F64\n")
        f.write(data.tobytes())


def read_pfm(path) -> Image:
    with open(path, "rb") as f:
        if f.readline().strip() != b"PF":
            raise ConfigurationError(f"{path}: not a color PFM file")
        w, h = (int(v) for v in f.readline().split())
        scale = float(f.readline())
        rest = f.read()
    dtype = "<f4" if scale < 0 else ">f4"
    if rest.startswith(b"F64\n"):
        rest = rest[4:]
        dtype = "<f8" if scale < 0 else ">f8"
    px = np.frombuffer(rest, dtype=dtype).astype(np.float64)
    if px.size != w * h * 3:
        raise ConfigurationError(f"{path}: expected {w * h * 3} values, found {px.size}")
    return Image(px.reshape(h, w, 3)[::-1].copy())


def write_ppm(path, img: Image, gamma=2.2):
    """8-bit P6 after gamma correction and clamping; lossy by design."""
    v = np.clip(img.pixels, 0.0, None) ** (1.0 / gamma)
    b = np.clip(np.round(v * 255.0), 0, 255).astype(np.uint8)
    with open(path, "wb") as f:
        f.write(f"P6\n{img.width} {img.height}\n255\n".encode("ascii"))
        f.write(b.tobytes())


def write_image(path, img: Image):
    ext = os.path.splitext(str(path))[1].lower()
    if ext == ".pfm":
        write_pfm(path, img)
    elif ext == ".ppm":
        write_ppm(path, img)
    else:
        raise ConfigurationError(f"unsupported image extension {ext!r} (use .pfm or .ppm)")
