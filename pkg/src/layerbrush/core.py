"""Tensor, mask, and randomness primitives shared by the whole pipeline.

Latents are plain ``float32`` numpy arrays of shape (C, h, w); pixel images
are ``uint8`` arrays of shape (H, W, 3) with H = h*f, W = w*f for the
backend's integer spatial factor f. Everything in this module is a pure
function of its inputs, so values can be shared freely across threads.
"""

from __future__ import annotations

import hashlib
import io
import math
import struct
from dataclasses import dataclass

import numpy as np
from PIL import Image

from .errors import BadParamsError, ShapeError

MAX_SEED = 2**64 - 1

BLOB_MAGIC = b"LDBL"
BLOB_VERSION = 1
BLOB_DTYPE_FLOAT32 = 1
BLOB_HEADER_SIZE = 16


# ---------------------------------------------------------------------------
# seeded sampling and flat-population statistics

def sample_gaussian(seed: int, shape: tuple[int, int, int]) -> np.ndarray:
    """Draw an i.i.d. standard-normal float32 tensor keyed by ``seed``.

    The stream is a pure function of (seed, shape): equal arguments give
    bitwise-equal tensors, across process restarts. The generator is numpy's
    default PCG64; bit compatibility with other implementations is not part
    of the contract.
    """
    if not (0 <= int(seed) <= MAX_SEED):
        raise BadParamsError(f"seed must be a non-negative 64-bit integer, got {seed}")
    if len(shape) == 0 or any(int(d) <= 0 for d in shape):
        raise ShapeError(f"invalid latent shape {shape}: zero or negative dimension")
    rng = np.random.default_rng(int(seed))
    return rng.standard_normal(tuple(int(d) for d in shape), dtype=np.float32)


def variance(z: np.ndarray) -> float:
    """Population variance over all elements, treated as one flat population."""
    return float(np.var(z, dtype=np.float64))


def covariance(a: np.ndarray, b: np.ndarray) -> float:
    """Population covariance of two equally-shaped tensors over flat elements."""
    if a.shape != b.shape:
        raise ShapeError(f"covariance shape mismatch: {a.shape} vs {b.shape}")
    af = a.astype(np.float64).ravel()
    bf = b.astype(np.float64).ravel()
    return float(np.mean((af - af.mean()) * (bf - bf.mean())))


# ---------------------------------------------------------------------------
# masks

def downsample_mask(pixel: np.ndarray, factor: int) -> np.ndarray:
    """Area-average a pixel mask down to latent resolution.

    Each latent cell is the mean of its f x f pixel block, so thin strokes
    survive as soft coverage instead of aliasing away. f=1 is the identity.
    """
    if factor < 1:
        raise BadParamsError(f"spatial factor must be >= 1, got {factor}")
    h_px, w_px = pixel.shape
    if h_px % factor or w_px % factor:
        raise ShapeError(
            f"mask dimensions {h_px}x{w_px} are not divisible by the spatial factor {factor}"
        )
    if factor == 1:
        return pixel.astype(np.float32, copy=True)
    blocks = pixel.reshape(h_px // factor, factor, w_px // factor, factor)
    return blocks.mean(axis=(1, 3), dtype=np.float64).astype(np.float32)


@dataclass(frozen=True)
class Mask:
    """Region selector: an H x W field of reals in [0, 1] at pixel resolution.

    The latent-space counterpart is derived (never stored authoritatively),
    so re-derivation is idempotent. coverage counts strictly-positive pixels;
    zero coverage is legal and means an identity edit.
    """

    pixel: np.ndarray

    def __post_init__(self):
        arr = np.asarray(self.pixel)
        if arr.ndim != 2:
            raise ShapeError(f"mask must be 2-D (H, W), got shape {arr.shape}")
        arr = np.clip(arr.astype(np.float32), 0.0, 1.0)
        arr.setflags(write=False)
        object.__setattr__(self, "pixel", arr)

    @property
    def shape(self) -> tuple[int, int]:
        return self.pixel.shape

    @property
    def coverage(self) -> int:
        return int(np.count_nonzero(self.pixel > 0))

    def latent(self, factor: int) -> np.ndarray:
        return downsample_mask(self.pixel, factor)

    @classmethod
    def zeros(cls, height: int, width: int) -> "Mask":
        return cls(np.zeros((height, width), dtype=np.float32))

    @classmethod
    def full(cls, height: int, width: int) -> "Mask":
        return cls(np.ones((height, width), dtype=np.float32))

    @classmethod
    def box(cls, height: int, width: int, center_x: int, center_y: int, size: int) -> "Mask":
        """Square mask of half-side ``size`` (the UI's brush radius), clipped to canvas."""
        if size < 1:
            raise BadParamsError(f"box size must be >= 1, got {size}")
        y0, y1 = center_y - size, center_y + size
        x0, x1 = center_x - size, center_x + size
        if y1 < 0 or x1 < 0 or y0 >= height or x0 >= width:
            raise BadParamsError(
                "box mask lies entirely outside the canvas",
                detail={"center_x": center_x, "center_y": center_y, "size": size},
            )
        arr = np.zeros((height, width), dtype=np.float32)
        arr[max(y0, 0): min(y1, height), max(x0, 0): min(x1, width)] = 1.0
        return cls(arr)

    def to_png_bytes(self) -> bytes:
        """Serialize as 8-bit grayscale PNG at pixel resolution."""
        gray = np.round(self.pixel * 255.0).astype(np.uint8)
        buf = io.BytesIO()
        Image.fromarray(gray, mode="L").save(buf, format="PNG")
        return buf.getvalue()

    @classmethod
    def from_png_bytes(cls, data: bytes) -> "Mask":
        img = Image.open(io.BytesIO(data)).convert("L")
        arr = np.asarray(img, dtype=np.float32) / 255.0
        return cls(arr)


# ---------------------------------------------------------------------------
# blending and metrics

def blend(a: np.ndarray, b: np.ndarray, m_latent: np.ndarray) -> np.ndarray:
    """Elementwise a*m + b*(1-m), the mask broadcast across channels.

    Where m is exactly 1 the result is bitwise a; where m is exactly 0 it is
    bitwise b. Both operands must share the session latent shape.
    """
    if a.shape != b.shape:
        raise ShapeError(f"blend shape mismatch: {a.shape} vs {b.shape}")
    if m_latent.shape != a.shape[-2:]:
        raise ShapeError(
            f"latent mask shape {m_latent.shape} does not match latent plane {a.shape[-2:]}"
        )
    m = m_latent.astype(np.float32)[None, :, :]
    return a * m + b * (np.float32(1.0) - m)


def psnr(a: np.ndarray, b: np.ndarray, region: Mask | None = None) -> float:
    """Peak signal-to-noise ratio in dB over 8-bit images, peak 255.

    With ``region`` given, only pixels where region.pixel < 0.5 are scored
    (the untouched background). Identical inputs return math.inf, the
    distinguished sentinel; it is never approximated by a large float.
    """
    if a.shape != b.shape:
        raise ShapeError(f"psnr shape mismatch: {a.shape} vs {b.shape}")
    diff = a.astype(np.float64) - b.astype(np.float64)
    if region is not None:
        if region.shape != a.shape[:2]:
            raise ShapeError(
                f"psnr region shape {region.shape} does not match image {a.shape[:2]}"
            )
        sel = region.pixel < 0.5
        if not sel.any():
            raise BadParamsError("psnr evaluation region is empty (mask covers every pixel)")
        diff = diff[sel]
    mse = float(np.mean(diff * diff))
    if mse == 0.0:
        return math.inf
    return 10.0 * math.log10(255.0**2 / mse)


def mse_region(a: np.ndarray, b: np.ndarray, region: Mask, masked: bool) -> float:
    """Pixel MSE restricted to the masked (>= 0.5) or unmasked (< 0.5) region."""
    if a.shape != b.shape:
        raise ShapeError(f"mse shape mismatch: {a.shape} vs {b.shape}")
    sel = (region.pixel >= 0.5) if masked else (region.pixel < 0.5)
    if not sel.any():
        raise BadParamsError("mse evaluation region is empty")
    diff = a.astype(np.float64)[sel] - b.astype(np.float64)[sel]
    return float(np.mean(diff * diff))


# ---------------------------------------------------------------------------
# serialization and hashing

def latent_to_blob(z: np.ndarray) -> bytes:
    """Pack a latent into the LDBL binary blob format.

    Layout: 16-byte header (magic "LDBL", version byte, dtype byte, C/h/w as
    little-endian u16, 4 reserved bytes), then row-major little-endian
    float32 data.
    """
    if z.ndim != 3:
        raise ShapeError(f"latent must be 3-D (C, h, w), got shape {z.shape}")
    c, h, w = z.shape
    if max(c, h, w) > 0xFFFF:
        raise ShapeError(f"latent dimensions {z.shape} exceed the u16 header fields")
    header = BLOB_MAGIC + struct.pack(
        "<BBHHH", BLOB_VERSION, BLOB_DTYPE_FLOAT32, c, h, w
    ) + b"\x00" * 4
    return header + np.ascontiguousarray(z, dtype="<f4").tobytes()


def blob_to_latent(data: bytes) -> np.ndarray:
    if len(data) < BLOB_HEADER_SIZE:
        raise ShapeError("latent blob shorter than its 16-byte header")
    if data[:4] != BLOB_MAGIC:
        raise ShapeError("latent blob magic mismatch (expected LDBL)")
    version, dtype, c, h, w = struct.unpack("<BBHHH", data[4:12])
    if version != BLOB_VERSION:
        raise ShapeError(f"unsupported latent blob version {version}")
    if dtype != BLOB_DTYPE_FLOAT32:
        raise ShapeError(f"unsupported latent blob dtype code {dtype}")
    expected = BLOB_HEADER_SIZE + 4 * c * h * w
    if len(data) != expected:
        raise ShapeError(f"latent blob length {len(data)} != expected {expected}")
    flat = np.frombuffer(data, dtype="<f4", offset=BLOB_HEADER_SIZE)
    return flat.reshape(c, h, w).astype(np.float32)


def fingerprint(z: np.ndarray) -> int:
    """64-bit content hash of a latent; used for staleness audits and tests."""
    digest = hashlib.blake2b(
        np.ascontiguousarray(z, dtype="<f4").tobytes(), digest_size=8
    ).digest()
    return int.from_bytes(digest, "big")


def image_hash(img: np.ndarray) -> str:
    """Stable hex digest of raw pixel content (format-independent)."""
    h = hashlib.sha256()
    h.update(str(img.shape).encode())
    h.update(np.ascontiguousarray(img).tobytes())
    return h.hexdigest()


def image_to_png_bytes(img: np.ndarray) -> bytes:
    if img.ndim != 3 or img.shape[2] != 3 or img.dtype != np.uint8:
        raise ShapeError(f"expected uint8 (H, W, 3) image, got {img.dtype} {img.shape}")
    buf = io.BytesIO()
    Image.fromarray(img, mode="RGB").save(buf, format="PNG")
    return buf.getvalue()


def png_bytes_to_image(data: bytes) -> np.ndarray:
    img = Image.open(io.BytesIO(data)).convert("RGB")
    return np.asarray(img, dtype=np.uint8)
