"""The single-layer edit procedure.

An edit restarts from the cached regeneration latent Z_r instead of Z_0:
inject a seeded, variance-scaled noise pattern inside the mask, run the
remaining denoising steps under the edit prompt, and merge the cached
blending latent back outside the mask just before the step at index b runs.
The user-facing strength alpha* in [0, 100] is mapped to the injection
coefficient through the variance/covariance of the latents and the mask
coverage, which decouples perceived strength from step count and mask size.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, replace
from typing import Iterable, Iterator

import numpy as np

from .backend import Backend, PromptEmbedding
from .cache import CachedLatents
from .core import MAX_SEED, Mask, blend, covariance, sample_gaussian, variance
from .errors import BadParamsError, EditingError, ShapeError

DEFAULT_SIGMA = 0.25


@dataclass(frozen=True)
class EditParams:
    """Everything a layer needs to reproduce its edit."""

    prompt_text: str
    mask: Mask
    seed: int
    alpha_star: float
    n: int
    sigma: float = DEFAULT_SIGMA
    b: int | None = None

    def __post_init__(self):
        if not (0.0 <= self.alpha_star <= 100.0):
            raise BadParamsError(f"alpha_star must lie in [0, 100], got {self.alpha_star}")
        if self.n < 3:
            raise BadParamsError(f"edit step count n must be >= 3, got {self.n}")
        if not (0 <= int(self.seed) <= MAX_SEED):
            raise BadParamsError(f"seed must be a non-negative 64-bit integer, got {self.seed}")
        if self.sigma <= 0:
            raise BadParamsError(f"sigma must be positive, got {self.sigma}")
        if self.b is not None and self.b < 1:
            raise BadParamsError(f"blend step b must be >= 1, got {self.b}")

    def blend_step(self, n_total: int) -> int:
        return self.b if self.b is not None else n_total - 2


@dataclass
class EditResult:
    final_latent: np.ndarray
    image: np.ndarray
    latents: list[np.ndarray]  # edit-branch latents from start_index to N
    start_index: int
    post_blend_latent: np.ndarray | None
    denoiser_calls: int
    alpha_effective: float


def map_strength(alpha_star: float, z_r: np.ndarray, z0p: np.ndarray,
                 mask: Mask, sigma: float, width: int) -> float:
    """Map user strength alpha* in [0, 100] to the injection coefficient.

    alpha = sqrt(|(alpha*/100) * (sigma - 2*Cov(Z_r, Z'_0)/Var(Z_r))|)
            / sqrt(coverage / width)

    ``z0p`` is the variance-scaled noise sample about to be injected;
    ``width`` is the backend's pixel width. A fixed alpha* then produces a
    similar visual effect as n or the mask size change. Zero coverage maps
    to alpha = 0 by convention; alpha is exactly proportional to
    sqrt(alpha*) with everything else held fixed.
    """
    if not (0.0 <= alpha_star <= 100.0):
        raise BadParamsError(f"alpha_star must lie in [0, 100], got {alpha_star}")
    if mask.coverage == 0 or alpha_star == 0.0:
        return 0.0
    var = variance(z_r)
    if var == 0.0:
        raise BadParamsError("regeneration latent is degenerate (zero variance)")
    cov = covariance(z_r, z0p)
    numerator = math.sqrt(abs((alpha_star / 100.0) * (sigma - 2.0 * cov / var)))
    denominator = math.sqrt(mask.coverage / width)
    return numerator / denominator


def scaled_noise_sample(z_r: np.ndarray, seed: int) -> np.ndarray:
    """Fresh seeded sample scaled to match the regeneration latent's variance."""
    z0p = sample_gaussian(seed, z_r.shape)
    return z0p * np.float32(math.sqrt(variance(z_r)))


def inject_noise(z_r: np.ndarray, seed: int, alpha: float, mask: Mask,
                 factor: int = 1) -> np.ndarray:
    """Return Z_r + alpha * (scaled_sample ⊙ m_latent).

    alpha = 0 or an empty mask returns Z_r unchanged (bitwise).
    """
    if alpha < 0:
        raise BadParamsError(f"alpha must be >= 0, got {alpha}")
    m_lat = mask.latent(factor)
    if m_lat.shape != z_r.shape[-2:]:
        raise ShapeError(
            f"latent mask shape {m_lat.shape} does not match latent plane {z_r.shape[-2:]}"
        )
    if alpha == 0.0 or mask.coverage == 0:
        return z_r.copy()
    z0p = scaled_noise_sample(z_r, seed)
    return z_r + np.float32(alpha) * (z0p * m_lat[None, :, :])


def single_layer_edit(backend: Backend, params: EditParams, cached: CachedLatents,
                      prompt: PromptEmbedding | None = None) -> EditResult:
    """Run one edit against cached latents and decode the result.

    The loop index is the global step: it runs r..N-1, and when it reaches b
    the latent is blended with the cached Z_b *before* the step at b executes,
    so exactly two denoising steps follow the blend at the default b = N-2.
    Empty masks short-circuit to stepping Z_b through the post-blend tail,
    which is bitwise-identical to the full path (the blend would overwrite
    everything) and costs N-b calls instead of n.
    """
    N = cached.n_total
    r = cached.r
    if r != N - params.n:
        raise BadParamsError(
            f"cached r={r} does not match N - n = {N - params.n}; recapture required"
        )
    b = params.blend_step(N)
    if not (r < b < N):
        raise BadParamsError(f"blend step b={b} must lie in ({r}, {N})")
    if b != cached.b:
        raise BadParamsError(
            f"blend snapshot was captured at step {cached.b}, but the edit wants b={b}"
        )
    factor = backend.descriptor.spatial_factor
    expected_mask = (backend.descriptor.pixel_height, backend.descriptor.pixel_width)
    if params.mask.shape != expected_mask:
        raise ShapeError(
            f"mask shape {params.mask.shape} does not match canvas {expected_mask}"
        )
    if prompt is None:
        prompt = backend.embed(params.prompt_text)
    m_lat = params.mask.latent(factor)

    calls = 0
    if params.mask.coverage == 0:
        alpha = 0.0
        z = cached.z_b.copy()
        post_blend = cached.z_b.copy()
        latents = [z]
        start = b
        for i in range(b, N):
            z = backend.denoise_step(z, prompt, i, params.seed)
            latents.append(z)
            calls += 1
    else:
        z0p = scaled_noise_sample(cached.z_r, params.seed)
        alpha = map_strength(params.alpha_star, cached.z_r, z0p, params.mask,
                             params.sigma, backend.descriptor.pixel_width)
        z = inject_noise(cached.z_r, params.seed, alpha, params.mask, factor)
        post_blend = None
        latents = [z]
        start = r
        for i in range(r, N):
            if i == b:
                z = blend(z, cached.z_b, m_lat)
                post_blend = z
            z = backend.denoise_step(z, prompt, i, params.seed)
            latents.append(z)
            calls += 1

    image = backend.decode(z)
    return EditResult(
        final_latent=z,
        image=image,
        latents=latents,
        start_index=start,
        post_blend_latent=post_blend,
        denoiser_calls=calls,
        alpha_effective=float(alpha),
    )


@dataclass
class PreviewItem:
    seed: int
    result: EditResult | None = None
    error: EditingError | None = None


def preview_stream(backend: Backend, params: EditParams, cached: CachedLatents,
                   seeds: Iterable[int],
                   prompt: PromptEmbedding | None = None) -> Iterator[PreviewItem]:
    """Lazily yield one edit per seed, reusing the cached latents.

    Items are individually deterministic and order-independent; a failing
    seed yields its error without aborting the stream.
    """
    if prompt is None:
        prompt = backend.embed(params.prompt_text)
    for seed in seeds:
        try:
            item_params = replace(params, seed=int(seed) % (MAX_SEED + 1))
            result = single_layer_edit(backend, item_params, cached, prompt)
            yield PreviewItem(seed=item_params.seed, result=result)
        except EditingError as err:
            yield PreviewItem(seed=int(seed), error=err)
