"""Iterative denoising backends.

The pipeline sees a backend as: a prompt embedder, a pluggable per-step
denoiser, full generation, inversion, and a latent<->pixel codec. The toy
backend implements all of it with deterministic affine contractions so that
every higher-level invariant (cache equivalence, background preservation,
toggle determinism) is exact rather than statistical. Real latent-diffusion
runtimes plug in through the adapter contract at the bottom of this module.
"""

from __future__ import annotations

import hashlib
import threading
from abc import ABC, abstractmethod
from dataclasses import dataclass

import numpy as np

from .core import sample_gaussian
from .errors import BackendUnavailableError, BadParamsError, ShapeError

EMBED_DIM = 32
DEFAULT_LATENT_SHAPE = (4, 16, 16)
# Small late-step updates mirror real schedulers and keep post-blend drift low.
DEFAULT_LAMBDA_MAIN = 0.3
DEFAULT_LAMBDA_LATE = 0.05


@dataclass(frozen=True)
class PromptEmbedding:
    """Deterministic text conditioning: same text always gives the same vector."""

    text: str
    vector: np.ndarray

    def __post_init__(self):
        vec = np.asarray(self.vector, dtype=np.float32)
        vec.setflags(write=False)
        object.__setattr__(self, "vector", vec)


@dataclass(frozen=True)
class BackendDescriptor:
    id: str
    latent_shape: tuple[int, int, int]
    spatial_factor: int
    supports_exact_inversion: bool
    default_N: int

    def __post_init__(self):
        if self.default_N < 3:
            raise BadParamsError(f"default_N must be >= 3, got {self.default_N}")
        if self.spatial_factor < 1:
            raise BadParamsError(f"spatial_factor must be >= 1, got {self.spatial_factor}")

    @property
    def pixel_width(self) -> int:
        return self.latent_shape[2] * self.spatial_factor

    @property
    def pixel_height(self) -> int:
        return self.latent_shape[1] * self.spatial_factor


@dataclass
class Trajectory:
    """The denoising sequence Z_0..Z_N (index i sits at noise level sigma_i)."""

    latents: list[np.ndarray]
    prompt: PromptEmbedding
    seed: int | None
    N: int

    def __post_init__(self):
        if len(self.latents) != self.N + 1:
            raise ShapeError(
                f"trajectory holds {len(self.latents)} latents, expected N+1 = {self.N + 1}"
            )

    @property
    def final(self) -> np.ndarray:
        return self.latents[-1]


@dataclass(frozen=True)
class ToyBackendConfig:
    latent_shape: tuple[int, int, int] = DEFAULT_LATENT_SHAPE
    lambda_schedule: tuple[float, ...] | None = None
    target_scale: float = 1.0

    def __post_init__(self):
        if self.lambda_schedule is not None:
            sched = tuple(float(x) for x in self.lambda_schedule)
            if any(not (0.0 < lam < 1.0) for lam in sched):
                raise BadParamsError(
                    "every schedule entry must lie in (0, 1) so steps stay invertible"
                )
            object.__setattr__(self, "lambda_schedule", sched)
        shape = tuple(int(d) for d in self.latent_shape)
        if len(shape) != 3 or any(d <= 0 for d in shape):
            raise ShapeError(f"invalid latent shape {self.latent_shape}")
        object.__setattr__(self, "latent_shape", shape)


class Backend(ABC):
    """Backend contract consumed by the engine, layers, service, and CLI.

    Implementations are immutable after construction; step/generate/invert
    are reentrant. ``denoiser_calls`` counts model invocations at the backend
    boundary (one per denoise step, one per inversion step) so callers can
    report exact costs instead of estimates.
    """

    descriptor: BackendDescriptor

    def __init__(self):
        self._calls = 0
        self._calls_lock = threading.Lock()

    @property
    def denoiser_calls(self) -> int:
        return self._calls

    def _count_call(self, n: int = 1) -> None:
        with self._calls_lock:
            self._calls += n

    @abstractmethod
    def embed(self, text: str) -> PromptEmbedding: ...

    @abstractmethod
    def denoise_step(self, z: np.ndarray, prompt: PromptEmbedding, i: int, seed: int) -> np.ndarray: ...

    @abstractmethod
    def generate(self, seed: int, prompt: PromptEmbedding, N: int) -> Trajectory: ...

    @abstractmethod
    def regenerate(self, z0: np.ndarray, prompt: PromptEmbedding, N: int) -> Trajectory: ...

    @abstractmethod
    def invert(self, z_n: np.ndarray, prompt: PromptEmbedding, N: int) -> Trajectory: ...

    @abstractmethod
    def decode(self, z: np.ndarray) -> np.ndarray: ...

    @abstractmethod
    def encode(self, img: np.ndarray) -> np.ndarray: ...


def _seed_from_bytes(data: bytes) -> int:
    return int.from_bytes(hashlib.blake2b(data, digest_size=8).digest(), "big")


class ToyBackend(Backend):
    """Deterministic affine denoiser used as the exact verification oracle.

    Each step contracts the latent toward a prompt-derived target T(p):
    Z_{i+1} = Z_i + lambda_i * (T(p) - Z_i). Every operation is a pure
    function of its arguments, steps are exactly invertible, and decode is
    an affine latent->RGB map, so pipeline-level equalities hold to float
    precision instead of statistically.
    """

    def __init__(self, config: ToyBackendConfig | None = None, N: int | None = None):
        super().__init__()
        self.config = config or ToyBackendConfig()
        if self.config.lambda_schedule is not None:
            if N is not None and N != len(self.config.lambda_schedule):
                raise BadParamsError(
                    f"N={N} does not match the configured schedule length "
                    f"{len(self.config.lambda_schedule)}"
                )
            schedule = self.config.lambda_schedule
        else:
            n_steps = N if N is not None else 25
            if n_steps < 3:
                raise BadParamsError(f"N must be >= 3, got {n_steps}")
            schedule = tuple(
                [DEFAULT_LAMBDA_MAIN] * (n_steps - 2) + [DEFAULT_LAMBDA_LATE] * 2
            )
        self.schedule = schedule
        self.N = len(schedule)
        if self.N < 3:
            raise BadParamsError(f"schedule must hold at least 3 steps, got {self.N}")
        self.descriptor = BackendDescriptor(
            id="toy",
            latent_shape=self.config.latent_shape,
            spatial_factor=1,
            supports_exact_inversion=True,
            default_N=self.N,
        )
        self._targets: dict[str, np.ndarray] = {}
        self._targets_lock = threading.Lock()

    # -- prompt conditioning ------------------------------------------------

    def embed(self, text: str) -> PromptEmbedding:
        seed = _seed_from_bytes(hashlib.sha256(text.encode("utf-8")).digest())
        rng = np.random.default_rng(seed)
        vec = rng.standard_normal(EMBED_DIM, dtype=np.float32)
        vec /= np.float32(np.linalg.norm(vec))
        return PromptEmbedding(text=text, vector=vec)

    def target_latent(self, prompt: PromptEmbedding) -> np.ndarray:
        """Prompt target T(p): a seeded sample keyed by the embedding, scaled."""
        with self._targets_lock:
            cached = self._targets.get(prompt.text)
            if cached is not None:
                return cached
        seed = _seed_from_bytes(np.ascontiguousarray(prompt.vector).tobytes())
        target = sample_gaussian(seed, self.config.latent_shape)
        target = (target * np.float32(self.config.target_scale)).astype(np.float32)
        target.setflags(write=False)
        with self._targets_lock:
            self._targets[prompt.text] = target
        return target

    # -- denoising ----------------------------------------------------------

    def _check_latent(self, z: np.ndarray) -> None:
        if z.shape != self.config.latent_shape:
            raise ShapeError(
                f"latent shape {z.shape} does not match backend shape {self.config.latent_shape}"
            )

    def _check_n(self, N: int) -> None:
        if N < 3:
            raise BadParamsError(f"N must be >= 3, got {N}")
        if N != self.N:
            raise BadParamsError(
                f"N={N} does not match this backend's bound step count {self.N}"
            )

    def denoise_step(self, z: np.ndarray, prompt: PromptEmbedding, i: int, seed: int) -> np.ndarray:
        # seed is accepted for signature parity; a deterministic scheduler
        # consumes randomness only at Z_0.
        if not (0 <= i < self.N):
            raise BadParamsError(f"step index {i} out of range [0, {self.N})")
        self._check_latent(z)
        lam = self.schedule[i]
        target = self.target_latent(prompt)
        self._count_call()
        return z + np.float32(lam) * (target - z)

    def generate(self, seed: int, prompt: PromptEmbedding, N: int) -> Trajectory:
        self._check_n(N)
        z0 = sample_gaussian(seed, self.config.latent_shape)
        traj = self.regenerate(z0, prompt, N)
        traj.seed = int(seed)
        return traj

    def regenerate(self, z0: np.ndarray, prompt: PromptEmbedding, N: int) -> Trajectory:
        self._check_n(N)
        self._check_latent(z0)
        latents = [z0]
        z = z0
        for i in range(N):
            z = self.denoise_step(z, prompt, i, 0)
            latents.append(z)
        return Trajectory(latents=latents, prompt=prompt, seed=None, N=N)

    def invert(self, z_n: np.ndarray, prompt: PromptEmbedding, N: int) -> Trajectory:
        self._check_n(N)
        self._check_latent(z_n)
        target = self.target_latent(prompt)
        latents = [z_n]
        z = z_n
        for i in range(N - 1, -1, -1):
            lam = self.schedule[i]
            z = (z - np.float32(lam) * target) / np.float32(1.0 - lam)
            self._count_call()
            latents.append(z)
        latents.reverse()
        return Trajectory(latents=latents, prompt=prompt, seed=None, N=N)

    # -- pixel codec ----------------------------------------------------------

    def decode(self, z: np.ndarray) -> np.ndarray:
        """Affine latent->RGB: 127.5 + 127.5 * z on the first three channels.

        All-zero latents decode to mid-gray. Channels beyond the third do not
        reach pixels (see encode); a single-channel latent is tiled to gray.
        """
        self._check_latent(z)
        c = z.shape[0]
        if c >= 3:
            planes = z[:3]
        else:
            planes = np.broadcast_to(z[:1], (3,) + z.shape[1:])
        px = 127.5 + 127.5 * planes.astype(np.float64)
        img = np.clip(np.round(px), 0, 255).astype(np.uint8).transpose(1, 2, 0)
        f = self.descriptor.spatial_factor
        if f > 1:
            img = np.repeat(np.repeat(img, f, axis=0), f, axis=1)
        return img

    def encode(self, img: np.ndarray) -> np.ndarray:
        c, h, w = self.config.latent_shape
        f = self.descriptor.spatial_factor
        if img.shape != (h * f, w * f, 3) or img.dtype != np.uint8:
            raise ShapeError(
                f"expected uint8 image of shape {(h * f, w * f, 3)}, got {img.dtype} {img.shape}"
            )
        px = img.astype(np.float64)
        if f > 1:
            px = px.reshape(h, f, w, f, 3).mean(axis=(1, 3))
        planes = ((px - 127.5) / 127.5).transpose(2, 0, 1)
        z = np.zeros((c, h, w), dtype=np.float32)
        if c >= 3:
            z[:3] = planes.astype(np.float32)
        else:
            z[0] = planes.mean(axis=0).astype(np.float32)
        return z


# ---------------------------------------------------------------------------
# real-model adapter contract

class LdmAdapter(Backend):
    """Adapter delegating every operation to an external diffusion runtime.

    The runtime must provide: ``descriptor`` (a BackendDescriptor),
    ``embed(text)``, ``step(z, vector, i, seed)``, ``sample(seed)``,
    ``invert(z, vector, N)`` returning the latent list Z_0..Z_N,
    ``decode(z)`` and ``encode(img)``. Calls are serialized internally;
    callers must not assume parallel throughput. Inversion round-trips are
    approximate for real models. Excluded from acceptance.
    """

    def __init__(self, runtime):
        super().__init__()
        if runtime is None:
            raise BackendUnavailableError("no diffusion runtime supplied to the adapter")
        self._runtime = runtime
        self._serial = threading.Lock()
        self.descriptor = runtime.descriptor

    def embed(self, text: str) -> PromptEmbedding:
        with self._serial:
            vec = self._runtime.embed(text)
        return PromptEmbedding(text=text, vector=np.asarray(vec, dtype=np.float32))

    def denoise_step(self, z, prompt, i, seed):
        if not (0 <= i < self.descriptor.default_N):
            raise BadParamsError(f"step index {i} out of range")
        with self._serial:
            out = self._runtime.step(z, prompt.vector, i, seed)
        self._count_call()
        return np.asarray(out, dtype=np.float32)

    def generate(self, seed, prompt, N):
        if N < 3:
            raise BadParamsError(f"N must be >= 3, got {N}")
        with self._serial:
            z0 = np.asarray(self._runtime.sample(seed), dtype=np.float32)
        traj = self.regenerate(z0, prompt, N)
        traj.seed = int(seed)
        return traj

    def regenerate(self, z0, prompt, N):
        latents = [np.asarray(z0, dtype=np.float32)]
        z = latents[0]
        for i in range(N):
            z = self.denoise_step(z, prompt, i, 0)
            latents.append(z)
        return Trajectory(latents=latents, prompt=prompt, seed=None, N=N)

    def invert(self, z_n, prompt, N):
        if not self.descriptor.supports_exact_inversion and not hasattr(self._runtime, "invert"):
            raise BackendUnavailableError("wrapped runtime does not support inversion")
        with self._serial:
            latents = [np.asarray(z, dtype=np.float32) for z in self._runtime.invert(z_n, prompt.vector, N)]
        self._count_call(N)
        return Trajectory(latents=latents, prompt=prompt, seed=None, N=N)

    def decode(self, z):
        with self._serial:
            return np.asarray(self._runtime.decode(z), dtype=np.uint8)

    def encode(self, img):
        with self._serial:
            return np.asarray(self._runtime.encode(img), dtype=np.float32)


_LDM_RUNTIMES: dict[str, object] = {}


def register_ldm_runtime(ref: str, factory) -> None:
    """Register a runtime factory for backend id ``ldm:<ref>``."""
    _LDM_RUNTIMES[ref] = factory


def make_backend(backend_id: str, N: int | None = None,
                 toy_config: ToyBackendConfig | None = None) -> Backend:
    """Build a backend from its id string ("toy" or "ldm:<model-ref>")."""
    if backend_id == "toy":
        return ToyBackend(config=toy_config, N=N)
    if backend_id.startswith("ldm:"):
        ref = backend_id.split(":", 1)[1]
        factory = _LDM_RUNTIMES.get(ref)
        if factory is None:
            raise BackendUnavailableError(
                f"no diffusion runtime registered for '{ref}'",
                detail={"backend_id": backend_id},
            )
        return LdmAdapter(factory())
    raise BadParamsError(f"unknown backend id '{backend_id}'")
