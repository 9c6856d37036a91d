"""Layered, non-destructive, mask-guided editing for iterative denoisers."""

from .backend import (
    Backend,
    BackendDescriptor,
    LdmAdapter,
    PromptEmbedding,
    ToyBackend,
    ToyBackendConfig,
    Trajectory,
    make_backend,
    register_ldm_runtime,
)
from .cache import CachedLatents, CacheKey, LatentCache, capture
from .core import (
    Mask,
    blend,
    covariance,
    downsample_mask,
    fingerprint,
    image_hash,
    psnr,
    sample_gaussian,
    variance,
)
from .engine import (
    EditParams,
    EditResult,
    inject_noise,
    map_strength,
    preview_stream,
    single_layer_edit,
)
from .errors import (
    BackendUnavailableError,
    BadParamsError,
    CacheMissError,
    ConflictError,
    EditingError,
    NotFoundError,
    ShapeError,
)
from .layers import Layer, LayerStack, RecomputeReport
from .session import Session, SessionStore, create_session

__version__ = "0.1.0"

__all__ = [
    "Backend", "BackendDescriptor", "LdmAdapter", "PromptEmbedding",
    "ToyBackend", "ToyBackendConfig", "Trajectory", "make_backend",
    "register_ldm_runtime",
    "CachedLatents", "CacheKey", "LatentCache", "capture",
    "Mask", "blend", "covariance", "downsample_mask", "fingerprint",
    "image_hash", "psnr", "sample_gaussian", "variance",
    "EditParams", "EditResult", "inject_noise", "map_strength",
    "preview_stream", "single_layer_edit",
    "BackendUnavailableError", "BadParamsError", "CacheMissError",
    "ConflictError", "EditingError", "NotFoundError", "ShapeError",
    "Layer", "LayerStack", "RecomputeReport",
    "Session", "SessionStore", "create_session",
]
