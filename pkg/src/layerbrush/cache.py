"""Per-layer latent caching.

Each layer keeps two intermediate latents from its generation pass: the
regeneration latent Z_r at step r = N - n (the restart point that skips the
first r denoising steps for every edit) and the blending latent Z_b at step
b = N - 2 by default (merged back outside the mask to preserve background).
The store is in-memory with lossless blob spill for session persistence.
"""

from __future__ import annotations

import threading
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .backend import Trajectory
from .core import BLOB_HEADER_SIZE, blob_to_latent, latent_to_blob
from .errors import BadParamsError, CacheMissError, ShapeError


@dataclass(frozen=True)
class CachedLatents:
    z_r: np.ndarray
    z_b: np.ndarray
    r: int
    b: int
    n_total: int  # the session's N

    def __post_init__(self):
        if not (0 <= self.r < self.b < self.n_total):
            raise BadParamsError(
                f"cache indices must satisfy 0 <= r < b < N, got r={self.r} b={self.b} N={self.n_total}"
            )
        if self.z_r.shape != self.z_b.shape:
            raise ShapeError(
                f"cached latents disagree on shape: {self.z_r.shape} vs {self.z_b.shape}"
            )
        for name, z in (("z_r", self.z_r), ("z_b", self.z_b)):
            arr = np.ascontiguousarray(z, dtype=np.float32)
            arr.setflags(write=False)
            object.__setattr__(self, name, arr)

    @property
    def n(self) -> int:
        return self.n_total - self.r

    @property
    def nbytes(self) -> int:
        return 2 * (4 * self.z_r.size + BLOB_HEADER_SIZE)


@dataclass(frozen=True)
class CacheKey:
    session_id: str
    layer_index: int


def capture(traj: Trajectory, n: int, b_override: int | None = None) -> CachedLatents:
    """Snapshot (Z_r, Z_b) from a completed trajectory for an n-step edit.

    r = N - n; b defaults to N - 2 unless overridden for ablation. The
    override must keep r < b < N.
    """
    N = traj.N
    if not (3 <= n <= N):
        raise BadParamsError(f"edit step count n={n} must satisfy 3 <= n <= N={N}")
    r = N - n
    b = int(b_override) if b_override is not None else N - 2
    if b <= r:
        raise BadParamsError(f"blend step b={b} must exceed r={r}")
    if b >= N:
        raise BadParamsError(f"blend step b={b} must be < N={N}")
    return CachedLatents(
        z_r=traj.latents[r].copy(),
        z_b=traj.latents[b].copy(),
        r=r,
        b=b,
        n_total=N,
    )


class LatentCache:
    """Keyed store of CachedLatents; one entry per (session, layer index).

    Reads are concurrent-safe; writes to one key replace atomically. There is
    no eviction within a live session (layer counts are small); sessions
    evict wholesale on deletion.
    """

    def __init__(self):
        self._entries: dict[CacheKey, CachedLatents] = {}
        self._lock = threading.Lock()

    def put(self, key: CacheKey, cached: CachedLatents) -> None:
        with self._lock:
            for other_key, other in self._entries.items():
                if other_key.session_id == key.session_id and other.z_r.shape != cached.z_r.shape:
                    raise ShapeError(
                        f"latent shape {cached.z_r.shape} does not match session shape "
                        f"{other.z_r.shape}"
                    )
            self._entries[key] = cached

    def get(self, key: CacheKey) -> CachedLatents:
        with self._lock:
            entry = self._entries.get(key)
        if entry is None:
            raise CacheMissError(
                f"no cached latents for session={key.session_id!r} layer={key.layer_index}",
                detail={"session_id": key.session_id, "layer_index": key.layer_index},
            )
        return entry

    def delete(self, key: CacheKey) -> None:
        with self._lock:
            self._entries.pop(key, None)

    def drop_session(self, session_id: str) -> None:
        with self._lock:
            for key in [k for k in self._entries if k.session_id == session_id]:
                del self._entries[key]

    def keys_for(self, session_id: str) -> list[CacheKey]:
        with self._lock:
            keys = [k for k in self._entries if k.session_id == session_id]
        return sorted(keys, key=lambda k: k.layer_index)

    def size_bytes(self, session_id: str) -> int:
        """Memory accounting: sum of 2 * 4 bytes * C*h*w per layer plus headers."""
        with self._lock:
            return sum(
                entry.nbytes
                for key, entry in self._entries.items()
                if key.session_id == session_id
            )


# ---------------------------------------------------------------------------
# blob persistence (used by the session store)

def save_entry(store_dir: Path, key: CacheKey, cached: CachedLatents) -> dict:
    """Write layer<k>_{r,b}.ldbl blobs; returns manifest references."""
    session_dir = Path(store_dir) / key.session_id
    session_dir.mkdir(parents=True, exist_ok=True)
    refs = {}
    for tag, z in (("r", cached.z_r), ("b", cached.z_b)):
        name = f"layer{key.layer_index}_{tag}.ldbl"
        (session_dir / name).write_bytes(latent_to_blob(z))
        refs[tag] = name
    return {"blobs": refs, "r": cached.r, "b": cached.b, "n_total": cached.n_total}


def load_entry(store_dir: Path, session_id: str, meta: dict) -> CachedLatents:
    session_dir = Path(store_dir) / session_id
    z_r = blob_to_latent((session_dir / meta["blobs"]["r"]).read_bytes())
    z_b = blob_to_latent((session_dir / meta["blobs"]["b"]).read_bytes())
    return CachedLatents(z_r=z_r, z_b=z_b, r=meta["r"], b=meta["b"], n_total=meta["n_total"])
