"""Non-destructive layer stack over a base generation.

Every layer is a self-contained tuple of edit parameters plus its cached
(Z_r, Z_b) pair, chained to a predecessor through j-links (-1 is the base
image). A layer's caches are produced by the phi operator: for the first
link in a chain they come straight from the base trajectory; for any later
layer the predecessor's output image is inverted and regenerated forward so
that overlapping edits see upstream content, then captured at (r, b).

Any mutation at index k marks k..top stale and recomputes the visible stale
layers in order; hidden layers are spliced out of chains dynamically and
keep their (stale) caches until shown again. Layers below k are never
touched, which the fingerprint audits assert.
"""

from __future__ import annotations

import time
from dataclasses import dataclass, field

import numpy as np

from .backend import Backend, PromptEmbedding, Trajectory
from .cache import CachedLatents, CacheKey, LatentCache, capture
from .core import fingerprint
from .engine import EditParams, EditResult, single_layer_edit
from .errors import BadParamsError, NotFoundError


@dataclass
class RecomputeReport:
    recomputed: list[int] = field(default_factory=list)
    denoiser_calls: int = 0
    wall_time_s: float = 0.0


@dataclass
class Layer:
    params: EditParams
    visible: bool = True
    j: int = -1
    cached: CachedLatents | None = None
    result: EditResult | None = None
    stale: bool = True


def params_equal(a: EditParams, b: EditParams) -> bool:
    return (
        a.prompt_text == b.prompt_text
        and a.seed == b.seed
        and a.alpha_star == b.alpha_star
        and a.n == b.n
        and a.sigma == b.sigma
        and a.b == b.b
        and np.array_equal(a.mask.pixel, b.mask.pixel)
    )


class LayerStack:
    """Ordered edit layers over one base trajectory.

    Mutations must be serialized by the caller (the service holds one lock
    per session); compose and read-only queries are safe to interleave with
    each other.
    """

    def __init__(self, backend: Backend, base: Trajectory,
                 base_prompt: PromptEmbedding, session_id: str = "local",
                 cache: LatentCache | None = None):
        self.backend = backend
        self.base = base
        self.base_prompt = base_prompt
        self.base_image = backend.decode(base.final)
        self.session_id = session_id
        self.cache = cache if cache is not None else LatentCache()
        self.layers: list[Layer] = []
        self.dirty_from: int | None = None

    # -- chain structure ------------------------------------------------------

    def __len__(self) -> int:
        return len(self.layers)

    def _layer(self, k: int) -> Layer:
        if not (0 <= k < len(self.layers)):
            raise NotFoundError(f"layer {k} does not exist (stack holds {len(self.layers)})")
        return self.layers[k]

    def effective_prev(self, k: int) -> int:
        """Predecessor index with hidden layers spliced out; -1 is the base."""
        j = self._layer(k).j
        hops = 0
        while j >= 0 and not self.layers[j].visible:
            j = self.layers[j].j
            hops += 1
            if hops > len(self.layers):
                raise BadParamsError(f"layer chain at {k} is cyclic")
        return j

    def topmost_visible(self) -> int:
        for i in reversed(range(len(self.layers))):
            if self.layers[i].visible:
                return i
        return -1

    def chain_of(self, k: int) -> list[int]:
        """Indices from layer k down to the base (exclusive), for audits."""
        chain = []
        idx = k
        while idx >= 0:
            chain.append(idx)
            if len(chain) > len(self.layers):
                raise BadParamsError(f"layer chain at {k} is cyclic")
            idx = self.effective_prev(idx)
        return chain

    # -- phi: per-layer latent generation and caching --------------------------

    def phi(self, k: int) -> CachedLatents:
        """(Re)generate layer k's cached latents from its predecessor's output.

        The first visible link of a chain captures directly from the base
        trajectory; deeper layers invert the predecessor's output image,
        regenerate forward under the base prompt, and capture at (r, b).
        """
        layer = self._layer(k)
        prev = self.effective_prev(k)
        if prev < 0:
            traj = self.base
        else:
            prev_layer = self.layers[prev]
            if prev_layer.result is None or prev_layer.stale:
                raise BadParamsError(
                    f"layer {prev} output is stale; recompute must run bottom-up"
                )
            z_n = self.backend.encode(prev_layer.result.image)
            inverted = self.backend.invert(z_n, self.base_prompt, self.base.N)
            traj = self.backend.regenerate(inverted.latents[0], self.base_prompt, self.base.N)
        return capture(traj, n=layer.params.n, b_override=layer.params.b)

    def _recompute_layer(self, k: int) -> None:
        layer = self.layers[k]
        layer.cached = self.phi(k)
        self.cache.put(CacheKey(self.session_id, k), layer.cached)
        layer.result = single_layer_edit(self.backend, layer.params, layer.cached)
        layer.stale = False

    def _mark_stale_from(self, k: int) -> None:
        for idx in range(max(k, 0), len(self.layers)):
            self.layers[idx].stale = True
        if self.layers[max(k, 0):]:
            self.dirty_from = max(k, 0) if self.dirty_from is None else min(self.dirty_from, max(k, 0))

    def _rehydrate(self) -> None:
        # Restored layers carry fresh caches but no computed result yet;
        # re-running the edit from the stored (Z_r, Z_b) reproduces it bitwise.
        for layer in self.layers:
            if layer.visible and not layer.stale and layer.result is None:
                layer.result = single_layer_edit(self.backend, layer.params, layer.cached)

    def _recompute_from(self, k: int) -> RecomputeReport:
        start = time.perf_counter()
        calls_before = self.backend.denoiser_calls
        self._rehydrate()
        recomputed = []
        for idx in range(max(k, 0), len(self.layers)):
            layer = self.layers[idx]
            if not layer.stale or not layer.visible:
                continue
            self._recompute_layer(idx)
            recomputed.append(idx)
        still_stale = [i for i, l in enumerate(self.layers) if l.stale]
        self.dirty_from = min(still_stale) if still_stale else None
        return RecomputeReport(
            recomputed=recomputed,
            denoiser_calls=self.backend.denoiser_calls - calls_before,
            wall_time_s=time.perf_counter() - start,
        )

    # -- mutations --------------------------------------------------------------

    def add_layer(self, params: EditParams) -> tuple[int, RecomputeReport]:
        """Append a layer chained to the current topmost visible output."""
        layer = Layer(params=params, visible=True, j=self.topmost_visible())
        self.layers.append(layer)
        k = len(self.layers) - 1
        report = self._recompute_from(k)
        return k, report

    def set_visibility(self, k: int, visible: bool) -> RecomputeReport:
        layer = self._layer(k)
        if layer.visible == bool(visible):
            return RecomputeReport()
        layer.visible = bool(visible)
        self._mark_stale_from(k)
        return self._recompute_from(k)

    def update_layer(self, k: int, params: EditParams) -> RecomputeReport:
        layer = self._layer(k)
        if params_equal(layer.params, params):
            return RecomputeReport()
        layer.params = params
        self._mark_stale_from(k)
        return self._recompute_from(k)

    def delete_layer(self, k: int) -> RecomputeReport:
        removed = self._layer(k)
        self.layers.pop(k)
        for layer in self.layers:
            if layer.j == k:
                layer.j = removed.j
            elif layer.j > k:
                layer.j -= 1
        self._resync_cache()
        self._mark_stale_from(k)
        return self._recompute_from(k)

    def _resync_cache(self) -> None:
        # Positional cache keys shift on delete; rebuild the session's slice.
        self.cache.drop_session(self.session_id)
        for idx, layer in enumerate(self.layers):
            if layer.cached is not None:
                self.cache.put(CacheKey(self.session_id, idx), layer.cached)

    def restore_layer(self, params: EditParams, visible: bool, j: int,
                      cached: CachedLatents | None, stale: bool) -> int:
        """Re-attach a persisted layer without triggering recomputation.

        The layer's edit result is rehydrated lazily from the stored caches
        on the next compose/recompute.
        """
        layer = Layer(params=params, visible=visible, j=j, cached=cached,
                      stale=stale or cached is None)
        self.layers.append(layer)
        k = len(self.layers) - 1
        if cached is not None:
            self.cache.put(CacheKey(self.session_id, k), cached)
        if layer.stale:
            self.dirty_from = k if self.dirty_from is None else min(self.dirty_from, k)
        return k

    # -- queries -----------------------------------------------------------------

    def compose(self) -> np.ndarray:
        """Current composition: the topmost visible layer's image, else the base."""
        self._rehydrate()
        if self.dirty_from is not None:
            self._recompute_from(self.dirty_from)
        top = self.topmost_visible()
        if top < 0:
            return self.base_image.copy()
        return self.layers[top].result.image.copy()

    def cache_fingerprints(self) -> list[tuple[int, int] | None]:
        """(Z_r, Z_b) content hashes per layer; None where nothing is cached."""
        return [
            (fingerprint(l.cached.z_r), fingerprint(l.cached.z_b)) if l.cached is not None else None
            for l in self.layers
        ]

    def size_bytes(self) -> int:
        return self.cache.size_bytes(self.session_id)
