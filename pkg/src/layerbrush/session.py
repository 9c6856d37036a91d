"""Session objects and their directory-tree persistence.

A session is one image's full provenance: how its base was obtained (seed +
prompt, or an uploaded image that was inverted), the fixed step count N, the
backend configuration, and the ordered layer stack. The store writes a JSON
manifest plus latent blobs and mask PNGs per session; reloading rebuilds the
stack bit-exactly from the stored caches.
"""

from __future__ import annotations

import json
import threading
import uuid
from dataclasses import dataclass, field
from datetime import datetime, timezone
from pathlib import Path

from .backend import Backend, ToyBackendConfig, Trajectory, make_backend
from .cache import load_entry, save_entry, CacheKey
from .core import Mask, image_hash, png_bytes_to_image
from .engine import EditParams
from .errors import BadParamsError, NotFoundError
from .layers import LayerStack

MANIFEST_NAME = "manifest.json"
BASE_IMAGE_NAME = "base.png"


def _now_iso() -> str:
    return datetime.now(timezone.utc).isoformat()


@dataclass
class PreviewState:
    seed: int
    params: EditParams
    image_hash: str | None = None


@dataclass
class Session:
    id: str
    backend: Backend
    stack: LayerStack
    N: int
    backend_id: str
    base_spec: dict  # {"seed", "prompt"} or {"image": filename, "prompt": ""}
    toy_config: ToyBackendConfig | None
    upload_png: bytes | None = None
    created: str = field(default_factory=_now_iso)
    updated: str = field(default_factory=_now_iso)
    mask_pngs: list[bytes] = field(default_factory=list)
    previews: dict[int, PreviewState] = field(default_factory=dict)
    edit_wall_ms: list[float] = field(default_factory=list)
    lock: threading.Lock = field(default_factory=threading.Lock)
    mutating: bool = False

    def touch(self) -> None:
        self.updated = _now_iso()

    def record_edit_time(self, seconds: float) -> None:
        self.edit_wall_ms.append(seconds * 1000.0)

    def stats(self) -> dict:
        times = self.edit_wall_ms
        if times:
            edges = [0.0, 1.0, 5.0, 10.0, 50.0, 100.0, 500.0, float("inf")]
            counts = [0] * (len(edges) - 1)
            for t in times:
                for i in range(len(edges) - 1):
                    if edges[i] <= t < edges[i + 1]:
                        counts[i] += 1
                        break
            histogram = {
                "count": len(times),
                "mean_ms": sum(times) / len(times),
                "bucket_edges_ms": edges[:-1],
                "bucket_counts": counts,
            }
        else:
            histogram = {"count": 0, "mean_ms": 0.0, "bucket_edges_ms": [], "bucket_counts": []}
        return {
            "cache_bytes": self.stack.size_bytes(),
            "denoiser_calls": self.backend.denoiser_calls,
            "layer_count": len(self.stack),
            "edit_wall_ms": histogram,
        }

    def manifest(self) -> dict:
        layers = []
        for idx, layer in enumerate(self.stack.layers):
            entry = {
                "index": idx,
                "prompt": layer.params.prompt_text,
                "seed": layer.params.seed,
                "alpha_star": layer.params.alpha_star,
                "n": layer.params.n,
                "sigma": layer.params.sigma,
                "b": layer.params.b,
                "visible": layer.visible,
                "j": layer.j,
                "stale": layer.stale,
            }
            if layer.result is not None:
                entry["image_hash"] = image_hash(layer.result.image)
                entry["denoiser_calls"] = layer.result.denoiser_calls
                entry["alpha_effective"] = layer.result.alpha_effective
            layers.append(entry)
        toy = None
        if self.toy_config is not None:
            toy = {
                "latent_shape": list(self.toy_config.latent_shape),
                "lambda_schedule": (list(self.toy_config.lambda_schedule)
                                    if self.toy_config.lambda_schedule else None),
                "target_scale": self.toy_config.target_scale,
            }
        return {
            "id": self.id,
            "backend_id": self.backend_id,
            "num_steps": self.N,
            "toy_config": toy,
            "base": dict(self.base_spec),
            "created": self.created,
            "updated": self.updated,
            "layers": layers,
            "canvas": {
                "height": self.backend.descriptor.pixel_height,
                "width": self.backend.descriptor.pixel_width,
            },
        }


def build_base_trajectory(backend: Backend, base_spec: dict,
                          upload_png: bytes | None, N: int) -> Trajectory:
    """Generate (seed+prompt) or invert-and-regenerate (upload) the base."""
    if "seed" in base_spec:
        prompt = backend.embed(base_spec["prompt"])
        return backend.generate(seed=int(base_spec["seed"]), prompt=prompt, N=N)
    prompt = backend.embed(base_spec.get("prompt", ""))
    img = png_bytes_to_image(upload_png)
    z_n = backend.encode(img)
    inverted = backend.invert(z_n, prompt, N)
    return backend.regenerate(inverted.latents[0], prompt, N)


def create_session(backend_id: str, N: int, prompt: str | None = None,
                   seed: int | None = None, upload_png: bytes | None = None,
                   toy_config: ToyBackendConfig | None = None,
                   session_id: str | None = None) -> Session:
    has_generated = prompt is not None and seed is not None
    has_upload = upload_png is not None
    if has_generated == has_upload:
        raise BadParamsError(
            "exactly one of (prompt + seed) or an uploaded image is required"
        )
    if N < 3:
        raise BadParamsError(f"num_steps must be >= 3, got {N}")
    backend = make_backend(backend_id, N=N, toy_config=toy_config)
    if has_generated:
        base_spec = {"seed": int(seed), "prompt": prompt}
    else:
        base_spec = {"image": BASE_IMAGE_NAME, "prompt": ""}
    base = build_base_trajectory(backend, base_spec, upload_png, N)
    sid = session_id or uuid.uuid4().hex[:12]
    stack = LayerStack(backend, base, backend.embed(base_spec["prompt"]), session_id=sid)
    return Session(
        id=sid,
        backend=backend,
        stack=stack,
        N=N,
        backend_id=backend_id,
        base_spec=base_spec,
        toy_config=toy_config if backend_id == "toy" else None,
        upload_png=upload_png,
    )


class SessionStore:
    """Directory-per-session persistence: manifest.json + blobs + mask PNGs."""

    def __init__(self, root: Path | str):
        self.root = Path(root)
        self.root.mkdir(parents=True, exist_ok=True)

    def _dir(self, session_id: str) -> Path:
        return self.root / session_id

    def exists(self, session_id: str) -> bool:
        return (self._dir(session_id) / MANIFEST_NAME).is_file()

    def list_ids(self) -> list[str]:
        return sorted(
            p.name for p in self.root.iterdir()
            if p.is_dir() and (p / MANIFEST_NAME).is_file()
        )

    def save(self, session: Session) -> None:
        session.touch()
        sdir = self._dir(session.id)
        sdir.mkdir(parents=True, exist_ok=True)
        manifest = session.manifest()
        if session.upload_png is not None:
            (sdir / BASE_IMAGE_NAME).write_bytes(session.upload_png)
        for idx, layer in enumerate(session.stack.layers):
            entry = manifest["layers"][idx]
            mask_name = f"layer{idx}_mask.png"
            (sdir / mask_name).write_bytes(session.mask_pngs[idx])
            entry["mask"] = mask_name
            if layer.cached is not None:
                entry["cache"] = save_entry(self.root, CacheKey(session.id, idx), layer.cached)
        (sdir / MANIFEST_NAME).write_text(json.dumps(manifest, indent=2))

    def load(self, session_id: str) -> Session:
        sdir = self._dir(session_id)
        manifest_path = sdir / MANIFEST_NAME
        if not manifest_path.is_file():
            raise NotFoundError(f"session {session_id!r} not found in store")
        manifest = json.loads(manifest_path.read_text())
        toy_config = None
        if manifest.get("toy_config"):
            tc = manifest["toy_config"]
            toy_config = ToyBackendConfig(
                latent_shape=tuple(tc["latent_shape"]),
                lambda_schedule=tuple(tc["lambda_schedule"]) if tc.get("lambda_schedule") else None,
                target_scale=tc.get("target_scale", 1.0),
            )
        N = manifest["num_steps"]
        backend = make_backend(manifest["backend_id"], N=N, toy_config=toy_config)
        base_spec = manifest["base"]
        upload_png = None
        if "image" in base_spec:
            upload_png = (sdir / base_spec["image"]).read_bytes()
        base = build_base_trajectory(backend, base_spec, upload_png, N)
        stack = LayerStack(backend, base, backend.embed(base_spec["prompt"]),
                           session_id=session_id)
        session = Session(
            id=session_id,
            backend=backend,
            stack=stack,
            N=N,
            backend_id=manifest["backend_id"],
            base_spec=base_spec,
            toy_config=toy_config,
            upload_png=upload_png,
            created=manifest.get("created", _now_iso()),
            updated=manifest.get("updated", _now_iso()),
        )
        for entry in manifest["layers"]:
            mask_png = (sdir / entry["mask"]).read_bytes()
            params = EditParams(
                prompt_text=entry["prompt"],
                mask=Mask.from_png_bytes(mask_png),
                seed=entry["seed"],
                alpha_star=entry["alpha_star"],
                n=entry["n"],
                sigma=entry.get("sigma", 0.25),
                b=entry.get("b"),
            )
            cached = None
            if entry.get("cache"):
                cached = load_entry(self.root, session_id, entry["cache"])
            stack.restore_layer(params, visible=entry["visible"], j=entry["j"],
                                cached=cached, stale=entry.get("stale", False))
            session.mask_pngs.append(mask_png)
        return session

    def delete(self, session_id: str) -> None:
        sdir = self._dir(session_id)
        if not sdir.is_dir():
            raise NotFoundError(f"session {session_id!r} not found in store")
        for child in sorted(sdir.glob("**/*"), reverse=True):
            child.unlink()
        sdir.rmdir()
