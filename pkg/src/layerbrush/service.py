"""HTTP session service.

JSON over HTTP with base64 PNG payloads for images; latent blobs are served
raw. Per-session mutations are serialized by an exclusive lock (a second
concurrent mutation gets a 409 conflict); previews are read-only against
committed state and are rejected while a mutation is in flight on the same
session. Sessions persist to a directory tree after every mutation, so a
restarted service reloads them bit-exactly.

Configuration comes from the environment:
  LDB_STORE      session store directory        (default ./ldb_store)
  LDB_BACKEND    backend id                     (default "toy")
  LDB_DEFAULT_N  default denoising step count   (default 25)
  LDB_SIGMA      default strength sigma         (default 0.25)
  LDB_BIND       host:port for __main__         (default 127.0.0.1:8600)
"""

from __future__ import annotations

import base64
import os
import time
from dataclasses import replace
from pathlib import Path

from fastapi import FastAPI, Request, Response
from fastapi.exceptions import RequestValidationError
from fastapi.responses import JSONResponse
from pydantic import BaseModel

from .backend import ToyBackendConfig
from .core import MAX_SEED, Mask, image_hash, image_to_png_bytes, latent_to_blob
from .engine import EditParams, single_layer_edit
from .errors import (
    BadParamsError,
    ConflictError,
    EditingError,
    NotFoundError,
)
from .session import PreviewState, Session, SessionStore, create_session

_STATUS_BY_CODE = {
    "bad_params": 400,
    "bad_shape": 400,
    "cache_miss": 500,
    "backend_unavailable": 503,
    "not_found": 404,
    "conflict": 409,
}


class BoxSpec(BaseModel):
    center_x: int
    center_y: int
    size: int


class SessionCreate(BaseModel):
    backend_id: str | None = None
    num_steps: int | None = None
    prompt: str | None = None
    seed: int | None = None
    image_png_base64: str | None = None
    latent_shape: list[int] | None = None
    lambda_schedule: list[float] | None = None
    target_scale: float | None = None


class LayerCreate(BaseModel):
    prompt: str
    seed: int
    alpha_star: float
    n: int
    sigma: float | None = None
    b: int | None = None
    mask_png_base64: str | None = None
    box: BoxSpec | None = None


class LayerPatch(BaseModel):
    prompt: str | None = None
    seed: int | None = None
    alpha_star: float | None = None
    n: int | None = None
    sigma: float | None = None
    b: int | None = None
    mask_png_base64: str | None = None
    box: BoxSpec | None = None
    visible: bool | None = None


class PreviewRequest(BaseModel):
    seed: int | None = None
    seed_delta: int | None = None
    center_x: int | None = None
    center_y: int | None = None
    size: int | None = None


def _png_b64(img) -> str:
    return base64.b64encode(image_to_png_bytes(img)).decode("ascii")


def _report_payload(report, image) -> dict:
    return {
        "recomputed": report.recomputed,
        "denoiser_calls": report.denoiser_calls,
        "wall_time_ms": report.wall_time_s * 1000.0,
        "image_hash": image_hash(image),
    }


def create_app(store_path: str | os.PathLike | None = None,
               backend_id: str | None = None,
               default_n: int | None = None,
               default_sigma: float | None = None) -> FastAPI:
    store = SessionStore(Path(store_path or os.environ.get("LDB_STORE", "ldb_store")))
    cfg_backend = backend_id or os.environ.get("LDB_BACKEND", "toy")
    cfg_n = default_n or int(os.environ.get("LDB_DEFAULT_N", "25"))
    cfg_sigma = default_sigma or float(os.environ.get("LDB_SIGMA", "0.25"))

    app = FastAPI(title="layerbrush service")
    sessions: dict[str, Session] = {}
    app.state.sessions = sessions
    app.state.store = store

    # -- plumbing -----------------------------------------------------------

    def get_session(session_id: str) -> Session:
        session = sessions.get(session_id)
        if session is None:
            session = store.load(session_id)  # raises not_found
            sessions[session_id] = session
        return session

    def mutation(session: Session):
        # Mutations race each other for the lock (the loser gets a 409);
        # reads block on the same lock so they never observe a half-applied
        # stack; previews stay lock-free but are rejected mid-mutation.
        class _Guard:
            def __enter__(self):
                if not session.lock.acquire(blocking=False):
                    raise ConflictError(
                        f"another mutation is in flight on session {session.id}"
                    )
                session.mutating = True
                return self

            def __exit__(self, *exc):
                session.mutating = False
                session.lock.release()
                return False

        return _Guard()

    def decode_mask(session: Session, mask_b64: str | None, box: BoxSpec | None) -> tuple[Mask, bytes]:
        desc = session.backend.descriptor
        height, width = desc.pixel_height, desc.pixel_width
        if (mask_b64 is None) == (box is None):
            raise BadParamsError("provide exactly one of mask_png_base64 or box")
        if box is not None:
            mask = Mask.box(height, width, box.center_x, box.center_y, box.size)
            return mask, mask.to_png_bytes()
        png = base64.b64decode(mask_b64)
        mask = Mask.from_png_bytes(png)
        if mask.shape != (height, width):
            raise BadParamsError(
                f"mask dimensions {mask.shape} do not match the {height}x{width} canvas"
            )
        return mask, png

    @app.exception_handler(EditingError)
    async def editing_error_handler(_: Request, exc: EditingError):
        return JSONResponse(
            status_code=_STATUS_BY_CODE.get(exc.code, 400),
            content={"code": exc.code, "message": str(exc), "detail": exc.detail},
        )

    @app.exception_handler(RequestValidationError)
    async def validation_error_handler(_: Request, exc: RequestValidationError):
        return JSONResponse(
            status_code=400,
            content={"code": "bad_params", "message": "invalid request body",
                     "detail": {"errors": exc.errors()}},
        )

    # -- sessions -------------------------------------------------------------

    @app.post("/sessions")
    def post_session(body: SessionCreate):
        toy_config = None
        if body.latent_shape or body.lambda_schedule or body.target_scale:
            toy_config = ToyBackendConfig(
                latent_shape=tuple(body.latent_shape) if body.latent_shape else (4, 16, 16),
                lambda_schedule=tuple(body.lambda_schedule) if body.lambda_schedule else None,
                target_scale=body.target_scale if body.target_scale is not None else 1.0,
            )
        upload = base64.b64decode(body.image_png_base64) if body.image_png_base64 else None
        session = create_session(
            backend_id=body.backend_id or cfg_backend,
            N=body.num_steps or cfg_n,
            prompt=body.prompt,
            seed=body.seed,
            upload_png=upload,
            toy_config=toy_config,
        )
        sessions[session.id] = session
        store.save(session)
        return {
            "session": session.manifest(),
            "image_png_base64": _png_b64(session.stack.compose()),
        }

    @app.get("/sessions/{session_id}")
    def get_manifest(session_id: str):
        return get_session(session_id).manifest()

    @app.get("/sessions/{session_id}/image")
    def get_image(session_id: str):
        session = get_session(session_id)
        with session.lock:
            png = image_to_png_bytes(session.stack.compose())
        return Response(content=png, media_type="image/png")

    @app.get("/sessions/{session_id}/stats")
    def get_stats(session_id: str):
        return get_session(session_id).stats()

    @app.delete("/sessions/{session_id}")
    def delete_session(session_id: str):
        session = get_session(session_id)
        with mutation(session):
            store.delete(session_id)
            session.stack.cache.drop_session(session_id)
            sessions.pop(session_id, None)
        return {"deleted": session_id}

    # -- layers ---------------------------------------------------------------

    @app.post("/sessions/{session_id}/layers")
    def post_layer(session_id: str, body: LayerCreate):
        session = get_session(session_id)
        with mutation(session):
            mask, mask_png = decode_mask(session, body.mask_png_base64, body.box)
            params = EditParams(
                prompt_text=body.prompt,
                mask=mask,
                seed=body.seed,
                alpha_star=body.alpha_star,
                n=body.n,
                sigma=body.sigma if body.sigma is not None else cfg_sigma,
                b=body.b,
            )
            t0 = time.perf_counter()
            k, report = session.stack.add_layer(params)
            session.mask_pngs.append(mask_png)
            session.record_edit_time(time.perf_counter() - t0)
            result = session.stack.layers[k].result
            store.save(session)
        return {
            "layer_index": k,
            "image_png_base64": _png_b64(result.image),
            "image_hash": image_hash(result.image),
            "alpha_effective": result.alpha_effective,
            "denoiser_calls": result.denoiser_calls,
            "report": _report_payload(report, result.image),
        }

    @app.patch("/sessions/{session_id}/layers/{k}")
    def patch_layer(session_id: str, k: int, body: LayerPatch):
        session = get_session(session_id)
        with mutation(session):
            stack = session.stack
            if not (0 <= k < len(stack)):
                raise NotFoundError(f"layer {k} does not exist")
            param_fields = (body.prompt, body.seed, body.alpha_star, body.n,
                            body.sigma, body.b, body.mask_png_base64, body.box)
            wants_params = any(f is not None for f in param_fields)
            if body.visible is not None and not wants_params:
                report = stack.set_visibility(k, body.visible)
            elif wants_params:
                current = stack.layers[k].params
                if body.mask_png_base64 is not None or body.box is not None:
                    mask, mask_png = decode_mask(session, body.mask_png_base64, body.box)
                    session.mask_pngs[k] = mask_png
                else:
                    mask = current.mask
                params = EditParams(
                    prompt_text=body.prompt if body.prompt is not None else current.prompt_text,
                    mask=mask,
                    seed=body.seed if body.seed is not None else current.seed,
                    alpha_star=body.alpha_star if body.alpha_star is not None else current.alpha_star,
                    n=body.n if body.n is not None else current.n,
                    sigma=body.sigma if body.sigma is not None else current.sigma,
                    b=body.b if body.b is not None else current.b,
                )
                report = stack.update_layer(k, params)
                if body.visible is not None:
                    vis_report = stack.set_visibility(k, body.visible)
                    report.recomputed = sorted(set(report.recomputed) | set(vis_report.recomputed))
                    report.denoiser_calls += vis_report.denoiser_calls
                    report.wall_time_s += vis_report.wall_time_s
            else:
                raise BadParamsError("patch body carries no changes")
            image = stack.compose()
            store.save(session)
        return _report_payload(report, image)

    @app.delete("/sessions/{session_id}/layers/{k}")
    def delete_layer(session_id: str, k: int):
        session = get_session(session_id)
        with mutation(session):
            report = session.stack.delete_layer(k)
            session.mask_pngs.pop(k)
            session.previews.pop(k, None)
            image = session.stack.compose()
            store.save(session)
        return _report_payload(report, image)

    @app.get("/sessions/{session_id}/layers/{k}/mask")
    def get_mask(session_id: str, k: int):
        session = get_session(session_id)
        if not (0 <= k < len(session.stack)):
            raise NotFoundError(f"layer {k} does not exist")
        return Response(content=session.mask_pngs[k], media_type="image/png")

    @app.get("/sessions/{session_id}/layers/{k}/latents/{which}")
    def get_latent_blob(session_id: str, k: int, which: str):
        session = get_session(session_id)
        if not (0 <= k < len(session.stack)):
            raise NotFoundError(f"layer {k} does not exist")
        if which not in ("r", "b"):
            raise BadParamsError("latent selector must be 'r' or 'b'")
        cached = session.stack.layers[k].cached
        if cached is None:
            raise NotFoundError(f"layer {k} has no cached latents yet")
        blob = latent_to_blob(cached.z_r if which == "r" else cached.z_b)
        return Response(content=blob, media_type="application/octet-stream")

    # -- previews ----------------------------------------------------------------

    @app.post("/sessions/{session_id}/layers/{k}/preview")
    def post_preview(session_id: str, k: int, body: PreviewRequest):
        session = get_session(session_id)
        if session.mutating:
            raise ConflictError("a mutation is in flight; retry the preview")
        stack = session.stack
        if not (0 <= k < len(stack)):
            raise NotFoundError(f"layer {k} does not exist")
        layer = stack.layers[k]
        state = session.previews.get(k)
        base_params = state.params if state is not None else layer.params
        current_seed = state.seed if state is not None else layer.params.seed

        if body.center_x is not None or body.center_y is not None or body.size is not None:
            if body.center_x is None or body.center_y is None:
                raise BadParamsError("box preview requires center_x and center_y")
            desc = session.backend.descriptor
            size = body.size if body.size is not None else _box_size_of(base_params)
            mask = Mask.box(desc.pixel_height, desc.pixel_width,
                            body.center_x, body.center_y, size)
            base_params = replace(base_params, mask=mask)
            # box drags auto-increment the seed per request
            current_seed = (current_seed + 1) % (MAX_SEED + 1)
        elif body.seed is not None:
            current_seed = int(body.seed) % (MAX_SEED + 1)
        elif body.seed_delta is not None:
            current_seed = (current_seed + int(body.seed_delta)) % (MAX_SEED + 1)
        else:
            raise BadParamsError("preview requires a seed, seed_delta, or box center")

        params = replace(base_params, seed=current_seed)
        t0 = time.perf_counter()
        result = single_layer_edit(session.backend, params, layer.cached)
        session.record_edit_time(time.perf_counter() - t0)
        session.previews[k] = PreviewState(
            seed=current_seed, params=params, image_hash=image_hash(result.image))
        return {
            "seed": current_seed,
            "image_png_base64": _png_b64(result.image),
            "image_hash": image_hash(result.image),
            "alpha_effective": result.alpha_effective,
            "denoiser_calls": result.denoiser_calls,
        }

    @app.post("/sessions/{session_id}/layers/{k}/commit")
    def post_commit(session_id: str, k: int):
        session = get_session(session_id)
        with mutation(session):
            stack = session.stack
            if not (0 <= k < len(stack)):
                raise NotFoundError(f"layer {k} does not exist")
            state = session.previews.get(k)
            if state is None:
                raise BadParamsError(f"layer {k} has no preview to commit")
            report = stack.update_layer(k, state.params)
            session.mask_pngs[k] = state.params.mask.to_png_bytes()
            session.previews.pop(k, None)
            image = stack.compose()
            store.save(session)
        return _report_payload(report, image)

    return app


def _box_size_of(params: EditParams) -> int:
    """Half-side of the current mask's bounding box, for box-mode previews."""
    rows = params.mask.pixel.any(axis=1).nonzero()[0]
    cols = params.mask.pixel.any(axis=0).nonzero()[0]
    if len(rows) == 0:
        raise BadParamsError("box preview needs an explicit size on an empty mask")
    half_h = (rows[-1] - rows[0] + 2) // 2
    half_w = (cols[-1] - cols[0] + 2) // 2
    return max(1, int(max(half_h, half_w)))


def main() -> None:
    import uvicorn

    bind = os.environ.get("LDB_BIND", "127.0.0.1:8600")
    host, _, port = bind.partition(":")
    uvicorn.run(create_app(), host=host or "127.0.0.1", port=int(port or 8600))


if __name__ == "__main__":
    main()
