"""Local HTTP service exposing deterministic face editing sessions.

Endpoints
  POST /sessions                  {"seed": int} or {"latent": [[...]]}
  GET  /catalog
  GET  /sessions/{id}/features
  POST /sessions/{id}/edits       {"feature": int, "target": float,
                                   "unit": "normalized"|"slider",
                                   "rounds": int, "include_latents": bool}
  GET  /sessions/{id}/image       ?kind=current|original|diff  (PNG)
  POST /sessions/{id}/undo

Sessions live in memory (optionally snapshotted to disk) and keep a
latent stack so every edit can be undone.  All responses carry plain
floats; replaying a transcript of requests against the same checkpoint
reproduces bitwise-identical feature values.
"""

from __future__ import annotations

import hashlib
import io
import threading
import uuid
from pathlib import Path
from typing import Literal

import numpy as np
import torch
from fastapi import FastAPI, Request, Response
from fastapi.exceptions import RequestValidationError
from fastapi.middleware.cors import CORSMiddleware
from fastapi.responses import JSONResponse
from PIL import Image
from pydantic import BaseModel

from faceshape.editor import EditPipeline, load_pipeline
from faceshape.errors import NotReadyError
from faceshape.landmarks import FEATURE_COUNT, feature_catalog

SNAPSHOT_FORMAT = "faceshape-session v1"


class ApiError(Exception):
    """Error with a machine-readable code, rendered as a JSON envelope."""

    def __init__(self, status: int, code: str, message: str):
        super().__init__(message)
        self.status = status
        self.code = code
        self.message = message


class CreateSessionBody(BaseModel):
    seed: int | None = None
    latent: list[list[float]] | None = None


class EditBody(BaseModel):
    feature: int
    target: float
    unit: Literal["normalized", "slider"] = "normalized"
    rounds: int = 1
    include_latents: bool = False


class EditSession:
    """One editing session: a latent stack plus cached renders."""

    def __init__(self, session_id: str, history: list[torch.Tensor],
                 seed: int | None):
        self.id = session_id
        self.seed = seed
        self.history = history          # stack of (1, n, d) latents
        self.lock = threading.Lock()
        self.original_image: torch.Tensor | None = None
        self.current_image: torch.Tensor | None = None

    @property
    def current(self) -> torch.Tensor:
        return self.history[-1]


def _tolist(t: torch.Tensor) -> list:
    return t.detach().to(torch.float64).numpy().tolist()


class EditService:
    """Holds the pipeline and the session table behind the HTTP app."""

    def __init__(self, pipeline: EditPipeline,
                 snapshot_dir: str | Path | None = None):
        self.pipeline = pipeline
        self.sessions: dict[str, EditSession] = {}
        self.table_lock = threading.Lock()
        self.snapshot_dir = Path(snapshot_dir) if snapshot_dir else None
        if self.snapshot_dir is not None:
            self.snapshot_dir.mkdir(parents=True, exist_ok=True)
            self._restore_snapshots()

    # -- session plumbing ------------------------------------------------

    def create_session(self, seed: int | None,
                       latent: list | None) -> EditSession:
        backend = self.pipeline.backend
        if (seed is None) == (latent is None):
            raise ApiError(400, "bad_request",
                           "provide exactly one of 'seed' or 'latent'")
        if seed is not None:
            z = backend.sample_latent(1, seed=seed)
            w = backend.map_latent(z)
        else:
            n, d = backend.descriptor.n_styles, backend.descriptor.style_dim
            arr = np.asarray(latent, dtype=np.float64)
            if arr.shape != (n, d):
                raise ApiError(400, "bad_latent",
                               f"latent must have shape [{n}, {d}],"
                               f" got {list(arr.shape)}")
            if not np.isfinite(arr).all():
                raise ApiError(400, "bad_latent", "latent must be finite")
            w = torch.tensor(arr, dtype=backend.dtype).unsqueeze(0)
        session = EditSession(uuid.uuid4().hex, [w], seed)
        self._refresh_images(session, original=True)
        with self.table_lock:
            self.sessions[session.id] = session
        self._persist(session)
        return session

    def get_session(self, session_id: str) -> EditSession:
        with self.table_lock:
            session = self.sessions.get(session_id)
        if session is None:
            raise ApiError(404, "unknown_session",
                           f"no session {session_id!r}")
        return session

    def _refresh_images(self, session: EditSession, original: bool = False):
        with torch.no_grad():
            out = self.pipeline.backend.synthesize(session.current,
                                                   render=True)
        session.current_image = out.image[0]
        if original:
            session.original_image = out.image[0]

    def _persist(self, session: EditSession):
        if self.snapshot_dir is None:
            return
        payload = {
            "format": SNAPSHOT_FORMAT,
            "id": session.id,
            "seed": session.seed,
            "history": [t.cpu() for t in session.history],
        }
        path = self.snapshot_dir / f"{session.id}.pt"
        tmp = path.with_name(path.name + ".tmp")
        torch.save(payload, tmp)
        tmp.replace(path)

    def _restore_snapshots(self):
        for path in sorted(self.snapshot_dir.glob("*.pt")):
            payload = torch.load(path, map_location="cpu",
                                 weights_only=False)
            if payload.get("format") != SNAPSHOT_FORMAT:
                continue
            session = EditSession(payload["id"], list(payload["history"]),
                                  payload["seed"])
            self._refresh_images(session, original=False)
            with torch.no_grad():
                out = self.pipeline.backend.synthesize(session.history[0],
                                                       render=True)
            session.original_image = out.image[0]
            self.sessions[session.id] = session

    # -- views -----------------------------------------------------------

    def feature_views(self, w: torch.Tensor) -> list[dict]:
        with torch.no_grad():
            values = self.pipeline.measure(w)[0]
        return self.feature_views_from_values(values)

    def feature_views_from_values(self, values: torch.Tensor) -> list[dict]:
        stats = self.pipeline.stats
        views = []
        for j, definition in enumerate(feature_catalog()):
            value = float(values[j])
            lo = float(stats.slider_lo[j])
            hi = float(stats.slider_hi[j])
            slider = (value - lo) / (hi - lo)
            slider = min(1.0, max(0.0, slider))
            views.append({"id": j, "name": definition.name, "value": value,
                          "slider": slider, "lo": lo, "hi": hi})
        return views

    def session_summary(self, session: EditSession,
                        views: list[dict] | None = None) -> dict:
        if views is None:
            views = self.feature_views(session.current)
        return {
            "id": session.id,
            "seed": session.seed,
            "history_depth": len(session.history),
            "features": views,
            "image_url": f"/sessions/{session.id}/image?kind=current",
        }

    # -- operations ------------------------------------------------------

    def apply_edit(self, session: EditSession, body: EditBody) -> dict:
        if not 0 <= body.feature < FEATURE_COUNT:
            raise ApiError(404, "unknown_feature",
                           f"feature must be in 0..{FEATURE_COUNT - 1}")
        if not np.isfinite(body.target):
            raise ApiError(400, "bad_target", "target must be finite")
        if not 1 <= body.rounds <= 10:
            raise ApiError(400, "bad_rounds", "rounds must be in 1..10")
        stats = self.pipeline.stats
        if body.unit == "slider":
            lo = float(stats.slider_lo[body.feature])
            hi = float(stats.slider_hi[body.feature])
            target = lo + float(body.target) * (hi - lo)
        else:
            target = float(body.target)
        with session.lock:
            try:
                result = self.pipeline.edit(session.current, body.feature,
                                            target, rounds=body.rounds)
            except NotReadyError as exc:
                raise ApiError(409, "editor_not_ready", str(exc)) from exc
            session.history.append(result.w_edit)
            self._refresh_images(session)
            self._persist(session)
            views = self.feature_views_from_values(result.after[0])
            measured = float(result.after[0, body.feature])
            response = {
                "session": self.session_summary(session, views),
                "feature": body.feature,
                "rounds": body.rounds,
                "target_normalized": target,
                "measured": measured,
                "delta": measured - target,
            }
            if body.include_latents:
                response["latents"] = {
                    "w": _tolist(result.w[0]),
                    "w_edit": _tolist(result.w_edit[0]),
                    "rounds": [
                        {"w": _tolist(w_r[0]), "direction": _tolist(s_r[0]),
                         "scale": float(k_r[0])}
                        for w_r, s_r, k_r in result.rounds
                    ],
                }
            return response

    def undo(self, session: EditSession) -> dict:
        with session.lock:
            if len(session.history) < 2:
                raise ApiError(409, "nothing_to_undo",
                               "session has no edits to undo")
            session.history.pop()
            self._refresh_images(session)
            self._persist(session)
            return self.session_summary(session)

    def image_png(self, session: EditSession, kind: str) -> bytes:
        with session.lock:
            if kind == "current":
                img = session.current_image
            elif kind == "original":
                img = session.original_image
            elif kind == "diff":
                img = (session.current_image - session.original_image).abs()
            else:
                raise ApiError(400, "bad_kind",
                               "kind must be current, original or diff")
            arr = img.detach().clamp(0.0, 1.0).mul(255.0).round()
            arr = arr.to(torch.uint8).numpy()
        if arr.ndim == 3 and arr.shape[0] == 1:
            arr = arr[0]
        buf = io.BytesIO()
        Image.fromarray(arr, mode="L").save(buf, format="PNG")
        return buf.getvalue()


def build_app(checkpoint: str | Path | None = None,
              pipeline: EditPipeline | None = None,
              snapshot_dir: str | Path | None = None) -> FastAPI:
    """Assemble the FastAPI app around a loaded pipeline or checkpoint."""
    if (pipeline is None) == (checkpoint is None):
        raise ValueError("provide exactly one of checkpoint or pipeline")
    if pipeline is None:
        pipeline = load_pipeline(checkpoint)
    service = EditService(pipeline, snapshot_dir=snapshot_dir)

    app = FastAPI(title="faceshape edit service")
    app.state.service = service
    app.add_middleware(CORSMiddleware, allow_origins=["*"],
                       allow_methods=["*"], allow_headers=["*"])

    @app.exception_handler(ApiError)
    async def api_error_handler(_request: Request, exc: ApiError):
        return JSONResponse(status_code=exc.status,
                            content={"error": {"code": exc.code,
                                               "message": exc.message}})

    @app.exception_handler(RequestValidationError)
    async def validation_handler(_request: Request,
                                 exc: RequestValidationError):
        return JSONResponse(status_code=422,
                            content={"error": {"code": "validation_error",
                                               "message": str(exc.errors())}})

    @app.exception_handler(Exception)
    async def failure_handler(_request: Request, exc: Exception):
        return JSONResponse(status_code=500,
                            content={"error": {"code": "editor_failure",
                                               "message": f"{type(exc).__name__}: {exc}"}})

    @app.get("/catalog")
    def catalog():
        stats = service.pipeline.stats
        descriptor = service.pipeline.backend.descriptor
        features = []
        for j, definition in enumerate(feature_catalog()):
            features.append({
                "id": j,
                "name": definition.name,
                "category": definition.category,
                "lo": float(stats.slider_lo[j]),
                "hi": float(stats.slider_hi[j]),
            })
        return {
            "features": features,
            "image": {"height": descriptor.height,
                      "width": descriptor.width},
            "n_styles": descriptor.n_styles,
            "style_dim": descriptor.style_dim,
            "trained_steps": int(service.pipeline.editor.trained_steps),
        }

    @app.post("/sessions", status_code=201)
    def create_session(body: CreateSessionBody):
        session = service.create_session(body.seed, body.latent)
        return self_summary_with_original(session)

    def self_summary_with_original(session: EditSession) -> dict:
        summary = service.session_summary(session)
        summary["original_image_url"] = (
            f"/sessions/{session.id}/image?kind=original")
        return summary

    @app.get("/sessions/{session_id}/features")
    def get_features(session_id: str):
        session = service.get_session(session_id)
        with session.lock:
            return service.session_summary(session)

    @app.post("/sessions/{session_id}/edits")
    def post_edit(session_id: str, body: EditBody):
        session = service.get_session(session_id)
        return service.apply_edit(session, body)

    @app.post("/sessions/{session_id}/undo")
    def post_undo(session_id: str):
        session = service.get_session(session_id)
        return service.undo(session)

    @app.get("/sessions/{session_id}/image")
    def get_image(session_id: str, kind: str = "current"):
        session = service.get_session(session_id)
        png = service.image_png(session, kind)
        etag = hashlib.sha256(png).hexdigest()
        return Response(content=png, media_type="image/png",
                        headers={"ETag": etag})

    return app


def run_service(checkpoint: str | Path, host: str = "127.0.0.1",
                port: int = 8787, snapshot_dir: str | Path | None = None):
    """Blocking entry point used by the command line."""
    import uvicorn

    app = build_app(checkpoint=checkpoint, snapshot_dir=snapshot_dir)
    uvicorn.run(app, host=host, port=port, log_level="info")
