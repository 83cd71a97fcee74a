"""HTTP/JSON facade over the guidance session workflow.

Sessions live in an in-memory LRU store (default capacity 64). Reads are
concurrent; mutations of one session are serialized by a per-session lock.
Models load once and are shared read-only across requests.
"""

from __future__ import annotations

import threading
from collections import OrderedDict
from pathlib import Path

import numpy as np
from fastapi import FastAPI, Request, Response
from fastapi.responses import JSONResponse
from fastapi.staticfiles import StaticFiles

from . import guidance as gd
from .decomposer import DecomposerModel
from .inpaint import InpainterModel
from .scenes import decode_png_bytes, encode_png_bytes

DEFAULT_CAPACITY = 64


class ApiError(Exception):
    def __init__(self, status: int, code: str, message: str):
        super().__init__(message)
        self.status = status
        self.code = code
        self.message = message


class SessionStore:
    """LRU map of session id -> (session, lock)."""

    def __init__(self, capacity: int = DEFAULT_CAPACITY):
        if capacity < 1:
            raise ValueError(f"capacity must be positive, got {capacity}")
        self.capacity = capacity
        self._lock = threading.Lock()
        self._items: OrderedDict[str, tuple[gd.Session, threading.Lock]] = OrderedDict()

    def put(self, session: gd.Session) -> None:
        with self._lock:
            self._items[session.id] = (session, threading.Lock())
            self._items.move_to_end(session.id)
            while len(self._items) > self.capacity:
                self._items.popitem(last=False)

    def get(self, session_id: str) -> tuple[gd.Session, threading.Lock]:
        with self._lock:
            if session_id not in self._items:
                raise ApiError(404, "session_not_found", f"no session {session_id}")
            self._items.move_to_end(session_id)
            return self._items[session_id]

    def __len__(self) -> int:
        with self._lock:
            return len(self._items)


def _png_response(image: np.ndarray) -> Response:
    return Response(content=encode_png_bytes(image), media_type="image/png")


def _object_json(session: gd.Session, object_id: int) -> dict:
    for obj in gd.session_to_json(session)["objects"]:
        if obj["id"] == object_id:
            return obj
    raise ApiError(404, "object_not_found", f"no object {object_id}")


def _get_object(session: gd.Session, object_id: int) -> None:
    try:
        session.object(object_id)
    except KeyError:
        raise ApiError(404, "object_not_found",
                       f"no object {object_id} in session {session.id}") from None


def create_app(engine: gd.Engine, capacity: int = DEFAULT_CAPACITY,
               frontend_dir: str | Path | None = None) -> FastAPI:
    app = FastAPI(title="declutter", docs_url=None, redoc_url=None)
    store = SessionStore(capacity)
    app.state.store = store
    app.state.engine = engine

    @app.exception_handler(ApiError)
    async def _api_error(_request: Request, exc: ApiError) -> JSONResponse:
        return JSONResponse(status_code=exc.status,
                            content={"code": exc.code, "message": exc.message})

    @app.get("/healthz")
    def healthz() -> dict:
        return {"status": "ok"}

    @app.post("/sessions", status_code=201)
    async def create_session(request: Request) -> dict:
        content_type = request.headers.get("content-type", "")
        if content_type.startswith("multipart/form-data"):
            form = await request.form()
            upload = next((v for v in form.values() if hasattr(v, "read")), None)
            if upload is None:
                raise ApiError(400, "malformed", "multipart body carries no file")
            body = await upload.read()
        else:
            body = await request.body()
        if not body:
            raise ApiError(400, "malformed", "empty request body")
        try:
            image = decode_png_bytes(body)
        except ValueError as e:
            raise ApiError(422, "not_an_image", str(e)) from None
        session = gd.analyze(engine, image)
        store.put(session)
        return gd.session_to_json(session, engine.margin_fraction)

    @app.get("/sessions/{session_id}")
    def get_session(session_id: str) -> dict:
        session, _lock = store.get(session_id)
        return gd.session_to_json(session, engine.margin_fraction)

    @app.post("/sessions/{session_id}/objects/{object_id}/flip")
    def flip_object(session_id: str, object_id: int) -> dict:
        session, lock = store.get(session_id)
        with lock:
            _get_object(session, object_id)
            gd.flip(session, object_id)
            return _object_json(session, object_id)

    @app.get("/sessions/{session_id}/objects/{object_id}/suggestions")
    def object_suggestions(session_id: str, object_id: int) -> dict:
        session, _lock = store.get(session_id)
        _get_object(session, object_id)
        return {"kind": gd.suggestion_kind(session, object_id, engine.margin_fraction),
                "suggestions": gd.suggest(session, object_id, engine.margin_fraction)}

    @app.post("/sessions/{session_id}/clean")
    async def clean_session(session_id: str, request: Request) -> dict:
        session, lock = store.get(session_id)
        try:
            payload = await request.json()
        except Exception:
            raise ApiError(400, "malformed", "body must be JSON") from None
        fidelity = payload.get("fidelity") if isinstance(payload, dict) else None
        if fidelity not in gd.FIDELITY_ITERS:
            raise ApiError(400, "malformed",
                           'fidelity must be "capture" or "high"')
        with lock:
            gd.clean(engine, session, fidelity)
        return {"preview_url": f"/sessions/{session_id}/preview/{fidelity}.png"}

    @app.get("/sessions/{session_id}/preview/{fidelity}.png")
    def get_preview(session_id: str, fidelity: str) -> Response:
        session, _lock = store.get(session_id)
        if fidelity not in gd.FIDELITY_ITERS:
            raise ApiError(400, "malformed",
                           'fidelity must be "capture" or "high"')
        if fidelity not in session.previews:
            raise ApiError(404, "preview_not_found",
                           f"no {fidelity} preview; call clean first")
        return _png_response(session.previews[fidelity])

    @app.get("/sessions/{session_id}/image.png")
    def get_image(session_id: str) -> Response:
        session, _lock = store.get(session_id)
        return _png_response(session.image)

    if frontend_dir is not None and Path(frontend_dir).is_dir():
        app.mount("/", StaticFiles(directory=str(frontend_dir), html=True), name="ui")

    return app


def default_frontend_dir() -> Path | None:
    """Built browser client, when the repository ships one."""
    candidate = Path(__file__).resolve().parents[2] / "frontend" / "dist"
    return candidate if candidate.is_dir() else None


def serve(decomposer_path: str | Path, inpainter_path: str | Path | None = None,
          host: str = "127.0.0.1", port: int = 8000,
          segmentation: str = "heuristic") -> None:
    import uvicorn

    engine = gd.Engine(
        decomposer=DecomposerModel.load(decomposer_path),
        inpainter=None if inpainter_path is None else InpainterModel.load(inpainter_path),
        segmentation=segmentation,
    )
    app = create_app(engine, frontend_dir=default_frontend_dir())
    uvicorn.run(app, host=host, port=port, log_level="warning")
