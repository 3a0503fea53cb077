"""The HTTP application: three inference endpoints plus a health check.

Wire protocol (JSON over HTTP):

- ``POST /generate``  {"prompt": str, "max_new_tokens": int, "seed": int|null} -> {"text": str}
- ``POST /classify``  {"text": str} -> {"label": 0|1, "score": float}
- ``POST /embed``     {"texts": [str, ...]} -> {"vectors": [[float, ...], ...]}
- ``GET  /healthz``   -> {"roles": [...], "limits": {...}}

Every non-2xx response carries ``{"error": {"kind": str, "message": str}}``.
Unconfigured roles answer 501. Model access is serialized per handle, so
responses are independent of request interleaving.
"""

from __future__ import annotations

import threading
import time

import uvicorn
from fastapi import FastAPI, Request
from fastapi.exceptions import RequestValidationError
from fastapi.responses import JSONResponse
from pydantic import BaseModel, ConfigDict, Field
from starlette.exceptions import HTTPException as StarletteHTTPException

from .config import ROLES, ServerConfig
from .models import ModelHandle, load_all


class ServiceError(Exception):
    """An error the service reports to the client with a typed envelope."""

    def __init__(self, status: int, kind: str, message: str):
        super().__init__(message)
        self.status = status
        self.kind = kind
        self.message = message


def _envelope(status: int, kind: str, message: str) -> JSONResponse:
    return JSONResponse(
        status_code=status, content={"error": {"kind": kind, "message": message}}
    )


class GenerateRequest(BaseModel):
    model_config = ConfigDict(extra="forbid")
    prompt: str
    max_new_tokens: int = Field(ge=1)
    seed: int | None = None


class ClassifyRequest(BaseModel):
    model_config = ConfigDict(extra="forbid")
    text: str


class EmbedRequest(BaseModel):
    model_config = ConfigDict(extra="forbid")
    texts: list[str]


def build_app(cfg: ServerConfig, handles: dict[str, ModelHandle] | None = None) -> FastAPI:
    """Assemble the service. Handles may be passed pre-loaded (tests, CLI);
    otherwise they are loaded from the config's checkpoint paths."""
    if handles is None:
        handles = load_all(cfg)
    app = FastAPI(title="cotserve", docs_url=None, redoc_url=None, openapi_url=None)

    def require(role: str) -> ModelHandle:
        handle = handles.get(role)
        if handle is None:
            raise ServiceError(
                501, "role_not_configured", f"no model is configured for role '{role}'"
            )
        return handle

    @app.exception_handler(ServiceError)
    async def service_error(request: Request, exc: ServiceError):
        return _envelope(exc.status, exc.kind, exc.message)

    @app.exception_handler(RequestValidationError)
    async def invalid_request(request: Request, exc: RequestValidationError):
        first = exc.errors()[0] if exc.errors() else {}
        where = ".".join(str(part) for part in first.get("loc", ()) if part != "body")
        message = first.get("msg", "invalid request body")
        return _envelope(400, "invalid_request", f"{where}: {message}" if where else message)

    @app.exception_handler(StarletteHTTPException)
    async def http_error(request: Request, exc: StarletteHTTPException):
        kind = {404: "not_found", 405: "method_not_allowed"}.get(exc.status_code, "http_error")
        return _envelope(exc.status_code, kind, str(exc.detail))

    @app.exception_handler(Exception)
    async def internal_error(request: Request, exc: Exception):
        return _envelope(500, "internal", f"{type(exc).__name__}: {exc}")

    @app.get("/healthz")
    def healthz():
        return {
            "roles": [role for role in ROLES if role in handles],
            "limits": {
                "max_new_tokens": cfg.max_new_tokens_cap,
                "max_batch": cfg.max_batch,
            },
        }

    @app.post("/generate")
    def generate(body: GenerateRequest):
        handle = require("generate")
        budget = min(body.max_new_tokens, cfg.max_new_tokens_cap)
        with handle.lock:
            text = handle.model.generate(body.prompt, budget)
        return {"text": text}

    @app.post("/classify")
    def classify(body: ClassifyRequest):
        handle = require("classify")
        with handle.lock:
            label, score = handle.model.classify(body.text)
        return {"label": label, "score": score}

    @app.post("/embed")
    def embed(body: EmbedRequest):
        handle = require("embed")
        if not body.texts:
            raise ServiceError(400, "empty_batch", "texts must contain at least one entry")
        if len(body.texts) > cfg.max_batch:
            raise ServiceError(
                400,
                "batch_too_large",
                f"batch of {len(body.texts)} exceeds max_batch={cfg.max_batch}",
            )
        with handle.lock:
            vectors = handle.model.embed(body.texts)
        return {"vectors": vectors}

    return app


class BodyRecorder:
    """Transparent ASGI wrapper that logs (method, path, raw body) for every
    HTTP request. Used to record and verify wire transcripts; does not
    interfere with body consumption downstream."""

    def __init__(self, asgi_app):
        self.app = asgi_app
        self.received: list[tuple[str, str, bytes]] = []

    async def __call__(self, scope, receive, send):
        if scope["type"] != "http":
            await self.app(scope, receive, send)
            return
        chunks: list[bytes] = []

        async def recording_receive():
            message = await receive()
            if message["type"] == "http.request":
                chunks.append(message.get("body", b""))
                if not message.get("more_body", False):
                    self.received.append(
                        (scope["method"], scope["path"], b"".join(chunks))
                    )
            return message

        await self.app(scope, recording_receive, send)


class RunningServer:
    """A uvicorn server running in a daemon thread, for embedding and tests."""

    def __init__(self, server: uvicorn.Server, thread: threading.Thread, base_url: str):
        self.server = server
        self.thread = thread
        self.base_url = base_url

    def stop(self) -> None:
        self.server.should_exit = True
        self.thread.join(timeout=10)


def serve_in_thread(asgi_app, host: str = "127.0.0.1", port: int = 0) -> RunningServer:
    """Start the app on a background thread and return its base URL.
    Port 0 binds an OS-assigned free port."""
    config = uvicorn.Config(asgi_app, host=host, port=port, log_level="warning")
    server = uvicorn.Server(config)
    thread = threading.Thread(target=server.run, daemon=True)
    thread.start()
    deadline = time.monotonic() + 10
    while not server.started:
        if time.monotonic() > deadline or not thread.is_alive():
            raise RuntimeError("server failed to start within 10s")
        time.sleep(0.01)
    bound_port = server.servers[0].sockets[0].getsockname()[1]
    return RunningServer(server, thread, f"http://{host}:{bound_port}")
