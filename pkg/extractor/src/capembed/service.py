"""HTTP embedding service.

Implements the wire protocol consumed by the evaluation core:

    POST /v1/r2c        {system, user, assistant_prefix, digest}
    POST /v1/i2c/text   {caption}
    POST /v1/i2c/image  {image_path | image_b64}
    GET  /v1/health

Requests are processed one at a time per process (a lock serializes
inference); when more than `max_queue` requests are waiting the service
answers 503 so callers can back off. Responses for identical requests
are identical.
"""

from __future__ import annotations

import base64
import io
import threading
from contextlib import contextmanager
from typing import Optional

from fastapi import FastAPI, HTTPException
from PIL import Image
from pydantic import BaseModel

from .backbones import AlignmentBackbone, LanguageBackbone, open_image
from .config import ExtractorConfig, ExtractorError


class R2CRequest(BaseModel):
    system: str
    user: str
    assistant_prefix: str
    digest: int


class TextRequest(BaseModel):
    caption: str


class ImageRequest(BaseModel):
    image_path: Optional[str] = None
    image_b64: Optional[str] = None


class _Gate:
    """Serialized inference with a bounded waiting line."""

    def __init__(self, limit: int):
        self.limit = limit
        self.pending = 0
        self.state_lock = threading.Lock()
        self.inference_lock = threading.Lock()

    @contextmanager
    def slot(self):
        with self.state_lock:
            if self.pending >= self.limit:
                raise HTTPException(status_code=503, detail="queue full")
            self.pending += 1
        try:
            with self.inference_lock:
                yield
        finally:
            with self.state_lock:
                self.pending -= 1


def create_app(config: ExtractorConfig) -> FastAPI:
    app = FastAPI(title="caption embedding service")
    language = LanguageBackbone(config)
    alignment = AlignmentBackbone(config)
    gate = _Gate(config.max_queue)

    @app.get("/v1/health")
    def health():
        return {
            "status": "ok",
            "r2c_dim": language.hidden_size,
            "i2c_dim": alignment.dim,
        }

    @app.post("/v1/r2c")
    def r2c(request: R2CRequest):
        with gate.slot():
            text = language.render(
                request.system, request.user, request.assistant_prefix
            )
            n = language.token_count(text)
            if n > language.max_length:
                raise HTTPException(
                    status_code=400,
                    detail=f"prompt has {n} tokens, context is {language.max_length}",
                )
            try:
                state = language.pool_batch([text])[0]
            except Exception as e:  # keep the service up on inference errors
                raise HTTPException(status_code=500, detail=str(e)) from None
        return {
            "mean": state.mean.tolist(),
            "last": state.last.tolist(),
            "dim": language.hidden_size,
            "seq_len": state.seq_len,
            "digest": request.digest,
        }

    @app.post("/v1/i2c/text")
    def i2c_text(request: TextRequest):
        with gate.slot():
            try:
                vecs, _ = alignment.embed_texts([request.caption])
            except Exception as e:
                raise HTTPException(status_code=500, detail=str(e)) from None
        return {"vector": vecs[0].tolist(), "dim": alignment.dim, "normalized": True}

    @app.post("/v1/i2c/image")
    def i2c_image(request: ImageRequest):
        if (request.image_path is None) == (request.image_b64 is None):
            raise HTTPException(
                status_code=400,
                detail="provide exactly one of image_path or image_b64",
            )
        with gate.slot():
            try:
                if request.image_b64 is not None:
                    try:
                        raw = base64.b64decode(request.image_b64, validate=True)
                        image = Image.open(io.BytesIO(raw)).convert("RGB")
                    except Exception as e:
                        raise HTTPException(
                            status_code=400, detail=f"bad image payload: {e}"
                        ) from None
                else:
                    try:
                        image = open_image(request.image_path)
                    except ExtractorError as e:
                        raise HTTPException(status_code=400, detail=str(e)) from None
                vecs = alignment.embed_images([image])
            except HTTPException:
                raise
            except Exception as e:
                raise HTTPException(status_code=500, detail=str(e)) from None
        return {"vector": vecs[0].tolist(), "dim": alignment.dim, "normalized": True}

    return app


def serve(config: ExtractorConfig, host: str = "127.0.0.1", port: int = 8752) -> None:
    import uvicorn

    uvicorn.run(create_app(config), host=host, port=port, log_level="info")
