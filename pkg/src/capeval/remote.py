"""HTTP client for the embedding service wire protocol.

Endpoints (JSON bodies):
    POST /v1/r2c        {system, user, assistant_prefix, digest}
                        -> {mean, last, dim, seq_len, digest}
    POST /v1/i2c/text   {caption} -> {vector, dim, normalized}
    POST /v1/i2c/image  {image_path | image_b64} -> {vector, dim, normalized}
    GET  /v1/health     -> {status: "ok", r2c_dim, i2c_dim}

Transport failures are retried with exponential backoff up to the
configured limit; malformed or inconsistent responses are protocol errors
and never retried.
"""

from __future__ import annotations

import base64
import time
from dataclasses import dataclass
from pathlib import Path
from typing import Optional

import requests

from .errors import DimensionMismatchError, ProtocolError, TransportError, ValidationError
from .prompts import RenderedPrompt, prompt_digest
from .store import R2CRecord, VecKind, VecRecord


@dataclass(frozen=True)
class ClientConfig:
    endpoint: str
    retries: int = 3
    backoff_s: float = 0.25
    timeout_s: float = 60.0
    expect_r2c_dim: Optional[int] = None
    expect_i2c_dim: Optional[int] = None


class EmbeddingClient:
    def __init__(self, config: ClientConfig, session: Optional[requests.Session] = None):
        self.config = config
        self.base = config.endpoint.rstrip("/")
        self.session = session or requests.Session()

    def _request(self, method: str, path: str, payload: Optional[dict]) -> dict:
        url = f"{self.base}{path}"
        last_exc: Optional[Exception] = None
        for attempt in range(self.config.retries + 1):
            try:
                resp = self.session.request(
                    method, url, json=payload, timeout=self.config.timeout_s
                )
            except requests.RequestException as e:
                last_exc = e
                if attempt < self.config.retries:
                    time.sleep(self.config.backoff_s * (2**attempt))
                continue
            if resp.status_code >= 500:
                # Server-side failure: retryable like a transport fault.
                last_exc = TransportError(
                    f"{url} returned {resp.status_code}: {resp.text[:200]}"
                )
                if attempt < self.config.retries:
                    time.sleep(self.config.backoff_s * (2**attempt))
                continue
            if resp.status_code >= 400:
                raise ProtocolError(
                    f"{url} rejected the request ({resp.status_code}): "
                    f"{resp.text[:200]}"
                )
            try:
                body = resp.json()
            except ValueError:
                raise ProtocolError(f"{url} returned non-JSON body") from None
            if not isinstance(body, dict):
                raise ProtocolError(f"{url} returned a non-object body")
            return body
        raise TransportError(
            f"{url} unreachable after {self.config.retries + 1} attempts: {last_exc}"
        )

    def health(self) -> dict:
        body = self._request("GET", "/v1/health", None)
        if body.get("status") != "ok":
            raise ProtocolError(f"service unhealthy: {body!r}")
        return body

    def fetch_r2c(self, prompt: RenderedPrompt) -> R2CRecord:
        digest = prompt_digest(prompt)
        body = self._request(
            "POST",
            "/v1/r2c",
            {
                "system": prompt.system,
                "user": prompt.user,
                "assistant_prefix": prompt.assistant_prefix,
                "digest": digest,
            },
        )
        for key in ("mean", "last", "dim", "seq_len", "digest"):
            if key not in body:
                raise ProtocolError(f"/v1/r2c response missing {key!r}")
        if body["digest"] != digest:
            raise ProtocolError(
                f"/v1/r2c digest mismatch: sent {digest}, got {body['digest']}"
            )
        try:
            record = R2CRecord(
                sample_id=prompt.sample_id,
                perspective=prompt.perspective,
                mean_vec=body["mean"],
                last_vec=body["last"],
                seq_len=int(body["seq_len"]),
                prompt_digest=digest,
            )
        except ValidationError as e:
            raise ProtocolError(f"/v1/r2c returned an invalid record: {e}") from None
        if record.dim != int(body["dim"]):
            raise ProtocolError("/v1/r2c dim field disagrees with vector length")
        expect = self.config.expect_r2c_dim
        if expect is not None and record.dim != expect:
            raise DimensionMismatchError(
                f"service r2c dim {record.dim} != configured {expect}"
            )
        return record

    def _fetch_vec(self, path: str, payload: dict, sample_id: str, kind: VecKind) -> VecRecord:
        body = self._request("POST", path, payload)
        for key in ("vector", "dim", "normalized"):
            if key not in body:
                raise ProtocolError(f"{path} response missing {key!r}")
        try:
            record = VecRecord(
                sample_id=sample_id,
                kind=kind,
                vec=body["vector"],
                normalized=bool(body["normalized"]),
            )
        except ValidationError as e:
            raise ProtocolError(f"{path} returned an invalid record: {e}") from None
        if record.dim != int(body["dim"]):
            raise ProtocolError(f"{path} dim field disagrees with vector length")
        expect = self.config.expect_i2c_dim
        if expect is not None and record.dim != expect:
            raise DimensionMismatchError(
                f"service i2c dim {record.dim} != configured {expect}"
            )
        return record

    def fetch_i2c_text(self, sample_id: str, caption: str) -> VecRecord:
        return self._fetch_vec(
            "/v1/i2c/text", {"caption": caption}, sample_id, VecKind.CANDIDATE_TEXT
        )

    def fetch_i2c_image(self, sample_id: str, image_ref: str) -> VecRecord:
        """Send the image inline when it is readable locally, else by path."""
        path = Path(image_ref)
        if path.is_file():
            payload = {"image_b64": base64.b64encode(path.read_bytes()).decode("ascii")}
        else:
            payload = {"image_path": image_ref}
        return self._fetch_vec("/v1/i2c/image", payload, sample_id, VecKind.IMAGE)
