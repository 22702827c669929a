"""HTTP clients for remote generator, embedder, LLM, and judge services.

All calls retry with exponential backoff on transport errors and 5xx
responses, carry an idempotency key derived from the request content, and
can mirror request/response pairs to an audit log. API keys come from the
``TRIPLETGEN_API_KEY`` environment variable.
"""

from __future__ import annotations

import base64
import hashlib
import json
import os
import time
import urllib.error
import urllib.request

import numpy as np

from .audio import AudioClip, decode_wav, encode_wav
from .embeddings import Embedder
from .errors import BackendError
from .prompts import JudgeClient, LlmClient


def _request_hash(payload: bytes) -> str:
    return hashlib.sha256(payload).hexdigest()


class HttpJsonClient:
    """Minimal JSON-over-HTTP transport with retries and audit logging."""

    def __init__(self, base_url: str, timeout: float = 30.0, retries: int = 3,
                 backoff: float = 0.5, audit_log=None):
        self.base_url = base_url.rstrip("/")
        self.timeout = timeout
        self.retries = retries
        self.backoff = backoff
        self.audit_log = audit_log

    def _headers(self, content_type: str, idempotency_key: str) -> dict:
        headers = {"Content-Type": content_type, "Idempotency-Key": idempotency_key}
        api_key = os.environ.get("TRIPLETGEN_API_KEY")
        if api_key:
            headers["Authorization"] = f"Bearer {api_key}"
        return headers

    def _audit(self, route: str, request_body: bytes, response_body: bytes) -> None:
        if self.audit_log is None:
            return
        entry = {
            "at": time.time(),
            "route": route,
            "request_sha256": _request_hash(request_body),
            "response_bytes": len(response_body),
        }
        with open(self.audit_log, "a", encoding="utf-8") as f:
            f.write(json.dumps(entry) + "\n")

    def post(self, route: str, body: bytes, content_type: str = "application/json") -> bytes:
        url = f"{self.base_url}{route}"
        key = _request_hash(body)
        last_error: Exception | None = None
        for attempt in range(self.retries):
            if attempt:
                time.sleep(self.backoff * 2 ** (attempt - 1))
            request = urllib.request.Request(
                url, data=body, headers=self._headers(content_type, key), method="POST"
            )
            try:
                with urllib.request.urlopen(request, timeout=self.timeout) as response:
                    payload = response.read()
                self._audit(route, body, payload)
                return payload
            except urllib.error.HTTPError as err:
                if err.code < 500:
                    raise BackendError(f"{url}: HTTP {err.code} {err.reason}") from err
                last_error = err
            except (urllib.error.URLError, OSError, TimeoutError) as err:
                last_error = err
        raise BackendError(f"{url}: no response in {self.retries} attempts") from last_error

    def post_json(self, route: str, payload: dict) -> dict:
        body = json.dumps(payload, sort_keys=True).encode("utf-8")
        return json.loads(self.post(route, body))


class RemoteGeneratorBackend:
    """Generator service client.

    Wire format: ``/generate`` returns WAV bytes; ``/p2p-edit`` returns JSON
    with base64 ``input_wav``/``output_wav``; ``/zeta-edit`` takes base64
    input audio and returns WAV bytes.
    """

    def __init__(self, base_url: str, **transport_kwargs):
        self._http = HttpJsonClient(base_url, **transport_kwargs)
        self.identity = base_url

    def generate(self, caption, negative_caption, seed, cfg, steps) -> AudioClip:
        body = json.dumps({
            "caption": caption, "negative_caption": negative_caption,
            "seed": int(seed), "cfg": float(cfg), "steps": int(steps),
        }, sort_keys=True).encode("utf-8")
        return decode_wav(self._http.post("/generate", body))

    def p2p_edit(self, in_caption, out_caption, negatives, seed, cfg, steps, params):
        response = self._http.post_json("/p2p-edit", {
            "input_caption": in_caption, "output_caption": out_caption,
            "negative_input": negatives[0], "negative_output": negatives[1],
            "seed": int(seed), "cfg": float(cfg), "steps": int(steps),
            "params": params.as_dict(),
        })
        return (
            decode_wav(base64.b64decode(response["input_wav"])),
            decode_wav(base64.b64decode(response["output_wav"])),
        )

    def zeta_edit(self, in_audio, in_caption, out_caption, negative_out, steps, params):
        body = json.dumps({
            "input_wav": base64.b64encode(encode_wav(in_audio)).decode("ascii"),
            "input_caption": in_caption, "output_caption": out_caption,
            "negative_output": negative_out, "steps": int(steps),
            "params": params.as_dict(),
        }, sort_keys=True).encode("utf-8")
        return decode_wav(self._http.post("/zeta-edit", body))


class RemoteEmbedder(Embedder):
    """Embedding service client; ``identity`` is recorded in manifests."""

    def __init__(self, base_url: str, dimension: int, **transport_kwargs):
        self._http = HttpJsonClient(base_url, **transport_kwargs)
        self.dimension = dimension
        self.identity = base_url

    def _vector(self, response: dict) -> np.ndarray:
        vector = np.asarray(response["vector"], dtype=np.float64)
        if vector.shape != (self.dimension,):
            raise BackendError(
                f"embedder returned dimension {vector.shape}, expected ({self.dimension},)"
            )
        return vector

    def embed_audio(self, clip: AudioClip) -> np.ndarray:
        payload = self._http.post("/embed-audio", encode_wav(clip), content_type="audio/wav")
        return self._vector(json.loads(payload))

    def embed_text(self, caption: str) -> np.ndarray:
        return self._vector(self._http.post_json("/embed-text", {"text": caption}))


class RemoteLlmClient(LlmClient):
    def __init__(self, base_url: str, model: str = "remote", **transport_kwargs):
        self._http = HttpJsonClient(base_url, **transport_kwargs)
        self.model = model

    def complete(self, task: str, payload: dict) -> dict:
        return self._http.post_json("/complete", {"task": task, "payload": payload,
                                                  "model": self.model})


class RemoteJudgeClient(JudgeClient):
    def __init__(self, base_url: str, **transport_kwargs):
        self._http = HttpJsonClient(base_url, **transport_kwargs)
        self.identity = base_url

    def score(self, clip: AudioClip, caption: str) -> int:
        response = self._http.post_json("/judge", {
            "caption": caption,
            "audio_wav": base64.b64encode(encode_wav(clip)).decode("ascii"),
        })
        score = int(response["score"])
        if not 1 <= score <= 10:
            raise BackendError(f"judge returned out-of-range score {score}")
        return score
