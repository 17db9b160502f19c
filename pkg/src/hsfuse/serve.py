"""HTTP prediction service over an immutable loaded model.

Endpoints:
    POST /api/predict   -> ranked suggestions + a server-assigned request id
    POST /api/feedback  -> append the reviewer's chosen HS6 to the feedback log
    GET  /api/health    -> model checksum and vocabulary size (503 before load)
    GET  /api/labels    -> full vocabulary with HS2/HS4 prefixes
plus static file serving for the review console UI.

The model is never mutated by request handling; the only shared mutable
state is the request-id window (bounded, last 10k) and the feedback log,
both guarded by locks so concurrent appends never lose lines.

Modality resolution per request: a numeric array under the modality's field
name is used as-is; a string is preprocessed and run through the modality's
configured encoder (hashing by default for the text modalities). A modality
that cannot be resolved answers 400 naming it.
"""

import hashlib
import json
import os
import threading
import time
from collections import deque
from dataclasses import dataclass, field
from http.server import BaseHTTPRequestHandler, ThreadingHTTPServer

import numpy as np

from .encoding import EncoderSpec, fetch_remote_embeddings, hash_encode
from .errors import HsfuseError, UsageError
from .fusion import ModalityVector
from .model import ModelConfig, ModelParams, predict_topk, serialize_checkpoint
from .textprep import FreqDict, preprocess_text

# canonical request fields for the standard modality names
FIELD_FOR_MODALITY = {"D": "description", "T": "title", "C_cat": "category", "I": "image"}
TEXT_MODALITIES = ("D", "T", "C_cat")
REQUEST_ID_WINDOW = 10_000


@dataclass
class ModelService:
    cfg: ModelConfig | None = None
    params: ModelParams | None = None
    vocab: list[str] = field(default_factory=list)
    encoders: dict[str, EncoderSpec] = field(default_factory=dict)
    freq_dict: FreqDict = field(default_factory=FreqDict.empty)
    feedback_log: str | None = None
    checksum: str = ""
    _ids: deque = field(default_factory=lambda: deque(maxlen=REQUEST_ID_WINDOW))
    _id_set: set = field(default_factory=set)
    _id_lock: threading.Lock = field(default_factory=threading.Lock)
    _log_lock: threading.Lock = field(default_factory=threading.Lock)
    _counter: int = 0

    @classmethod
    def from_model(cls, cfg, params, vocab, encoders=None, freq_dict=None, feedback_log=None):
        service = cls(
            cfg=cfg,
            params=params,
            vocab=list(vocab),
            encoders=dict(encoders or {}),
            freq_dict=freq_dict or FreqDict.empty(),
            feedback_log=feedback_log,
        )
        service.checksum = hashlib.sha256(serialize_checkpoint(params, cfg, service.vocab)).hexdigest()
        # hashing stand-ins for text modalities with no explicit encoder
        for name, dim in cfg.modalities:
            if name in TEXT_MODALITIES and name not in service.encoders:
                service.encoders[name] = EncoderSpec(kind="hash", modality=name, dim=dim, seed=cfg.seed)
        return service

    @property
    def loaded(self) -> bool:
        return self.cfg is not None and self.params is not None

    def _issue_id(self) -> str:
        with self._id_lock:
            self._counter += 1
            rid = f"req-{self._counter:08d}"
            if len(self._ids) == self._ids.maxlen:
                self._id_set.discard(self._ids[0])
            self._ids.append(rid)
            self._id_set.add(rid)
            return rid

    def _known_id(self, rid: str) -> bool:
        with self._id_lock:
            return rid in self._id_set

    def _resolve_modality(self, name: str, dim: int, body: dict) -> ModalityVector:
        key = FIELD_FOR_MODALITY.get(name, name)
        if key not in body or body[key] in (None, ""):
            raise UsageError(f"missing required modality {name!r} (field {key!r})")
        value = body[key]
        if isinstance(value, list):
            arr = np.asarray(value, dtype=np.float64)
            if arr.shape != (dim,):
                raise UsageError(f"modality {name!r} expects {dim} values, got {arr.shape}")
            return ModalityVector(name, arr)
        if not isinstance(value, str):
            raise UsageError(f"field {key!r} must be a string or an array of numbers")
        spec = self.encoders.get(name)
        if spec is None:
            raise UsageError(f"modality {name!r} has no encoder; send precomputed values")
        processed = preprocess_text(value, self.freq_dict) if name in TEXT_MODALITIES else value
        if spec.kind == "hash":
            return ModalityVector(name, hash_encode(processed.split(), dim, spec.seed))
        if spec.kind == "remote":
            table = fetch_remote_embeddings(spec.endpoint, name, [("req", processed)], dim)
            return ModalityVector(name, table.vectors["req"])
        raise UsageError(f"modality {name!r} is file-backed; send precomputed values")

    def predict(self, body: dict) -> tuple[int, dict]:
        if not self.loaded:
            return 503, {"error": "model not loaded"}
        k = body.get("k", 5)
        if not isinstance(k, int) or k < 1:
            return 400, {"error": f"k must be a positive integer, got {k!r}"}
        try:
            sample = [
                self._resolve_modality(name, dim, body) for name, dim in self.cfg.modalities
            ]
            ranked = predict_topk(self.cfg, self.params, sample, k, self.vocab)
        except UsageError as exc:
            return 400, {"error": str(exc)}
        rid = self._issue_id()
        suggestions = [
            {"rank": i + 1, "hs6": hs6, "hs4": hs6[:4], "hs2": hs6[:2], "prob": prob}
            for i, (hs6, prob) in enumerate(ranked)
        ]
        return 200, {"request_id": rid, "model_checksum": self.checksum, "suggestions": suggestions}

    def feedback(self, body: dict) -> tuple[int, dict]:
        if not self.loaded:
            return 503, {"error": "model not loaded"}
        rid = body.get("request_id")
        hs6 = body.get("hs6")
        if not isinstance(rid, str) or not isinstance(hs6, str):
            return 400, {"error": "feedback needs string request_id and hs6"}
        if not self._known_id(rid):
            return 404, {"error": f"unknown or expired request_id {rid!r}"}
        if hs6 not in self.vocab:
            return 400, {"error": f"hs6 {hs6!r} is not in the model vocabulary"}
        stamp = time.strftime("%Y-%m-%dT%H:%M:%SZ", time.gmtime())
        line = f"{stamp}\t{rid}\t{hs6}\n"
        if self.feedback_log is not None:
            with self._log_lock:
                with open(self.feedback_log, "a", encoding="utf-8") as fh:
                    fh.write(line)
        return 200, {"ok": True, "request_id": rid, "hs6": hs6}

    def health(self) -> tuple[int, dict]:
        if not self.loaded:
            return 503, {"status": "unavailable"}
        return 200, {
            "status": "ok",
            "model_checksum": self.checksum,
            "vocab_size": len(self.vocab),
        }

    def labels(self) -> tuple[int, dict]:
        if not self.loaded:
            return 503, {"error": "model not loaded"}
        return 200, {
            "labels": [
                {"index": i, "hs6": code, "hs4": code[:4], "hs2": code[:2]}
                for i, code in enumerate(self.vocab)
            ]
        }


_CONTENT_TYPES = {
    ".html": "text/html; charset=utf-8",
    ".js": "application/javascript",
    ".mjs": "application/javascript",
    ".css": "text/css",
    ".json": "application/json",
    ".svg": "image/svg+xml",
    ".png": "image/png",
    ".ico": "image/x-icon",
    ".map": "application/json",
}


def make_handler(service: ModelService, static_dir: str | None, quiet: bool = True):
    class Handler(BaseHTTPRequestHandler):
        protocol_version = "HTTP/1.1"

        def log_message(self, fmt, *args):
            if not quiet:
                BaseHTTPRequestHandler.log_message(self, fmt, *args)

        def _send_json(self, status: int, payload: dict):
            body = json.dumps(payload).encode("utf-8")
            self.send_response(status)
            self.send_header("Content-Type", "application/json")
            self.send_header("Content-Length", str(len(body)))
            self.end_headers()
            self.wfile.write(body)

        def _read_json(self) -> dict | None:
            try:
                length = int(self.headers.get("Content-Length", "0"))
                raw = self.rfile.read(length)
                parsed = json.loads(raw.decode("utf-8"))
                return parsed if isinstance(parsed, dict) else None
            except (ValueError, json.JSONDecodeError):
                return None

        def do_POST(self):
            if self.path == "/api/predict":
                body = self._read_json()
                if body is None:
                    self._send_json(400, {"error": "malformed JSON body"})
                    return
                try:
                    self._send_json(*service.predict(body))
                except HsfuseError as exc:
                    self._send_json(500, {"error": str(exc)})
                return
            if self.path == "/api/feedback":
                body = self._read_json()
                if body is None:
                    self._send_json(400, {"error": "malformed JSON body"})
                    return
                self._send_json(*service.feedback(body))
                return
            self._send_json(404, {"error": f"no such endpoint {self.path!r}"})

        def do_GET(self):
            if self.path == "/api/health":
                self._send_json(*service.health())
                return
            if self.path == "/api/labels":
                self._send_json(*service.labels())
                return
            if self.path.startswith("/api/"):
                self._send_json(404, {"error": f"no such endpoint {self.path!r}"})
                return
            self._serve_static()

        def _serve_static(self):
            if static_dir is None:
                self._send_json(404, {"error": "no static directory configured"})
                return
            rel = self.path.lstrip("/") or "index.html"
            rel = rel.split("?", 1)[0]
            root = os.path.realpath(static_dir)
            target = os.path.realpath(os.path.join(root, rel))
            if not target.startswith(root + os.sep) and target != root:
                self._send_json(404, {"error": "not found"})
                return
            if os.path.isdir(target):
                target = os.path.join(target, "index.html")
            if not os.path.isfile(target):
                self._send_json(404, {"error": "not found"})
                return
            ext = os.path.splitext(target)[1].lower()
            ctype = _CONTENT_TYPES.get(ext, "application/octet-stream")
            with open(target, "rb") as fh:
                body = fh.read()
            self.send_response(200)
            self.send_header("Content-Type", ctype)
            self.send_header("Content-Length", str(len(body)))
            self.end_headers()
            self.wfile.write(body)

    return Handler


class _Server(ThreadingHTTPServer):
    daemon_threads = True
    # default backlog of 5 drops connections under concurrent request bursts
    request_queue_size = 128


def make_server(
    service: ModelService,
    host: str = "127.0.0.1",
    port: int = 0,
    static_dir: str | None = None,
    quiet: bool = True,
) -> ThreadingHTTPServer:
    handler = make_handler(service, static_dir, quiet=quiet)
    return _Server((host, port), handler)
