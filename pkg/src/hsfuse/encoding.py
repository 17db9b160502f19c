"""Embedding providers behind one seam: file tables, a deterministic hashing
text encoder, and a client for an out-of-process embedding service.

The hashing encoder is the offline stand-in for a pretrained sentence
encoder: each token lands in a signed bucket chosen by a 64-bit FNV-1a hash
of (seed, token), and the accumulated bag is L2-normalized. It is bit-stable
across platforms and languages, which is all the pipeline tests need.

The remote protocol is a single POST /embed per batch of at most 256 items:
request {"modality": ..., "items": [{"id", "text"}, ...]}, response
{"dim": d, "vectors": [{"id", "values"}, ...]}. Batches may run on up to 4
threads; assembly is id-keyed so response order never matters.
"""

import json
import struct
import time
import urllib.error
import urllib.request
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass

import numpy as np

from .errors import ConfigError, ContractError, TransportError, UsageError
from .data import EmbeddingTable

_FNV_OFFSET = 0xCBF29CE484222325
_FNV_PRIME = 0x100000001B3
_MASK64 = 0xFFFFFFFFFFFFFFFF

BATCH_LIMIT = 256
MAX_WORKERS = 4


@dataclass(frozen=True)
class EncoderSpec:
    """Where a modality's vectors come from: a file, a hash seed, or a URL."""

    kind: str  # file | hash | remote
    modality: str
    dim: int
    path: str | None = None
    seed: int | None = None
    endpoint: str | None = None

    def __post_init__(self):
        if self.kind not in ("file", "hash", "remote"):
            raise ConfigError(f"unknown encoder kind {self.kind!r}")
        if self.dim < 1:
            raise ConfigError(f"encoder dim must be >= 1, got {self.dim}")
        sources = [self.path is not None, self.seed is not None, self.endpoint is not None]
        if sum(sources) != 1:
            raise ConfigError("exactly one of path/seed/endpoint must be set")
        wanted = {"file": self.path, "hash": self.seed, "remote": self.endpoint}[self.kind]
        if wanted is None:
            raise ConfigError(f"{self.kind} encoder is missing its source")


def fnv1a64(data: bytes) -> int:
    """64-bit FNV-1a over raw bytes."""
    h = _FNV_OFFSET
    for b in data:
        h ^= b
        h = (h * _FNV_PRIME) & _MASK64
    return h


def token_hash(token: str, seed: int) -> int:
    """Hash of (seed, token): the seed is prepended as 8 big-endian bytes."""
    if not 0 <= seed < 2**64:
        raise UsageError(f"seed must fit in 64 bits, got {seed}")
    return fnv1a64(struct.pack(">Q", seed) + token.encode("utf-8"))


def hash_encode(tokens: list[str], dim: int, seed: int = 0) -> np.ndarray:
    """Signed bag-of-words in `dim` buckets, L2-normalized unless all-zero."""
    if dim < 1:
        raise UsageError(f"dim must be >= 1, got {dim}")
    vec = np.zeros(dim)
    for token in tokens:
        h = token_hash(token, seed)
        sign = -1.0 if (h >> 63) & 1 else 1.0
        vec[h % dim] += sign
    norm = float(np.linalg.norm(vec))
    if norm > 0.0:
        vec /= norm
    return vec


def _post_json(url: str, payload: dict, timeout: float) -> dict:
    body = json.dumps(payload).encode("utf-8")
    req = urllib.request.Request(
        url, data=body, headers={"Content-Type": "application/json"}, method="POST"
    )
    try:
        with urllib.request.urlopen(req, timeout=timeout) as resp:
            if resp.status != 200:
                raise TransportError(f"{url} answered {resp.status}")
            return json.loads(resp.read().decode("utf-8"))
    except urllib.error.HTTPError as exc:
        raise TransportError(f"{url} answered {exc.code}") from exc
    except (urllib.error.URLError, TimeoutError, OSError) as exc:
        raise TransportError(f"{url} unreachable: {exc}") from exc
    except json.JSONDecodeError as exc:
        raise TransportError(f"{url} sent a non-JSON body: {exc}") from exc


def _post_with_retries(url, payload, timeout, attempts, backoff, sleep):
    delay = backoff
    for attempt in range(attempts):
        try:
            return _post_json(url, payload, timeout)
        except TransportError:
            if attempt == attempts - 1:
                raise
            sleep(delay)
            delay *= 2


def fetch_remote_embeddings(
    endpoint: str,
    modality: str,
    items: list[tuple[str, str]],
    expected_dim: int,
    timeout: float = 10.0,
    attempts: int = 3,
    backoff: float = 1.0,
    sleep=time.sleep,
) -> EmbeddingTable:
    """Embed (id, payload) items via the remote service; never drops items.

    Raises TransportError after `attempts` failed tries per batch (backoff
    doubling from `backoff` seconds), ContractError when the response shape
    or dimensionality breaks the protocol.
    """
    ids = [rid for rid, _ in items]
    if len(set(ids)) != len(ids):
        raise UsageError("duplicate ids in the embedding request")
    if not items:
        return EmbeddingTable(modality=modality, dim=expected_dim, vectors={})
    batches = [items[i : i + BATCH_LIMIT] for i in range(0, len(items), BATCH_LIMIT)]
    url = endpoint.rstrip("/") + "/embed"

    def fetch_batch(batch):
        payload = {"modality": modality, "items": [{"id": rid, "text": text} for rid, text in batch]}
        reply = _post_with_retries(url, payload, timeout, attempts, backoff, sleep)
        if not isinstance(reply, dict) or "dim" not in reply or "vectors" not in reply:
            raise ContractError(f"{url}: response missing dim/vectors")
        if int(reply["dim"]) != expected_dim:
            raise ContractError(
                f"{url}: service dim {reply['dim']} != expected {expected_dim} for {modality!r}"
            )
        got = {}
        for entry in reply["vectors"]:
            rid = entry.get("id")
            values = entry.get("values")
            if rid is None or values is None:
                raise ContractError(f"{url}: vector entry missing id or values")
            vec = np.asarray(values, dtype=np.float64)
            if vec.shape != (expected_dim,):
                raise ContractError(
                    f"{url}: vector for id {rid!r} has dim {vec.shape}, expected {expected_dim}"
                )
            got[rid] = vec
        for rid, _ in batch:
            if rid not in got:
                raise ContractError(f"{url}: response is missing id {rid!r}")
        return got

    vectors: dict[str, np.ndarray] = {}
    if len(batches) == 1:
        vectors.update(fetch_batch(batches[0]))
    else:
        with ThreadPoolExecutor(max_workers=MAX_WORKERS) as pool:
            for got in pool.map(fetch_batch, batches):
                vectors.update(got)
    return EmbeddingTable(
        modality=modality, dim=expected_dim, vectors={rid: vectors[rid] for rid in ids}
    )
