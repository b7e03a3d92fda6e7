"""Text embedding providers and the cosine similarity used everywhere else.

Two providers share one interface (``embed(texts) -> (n, F) array``):

* :class:`HashProvider` - signed feature hashing, deterministic and offline.
* :class:`RemoteProvider` - batched HTTP client for an embeddings endpoint,
  backed by a persistent :class:`EmbeddingCache`.
"""

from __future__ import annotations

import hashlib
import logging
import re
import struct
import threading
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import asdict, dataclass
from pathlib import Path
from typing import Protocol, Sequence

import httpx
import numpy as np

log = logging.getLogger(__name__)

__all__ = [
    "ProviderDescriptor",
    "Provider",
    "HashProvider",
    "RemoteProvider",
    "EmbeddingCache",
    "EmbeddingError",
    "DimensionMismatchError",
    "hash_embed",
    "tokenize",
    "cosine",
    "make_provider",
]

_TOKEN_SPLIT = re.compile(r"[^0-9a-z]+")
_HASH_KEY = b"tagkit-hash-v1"


class EmbeddingError(RuntimeError):
    pass


class DimensionMismatchError(EmbeddingError, ValueError):
    pass


@dataclass(frozen=True)
class ProviderDescriptor:
    kind: str = "hash"
    dimension: int = 128
    model_name: str = ""
    endpoint: str = ""
    normalize: bool = True

    def __post_init__(self):
        if self.kind not in ("hash", "remote"):
            raise ValueError(f"unknown provider kind {self.kind!r}")
        if self.dimension < 1:
            raise ValueError("provider dimension must be at least 1")

    def to_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def from_dict(cls, d: dict) -> "ProviderDescriptor":
        return cls(**d)


class Provider(Protocol):
    descriptor: ProviderDescriptor

    @property
    def dimension(self) -> int: ...

    def embed(self, texts: Sequence[str]) -> np.ndarray: ...


def tokenize(text: str) -> list[str]:
    return [t for t in _TOKEN_SPLIT.split(text.lower()) if t]


def _token_hash(token: str) -> int:
    digest = hashlib.blake2b(token.encode("utf-8"), digest_size=8, key=_HASH_KEY).digest()
    return int.from_bytes(digest, "little")


def hash_embed(text: str, dim: int) -> np.ndarray:
    """Signed feature-hashing embedding, L2-normalized.

    The low bits of a keyed 64-bit BLAKE2b digest pick the bucket; the top
    bit picks the sign. Text without tokens maps to the zero vector.
    """
    if dim < 1:
        raise ValueError("dimension must be at least 1")
    vec = np.zeros(dim, dtype=np.float64)
    for tok in tokenize(text):
        h = _token_hash(tok)
        vec[h % dim] += -1.0 if h >> 63 else 1.0
    norm = np.sqrt(vec @ vec)
    if norm > 0:
        vec /= norm
    return vec


def cosine(a, b) -> float:
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    if a.shape != b.shape:
        raise DimensionMismatchError(f"cosine of vectors with shapes {a.shape} and {b.shape}")
    na = np.sqrt(a @ a)
    nb = np.sqrt(b @ b)
    if na == 0 or nb == 0:
        return 0.0
    return float((a @ b) / (na * nb))


def _l2_normalize(rows: np.ndarray) -> np.ndarray:
    norms = np.sqrt(np.einsum("ij,ij->i", rows, rows))
    norms[norms == 0] = 1.0
    return rows / norms[:, None]


class HashProvider:
    def __init__(self, dimension: int = 128, normalize: bool = True):
        self.descriptor = ProviderDescriptor("hash", dimension, "", "", normalize)

    @property
    def dimension(self) -> int:
        return self.descriptor.dimension

    def embed(self, texts: Sequence[str]) -> np.ndarray:
        if not texts:
            return np.zeros((0, self.dimension))
        # hash_embed already normalizes; the flag only matters for remote models
        return np.stack([hash_embed(t, self.dimension) for t in texts])


# -- cache -------------------------------------------------------------------

_RECORD_HEAD = struct.Struct("<4sHI32s")  # magic, model-name length, F, sha256
_RECORD_MAGIC = b"TKEC"


def content_hash(text: str) -> bytes:
    return hashlib.sha256(text.encode("utf-8")).digest()


class EmbeddingCache:
    """Append-only on-disk store of raw embedding vectors.

    Each record holds the model name, F, the SHA-256 of the text and the
    vector as little-endian float32. Pass ``path=None`` for an in-memory cache.
    """

    def __init__(self, path: str | Path | None = None):
        self.path = Path(path) if path is not None else None
        self._store: dict[tuple[str, int, bytes], np.ndarray] = {}
        self._lock = threading.Lock()
        if self.path is not None and self.path.exists():
            self._load()

    def _load(self) -> None:
        data = self.path.read_bytes()
        off = 0
        while off < len(data):
            if off + _RECORD_HEAD.size > len(data):
                log.warning("truncated cache record at byte %d of %s; ignoring tail", off, self.path)
                break
            magic, name_len, dim, digest = _RECORD_HEAD.unpack_from(data, off)
            if magic != _RECORD_MAGIC:
                raise EmbeddingError(f"corrupt embedding cache {self.path} at byte {off}")
            off += _RECORD_HEAD.size
            end = off + name_len + 4 * dim
            if end > len(data):
                log.warning("truncated cache record at byte %d of %s; ignoring tail", off, self.path)
                break
            model = data[off:off + name_len].decode("utf-8")
            off += name_len
            vec = np.frombuffer(data, dtype="<f4", count=dim, offset=off).copy()
            off += 4 * dim
            self._store[(model, dim, digest)] = vec

    def __len__(self) -> int:
        return len(self._store)

    def get(self, model: str, dim: int, text: str) -> np.ndarray | None:
        vec = self._store.get((model, dim, content_hash(text)))
        return None if vec is None else vec.copy()

    def put(self, model: str, dim: int, text: str, vector) -> np.ndarray:
        vec = np.asarray(vector, dtype="<f4")
        if vec.shape != (dim,):
            raise DimensionMismatchError(f"expected vector of length {dim}, got shape {vec.shape}")
        key = (model, dim, content_hash(text))
        with self._lock:
            if key in self._store:
                return self._store[key].copy()
            self._store[key] = vec.copy()
            if self.path is not None:
                name = model.encode("utf-8")
                self.path.parent.mkdir(parents=True, exist_ok=True)
                with open(self.path, "ab") as fh:
                    fh.write(_RECORD_HEAD.pack(_RECORD_MAGIC, len(name), dim, key[2]))
                    fh.write(name)
                    fh.write(vec.tobytes())
        return vec.copy()


# -- remote ------------------------------------------------------------------

class RemoteProvider:
    """Client for ``POST {"model", "input"} -> {"data": [{"index", "embedding"}]}``.

    Uncached texts are sent in batches of ``batch_size``; each batch is
    retried with exponential backoff. Returned vectors are float32 as stored
    in the cache, so hits and misses are bit-identical.
    """

    def __init__(
        self,
        descriptor: ProviderDescriptor,
        cache: EmbeddingCache | None = None,
        *,
        batch_size: int = 32,
        retries: int = 3,
        backoff: float = 0.5,
        parallelism: int = 1,
        client: httpx.Client | None = None,
        headers: dict | None = None,
        timeout: float = 60.0,
    ):
        if descriptor.kind != "remote":
            raise ValueError("RemoteProvider needs a descriptor of kind 'remote'")
        if not descriptor.endpoint:
            raise ValueError("remote provider needs an endpoint URL")
        self.descriptor = descriptor
        self.cache = cache if cache is not None else EmbeddingCache()
        self.batch_size = batch_size
        self.retries = retries
        self.backoff = backoff
        self.parallelism = max(1, parallelism)
        self._client = client or httpx.Client(timeout=timeout, headers=headers)

    @property
    def dimension(self) -> int:
        return self.descriptor.dimension

    def _request(self, batch: list[str]) -> list[np.ndarray]:
        body = {"model": self.descriptor.model_name, "input": batch}
        last_exc: Exception | None = None
        for attempt in range(self.retries + 1):
            try:
                resp = self._client.post(self.descriptor.endpoint, json=body)
                resp.raise_for_status()
                payload = resp.json()
                break
            except (httpx.HTTPError, ValueError) as exc:
                last_exc = exc
                if attempt < self.retries:
                    delay = self.backoff * 2 ** attempt
                    log.warning("embedding request failed (%s); retry %d in %.1fs", exc, attempt + 1, delay)
                    time.sleep(delay)
        else:
            raise EmbeddingError(f"embedding request failed after {self.retries} retries: {last_exc}")

        items = payload.get("data") if isinstance(payload, dict) else None
        if not isinstance(items, list) or len(items) != len(batch):
            got = len(items) if isinstance(items, list) else "no"
            raise EmbeddingError(f"response carries {got} embeddings for {len(batch)} inputs")
        out: list[np.ndarray | None] = [None] * len(batch)
        for item in items:
            idx = item.get("index")
            if not isinstance(idx, int) or not 0 <= idx < len(batch) or out[idx] is not None:
                raise EmbeddingError(f"response index {idx!r} does not match the request")
            vec = np.asarray(item.get("embedding"), dtype=np.float64)
            if vec.shape != (self.dimension,):
                raise DimensionMismatchError(
                    f"model {self.descriptor.model_name!r} returned dimension {vec.size}, expected {self.dimension}"
                )
            if not np.all(np.isfinite(vec)):
                raise EmbeddingError("response contains non-finite values")
            out[idx] = vec
        return out

    def embed(self, texts: Sequence[str]) -> np.ndarray:
        model, dim = self.descriptor.model_name, self.dimension
        result: list[np.ndarray | None] = [self.cache.get(model, dim, t) for t in texts]
        pending: list[str] = []
        for t, vec in zip(texts, result):
            if vec is None and t not in pending:
                pending.append(t)
        if pending:
            batches = [pending[i:i + self.batch_size] for i in range(0, len(pending), self.batch_size)]
            if self.parallelism > 1 and len(batches) > 1:
                with ThreadPoolExecutor(self.parallelism) as pool:
                    responses = list(pool.map(self._request, batches))
            else:
                responses = [self._request(b) for b in batches]
            fresh = {}
            for batch, vecs in zip(batches, responses):
                for t, v in zip(batch, vecs):
                    fresh[t] = self.cache.put(model, dim, t, v)
            result = [fresh[t] if vec is None else vec for t, vec in zip(texts, result)]
        if not texts:
            return np.zeros((0, dim))
        rows = np.stack(result).astype(np.float64)
        return _l2_normalize(rows) if self.descriptor.normalize else rows


def make_provider(descriptor: ProviderDescriptor, cache_path: str | Path | None = None, **kwargs) -> Provider:
    if descriptor.kind == "hash":
        return HashProvider(descriptor.dimension, descriptor.normalize)
    return RemoteProvider(descriptor, EmbeddingCache(cache_path), **kwargs)
