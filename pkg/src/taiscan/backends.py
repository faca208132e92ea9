"""Embedding and generation model backends behind one uniform surface.

Three families share the same method contracts:

* HTTP backends speaking the Ollama-style JSON API (``/api/embed``,
  ``/api/generate``) for live inference, remote or local.
* A deterministic embedding backend (seeded feature hashing) for tests and
  offline index builds.
* Replay backends that return responses recorded on disk, keyed by the
  SHA-256 digest of the exact request text, so any prompt drift is caught.

Embedding vectors are plain 1-D numpy arrays.
"""

from __future__ import annotations

import hashlib
import re
from dataclasses import dataclass
from pathlib import Path

import httpx
import numpy as np


class BackendError(Exception):
    """Base class for backend failures."""


class BackendUnavailable(BackendError):
    """Connection, timeout or HTTP error after the retry budget."""


class DimensionMismatch(BackendError):
    """Backend returned a vector of unexpected length."""


class EmptyCompletion(BackendError):
    """Generation returned zero-length text (never retried)."""


class ReplayMiss(BackendError):
    """No recorded fixture for this request digest."""


class ZeroVector(BackendError):
    """A zero vector cannot be normalized."""


def normalize(vec: np.ndarray) -> np.ndarray:
    """Scale to unit Euclidean norm; rejects zero and non-finite vectors."""
    arr = np.asarray(vec, dtype=np.float64)
    if not np.all(np.isfinite(arr)):
        raise ValueError("vector has non-finite entries")
    norm = float(np.linalg.norm(arr))
    if norm == 0.0:
        raise ZeroVector("zero vector has no direction")
    return arr / norm


@dataclass(frozen=True)
class BackendConfig:
    endpoint: str
    model_id: str
    timeout: float = 30.0
    max_retries: int = 2
    request_seed: int | None = 0
    temperature: float = 0.0

    def __post_init__(self) -> None:
        if self.timeout <= 0:
            raise ValueError("timeout must be positive")
        if self.max_retries < 0:
            raise ValueError("max_retries must be >= 0")
        if self.temperature < 0:
            raise ValueError("temperature must be >= 0")


@dataclass(frozen=True)
class GenerationRequest:
    prompt: str
    temperature: float = 0.0
    seed: int | None = 0
    max_tokens: int = 2048

    def __post_init__(self) -> None:
        if not self.prompt:
            raise ValueError("prompt must be non-empty")
        if self.max_tokens <= 0:
            raise ValueError("max_tokens must be positive")


def prompt_digest(text: str) -> str:
    """SHA-256 hex digest of the exact request text (replay fixture key)."""
    return hashlib.sha256(text.encode("utf-8")).hexdigest()


# ---------------------------------------------------------------------------
# HTTP backends (Ollama-compatible JSON API)
# ---------------------------------------------------------------------------


class _HttpBase:
    def __init__(self, config: BackendConfig, client: httpx.Client | None = None):
        self.config = config
        self.model_id = config.model_id
        self._client = client or httpx.Client(timeout=config.timeout)

    def _post(self, path: str, payload: dict) -> dict:
        """POST with retries on transport failure; exactly max_retries+1 attempts."""
        url = self.config.endpoint.rstrip("/") + path
        last_exc: Exception | None = None
        for _ in range(self.config.max_retries + 1):
            try:
                response = self._client.post(url, json=payload)
            except httpx.TransportError as exc:
                last_exc = exc
                continue
            if response.status_code != 200:
                raise BackendUnavailable(
                    f"{url} returned HTTP {response.status_code}: {response.text[:200]}"
                )
            try:
                return response.json()
            except ValueError as exc:
                raise BackendUnavailable(f"{url} returned non-JSON body") from exc
        raise BackendUnavailable(f"cannot reach {url} after {self.config.max_retries + 1} attempts: {last_exc}")


class HttpEmbeddingBackend(_HttpBase):
    """POST /api/embed with {model, input}; response carries {"embeddings": [[...]]}."""

    def __init__(self, config: BackendConfig, dimension: int | None = None,
                 client: httpx.Client | None = None):
        super().__init__(config, client)
        self.dimension = dimension

    def embed(self, text: str) -> np.ndarray:
        if not text:
            raise ValueError("text must be non-empty")
        data = self._post("/api/embed", {"model": self.config.model_id, "input": text})
        try:
            values = data["embeddings"][0]
        except (KeyError, IndexError, TypeError) as exc:
            raise BackendUnavailable(f"malformed embedding response: {exc}") from exc
        vec = np.asarray(values, dtype=np.float64)
        if self.dimension is None:
            self.dimension = int(vec.shape[0])
        elif vec.shape[0] != self.dimension:
            raise DimensionMismatch(f"expected {self.dimension} values, got {vec.shape[0]}")
        return vec

    def embed_batch(self, texts: list[str]) -> list[np.ndarray]:
        return embed_batch(texts, self)


class HttpGenerationBackend(_HttpBase):
    """POST /api/generate with {model, prompt, options}; response carries {"response": text}."""

    def generate(self, request: GenerationRequest) -> str:
        options: dict = {"temperature": request.temperature}
        if request.seed is not None:
            options["seed"] = request.seed
        if request.max_tokens:
            options["num_predict"] = request.max_tokens
        data = self._post("/api/generate", {
            "model": self.config.model_id,
            "prompt": request.prompt,
            "stream": False,
            "options": options,
        })
        try:
            text = data["response"]
        except (KeyError, TypeError) as exc:
            raise BackendUnavailable(f"malformed generation response: {exc}") from exc
        text = text.rstrip()
        if not text:
            raise EmptyCompletion("backend returned zero-length completion")
        return text


# ---------------------------------------------------------------------------
# Deterministic test embedding
# ---------------------------------------------------------------------------

_TOKEN_SPLIT_RE = re.compile(r"[^0-9a-z]+")


class DeterministicEmbeddingBackend:
    """Seeded feature-hash embedding: pure function of (seed, text).

    Tokens split on non-alphanumerics are hashed with a keyed 64-bit hash;
    each token adds ±1 at a hash-indexed coordinate; the sum is normalized.
    Distinct texts land on distinct directions with high probability.
    """

    def __init__(self, dimension: int = 64, seed: int = 0):
        if dimension < 2:
            raise ValueError("dimension must be >= 2")
        self.dimension = dimension
        self.seed = seed
        self.model_id = f"deterministic-hash-d{dimension}-s{seed}"
        self._key = seed.to_bytes(8, "little", signed=True)

    def _hash64(self, token: str) -> int:
        digest = hashlib.blake2b(token.encode("utf-8"), key=self._key, digest_size=8).digest()
        return int.from_bytes(digest, "little")

    def embed(self, text: str) -> np.ndarray:
        if not text:
            raise ValueError("text must be non-empty")
        vec = np.zeros(self.dimension, dtype=np.float64)
        for token in _TOKEN_SPLIT_RE.split(text.lower()):
            if not token:
                continue
            h = self._hash64(token)
            index = h % self.dimension
            sign = 1.0 if (h >> 63) & 1 else -1.0
            vec[index] += sign
        if not vec.any():
            # Tokens cancelled exactly (or none); pin a direction from the full text.
            vec[self._hash64(text) % self.dimension] = 1.0
        return normalize(vec)

    def embed_batch(self, texts: list[str]) -> list[np.ndarray]:
        return embed_batch(texts, self)


def embed_batch(texts: list[str], backend) -> list[np.ndarray]:
    """Element i corresponds to texts[i]; any failure aborts the whole batch."""
    if not texts:
        raise ValueError("texts must be non-empty")
    return [backend.embed(t) for t in texts]


# ---------------------------------------------------------------------------
# Replay backends (recorded fixtures)
# ---------------------------------------------------------------------------


class ReplayGenerationBackend:
    """Returns recorded completions from ``<sha256(prompt)>.txt`` files."""

    def __init__(self, fixtures_dir: str | Path, model_id: str = "replay"):
        self.fixtures_dir = Path(fixtures_dir)
        self.model_id = model_id

    def generate(self, request: GenerationRequest) -> str:
        path = self.fixtures_dir / f"{prompt_digest(request.prompt)}.txt"
        if not path.is_file():
            raise ReplayMiss(f"no recorded completion for digest {prompt_digest(request.prompt)}")
        text = path.read_text(encoding="utf-8").rstrip()
        if not text:
            raise EmptyCompletion(f"recorded completion {path.name} is empty")
        return text


class ReplayEmbeddingBackend:
    """Returns recorded vectors from ``<sha256(text)>.vec`` files.

    File layout: first line is the dimension, then one decimal real per line.
    """

    def __init__(self, fixtures_dir: str | Path, dimension: int | None = None,
                 model_id: str = "replay"):
        self.fixtures_dir = Path(fixtures_dir)
        self.dimension = dimension
        self.model_id = model_id

    def embed(self, text: str) -> np.ndarray:
        path = self.fixtures_dir / f"{prompt_digest(text)}.vec"
        if not path.is_file():
            raise ReplayMiss(f"no recorded embedding for digest {prompt_digest(text)}")
        lines = path.read_text(encoding="utf-8").splitlines()
        declared = int(lines[0])
        vec = np.array([float(x) for x in lines[1 : declared + 1]], dtype=np.float64)
        if vec.shape[0] != declared:
            raise DimensionMismatch(f"{path.name} declares {declared} values, holds {vec.shape[0]}")
        if self.dimension is None:
            self.dimension = declared
        elif declared != self.dimension:
            raise DimensionMismatch(f"expected {self.dimension} values, got {declared}")
        return vec

    def embed_batch(self, texts: list[str]) -> list[np.ndarray]:
        return embed_batch(texts, self)


def write_generation_fixture(fixtures_dir: str | Path, prompt: str, completion: str) -> Path:
    directory = Path(fixtures_dir)
    directory.mkdir(parents=True, exist_ok=True)
    path = directory / f"{prompt_digest(prompt)}.txt"
    path.write_text(completion, encoding="utf-8")
    return path


def write_embedding_fixture(fixtures_dir: str | Path, text: str, vec: np.ndarray) -> Path:
    directory = Path(fixtures_dir)
    directory.mkdir(parents=True, exist_ok=True)
    arr = np.asarray(vec, dtype=np.float64)
    lines = [str(arr.shape[0])] + [repr(float(x)) for x in arr]
    path = directory / f"{prompt_digest(text)}.vec"
    path.write_text("\n".join(lines) + "\n", encoding="utf-8")
    return path


class CallableGenerationBackend:
    """Adapter turning any prompt -> text function into a generation backend."""

    def __init__(self, fn, model_id: str = "scripted"):
        self._fn = fn
        self.model_id = model_id

    def generate(self, request: GenerationRequest) -> str:
        text = self._fn(request.prompt).rstrip()
        if not text:
            raise EmptyCompletion("scripted backend returned zero-length completion")
        return text
