"""Pluggable external backends: selector, embedder, translator, suggester.

Every backend has a JSON-over-HTTP implementation and a deterministic
offline stub, behind one small contract each, so the pipeline runs fully
offline and tests never touch the network.  HTTP responses are cached on
disk keyed by the request hash, which makes re-runs cheap and reproducible.
"""

from __future__ import annotations

import hashlib
import json
import re
from pathlib import Path

import numpy as np
import requests


class ClientUnavailable(Exception):
    """Base for backend failures (network, bad payload)."""


class SelectorUnavailable(ClientUnavailable):
    pass


class EmbedderUnavailable(ClientUnavailable):
    pass


class TranslatorUnavailable(ClientUnavailable):
    pass


class SuggesterUnavailable(ClientUnavailable):
    pass


def request_hash(payload: dict) -> str:
    canonical = json.dumps(payload, sort_keys=True, ensure_ascii=False)
    return hashlib.sha256(canonical.encode("utf-8")).hexdigest()


class RequestCache:
    """Disk cache of JSON responses keyed by request hash."""

    def __init__(self, directory: str | Path):
        self.directory = Path(directory)
        self.directory.mkdir(parents=True, exist_ok=True)

    def _path(self, key: str) -> Path:
        return self.directory / f"{key}.json"

    def get(self, payload: dict):
        path = self._path(request_hash(payload))
        if path.exists():
            return json.loads(path.read_text(encoding="utf-8"))
        return None

    def put(self, payload: dict, response) -> None:
        path = self._path(request_hash(payload))
        path.write_text(json.dumps(response, ensure_ascii=False, sort_keys=True), encoding="utf-8")


def _post_json(url: str, payload: dict, error_cls: type[ClientUnavailable],
               timeout: float = 60.0, headers: dict | None = None) -> dict:
    try:
        resp = requests.post(url, json=payload, timeout=timeout, headers=headers or {})
        resp.raise_for_status()
        return resp.json()
    except (requests.RequestException, ValueError) as exc:
        raise error_cls(f"POST {url} failed: {exc}") from exc


# ---------------------------------------------------------------------------
# selector / suggester: chat-completion shaped endpoints


class ChatCompletionClient:
    """Minimal chat-completions caller shared by selector and suggester."""

    def __init__(self, url: str, model: str, api_key: str | None = None,
                 cache: RequestCache | None = None, timeout: float = 120.0):
        self.url = url
        self.model = model
        self.api_key = api_key
        self.cache = cache
        self.timeout = timeout

    def complete(self, system_prompt: str, user_prompt: str,
                 error_cls: type[ClientUnavailable] = ClientUnavailable) -> str:
        payload = {
            "model": self.model,
            "messages": [
                {"role": "system", "content": system_prompt},
                {"role": "user", "content": user_prompt},
            ],
        }
        if self.cache is not None:
            cached = self.cache.get(payload)
            if cached is not None:
                return cached["content"]
        headers = {"Authorization": f"Bearer {self.api_key}"} if self.api_key else None
        data = _post_json(self.url, payload, error_cls, timeout=self.timeout, headers=headers)
        try:
            content = data["choices"][0]["message"]["content"]
        except (KeyError, IndexError, TypeError) as exc:
            raise error_cls(f"unexpected completion payload: {data!r}") from exc
        if self.cache is not None:
            self.cache.put(payload, {"content": content})
        return content


_JSON_BLOCK_RE = re.compile(r"\{.*\}", re.DOTALL)


def extract_json_object(text: str) -> dict | None:
    """Pull the first JSON object out of a completion, tolerating code fences."""
    match = _JSON_BLOCK_RE.search(text)
    if match is None:
        return None
    try:
        obj = json.loads(match.group(0))
    except json.JSONDecodeError:
        return None
    return obj if isinstance(obj, dict) else None


# ---------------------------------------------------------------------------
# embedding client


class EmbeddingClient:
    """Contract: list of strings in, list of equal-length vectors out."""

    def embed(self, texts: list[str]) -> list[list[float]]:
        raise NotImplementedError


class HttpEmbeddingClient(EmbeddingClient):
    def __init__(self, url: str, model: str, api_key: str | None = None,
                 cache: RequestCache | None = None, batch_size: int = 32):
        self.url = url
        self.model = model
        self.api_key = api_key
        self.cache = cache
        self.batch_size = batch_size

    def embed(self, texts: list[str]) -> list[list[float]]:
        vectors: list[list[float]] = []
        for i in range(0, len(texts), self.batch_size):
            batch = texts[i : i + self.batch_size]
            payload = {"model": self.model, "input": batch}
            cached = self.cache.get(payload) if self.cache is not None else None
            if cached is not None:
                vectors.extend(cached["vectors"])
                continue
            headers = {"Authorization": f"Bearer {self.api_key}"} if self.api_key else None
            data = _post_json(self.url, payload, EmbedderUnavailable, headers=headers)
            try:
                batch_vectors = [row["embedding"] for row in data["data"]]
            except (KeyError, TypeError) as exc:
                raise EmbedderUnavailable(f"unexpected embedding payload: {data!r}") from exc
            if len(batch_vectors) != len(batch):
                raise EmbedderUnavailable(
                    f"expected {len(batch)} vectors, got {len(batch_vectors)}"
                )
            if self.cache is not None:
                self.cache.put(payload, {"vectors": batch_vectors})
            vectors.extend(batch_vectors)
        return vectors


class StubEmbedder(EmbeddingClient):
    """Seeded hash-based bag-of-words vectors; deterministic, offline.

    Identical strings always embed identically (cosine 1); strings with no
    shared tokens land near-orthogonal for reasonable dimensions.
    """

    def __init__(self, dim: int = 64, seed: int = 0):
        self.dim = dim
        self.seed = seed

    def _token_slot(self, token: str) -> tuple[int, float]:
        digest = hashlib.sha256(f"{self.seed}:{token}".encode("utf-8")).digest()
        index = int.from_bytes(digest[:4], "big") % self.dim
        sign = 1.0 if digest[4] % 2 == 0 else -1.0
        return index, sign

    def embed(self, texts: list[str]) -> list[list[float]]:
        out = []
        for text in texts:
            vec = np.zeros(self.dim)
            for token in re.findall(r"\w+", text.lower()):
                index, sign = self._token_slot(token)
                vec[index] += sign
            norm = np.linalg.norm(vec)
            if norm > 0:
                vec = vec / norm
            out.append(vec.tolist())
        return out


def cosine_similarity(a: list[float], b: list[float]) -> float:
    """Cosine in [-1, 1]; zero vectors compare as 0."""
    va = np.asarray(a, dtype=float)
    vb = np.asarray(b, dtype=float)
    denom = float(np.linalg.norm(va) * np.linalg.norm(vb))
    if denom == 0.0:
        return 0.0
    value = float(np.dot(va, vb) / denom)
    return max(-1.0, min(1.0, value))


# ---------------------------------------------------------------------------
# translator client


class TranslatorClient:
    def translate(self, term: str, source_language: str) -> str:
        raise NotImplementedError


class HttpTranslatorClient(TranslatorClient):
    def __init__(self, url: str, cache: RequestCache | None = None):
        self.url = url
        self.cache = cache

    def translate(self, term: str, source_language: str) -> str:
        payload = {"source_language": source_language, "target_language": "en", "text": term}
        cached = self.cache.get(payload) if self.cache is not None else None
        if cached is not None:
            return cached["translation"]
        data = _post_json(self.url, payload, TranslatorUnavailable)
        try:
            translation = data["translation"]
        except (KeyError, TypeError) as exc:
            raise TranslatorUnavailable(f"unexpected translator payload: {data!r}") from exc
        if self.cache is not None:
            self.cache.put(payload, {"translation": translation})
        return translation


class StubTranslator(TranslatorClient):
    """Fixture-table translator; unknown terms pass through unchanged."""

    def __init__(self, table: dict[str, str] | None = None):
        self.table = {k.lower(): v for k, v in (table or {}).items()}

    def translate(self, term: str, source_language: str) -> str:
        return self.table.get(term.lower(), term)
