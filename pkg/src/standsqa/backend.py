"""Completion and embedding clients behind small uniform interfaces.

Ships an HTTP JSON client compatible with prevailing completion APIs
({model, prompt, ...} -> {choices: [{text}]}), deterministic mock backends
for tests and desk-scale runs, and a content-addressed embedding cache.
"""

from __future__ import annotations

import hashlib
import json
import os
import re
import time
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable, Protocol, Sequence

import numpy as np
import requests

GENERATION = "generation"
RETRIEVAL_EMBEDDING = "retrieval_embedding"
ANSWER_EMBEDDING = "answer_embedding"
ROLES = (GENERATION, RETRIEVAL_EMBEDDING, ANSWER_EMBEDDING)

DEFAULT_API_KEY_ENV = "STANDSQA_API_KEY"


class BackendError(Exception):
    """A backend call failed for good."""


class TransientBackendError(BackendError):
    """A backend call failed in a way that is worth retrying."""


class MockScriptError(BackendError):
    """A mock rule file could not be parsed."""


@dataclass(frozen=True)
class CompletionRequest:
    prompts: tuple[str, ...]
    max_new_tokens: int = 64
    temperature: float = 0.0
    seed: int | None = None
    model_id: str = ""

    def __post_init__(self) -> None:
        if not self.prompts:
            raise ValueError("completion batch must be non-empty")
        if self.max_new_tokens < 1:
            raise ValueError("max_new_tokens must be >= 1")


@dataclass(frozen=True)
class BackendConfig:
    """Declarative backend description, loadable from the pipeline config file.

    kind selects the implementation: "http" for a JSON-over-HTTP service,
    "hash" for the deterministic bag-of-words mock embedder, "script" for
    the rule-file mock completer. Credentials come from the environment
    variable named by api_key_env, never from the config file itself.
    """

    kind: str = "http"
    endpoint: str = ""
    model_id: str = ""
    timeout: float = 30.0
    retry_count: int = 2
    role: str = GENERATION
    dim: int = 64
    script_path: str = ""
    api_key_env: str = DEFAULT_API_KEY_ENV

    def __post_init__(self) -> None:
        if self.role not in ROLES:
            raise ValueError(f"unknown backend role {self.role!r}")

    def to_dict(self) -> dict:
        return {
            "kind": self.kind,
            "endpoint": self.endpoint,
            "model_id": self.model_id,
            "timeout": self.timeout,
            "retry_count": self.retry_count,
            "role": self.role,
            "dim": self.dim,
            "script_path": self.script_path,
            "api_key_env": self.api_key_env,
        }

    @classmethod
    def from_dict(cls, payload: dict, *, role: str | None = None) -> "BackendConfig":
        known = {f for f in cls.__dataclass_fields__}  # type: ignore[attr-defined]
        kwargs = {k: v for k, v in payload.items() if k in known}
        if role is not None:
            kwargs["role"] = role
        return cls(**kwargs)


class CompletionBackend(Protocol):
    model_id: str

    def complete(
        self,
        prompts: Sequence[str],
        *,
        max_new_tokens: int,
        temperature: float,
        seed: int | None,
    ) -> list[str]: ...


class EmbeddingBackend(Protocol):
    model_id: str

    def embed(self, texts: Sequence[str]) -> np.ndarray: ...


def complete_batch(
    req: CompletionRequest,
    backend: CompletionBackend,
    retry_count: int | None = None,
) -> list[str]:
    """Run one completion batch, retrying transient failures.

    Returns one completion per prompt, order-aligned. retry_count defaults
    to the backend's own configured count (0 if it has none).
    """
    if retry_count is None:
        retry_count = getattr(backend, "retry_count", 0)
    attempts = retry_count + 1
    completions: list[str] | None = None
    for attempt in range(attempts):
        try:
            completions = backend.complete(
                list(req.prompts),
                max_new_tokens=req.max_new_tokens,
                temperature=req.temperature,
                seed=req.seed,
            )
            break
        except TransientBackendError as exc:
            if attempt + 1 == attempts:
                raise BackendError(
                    f"completion failed for prompts 0..{len(req.prompts) - 1} "
                    f"after {attempts} attempts: {exc}"
                ) from exc
            time.sleep(min(0.05 * (attempt + 1), 1.0))
    assert completions is not None
    if len(completions) != len(req.prompts):
        raise BackendError(
            f"backend returned {len(completions)} completions for {len(req.prompts)} prompts"
        )
    return [str(c) for c in completions]


def embed_batch(texts: Sequence[str], backend: EmbeddingBackend) -> np.ndarray:
    """Embed texts in one call; rows are order-aligned with the inputs."""
    if not texts:
        return np.zeros((0, getattr(backend, "dim", 0) or 0), dtype=np.float32)
    try:
        vectors = np.asarray(backend.embed(list(texts)), dtype=np.float32)
    except ValueError as exc:
        raise BackendError(f"backend {backend.model_id!r} returned ragged embeddings: {exc}") from exc
    if vectors.ndim != 2 or vectors.shape[0] != len(texts):
        raise BackendError(
            f"backend {backend.model_id!r} returned shape {vectors.shape} for {len(texts)} texts"
        )
    return vectors


# ---------------------------------------------------------------------------
# HTTP backends


def _post_json(url: str, payload: dict, config: BackendConfig) -> dict:
    headers = {"content-type": "application/json"}
    api_key = os.environ.get(config.api_key_env, "")
    if api_key:
        headers["authorization"] = f"Bearer {api_key}"
    try:
        response = requests.post(url, json=payload, headers=headers, timeout=config.timeout)
    except requests.Timeout as exc:
        raise TransientBackendError(f"timeout talking to {url}: {exc}") from exc
    except requests.RequestException as exc:
        raise TransientBackendError(f"request to {url} failed: {exc}") from exc
    if response.status_code == 429 or response.status_code >= 500:
        raise TransientBackendError(f"HTTP {response.status_code} from {url}")
    if response.status_code != 200:
        raise BackendError(f"HTTP {response.status_code} from {url}: {response.text[:200]}")
    try:
        return response.json()
    except ValueError as exc:
        raise BackendError(f"non-JSON response from {url}") from exc


class HttpCompletionBackend:
    """Completion client for {model, prompt, ...} -> {choices: [{text}]} services."""

    def __init__(self, config: BackendConfig):
        self.config = config
        self.model_id = config.model_id
        self.retry_count = config.retry_count

    def complete(self, prompts, *, max_new_tokens, temperature, seed=None):
        payload = {
            "model": self.model_id,
            "prompt": list(prompts),
            "max_tokens": max_new_tokens,
            "temperature": temperature,
        }
        if seed is not None:
            payload["seed"] = seed
        url = self.config.endpoint.rstrip("/") + "/completions"
        data = _post_json(url, payload, self.config)
        try:
            choices = data["choices"]
            ordered = sorted(choices, key=lambda c: c.get("index", 0))
            return [str(c["text"]) for c in ordered]
        except (KeyError, TypeError) as exc:
            raise BackendError(f"malformed completion response from {url}") from exc


class HttpEmbeddingBackend:
    """Embedding client for {model, input} -> {data: [{embedding, index}]} services."""

    def __init__(self, config: BackendConfig):
        self.config = config
        self.model_id = config.model_id
        self.retry_count = config.retry_count

    def embed(self, texts):
        url = self.config.endpoint.rstrip("/") + "/embeddings"
        data = _post_json(url, {"model": self.model_id, "input": list(texts)}, self.config)
        try:
            rows = sorted(data["data"], key=lambda r: r.get("index", 0))
            return np.asarray([r["embedding"] for r in rows], dtype=np.float32)
        except (KeyError, TypeError, ValueError) as exc:
            raise BackendError(f"malformed embedding response from {url}") from exc


# ---------------------------------------------------------------------------
# Deterministic mocks

_WORD_RE = re.compile(r"[a-z0-9]+")


class HashEmbeddingBackend:
    """Deterministic bag-of-words embedder for tests and offline runs.

    Each token is hashed into one of dim buckets; the bucket-count vector
    is L2-normalized. Identical texts always embed identically and the
    empty string embeds to the all-zeros vector.
    """

    def __init__(self, model_id: str = "hash-embed-64", dim: int = 64):
        if dim < 1:
            raise ValueError("dim must be >= 1")
        self.model_id = model_id
        self.dim = dim
        self.retry_count = 0

    def embed(self, texts):
        out = np.zeros((len(texts), self.dim), dtype=np.float32)
        for i, text in enumerate(texts):
            for token in _WORD_RE.findall(text.lower()):
                digest = hashlib.sha256(token.encode("utf-8")).digest()
                bucket = int.from_bytes(digest[:8], "big") % self.dim
                out[i, bucket] += 1.0
            norm = float(np.linalg.norm(out[i]))
            if norm:
                out[i] /= norm
        return out


_OPTION_LINE_RE = re.compile(r"^option (\d+): (.*)$", re.MULTILINE)


def _prompt_options(prompt: str) -> list[tuple[int, str]]:
    return [(int(m.group(1)), m.group(2)) for m in _OPTION_LINE_RE.finditer(prompt)]


def _hash_unit(prompt: str) -> float:
    """Deterministic pseudo-uniform value in [0, 1) derived from the prompt."""
    digest = hashlib.sha256(prompt.encode("utf-8")).digest()
    return int.from_bytes(digest[:8], "big") / 2**64


class MockCompletionBackend:
    """Scripted completion backend.

    Answers by exact-prompt match first, then by pattern rules in file
    order, then with the default response. Slot rules read the rendered
    "option N: ..." lines out of the prompt, which keeps biased and
    truth-telling behaviors deterministic per prompt.
    """

    def __init__(
        self,
        *,
        model_id: str = "mock",
        exact: dict[str, str] | None = None,
        rules: Sequence[Callable[[str], str | None]] = (),
        default: str = "unknown",
    ):
        self.model_id = model_id
        self.retry_count = 0
        self.exact = dict(exact or {})
        self.rules = list(rules)
        self.default = default
        self.calls = 0
        self.prompts_seen = 0

    def complete(self, prompts, *, max_new_tokens, temperature, seed=None):
        self.calls += 1
        self.prompts_seen += len(prompts)
        return [self._answer(p) for p in prompts]

    def _answer(self, prompt: str) -> str:
        if prompt in self.exact:
            return self.exact[prompt]
        for rule in self.rules:
            response = rule(prompt)
            if response is not None:
                return response
        return self.default


def slot_of_rule(marker: str) -> Callable[[str], str | None]:
    """Answer the option slot whose text contains marker; fall through otherwise."""

    def rule(prompt: str) -> str | None:
        for label, text in _prompt_options(prompt):
            if marker in text:
                return f"option {label}"
        return None

    return rule


def always_slot_rule(slot: int) -> Callable[[str], str | None]:
    """Always answer the given 0-based slot, regardless of prompt content."""

    def rule(prompt: str) -> str | None:
        return f"option {slot + 1}"

    return rule


def biased_slot_rule(marker: str, p_correct: float, else_slot: int) -> Callable[[str], str | None]:
    """Answer the marker's slot with probability p_correct, else a fixed slot.

    The coin flip is a hash of the prompt, so the behavior is a
    deterministic function of the prompt while still being uniform across
    distinct prompts.
    """

    def rule(prompt: str) -> str | None:
        options = _prompt_options(prompt)
        if not options:
            return None
        if _hash_unit(prompt) < p_correct:
            for label, text in options:
                if marker in text:
                    return f"option {label}"
            return None
        return f"option {else_slot + 1}"

    return rule


def contains_rule(needle: str, response: str) -> Callable[[str], str | None]:
    def rule(prompt: str) -> str | None:
        return response if needle in prompt else None

    return rule


def _unescape(text: str) -> str:
    return text.replace("\\n", "\n").replace("\\t", "\t").replace("\\\\", "\\")


def mock_script_load(path: str | Path, model_id: str = "mock") -> MockCompletionBackend:
    """Build a mock completion backend from a line-oriented rule file.

    Grammar (one rule per line, '#' for comments):

        exact: <prompt, \\n-escaped> => <response>
        contains: <substring> => <response>
        slot-of: <marker>
        biased-slot-of: <marker> | p=<float> | else-slot=<int>
        always-slot: <0-based slot>
        default: <response>
    """
    path = Path(path)
    exact: dict[str, str] = {}
    rules: list[Callable[[str], str | None]] = []
    default = "unknown"
    for lineno, raw in enumerate(path.read_text(encoding="utf-8").splitlines(), 1):
        line = raw.strip()
        if not line or line.startswith("#"):
            continue
        directive, sep, payload = line.partition(":")
        if not sep:
            raise MockScriptError(f"{path}:{lineno}: missing ':' after directive")
        directive = directive.strip()
        payload = payload.strip()
        try:
            if directive == "exact":
                prompt, _, response = payload.partition("=>")
                if not _:
                    raise ValueError("expected '=>'")
                exact[_unescape(prompt.strip())] = _unescape(response.strip())
            elif directive == "contains":
                needle, _, response = payload.partition("=>")
                if not _:
                    raise ValueError("expected '=>'")
                rules.append(contains_rule(_unescape(needle.strip()), _unescape(response.strip())))
            elif directive == "slot-of":
                if not payload:
                    raise ValueError("missing marker")
                rules.append(slot_of_rule(payload))
            elif directive == "biased-slot-of":
                parts = [p.strip() for p in payload.split("|")]
                if len(parts) != 3:
                    raise ValueError("expected '<marker> | p=<float> | else-slot=<int>'")
                marker = parts[0]
                if not parts[1].startswith("p=") or not parts[2].startswith("else-slot="):
                    raise ValueError("expected 'p=' and 'else-slot=' fields")
                p_correct = float(parts[1][2:])
                else_slot = int(parts[2][len("else-slot=") :])
                rules.append(biased_slot_rule(marker, p_correct, else_slot))
            elif directive == "always-slot":
                rules.append(always_slot_rule(int(payload)))
            elif directive == "default":
                default = _unescape(payload)
            else:
                raise ValueError(f"unknown directive {directive!r}")
        except ValueError as exc:
            raise MockScriptError(f"{path}:{lineno}: {exc}") from exc
    return MockCompletionBackend(model_id=model_id, exact=exact, rules=rules, default=default)


# ---------------------------------------------------------------------------
# Embedding cache


def _sanitize(name: str) -> str:
    return re.sub(r"[^A-Za-z0-9._-]", "_", name) or "_"


class CachedEmbeddingBackend:
    """Content-addressed on-disk cache around an embedding backend.

    Vectors are keyed by (backend model id, SHA-256 of the text); hits
    never touch the inner backend and results are identical either way.
    """

    def __init__(self, inner: EmbeddingBackend, cache_dir: str | Path):
        self.inner = inner
        self.model_id = inner.model_id
        self.retry_count = getattr(inner, "retry_count", 0)
        self.dim = getattr(inner, "dim", 0)
        self.cache_dir = Path(cache_dir) / _sanitize(inner.model_id)
        self.cache_dir.mkdir(parents=True, exist_ok=True)

    def _key_path(self, text: str) -> Path:
        digest = hashlib.sha256(text.encode("utf-8")).hexdigest()
        return self.cache_dir / f"{digest}.npy"

    def embed(self, texts):
        texts = list(texts)
        if not texts:
            return np.zeros((0, self.dim or 0), dtype=np.float32)
        vectors: list[np.ndarray | None] = []
        missing: list[int] = []
        for i, text in enumerate(texts):
            path = self._key_path(text)
            if path.exists():
                vectors.append(np.load(path))
            else:
                vectors.append(None)
                missing.append(i)
        if missing:
            fresh = np.asarray(self.inner.embed([texts[i] for i in missing]), dtype=np.float32)
            for j, i in enumerate(missing):
                np.save(self._key_path(texts[i]), fresh[j])
                vectors[i] = fresh[j]
        return np.asarray(vectors, dtype=np.float32)


def build_backend(config: BackendConfig):
    """Instantiate the backend described by a BackendConfig."""
    if config.kind == "http":
        if config.role == GENERATION:
            return HttpCompletionBackend(config)
        return HttpEmbeddingBackend(config)
    if config.kind == "hash":
        return HashEmbeddingBackend(config.model_id or "hash-embed-64", config.dim)
    if config.kind == "script":
        if not config.script_path:
            raise BackendError("script backend requires script_path")
        return mock_script_load(config.script_path, model_id=config.model_id or "mock")
    raise BackendError(f"unknown backend kind {config.kind!r}")
