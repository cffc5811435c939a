"""Initial node features: PCA-reduced label embeddings plus type embeddings."""

from __future__ import annotations

import hashlib
import os
from dataclasses import dataclass
from functools import lru_cache
from typing import Protocol, Sequence

import numpy as np

from .errors import DegenerateInput, DimensionMismatch, EmptyText, ProviderUnavailable
from .kg import KnowledgeGraph
from .ontology import ConceptClass, normalize_label

TEXT_DIM = 128
TYPE_DIM = 16
KIND_INDEX = {c: i for i, c in enumerate(ConceptClass)}
NUM_KINDS = len(KIND_INDEX)


class EmbeddingProvider(Protocol):
    name: str
    dim: int

    def embed(self, texts: Sequence[str]) -> np.ndarray: ...


@lru_cache(maxsize=65536)
def _trigram_vector(text: str, dim: int) -> tuple[float, ...]:
    s = f" {normalize_label(text)} "
    vec = [0.0] * dim
    for i in range(len(s) - 2):
        digest = hashlib.blake2b(s[i:i + 3].encode("utf-8"), digest_size=8).digest()
        h = int.from_bytes(digest, "little")
        vec[h % dim] += 1.0 if (h >> 63) & 1 else -1.0
    norm = sum(v * v for v in vec) ** 0.5
    return tuple(v / norm for v in vec) if norm else tuple(vec)


class OfflineEmbeddings:
    """Signed feature hashing of character trigrams, unit-normalized."""

    name = "offline"

    def __init__(self, dim: int = 256):
        self.dim = dim

    def embed(self, texts: Sequence[str]) -> np.ndarray:
        if not texts:
            return np.zeros((0, self.dim))
        return np.array([_trigram_vector(t, self.dim) for t in texts], dtype=np.float64)


class HttpEmbeddings:
    """OpenAI-compatible ``/embeddings`` endpoint."""

    name = "http"

    def __init__(self, model: str, dim: int, base_url: str | None = None, api_key: str | None = None,
                 transport=None):
        import httpx

        self.model = model
        self.dim = dim
        self.base_url = (base_url or os.environ.get("FMEA_LLM_BASE_URL") or "").rstrip("/")
        if not self.base_url:
            raise ProviderUnavailable("FMEA_LLM_BASE_URL is not set")
        key = api_key or os.environ.get("FMEA_LLM_API_KEY")
        headers = {"Authorization": f"Bearer {key}"} if key else {}
        self._client = httpx.Client(timeout=60.0, headers=headers, transport=transport)

    def embed(self, texts: Sequence[str]) -> np.ndarray:
        import httpx

        if not texts:
            return np.zeros((0, self.dim))
        try:
            resp = self._client.post(f"{self.base_url}/embeddings", json={"model": self.model, "input": list(texts)})
            resp.raise_for_status()
            data = sorted(resp.json()["data"], key=lambda d: d["index"])
            out = np.array([d["embedding"] for d in data], dtype=np.float64)
        except (httpx.HTTPError, KeyError, ValueError) as exc:
            raise ProviderUnavailable(f"embedding request failed: {exc}") from None
        if out.shape != (len(texts), self.dim):
            raise ProviderUnavailable(f"expected {(len(texts), self.dim)} embeddings, got {out.shape}")
        return out


def embed_texts(provider: EmbeddingProvider, texts: Sequence[str]) -> np.ndarray:
    for i, t in enumerate(texts):
        if not t or not t.strip():
            raise EmptyText(i)
    out = provider.embed(list(texts))
    return out.reshape(len(texts), provider.dim)


@dataclass
class PcaModel:
    mean: np.ndarray  # (D,)
    components: np.ndarray  # (out_dim, D); zero rows beyond the data rank
    explained_variance: np.ndarray  # (out_dim,)

    @property
    def in_dim(self) -> int:
        return self.mean.shape[0]

    @property
    def out_dim(self) -> int:
        return self.components.shape[0]

    def to_json(self) -> dict:
        return {
            "mean": self.mean.tolist(),
            "components": self.components.tolist(),
            "explained_variance": self.explained_variance.tolist(),
        }

    @classmethod
    def from_json(cls, obj: dict) -> "PcaModel":
        return cls(
            np.asarray(obj["mean"], dtype=np.float64),
            np.asarray(obj["components"], dtype=np.float64).reshape(len(obj["explained_variance"]), -1),
            np.asarray(obj["explained_variance"], dtype=np.float64),
        )


def fit_pca(vectors: np.ndarray, out_dim: int = TEXT_DIM) -> PcaModel:
    """Top principal directions from the eigendecomposition of the sample covariance."""
    x = np.asarray(vectors, dtype=np.float64)
    if x.ndim != 2 or x.shape[0] < 2:
        raise DegenerateInput("PCA needs at least two rows")
    if np.all(x == x[0]):
        raise DegenerateInput("all rows are identical")
    mean = x.mean(axis=0)
    centered = x - mean
    cov = centered.T @ centered / (x.shape[0] - 1)
    evals, evecs = np.linalg.eigh(cov)
    order = np.argsort(evals)[::-1]
    evals, evecs = evals[order], evecs[:, order]
    tol = max(evals[0], 0.0) * 1e-10 + 1e-300
    d = x.shape[1]
    components = np.zeros((out_dim, d))
    explained = np.zeros(out_dim)
    for i in range(min(out_dim, d)):
        if evals[i] <= tol:
            break
        v = evecs[:, i]
        if v[np.argmax(np.abs(v))] < 0:
            v = -v
        components[i] = v
        explained[i] = evals[i]
    return PcaModel(mean, components, explained)


def project(pca: PcaModel, vectors: np.ndarray) -> np.ndarray:
    x = np.asarray(vectors, dtype=np.float64)
    if x.ndim != 2 or x.shape[1] != pca.in_dim:
        raise DimensionMismatch(f"expected width {pca.in_dim}, got {x.shape}")
    return (x - pca.mean) @ pca.components.T


def init_type_table(rng: np.random.Generator, dim: int = TYPE_DIM) -> np.ndarray:
    return rng.normal(0.0, 0.1, size=(NUM_KINDS, dim))


@dataclass
class FeatureMatrix:
    """Projected text block plus node kinds; the type block is looked up from a table."""

    text: np.ndarray  # (N, 128)
    kinds: np.ndarray  # (N,) int
    type_table: np.ndarray  # (6, 16)

    @property
    def rows(self) -> np.ndarray:
        return np.hstack([self.text, self.type_table[self.kinds]])

    @property
    def width(self) -> int:
        return self.text.shape[1] + self.type_table.shape[1]

    def __len__(self) -> int:
        return self.text.shape[0]


def node_kinds(g: KnowledgeGraph) -> np.ndarray:
    return np.array([KIND_INDEX[n.kind] for n in g.nodes], dtype=np.int64)


def fit_graph_pca(g: KnowledgeGraph, provider: EmbeddingProvider, out_dim: int = TEXT_DIM) -> PcaModel:
    return fit_pca(embed_texts(provider, [n.label for n in g.nodes]), out_dim)


def assemble_node_features(
    g: KnowledgeGraph, pca: PcaModel, provider: EmbeddingProvider, type_table: np.ndarray
) -> FeatureMatrix:
    if type_table.shape[0] != NUM_KINDS:
        raise DimensionMismatch(f"type table needs {NUM_KINDS} rows, got {type_table.shape[0]}")
    labels = [n.label for n in g.nodes]
    text = project(pca, embed_texts(provider, labels)) if labels else np.zeros((0, pca.out_dim))
    return FeatureMatrix(text, node_kinds(g), type_table)


def provider_info(provider: EmbeddingProvider) -> dict:
    info = {"name": provider.name, "dim": provider.dim}
    if getattr(provider, "model", None):
        info["model"] = provider.model
    return info


def make_provider(info: dict) -> EmbeddingProvider:
    """Rebuild the embedding provider recorded in a checkpoint."""
    name = info.get("name", "offline")
    if name == "offline":
        return OfflineEmbeddings(int(info.get("dim", 256)))
    if name == "http":
        return HttpEmbeddings(info["model"], int(info["dim"]))
    raise ProviderUnavailable(f"unknown embedding provider {name!r}")
