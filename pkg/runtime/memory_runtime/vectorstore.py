"""Embedded ephemeral vector collections with deterministic embeddings.

A minimal stand-in for the external vector-database client: only the
surface the seed programs exercise (get_or_create_collection, add, query,
count). Embeddings are hashed bags of tokens, so retrieval ordering is
reproducible across sessions with no model downloads. Nothing survives
process exit.
"""

from __future__ import annotations

import hashlib
import math
import re

EMBEDDING_DIMENSION = 64

_TOKEN = re.compile(r"\w+")


def embed_text(text: str, dimension: int = EMBEDDING_DIMENSION) -> list[float]:
    """Unit-norm hashed bag-of-tokens vector; pure and deterministic."""
    vector = [0.0] * dimension
    for token in _TOKEN.findall(text.lower()):
        digest = hashlib.md5(token.encode("utf-8")).digest()
        index = int.from_bytes(digest[:4], "big") % dimension
        vector[index] += 1.0 if digest[4] % 2 == 0 else -1.0
    norm = math.sqrt(sum(component * component for component in vector))
    if norm == 0.0:
        vector[0] = 1.0
        return vector
    return [component / norm for component in vector]


class Collection:
    def __init__(self, name: str):
        self.name = name
        self._ids: list[str] = []
        self._documents: dict[str, str] = {}
        self._vectors: dict[str, list[float]] = {}

    def add(self, documents, ids, metadatas=None, embeddings=None) -> None:
        if len(documents) != len(ids):
            raise ValueError("documents and ids must have equal length")
        if embeddings is not None and len(embeddings) != len(ids):
            raise ValueError("embeddings and ids must have equal length")
        for position, (doc_id, document) in enumerate(zip(ids, documents)):
            if doc_id in self._documents:
                raise ValueError(f"duplicate document id {doc_id!r}")
            self._ids.append(doc_id)
            self._documents[doc_id] = document
            if embeddings is not None:
                self._vectors[doc_id] = list(embeddings[position])
            else:
                self._vectors[doc_id] = embed_text(document)

    def count(self) -> int:
        return len(self._ids)

    def query(self, query_texts, n_results: int = 5, **_) -> dict:
        """Top-n documents per query text by cosine distance (1 - dot).

        Ties break toward earlier insertion, keeping ordering stable.
        """
        all_ids, all_documents, all_distances = [], [], []
        for text in query_texts:
            query_vector = embed_text(text)
            scored = []
            for position, doc_id in enumerate(self._ids):
                vector = self._vectors[doc_id]
                dot = sum(q * v for q, v in zip(query_vector, vector))
                scored.append((1.0 - dot, position, doc_id))
            scored.sort()
            top = scored[: max(0, min(n_results, len(scored)))]
            all_ids.append([doc_id for _, _, doc_id in top])
            all_documents.append([self._documents[doc_id] for _, _, doc_id in top])
            all_distances.append([distance for distance, _, _ in top])
        return {"ids": all_ids, "documents": all_documents, "distances": all_distances}


class EphemeralClient:
    """Fresh in-process client; collections live only for the session."""

    def __init__(self):
        self._collections: dict[str, Collection] = {}

    def get_or_create_collection(self, name: str) -> Collection:
        if name not in self._collections:
            self._collections[name] = Collection(name)
        return self._collections[name]

    def list_collections(self) -> list[str]:
        return list(self._collections)
