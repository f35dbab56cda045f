"""Vocabulary and word embeddings for the closed query language.

The template vocabulary is small (< 200 words), so the default table is
random-initialized and trained with the tagger. A pretrained embedding file
(one line per word: the word followed by its coordinates) can alternatively
seed the table; rows found in the file are frozen, missing words stay
trainable.
"""

from __future__ import annotations

from pathlib import Path

import numpy as np

from .neural import Parameter, Tensor, gather_rows

DEFAULT_EMBED_DIM = 50
ABSTRACTION_CANONICAL = "item"


class OOVError(KeyError):
    """Raised for a token outside the vocabulary; carries the token."""

    def __init__(self, token: str):
        super().__init__(f"OOV: {token!r}")
        self.token = token


class EmbeddingTable:
    def __init__(self, words: list[str], vectors: np.ndarray,
                 row_trainable: np.ndarray):
        if len(words) != len(set(words)):
            raise ValueError("duplicate vocabulary entry")
        if vectors.shape[0] != len(words):
            raise ValueError("vector count does not match vocabulary")
        self.words = list(words)
        self.index = {w: i for i, w in enumerate(words)}
        mask = np.repeat(row_trainable[:, None], vectors.shape[1], axis=1)
        self.param = Parameter("embeddings", vectors, trainable_mask=mask)
        self.row_trainable = row_trainable

    @property
    def dim(self) -> int:
        return self.param.data.shape[1]

    @property
    def trainable(self) -> bool:
        return bool(self.row_trainable.any())

    def __contains__(self, token: str) -> bool:
        return token in self.index

    def token_id(self, token: str) -> int:
        try:
            return self.index[token]
        except KeyError:
            raise OOVError(token) from None

    def token_ids(self, tokens: list[str]) -> np.ndarray:
        return np.array([self.token_id(t) for t in tokens], dtype=np.int64)

    def embed(self, token: str) -> np.ndarray:
        """Row lookup as a plain vector (inference path)."""
        return self.param.data[self.token_id(token)].copy()

    def embed_phrase(self, tokens: list[str]) -> np.ndarray:
        if not tokens:
            raise ValueError("empty phrase")
        return np.mean([self.embed(t) for t in tokens], axis=0)

    def lookup(self, ids: np.ndarray) -> Tensor:
        """Differentiable row lookup (training path)."""
        return gather_rows(self.param, ids)

    def dump_vocabulary(self, path: str | Path) -> None:
        with open(path, "w", encoding="utf-8") as fh:
            for word in sorted(self.words):
                fh.write(word + "\n")

    @staticmethod
    def random(vocabulary: list[str], dim: int = DEFAULT_EMBED_DIM,
               seed: int = 0) -> "EmbeddingTable":
        rng = np.random.Generator(np.random.PCG64(np.random.SeedSequence([seed, len(vocabulary)])))
        vectors = rng.uniform(-0.1, 0.1, (len(vocabulary), dim))
        return EmbeddingTable(vocabulary, vectors, np.ones(len(vocabulary), dtype=bool))


def _parse_embedding_file(path: str | Path, dim: int) -> dict[str, np.ndarray]:
    loaded: dict[str, np.ndarray] = {}
    with open(path, "r", encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            line = line.strip()
            if not line:
                continue
            parts = line.split()
            if len(parts) != dim + 1:
                raise ValueError(f"malformed embedding line {lineno}: "
                                 f"expected {dim + 1} fields, found {len(parts)}")
            word = parts[0]
            if word in loaded:
                raise ValueError(f"duplicate vocabulary entry: {word!r} (line {lineno})")
            try:
                vec = np.array([float(v) for v in parts[1:]], dtype=np.float64)
            except ValueError as exc:
                raise ValueError(f"malformed embedding line {lineno}: {exc}") from None
            loaded[word] = vec
    return loaded


def load_embeddings(path: str | Path, vocabulary: list[str],
                    dim: int = DEFAULT_EMBED_DIM, seed: int = 0) -> EmbeddingTable:
    """Build a table from a vector file; file rows frozen, absentees trainable."""
    loaded = _parse_embedding_file(path, dim)
    rng = np.random.Generator(np.random.PCG64(np.random.SeedSequence([seed, len(vocabulary)])))
    vectors = np.empty((len(vocabulary), dim))
    trainable = np.empty(len(vocabulary), dtype=bool)
    for i, word in enumerate(vocabulary):
        if word in loaded:
            vectors[i] = loaded[word]
            trainable[i] = False
        else:
            vectors[i] = rng.uniform(-0.1, 0.1, dim)
            trainable[i] = True
    return EmbeddingTable(vocabulary, vectors, trainable)
