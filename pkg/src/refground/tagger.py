"""Word tagger and triplet-structure recovery.

A single bi-directional GRU layer contextualizes word embeddings; a linear
head over the concatenated hidden states scores the 18 tags per token. The
predicted (role, group) tags are then collapsed into per-group query
embeddings: tokens sharing a (role, group) tag are averaged, MASK tokens are
dropped, abstraction tokens resolve to the canonical "item" embedding, and
multi-token relation phrases average into one relation embedding per hop.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .lexicon import ABSTRACTION_CANONICAL, EmbeddingTable
from .neural import (
    AdamW,
    BiGru,
    Parameter,
    Tensor,
    concat,
    cross_entropy,
    gather_rows,
    matmul,
    softmax_rows,
)
from .scenegen import rng_from
from .tags import N_TAGS, ParseError, Tag, id_to_tag, tag_id, validate_tags

DEFAULT_HIDDEN = 256


@dataclass
class GroupQuery:
    """Recovered embeddings for one entity group."""
    q_ent: np.ndarray
    is_abs: bool
    q_att: np.ndarray | None = None
    q_loc: np.ndarray | None = None


@dataclass
class ParsedQuery:
    groups: list[GroupQuery]
    rels: list[np.ndarray]

    @property
    def hop_count(self) -> int:
        return len(self.rels)


def recover_structure(tokens: list[str], tags: list[Tag],
                      table: EmbeddingTable) -> ParsedQuery:
    """Average embeddings per (role, group) into the triplet structure."""
    hop_count = validate_tags(tags)
    n_groups = hop_count + 1
    buckets: dict[tuple[str, int], list[np.ndarray]] = {}
    abs_groups: set[int] = set()
    for token, (role, k) in zip(tokens, tags):
        if role == "MASK":
            continue
        if role == "ABS":
            abs_groups.add(k)
            continue
        buckets.setdefault((role, k), []).append(table.embed(token))
    groups = []
    for k in range(n_groups):
        ent_vectors = buckets.get(("ENT", k))
        if ent_vectors:
            q_ent, is_abs = np.mean(ent_vectors, axis=0), False
        elif k in abs_groups:
            q_ent, is_abs = table.embed(ABSTRACTION_CANONICAL), True
        else:
            raise ParseError("dangling relation")
        att = buckets.get(("ATT", k))
        loc = buckets.get(("LOC", k))
        groups.append(GroupQuery(
            q_ent=q_ent,
            is_abs=is_abs,
            q_att=None if att is None else np.mean(att, axis=0),
            q_loc=None if loc is None else np.mean(loc, axis=0),
        ))
    rels = [np.mean(buckets[("REL", k)], axis=0) for k in range(hop_count)]
    return ParsedQuery(groups=groups, rels=rels)


class Tagger:
    def __init__(self, table: EmbeddingTable, hidden: int = DEFAULT_HIDDEN,
                 seed: int = 0):
        self.table = table
        self.hidden = hidden
        rng = rng_from(seed, 17)
        self.gru = BiGru("tagger.gru", table.dim, hidden, rng)
        k = 1.0 / np.sqrt(2 * hidden)
        self.head = Parameter("tagger.head", rng.uniform(-k, k, (2 * hidden, N_TAGS)))

    def parameters(self) -> list[Parameter]:
        params = self.gru.parameters() + [self.head]
        if self.table.trainable:
            params.append(self.table.param)
        return params

    def named_arrays(self) -> dict[str, np.ndarray]:
        out = {p.name: p.data for p in self.gru.parameters() + [self.head]}
        out["embeddings"] = self.table.param.data
        return out

    def _logits(self, ids: np.ndarray) -> Tensor:
        """ids (B, T) -> logits (T*B, n_tags), rows in time-major order."""
        batch, length = ids.shape
        xs = [gather_rows(self.table.param, ids[:, t]) for t in range(length)]
        states = self.gru.run(xs)
        return matmul(concat(states, axis=0), self.head)

    def loss(self, ids: np.ndarray, label_ids: np.ndarray) -> Tensor:
        logits = self._logits(ids)
        return cross_entropy(logits, label_ids.T.reshape(-1))

    def predict_batch(self, ids: np.ndarray) -> np.ndarray:
        """Argmax tag ids, shape (B, T)."""
        batch, length = ids.shape
        logits = self._logits(ids).data.reshape(length, batch, N_TAGS)
        return logits.argmax(axis=2).T

    def tag(self, tokens: list[str]) -> tuple[list[Tag], np.ndarray]:
        """Tag one sentence; returns tags and the per-token tag distributions."""
        if not tokens:
            raise ValueError("empty token list")
        ids = self.table.token_ids(tokens).reshape(1, -1)
        logits = self._logits(ids)
        probs = softmax_rows(logits).data
        tags = [id_to_tag(int(i)) for i in probs.argmax(axis=1)]
        return tags, probs


# ---------------------------------------------------------------------------
# Training


@dataclass
class TaggerTrainConfig:
    batch_size: int = 64
    lr: float = 5e-4
    weight_decay: float = 1e-2
    epochs: int = 6
    patience: int = 2          # epochs without dev improvement before stopping
    hidden: int = DEFAULT_HIDDEN
    seed: int = 0


def encode_rows(rows: list[tuple[list[str], list[Tag]]],
                table: EmbeddingTable) -> list[tuple[np.ndarray, np.ndarray]]:
    return [
        (table.token_ids(tokens),
         np.array([tag_id(t) for t in tags], dtype=np.int64))
        for tokens, tags in rows
    ]


def _length_buckets(encoded) -> dict[int, list[int]]:
    buckets: dict[int, list[int]] = {}
    for i, (ids, _) in enumerate(encoded):
        buckets.setdefault(len(ids), []).append(i)
    return buckets


def _epoch_batches(buckets: dict[int, list[int]], batch_size: int,
                   seed: int, epoch: int) -> list[list[int]]:
    """Same-length batches in a deterministic per-epoch order."""
    rng = rng_from(seed, 23, epoch)
    batches: list[list[int]] = []
    for length in sorted(buckets):
        members = list(buckets[length])
        rng.shuffle(members)
        for i in range(0, len(members), batch_size):
            batches.append(members[i:i + batch_size])
    rng.shuffle(batches)
    return batches


def _stack_batch(encoded, batch: list[int]) -> tuple[np.ndarray, np.ndarray]:
    ids = np.stack([encoded[i][0] for i in batch])
    labels = np.stack([encoded[i][1] for i in batch])
    return ids, labels


def evaluate_tagger(tagger: Tagger, encoded) -> tuple[float, float]:
    """(token accuracy, sentence accuracy) over encoded rows."""
    buckets = _length_buckets(encoded)
    token_hits = token_total = sent_hits = 0
    for length in sorted(buckets):
        members = buckets[length]
        for i in range(0, len(members), 256):
            chunk = members[i:i + 256]
            ids, labels = _stack_batch(encoded, chunk)
            pred = tagger.predict_batch(ids)
            token_hits += int((pred == labels).sum())
            token_total += labels.size
            sent_hits += int((pred == labels).all(axis=1).sum())
    return token_hits / token_total, sent_hits / len(encoded)


def train_tagger(train_rows, dev_rows, table: EmbeddingTable,
                 cfg: TaggerTrainConfig,
                 start_step: int = 0, max_steps: int | None = None,
                 tagger: Tagger | None = None,
                 optimizer: AdamW | None = None, resume_state: dict | None = None):
    """Cross-entropy training with early stopping on dev sentence accuracy.

    Data order is a pure function of (seed, epoch), so a run paused by
    ``max_steps`` and resumed from its checkpoint (parameters, optimizer
    moments, step, early-stop state) is bit-identical to the uninterrupted
    run. The best dev snapshot is only restored once training finishes.
    Returns (tagger, optimizer, metrics, curve); curve rows are
    (step, lr, loss, dev_token_acc, dev_sentence_acc) with dev fields empty
    between evaluations.
    """
    if not train_rows:
        raise ValueError("empty training dataset")
    if tagger is None:
        tagger = Tagger(table, hidden=cfg.hidden, seed=cfg.seed)
    encoded_train = encode_rows(train_rows, table)
    encoded_dev = encode_rows(dev_rows, table)
    buckets = _length_buckets(encoded_train)
    steps_per_epoch = sum(-(-len(m) // cfg.batch_size) for m in buckets.values())
    total_steps = cfg.epochs * steps_per_epoch
    end_step = total_steps if max_steps is None else min(total_steps, start_step + max_steps)
    if optimizer is None:
        optimizer = AdamW(tagger.parameters(), lr=cfg.lr, total_steps=total_steps,
                          weight_decay=cfg.weight_decay)
    curve: list[tuple] = []
    best_metric = -1.0
    best_arrays: dict[str, np.ndarray] | None = None
    bad_evals = 0
    if resume_state:
        best_metric = resume_state["best_metric"]
        bad_evals = resume_state["bad_evals"]
        best_arrays = {k: v.copy() for k, v in resume_state["best_arrays"].items()}
    batches: list[list[int]] = []
    stopped = bad_evals > cfg.patience
    step = start_step
    while step < end_step and not stopped:
        epoch, pos = divmod(step, steps_per_epoch)
        if pos == 0 or not batches:
            batches = _epoch_batches(buckets, cfg.batch_size, cfg.seed, epoch)
        ids, labels = _stack_batch(encoded_train, batches[pos])
        optimizer.zero_grad()
        loss = tagger.loss(ids, labels)
        loss.backward()
        lr_now = optimizer.current_lr()
        optimizer.step()
        if pos == steps_per_epoch - 1:
            token_acc, sent_acc = evaluate_tagger(tagger, encoded_dev)
            curve.append((step, lr_now, float(loss.data), token_acc, sent_acc))
            if sent_acc > best_metric:
                best_metric = sent_acc
                best_arrays = {k: v.copy() for k, v in tagger.named_arrays().items()}
                bad_evals = 0
            else:
                bad_evals += 1
                if bad_evals > cfg.patience:
                    stopped = True
        else:
            curve.append((step, lr_now, float(loss.data), None, None))
        step += 1
    finished = stopped or step >= total_steps
    if best_arrays is None:
        best_arrays = {k: v.copy() for k, v in tagger.named_arrays().items()}
    if finished:
        for p in tagger.gru.parameters() + [tagger.head]:
            p.data[...] = best_arrays[p.name]
        table.param.data[...] = best_arrays["embeddings"]
    token_acc, sent_acc = evaluate_tagger(tagger, encoded_dev) if dev_rows else (0.0, 0.0)
    metrics = {"dev_token_acc": token_acc, "dev_sentence_acc": sent_acc,
               "best_dev_sentence_acc": best_metric, "steps": optimizer.step_count,
               "total_steps": total_steps, "bad_evals": bad_evals,
               "finished": finished, "best_arrays": best_arrays}
    return tagger, optimizer, metrics, curve


# ---------------------------------------------------------------------------
# Checkpointing


def tagger_arrays(tagger: Tagger, optimizer: AdamW | None = None) -> dict[str, np.ndarray]:
    arrays = dict(tagger.named_arrays())
    arrays["embeddings.trainable"] = tagger.table.row_trainable
    if optimizer is not None:
        arrays.update(optimizer.state_arrays())
    return arrays


def tagger_meta(tagger: Tagger, extra: dict | None = None) -> dict:
    meta = {
        "kind": "tagger",
        "vocab": list(tagger.table.words),
        "embed_dim": tagger.table.dim,
        "hidden": tagger.hidden,
    }
    if extra:
        meta.update(extra)
    return meta


def tagger_from_arrays(arrays: dict[str, np.ndarray], meta: dict) -> Tagger:
    table = EmbeddingTable(meta["vocab"], arrays["embeddings"].copy(),
                           arrays["embeddings.trainable"].copy())
    tagger = Tagger(table, hidden=meta["hidden"], seed=0)
    for p in tagger.gru.parameters() + [tagger.head]:
        p.data[...] = arrays[p.name]
    return tagger
