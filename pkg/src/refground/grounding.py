"""Matching modules and the composition engine.

Three matching networks share one architecture: project the visual feature,
gate it elementwise with the query embedding, L2-normalize, and project to a
single logit. The entity and attribute networks score objects against words;
the spatial network scores ordered object pairs (concatenated bbox features)
against relation/location words. Composition multiplies unary module
probabilities per group, optionally filters by the location module, and
aggregates across hops by maximizing the subject + relation + object score
sum over partner objects, innermost hop first.

Every intermediate score vector/matrix lands in the result trace, so a
failed grounding can be pinned on a specific module.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .features import ObjectRepresentation
from .neural import (
    AdamW,
    Parameter,
    Tensor,
    add,
    bce_with_logits,
    l2_normalize,
    matmul,
    mul,
)
from .scenegen import rng_from
from .tagger import ParsedQuery
from .tags import Tag, format_tag


def _sigmoid(x: np.ndarray) -> np.ndarray:
    out = np.empty_like(x, dtype=np.float64)
    pos = x >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-x[pos]))
    ez = np.exp(x[~pos])
    out[~pos] = ez / (1.0 + ez)
    return out


class MatchingNetwork:
    """Two-layer gated matcher: sigmoid(theta2 . normalize((theta1 z) * q) + b).

    The scalar output bias matters for ring-shaped predicates ("next to"):
    without it the logit is a linear form divided by a norm and can never
    cross zero as the pair distance grows, so the score ordering collapses.
    """

    def __init__(self, name: str, input_dim: int, joint_dim: int,
                 seed: int = 0, normalize_eps: float = 0.0):
        rng = rng_from(seed, 31, input_dim, joint_dim)
        k = 1.0 / np.sqrt(input_dim)
        self.name = name
        self.input_dim = input_dim
        self.joint_dim = joint_dim
        self.normalize_eps = normalize_eps
        self.theta1 = Parameter(f"{name}.theta1", rng.uniform(-k, k, (input_dim, joint_dim)))
        self.theta2 = Parameter(f"{name}.theta2",
                                rng.uniform(-1.0 / np.sqrt(joint_dim),
                                            1.0 / np.sqrt(joint_dim), (joint_dim, 1)))
        self.bias = Parameter(f"{name}.bias", np.zeros(1))

    def parameters(self) -> list[Parameter]:
        return [self.theta1, self.theta2, self.bias]

    def logits(self, z: Tensor, q: Tensor) -> Tensor:
        """Differentiable path; z (R, input_dim), q (R, joint_dim) or (joint_dim,)."""
        c = mul(matmul(z, self.theta1), q)
        return add(matmul(l2_normalize(c, eps=self.normalize_eps), self.theta2), self.bias)

    def logits_np(self, z: np.ndarray, q: np.ndarray) -> np.ndarray:
        """Inference path, identical arithmetic; returns (R,) raw logits."""
        c = (z @ self.theta1.data) * q
        norms = np.sqrt((c * c).sum(axis=1, keepdims=True))
        if self.normalize_eps <= 0.0:
            if np.any(norms == 0.0):
                raise ValueError("zero norm")
        else:
            norms = np.maximum(norms, self.normalize_eps)
        return ((c / norms) @ self.theta2.data + self.bias.data)[:, 0]

    def scores(self, z: np.ndarray, q: np.ndarray) -> np.ndarray:
        return _sigmoid(self.logits_np(z, q))

    def named_arrays(self) -> dict[str, np.ndarray]:
        return {self.theta1.name: self.theta1.data, self.theta2.name: self.theta2.data,
                self.bias.name: self.bias.data}

    def load_arrays(self, arrays: dict[str, np.ndarray]) -> None:
        self.theta1.data[...] = arrays[self.theta1.name]
        self.theta2.data[...] = arrays[self.theta2.name]
        self.bias.data[...] = arrays[self.bias.name]


def unary_match(net: MatchingNetwork, feature: np.ndarray, query: np.ndarray) -> float:
    """Probability that one object matches one word."""
    return float(net.scores(feature.reshape(1, -1), query)[0])


def pairwise_match(net: MatchingNetwork, b_n: np.ndarray, b_m: np.ndarray,
                   query: np.ndarray) -> float:
    return float(net.scores(np.concatenate([b_n, b_m]).reshape(1, -1), query)[0])


def pair_features(bboxes: np.ndarray) -> np.ndarray:
    """(N, 5) bbox features -> (N*N, 10) ordered-pair inputs, n-major."""
    n = bboxes.shape[0]
    left = np.repeat(bboxes, n, axis=0)
    right = np.tile(bboxes, (n, 1))
    return np.concatenate([left, right], axis=1)


def pairwise_matrix(net: MatchingNetwork, bboxes: np.ndarray,
                    query: np.ndarray) -> np.ndarray:
    """Full N x N pair score matrix; the diagonal is masked to 0."""
    n = bboxes.shape[0]
    scores = net.scores(pair_features(bboxes), query).reshape(n, n)
    np.fill_diagonal(scores, 0.0)
    return scores


def location_filter(unary: np.ndarray, pair_scores: np.ndarray) -> np.ndarray:
    """softmax_n of sum_{m != n} S_n S_m B[n, m]; a probability distribution."""
    matrix = pair_scores.copy()
    np.fill_diagonal(matrix, 0.0)
    logits = unary * (matrix @ unary)
    shifted = logits - logits.max()
    e = np.exp(shifted)
    return e / e.sum()


# ---------------------------------------------------------------------------
# Composition


@dataclass
class GroupScores:
    entity: np.ndarray
    attribute: np.ndarray | None
    location_pair_scores: np.ndarray | None
    location_probs: np.ndarray | None
    unary: np.ndarray


@dataclass
class HopScores:
    relation_matrix: np.ndarray
    aggregate: np.ndarray      # per-subject best sum after this hop


@dataclass
class GroundingTrace:
    groups: list[GroupScores]
    hops: list[HopScores]
    final: np.ndarray

    def replay_predicted(self) -> int:
        """Recompute the decision from the traced intermediates."""
        agg = self.groups[-1].unary
        for k in range(len(self.hops) - 1, -1, -1):
            sums = self.groups[k].unary[:, None] + self.hops[k].relation_matrix + agg[None, :]
            agg = sums.max(axis=1)
        return int(agg.argmax())


@dataclass
class GroundingResult:
    scores: np.ndarray
    predicted: int
    confidence: float
    low_confidence: bool
    trace: GroundingTrace
    tags: list[Tag] | None = None

    def to_dict(self) -> dict:
        out = {
            "predicted": self.predicted,
            "confidence": self.confidence,
            "low_confidence": self.low_confidence,
            "scores": [float(s) for s in self.scores],
            "tags": None if self.tags is None else [format_tag(t) for t in self.tags],
            "groups": [],
            "hops": [],
        }
        for g in self.trace.groups:
            out["groups"].append({
                "entity": [float(v) for v in g.entity],
                "attribute": None if g.attribute is None else [float(v) for v in g.attribute],
                "location": None if g.location_probs is None
                else [float(v) for v in g.location_probs],
                "unary": [float(v) for v in g.unary],
            })
        for h in self.trace.hops:
            out["hops"].append({
                "relation_matrix": [float(v) for v in h.relation_matrix.reshape(-1)],
                "aggregate": [float(v) for v in h.aggregate],
            })
        return out


LOW_CONFIDENCE = 0.5


def compose_and_ground(reps: list[ObjectRepresentation], parsed: ParsedQuery,
                       ent_net: MatchingNetwork, att_net: MatchingNetwork,
                       spt_net: MatchingNetwork) -> GroundingResult:
    """Score every object against the parsed query and pick the best.

    Unary per group: entity probability, times attribute probability when an
    attribute word is present (absent attribute multiplies by exactly 1),
    times the location distribution when a location word is present. Hops
    aggregate innermost-first: subject score = max over partners of
    (subject unary + pair relation score + partner aggregate).
    """
    if not reps:
        raise ValueError("empty scene")
    z_ent = np.stack([r.z_ent for r in reps])
    z_att = np.stack([r.z_att for r in reps])
    bfeat = np.stack([r.b for r in reps])
    group_scores: list[GroupScores] = []
    for g in parsed.groups:
        entity = ent_net.scores(z_ent, g.q_ent)
        unary = entity.copy()
        attribute = None
        if g.q_att is not None:
            attribute = att_net.scores(z_att, g.q_att)
            unary = unary * attribute
        loc_pairs = None
        loc_probs = None
        if g.q_loc is not None:
            loc_pairs = pairwise_matrix(spt_net, bfeat, g.q_loc)
            loc_probs = location_filter(unary, loc_pairs)
            unary = unary * loc_probs
        group_scores.append(GroupScores(entity, attribute, loc_pairs, loc_probs, unary))
    hops: list[HopScores] = []
    aggregate = group_scores[-1].unary
    for k in range(parsed.hop_count - 1, -1, -1):
        rel_matrix = pairwise_matrix(spt_net, bfeat, parsed.rels[k])
        sums = group_scores[k].unary[:, None] + rel_matrix + aggregate[None, :]
        aggregate = sums.max(axis=1)
        hops.append(HopScores(rel_matrix, aggregate))
    hops.reverse()
    scores = aggregate / (1.0 + 2.0 * parsed.hop_count)
    predicted = int(scores.argmax())
    confidence = float(scores[predicted])
    return GroundingResult(
        scores=scores,
        predicted=predicted,
        confidence=confidence,
        low_confidence=confidence < LOW_CONFIDENCE,
        trace=GroundingTrace(groups=group_scores, hops=hops, final=aggregate),
    )


def diagnose(result: GroundingResult, gold_tags: list[Tag], gold_target: int) -> str:
    """Failure class: tags wrong -> parsing; else wrong object -> perception."""
    if result.tags is None:
        raise ValueError("result carries no predicted tags")
    if list(result.tags) != list(gold_tags):
        return "parsing"
    if result.predicted != gold_target:
        return "perception"
    return "correct"


# ---------------------------------------------------------------------------
# Training


@dataclass
class UnaryDataset:
    """Materialized rows for the entity or attribute module."""
    features: np.ndarray   # (R, input_dim)
    queries: np.ndarray    # (R, embed_dim)
    targets: np.ndarray    # (R,) float 0/1


@dataclass
class SpatialRecord:
    pair_inputs: np.ndarray   # (N*N, 10)
    targets: np.ndarray       # (N*N,) float 0/1, row-major
    mask: np.ndarray          # (N*N,) bool, False on the diagonal
    query: np.ndarray         # (embed_dim,)


@dataclass
class ModuleTrainConfig:
    unary_batch: int = 256
    spatial_batch: int = 8
    lr: float = 1e-2
    weight_decay: float = 1e-2
    epochs: int = 12
    patience: int = 2
    joint_dim: int = 50
    seed: int = 0
    normalize_eps: float = 0.0


def unary_accuracy(net: MatchingNetwork, data: UnaryDataset) -> float:
    if len(data.targets) == 0:
        return 0.0
    hits = 0
    for i in range(0, len(data.targets), 4096):
        sl = slice(i, i + 4096)
        pred = net.scores(data.features[sl], data.queries[sl]) >= 0.5
        hits += int((pred == (data.targets[sl] >= 0.5)).sum())
    return hits / len(data.targets)


def spatial_accuracy(net: MatchingNetwork, records: list[SpatialRecord]) -> float:
    hits = total = 0
    for rec in records:
        pred = net.scores(rec.pair_inputs, rec.query) >= 0.5
        good = pred[rec.mask] == (rec.targets[rec.mask] >= 0.5)
        hits += int(good.sum())
        total += int(rec.mask.sum())
    return hits / total if total else 0.0


def train_unary_module(name: str, input_dim: int, train: UnaryDataset,
                       dev: UnaryDataset, cfg: ModuleTrainConfig,
                       start_step: int = 0, net: MatchingNetwork | None = None,
                       optimizer: AdamW | None = None):
    """Per-logit BCE over (feature, word) rows; early stop on dev accuracy."""
    rows = len(train.targets)
    if rows == 0:
        raise ValueError("empty training dataset")
    if net is None:
        net = MatchingNetwork(name, input_dim, cfg.joint_dim, seed=cfg.seed,
                              normalize_eps=cfg.normalize_eps)
    steps_per_epoch = -(-rows // cfg.unary_batch)
    total_steps = cfg.epochs * steps_per_epoch
    if optimizer is None:
        optimizer = AdamW(net.parameters(), lr=cfg.lr, total_steps=total_steps,
                          weight_decay=cfg.weight_decay)
    curve: list[tuple] = []
    best = -1.0
    best_arrays = None
    bad = 0
    order = np.empty(0, dtype=np.int64)
    for step in range(start_step, total_steps):
        epoch, pos = divmod(step, steps_per_epoch)
        if pos == 0:
            order = rng_from(cfg.seed, 41, epoch).permutation(rows)
        batch = order[pos * cfg.unary_batch:(pos + 1) * cfg.unary_batch]
        optimizer.zero_grad()
        logits = net.logits(Tensor(train.features[batch]), Tensor(train.queries[batch]))
        loss = bce_with_logits(logits, train.targets[batch].reshape(-1, 1))
        loss.backward()
        lr_now = optimizer.current_lr()
        optimizer.step()
        if pos == steps_per_epoch - 1:
            acc = unary_accuracy(net, dev)
            curve.append((step, lr_now, float(loss.data), acc))
            if acc > best:
                best, best_arrays, bad = acc, {k: v.copy() for k, v in net.named_arrays().items()}, 0
            else:
                bad += 1
                if bad > cfg.patience:
                    break
        else:
            curve.append((step, lr_now, float(loss.data), None))
    if best_arrays is not None:
        net.load_arrays(best_arrays)
    metrics = {"dev_acc": unary_accuracy(net, dev), "steps": optimizer.step_count,
               "total_steps": total_steps}
    return net, optimizer, metrics, curve


def train_spatial_module(train: list[SpatialRecord], dev: list[SpatialRecord],
                         cfg: ModuleTrainConfig, start_step: int = 0,
                         net: MatchingNetwork | None = None,
                         optimizer: AdamW | None = None):
    """BCE over flattened pair matrices; diagonal excluded from the loss."""
    if not train:
        raise ValueError("empty training dataset")
    if net is None:
        net = MatchingNetwork("spt", 10, cfg.joint_dim, seed=cfg.seed,
                              normalize_eps=cfg.normalize_eps)
    steps_per_epoch = -(-len(train) // cfg.spatial_batch)
    total_steps = cfg.epochs * steps_per_epoch
    if optimizer is None:
        optimizer = AdamW(net.parameters(), lr=cfg.lr, total_steps=total_steps,
                          weight_decay=cfg.weight_decay)
    curve: list[tuple] = []
    best = -1.0
    best_arrays = None
    bad = 0
    order = np.empty(0, dtype=np.int64)
    for step in range(start_step, total_steps):
        epoch, pos = divmod(step, steps_per_epoch)
        if pos == 0:
            order = rng_from(cfg.seed, 43, epoch).permutation(len(train))
        chosen = order[pos * cfg.spatial_batch:(pos + 1) * cfg.spatial_batch]
        inputs = np.concatenate([train[i].pair_inputs for i in chosen])
        queries = np.concatenate([
            np.broadcast_to(train[i].query, (train[i].pair_inputs.shape[0],
                                             train[i].query.shape[0]))
            for i in chosen
        ])
        targets = np.concatenate([train[i].targets for i in chosen]).reshape(-1, 1)
        mask = np.concatenate([train[i].mask for i in chosen]).reshape(-1, 1)
        optimizer.zero_grad()
        logits = net.logits(Tensor(inputs), Tensor(queries))
        loss = bce_with_logits(logits, targets, mask=mask)
        loss.backward()
        lr_now = optimizer.current_lr()
        optimizer.step()
        if pos == steps_per_epoch - 1:
            acc = spatial_accuracy(net, dev)
            curve.append((step, lr_now, float(loss.data), acc))
            if acc > best:
                best, best_arrays, bad = acc, {k: v.copy() for k, v in net.named_arrays().items()}, 0
            else:
                bad += 1
                if bad > cfg.patience:
                    break
        else:
            curve.append((step, lr_now, float(loss.data), None))
    if best_arrays is not None:
        net.load_arrays(best_arrays)
    metrics = {"dev_acc": spatial_accuracy(net, dev), "steps": optimizer.step_count,
               "total_steps": total_steps}
    return net, optimizer, metrics, curve
