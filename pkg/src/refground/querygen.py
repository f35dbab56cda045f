"""Query generation from scene graphs.

Templates sample referring expressions under per-split ambiguity constraints
and emit, for every query, the gold tag sequence, the target index, and an
execution trace (per-module boolean targets) derived from the scene graph.
A brute-force symbolic executor doubles as the dataset oracle: a record is
only valid if the executor returns exactly the target.

Split patterns:
  Cat    category alone identifies the object
  Col    several objects share the category, color resolves it
  Loc    category (optionally + color) leaves several candidates, an
         absolute location word resolves them
  1-Hop  subject-relation-object triplet of bare entities
  2-Hop  nested triplets, attributes/locations may decorate any group
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .scene import ABSOLUTE_TO_RELATIVE, Catalogue, SceneGraph
from .scenegen import rng_from
from .tags import Tag, format_tag, parse_tag, validate_tags

SPLITS = ("Cat", "Col", "Loc", "1-Hop", "2-Hop")

DETERMINER = "the"
VERB_PHRASES = (("grasp",), ("fetch",), ("give", "me"), ("pick", "up"))
CONNECTOR = ("that", "is")
ABSTRACTION_WORDS = ("item", "object", "thing")

# Surface phrase -> relative relation it denotes.
RELATION_PHRASES = (
    (("behind",), "behind"),
    (("in", "front", "of"), "front"),
    (("left", "from"), "left"),
    (("right", "from"), "right"),
    (("next", "to"), "next to"),
    (("closer", "than"), "closer"),
    (("further", "than"), "further"),
    (("bigger", "than"), "bigger"),
    (("smaller", "than"), "smaller"),
)
PHRASE_TO_RELATION = {" ".join(toks): rel for toks, rel in RELATION_PHRASES}

VERB_PROB = 0.4
DET_PROB = 0.7
ALIAS_PROB = 0.3
ABS_PROB = 0.15
LOC_ATT_PROB = 0.4    # chance a Loc query also carries the color
HOP2_ATT_PROB = 0.3   # per-group decoration chances in 2-Hop queries
HOP2_LOC_PROB = 0.2
TEMPLATE_RETRIES = 50


def vocabulary(catalogue: Catalogue) -> list[str]:
    """Every token the templates can emit, sorted."""
    words: set[str] = set()
    for cat in catalogue.categories:
        words.update(cat.split())
    for color in catalogue.colors:
        words.add(color.name)
    for inst in catalogue.instances:
        if inst.alias:
            words.add(inst.alias)
    words.update(ABSOLUTE_TO_RELATIVE)
    for toks, _ in RELATION_PHRASES:
        words.update(toks)
    words.update(ABSTRACTION_WORDS)
    words.add(DETERMINER)
    words.update(CONNECTOR)
    for verb in VERB_PHRASES:
        words.update(verb)
    return sorted(words)


@dataclass
class GroupTrace:
    group: int
    entity_word: str
    is_abs: bool
    entity_targets: np.ndarray                    # N booleans
    attribute_word: str | None = None
    attribute_targets: np.ndarray | None = None   # N booleans
    location_word: str | None = None
    location_pairwise: np.ndarray | None = None   # N x N booleans


@dataclass
class HopTrace:
    hop: int
    relation_word: str      # surface phrase, e.g. "in front of"
    relation: str           # underlying predicate name
    relation_pairwise: np.ndarray


@dataclass
class ExecutionTrace:
    groups: list[GroupTrace]
    hops: list[HopTrace]
    final_target: int


@dataclass
class QueryRecord:
    tokens: list[str]
    tags: list[Tag]
    target_index: int
    split: str
    trace: ExecutionTrace
    scene_id: int = 0


# ---------------------------------------------------------------------------
# Scene lookups


def _categories(scene: SceneGraph, catalogue: Catalogue) -> list[str]:
    return [catalogue.instances[o.instance_id].category for o in scene.objects]


def _colors(scene: SceneGraph, catalogue: Catalogue) -> list[str]:
    return [catalogue.instances[o.instance_id].color for o in scene.objects]


def _aliases(scene: SceneGraph, catalogue: Catalogue) -> list[str | None]:
    return [catalogue.instances[o.instance_id].alias for o in scene.objects]


def entity_mask(scene: SceneGraph, catalogue: Catalogue, phrase: str) -> np.ndarray:
    """Objects matching an entity phrase: category, alias, or abstraction."""
    n = len(scene.objects)
    if phrase in ABSTRACTION_WORDS:
        return np.ones(n, dtype=bool)
    if phrase in catalogue.categories:
        cats = _categories(scene, catalogue)
        return np.array([c == phrase for c in cats])
    aliases = _aliases(scene, catalogue)
    return np.array([a == phrase for a in aliases])


def attribute_mask(scene: SceneGraph, catalogue: Catalogue, color: str) -> np.ndarray:
    cols = _colors(scene, catalogue)
    return np.array([c == color for c in cols])


def location_filter(scene: SceneGraph, candidates: np.ndarray, loc_word: str) -> np.ndarray:
    """Candidates that stand in the mapped relation to every other candidate."""
    out = np.zeros(len(candidates), dtype=bool)
    rel = ABSOLUTE_TO_RELATIVE.get(loc_word)
    if rel is None:
        return out
    idx = np.flatnonzero(candidates)
    if len(idx) == 0:
        return out
    sub = scene.relations[rel][np.ix_(idx, idx)]
    # diagonal is always false, so a full row off the diagonal sums to k-1
    winners = sub.sum(axis=1) == len(idx) - 1
    out[idx[winners]] = True
    return out


# ---------------------------------------------------------------------------
# Symbolic execution (the oracle)


@dataclass
class _SymbolicGroup:
    entity_tokens: list[str] = field(default_factory=list)
    is_abs: bool = False
    attribute_tokens: list[str] = field(default_factory=list)
    location_tokens: list[str] = field(default_factory=list)


def _structure_from_tags(tokens: list[str], tags: list[Tag]):
    if len(tokens) != len(tags):
        raise ValueError("unparseable program: token/tag length mismatch")
    try:
        hop_count = validate_tags(tags)
    except ValueError as exc:
        raise ValueError(f"unparseable program: {exc}") from None
    n_groups = hop_count + 1
    groups = [_SymbolicGroup() for _ in range(n_groups)]
    rels: dict[int, list[str]] = {k: [] for k in range(hop_count)}
    for token, (role, k) in zip(tokens, tags):
        if role == "MASK":
            continue
        if role == "REL":
            rels[k].append(token)
        elif role == "ENT":
            groups[k].entity_tokens.append(token)
        elif role == "ABS":
            groups[k].entity_tokens.append(token)
            groups[k].is_abs = True
        elif role == "ATT":
            groups[k].attribute_tokens.append(token)
        elif role == "LOC":
            groups[k].location_tokens.append(token)
    return groups, [" ".join(rels[k]) for k in range(hop_count)]


def _unary_survivors(scene: SceneGraph, catalogue: Catalogue,
                     group: _SymbolicGroup) -> np.ndarray:
    mask = entity_mask(scene, catalogue, " ".join(group.entity_tokens))
    if group.attribute_tokens:
        mask = mask & attribute_mask(scene, catalogue, " ".join(group.attribute_tokens))
    if group.location_tokens:
        mask = location_filter(scene, mask, " ".join(group.location_tokens))
    return mask


def symbolic_execute(scene: SceneGraph, tokens: list[str], tags: list[Tag],
                     catalogue: Catalogue) -> set[int]:
    """Filter-and-relate over the scene graph; returns surviving indices."""
    groups, rel_phrases = _structure_from_tags(tokens, tags)
    survivors = _unary_survivors(scene, catalogue, groups[-1])
    for k in range(len(rel_phrases) - 1, -1, -1):
        rel = PHRASE_TO_RELATION.get(rel_phrases[k])
        if rel is None:
            related = np.zeros(len(scene.objects), dtype=bool)
        else:
            related = scene.relations[rel] @ survivors.astype(np.int64) > 0
        survivors = _unary_survivors(scene, catalogue, groups[k]) & related
    return set(int(i) for i in np.flatnonzero(survivors))


def classify_split(tags: list[Tag]) -> str:
    roles = {role for role, _ in tags}
    if "REL" in roles:
        hops = len({k for role, k in tags if role == "REL"})
        return "2-Hop" if hops >= 2 else "1-Hop"
    if "LOC" in roles:
        return "Loc"
    if "ATT" in roles:
        return "Col"
    return "Cat"


# ---------------------------------------------------------------------------
# Template assembly


@dataclass
class _GroupSpec:
    """One entity phrase with optional decorations, before surface assembly."""
    entity_tokens: list[str]
    is_abs: bool
    entity_word: str                 # phrase used in trace/datasets
    att: str | None = None
    loc: str | None = None


def _surface_group(spec: _GroupSpec, k: int, rng: np.random.Generator,
                   items: list[tuple[str, str, int]]) -> None:
    if rng.random() < DET_PROB:
        items.append((DETERMINER, "MASK", k))
    if spec.loc:
        items.append((spec.loc, "LOC", k))
    if spec.att:
        items.append((spec.att, "ATT", k))
    role = "ABS" if spec.is_abs else "ENT"
    for tok in spec.entity_tokens:
        items.append((tok, role, k))


def _assemble(rng: np.random.Generator, groups: list[_GroupSpec],
              rel_phrases: list[tuple[str, ...]]) -> tuple[list[str], list[Tag]]:
    items: list[tuple[str, str, int]] = []
    if rng.random() < VERB_PROB:
        for tok in VERB_PHRASES[int(rng.integers(len(VERB_PHRASES)))]:
            items.append((tok, "MASK", 0))
    _surface_group(groups[0], 0, rng, items)
    for k, phrase in enumerate(rel_phrases):
        if k > 0:
            for tok in CONNECTOR:
                items.append((tok, "MASK", k))
        for tok in phrase:
            items.append((tok, "REL", k))
        _surface_group(groups[k + 1], k + 1, rng, items)
    tokens = [tok for tok, _, _ in items]
    tags: list[Tag] = [(role, k) for _, role, k in items]
    return tokens, tags


def _group_trace(scene: SceneGraph, catalogue: Catalogue, k: int,
                 spec: _GroupSpec) -> GroupTrace:
    ent_targets = entity_mask(scene, catalogue, spec.entity_word)
    att_targets = attribute_mask(scene, catalogue, spec.att) if spec.att else None
    loc_matrix = scene.relations[ABSOLUTE_TO_RELATIVE[spec.loc]].copy() if spec.loc else None
    return GroupTrace(
        group=k,
        entity_word=spec.entity_word,
        is_abs=spec.is_abs,
        entity_targets=ent_targets,
        attribute_word=spec.att,
        attribute_targets=att_targets,
        location_word=spec.loc,
        location_pairwise=loc_matrix,
    )


def _unary_mask_for_spec(scene: SceneGraph, catalogue: Catalogue,
                         spec: _GroupSpec) -> np.ndarray:
    mask = entity_mask(scene, catalogue, spec.entity_word)
    if spec.att:
        mask = mask & attribute_mask(scene, catalogue, spec.att)
    if spec.loc:
        mask = location_filter(scene, mask, spec.loc)
    return mask


def _pick(rng: np.random.Generator, options: list):
    return options[int(rng.integers(len(options)))]


def _entity_spec(rng: np.random.Generator, scene: SceneGraph, catalogue: Catalogue,
                 allow_abs: bool, allow_alias: bool,
                 min_matches: int = 1) -> _GroupSpec | None:
    """Sample an entity surface with at least min_matches objects in scene."""
    if allow_abs and rng.random() < ABS_PROB and len(scene.objects) >= min_matches:
        word = _pick(rng, list(ABSTRACTION_WORDS))
        return _GroupSpec([word], True, word)
    cats = _categories(scene, catalogue)
    counts: dict[str, int] = {}
    for c in cats:
        counts[c] = counts.get(c, 0) + 1
    eligible = sorted(c for c, n in counts.items() if n >= min_matches)
    if not eligible:
        return None
    cat = _pick(rng, eligible)
    if allow_alias and rng.random() < ALIAS_PROB:
        aliased = sorted({
            catalogue.instances[o.instance_id].alias
            for o, c in zip(scene.objects, cats)
            if c == cat and catalogue.instances[o.instance_id].alias
        })
        aliased = [a for a in aliased
                   if np.count_nonzero(entity_mask(scene, catalogue, a)) >= min_matches]
        if aliased:
            alias = _pick(rng, aliased)
            return _GroupSpec([alias], False, alias)
    return _GroupSpec(cat.split(), False, cat)


# ---------------------------------------------------------------------------
# Per-split builders (return None when the attempt does not bind)


def _build_cat(rng, scene, catalogue):
    cats = _categories(scene, catalogue)
    counts: dict[str, int] = {}
    for c in cats:
        counts[c] = counts.get(c, 0) + 1
    unique = sorted(c for c, n in counts.items() if n == 1)
    if not unique:
        return None
    cat = _pick(rng, unique)
    target = cats.index(cat)
    alias = catalogue.instances[scene.objects[target].instance_id].alias
    if alias and rng.random() < ALIAS_PROB:
        spec = _GroupSpec([alias], False, alias)
    else:
        spec = _GroupSpec(cat.split(), False, cat)
    return [spec], [], target


def _build_col(rng, scene, catalogue):
    cats = _categories(scene, catalogue)
    cols = _colors(scene, catalogue)
    cat_counts: dict[str, int] = {}
    pair_counts: dict[tuple[str, str], int] = {}
    for c, col in zip(cats, cols):
        cat_counts[c] = cat_counts.get(c, 0) + 1
        pair_counts[(c, col)] = pair_counts.get((c, col), 0) + 1
    options = sorted((c, col) for (c, col), n in pair_counts.items()
                     if n == 1 and cat_counts[c] >= 2)
    if not options:
        return None
    cat, col = _pick(rng, options)
    target = next(i for i, (c, cc) in enumerate(zip(cats, cols))
                  if c == cat and cc == col)
    return [_GroupSpec(cat.split(), False, cat, att=col)], [], target


def _build_loc(rng, scene, catalogue):
    cats = _categories(scene, catalogue)
    cols = _colors(scene, catalogue)
    pair_counts: dict[tuple[str, str], int] = {}
    for c, col in zip(cats, cols):
        pair_counts[(c, col)] = pair_counts.get((c, col), 0) + 1
    options = sorted((c, col) for (c, col), n in pair_counts.items() if n >= 2)
    if not options:
        return None
    cat, col = _pick(rng, options)
    att = col if rng.random() < LOC_ATT_PROB else None
    spec = _GroupSpec(cat.split(), False, cat, att=att)
    base = entity_mask(scene, catalogue, cat)
    if att:
        base = base & attribute_mask(scene, catalogue, att)
    loc_words = sorted(ABSOLUTE_TO_RELATIVE)
    rng.shuffle(loc_words)
    for word in loc_words:
        survivors = location_filter(scene, base, word)
        if np.count_nonzero(survivors) == 1:
            spec.loc = word
            return [spec], [], int(np.flatnonzero(survivors)[0])
    return None


def _build_one_hop(rng, scene, catalogue):
    subject = _entity_spec(rng, scene, catalogue, allow_abs=True,
                           allow_alias=True, min_matches=2)
    anchor = _entity_spec(rng, scene, catalogue, allow_abs=True, allow_alias=True)
    if subject is None or anchor is None or subject.entity_word == anchor.entity_word:
        return None
    phrase, rel = _pick(rng, list(RELATION_PHRASES))
    subj_mask = entity_mask(scene, catalogue, subject.entity_word)
    anchor_mask = entity_mask(scene, catalogue, anchor.entity_word)
    related = scene.relations[rel] @ anchor_mask.astype(np.int64) > 0
    survivors = subj_mask & related
    if np.count_nonzero(survivors) != 1:
        return None
    return [subject, anchor], [phrase], int(np.flatnonzero(survivors)[0])


def _decorate(rng, scene, catalogue, spec: _GroupSpec) -> None:
    """Maybe attach a color and/or location word to a 2-Hop group."""
    if spec.is_abs or spec.entity_word not in catalogue.categories:
        return
    mask = entity_mask(scene, catalogue, spec.entity_word)
    if rng.random() < HOP2_ATT_PROB:
        cols = _colors(scene, catalogue)
        present = sorted({cols[i] for i in np.flatnonzero(mask)})
        if present:
            spec.att = _pick(rng, present)
            mask = mask & attribute_mask(scene, catalogue, spec.att)
    if rng.random() < HOP2_LOC_PROB and np.count_nonzero(mask) >= 2:
        loc_words = sorted(ABSOLUTE_TO_RELATIVE)
        rng.shuffle(loc_words)
        for word in loc_words:
            if np.count_nonzero(location_filter(scene, mask, word)) >= 1:
                spec.loc = word
                break


def _build_two_hop(rng, scene, catalogue):
    subject = _entity_spec(rng, scene, catalogue, allow_abs=True,
                           allow_alias=True, min_matches=2)
    middle = _entity_spec(rng, scene, catalogue, allow_abs=True, allow_alias=True)
    inner = _entity_spec(rng, scene, catalogue, allow_abs=True, allow_alias=True)
    if subject is None or middle is None or inner is None:
        return None
    if subject.entity_word == middle.entity_word or middle.entity_word == inner.entity_word:
        return None
    for spec in (subject, middle, inner):
        _decorate(rng, scene, catalogue, spec)
    phrase0, rel0 = _pick(rng, list(RELATION_PHRASES))
    phrase1, rel1 = _pick(rng, list(RELATION_PHRASES))
    s2 = _unary_mask_for_spec(scene, catalogue, inner)
    related1 = scene.relations[rel1] @ s2.astype(np.int64) > 0
    s1 = _unary_mask_for_spec(scene, catalogue, middle) & related1
    related0 = scene.relations[rel0] @ s1.astype(np.int64) > 0
    s0 = _unary_mask_for_spec(scene, catalogue, subject) & related0
    if np.count_nonzero(s0) != 1:
        return None
    return [subject, middle, inner], [phrase0, phrase1], int(np.flatnonzero(s0)[0])


_BUILDERS = {
    "Cat": _build_cat,
    "Col": _build_col,
    "Loc": _build_loc,
    "1-Hop": _build_one_hop,
    "2-Hop": _build_two_hop,
}


def generate_query(scene: SceneGraph, catalogue: Catalogue, split: str,
                   rng_seed: int | np.random.Generator) -> QueryRecord:
    """Sample an oracle-verified query of the requested split for this scene."""
    if split not in _BUILDERS:
        raise ValueError(f"unknown split {split!r}")
    rng = rng_seed if isinstance(rng_seed, np.random.Generator) else rng_from(rng_seed)
    builder = _BUILDERS[split]
    for _ in range(TEMPLATE_RETRIES):
        bound = builder(rng, scene, catalogue)
        if bound is None:
            continue
        specs, rel_phrases, target = bound
        tokens, tags = _assemble(rng, specs, rel_phrases)
        if symbolic_execute(scene, tokens, tags, catalogue) != {target}:
            continue
        trace = ExecutionTrace(
            groups=[_group_trace(scene, catalogue, k, spec)
                    for k, spec in enumerate(specs)],
            hops=[HopTrace(k, " ".join(phrase), PHRASE_TO_RELATION[" ".join(phrase)],
                           scene.relations[PHRASE_TO_RELATION[" ".join(phrase)]].copy())
                  for k, phrase in enumerate(rel_phrases)],
            final_target=target,
        )
        return QueryRecord(tokens=tokens, tags=tags, target_index=target,
                           split=split, trace=trace, scene_id=scene.scene_id)
    raise ValueError(f"no valid binding for split {split!r} in scene {scene.scene_id}")


def validate_record(scene: SceneGraph, record: QueryRecord,
                    catalogue: Catalogue) -> None:
    """Oracle validation plus trace-consistency checks; raises on violation."""
    if len(record.tokens) != len(record.tags):
        raise ValueError("token/tag length mismatch")
    validate_tags(record.tags)
    if classify_split(record.tags) != record.split:
        raise ValueError(f"record classified as {classify_split(record.tags)!r}, "
                         f"labeled {record.split!r}")
    result = symbolic_execute(scene, record.tokens, record.tags, catalogue)
    if result != {record.target_index}:
        raise ValueError(f"oracle returned {sorted(result)}, "
                         f"target is {record.target_index}")
    trace = record.trace
    if trace.final_target != record.target_index:
        raise ValueError("trace final_target mismatch")
    for g in trace.groups:
        expected = entity_mask(scene, catalogue, g.entity_word)
        if not np.array_equal(g.entity_targets, expected):
            raise ValueError(f"entity targets for group {g.group} inconsistent")
        if g.attribute_word is not None:
            expected = attribute_mask(scene, catalogue, g.attribute_word)
            if not np.array_equal(g.attribute_targets, expected):
                raise ValueError(f"attribute targets for group {g.group} inconsistent")
        if g.location_word is not None:
            rel = ABSOLUTE_TO_RELATIVE[g.location_word]
            if not np.array_equal(g.location_pairwise, scene.relations[rel]):
                raise ValueError(f"location matrix for group {g.group} inconsistent")
    g0 = trace.groups[0]
    if not g0.entity_targets[record.target_index]:
        raise ValueError("target fails its own entity filter")
    if g0.attribute_targets is not None and not g0.attribute_targets[record.target_index]:
        raise ValueError("target fails its own attribute filter")
    for hop in trace.hops:
        if PHRASE_TO_RELATION.get(hop.relation_word) != hop.relation:
            raise ValueError(f"hop {hop.hop} phrase/relation mismatch")
        if not np.array_equal(hop.relation_pairwise, scene.relations[hop.relation]):
            raise ValueError(f"hop {hop.hop} relation matrix inconsistent")


# ---------------------------------------------------------------------------
# Module datasets


@dataclass
class ModuleDatasets:
    tagger: list[tuple[list[str], list[Tag]]]
    entity: list[tuple[int, int, str, bool]]        # scene_id, obj, word, match
    attribute: list[tuple[int, int, str, bool]]
    spatial: list[tuple[int, str, np.ndarray]]      # scene_id, word, N x N targets


def build_module_datasets(corpus: list[tuple[SceneGraph, QueryRecord]]) -> ModuleDatasets:
    """Flatten execution traces into per-module supervision rows.

    Abstraction groups contribute entity rows under the canonical "item"
    word with all-true targets, which teaches the entity module to accept
    anything for abstraction queries.
    """
    from .lexicon import ABSTRACTION_CANONICAL

    tagger_rows: list[tuple[list[str], list[Tag]]] = []
    entity_rows: list[tuple[int, int, str, bool]] = []
    attribute_rows: list[tuple[int, int, str, bool]] = []
    spatial_rows: list[tuple[int, str, np.ndarray]] = []
    for scene, record in corpus:
        sid = scene.scene_id
        tagger_rows.append((record.tokens, record.tags))
        for g in record.trace.groups:
            word = ABSTRACTION_CANONICAL if g.is_abs else g.entity_word
            for obj, value in enumerate(g.entity_targets):
                entity_rows.append((sid, obj, word, bool(value)))
            if g.attribute_word is not None:
                for obj, value in enumerate(g.attribute_targets):
                    attribute_rows.append((sid, obj, g.attribute_word, bool(value)))
            if g.location_word is not None:
                spatial_rows.append((sid, g.location_word, g.location_pairwise))
        for hop in record.trace.hops:
            spatial_rows.append((sid, hop.relation_word, hop.relation_pairwise))
    return ModuleDatasets(tagger_rows, entity_rows, attribute_rows, spatial_rows)


# ---------------------------------------------------------------------------
# Serialization


def record_to_dict(record: QueryRecord) -> dict:
    trace = record.trace
    return {
        "scene_id": record.scene_id,
        "tokens": list(record.tokens),
        "tags": [format_tag(t) for t in record.tags],
        "target": record.target_index,
        "split": record.split,
        "trace": {
            "groups": [
                {
                    "group": g.group,
                    "entity_word": g.entity_word,
                    "is_abs": g.is_abs,
                    "entity_targets": [bool(v) for v in g.entity_targets],
                    "attribute_word": g.attribute_word,
                    "attribute_targets": None if g.attribute_targets is None
                    else [bool(v) for v in g.attribute_targets],
                    "location_word": g.location_word,
                    "location_pairwise": None if g.location_pairwise is None
                    else [bool(v) for v in g.location_pairwise.reshape(-1)],
                }
                for g in trace.groups
            ],
            "hops": [
                {
                    "hop": h.hop,
                    "relation_word": h.relation_word,
                    "relation": h.relation,
                    "relation_pairwise": [bool(v) for v in h.relation_pairwise.reshape(-1)],
                }
                for h in trace.hops
            ],
            "final_target": trace.final_target,
        },
    }


def record_from_dict(data: dict) -> QueryRecord:
    groups = []
    for g in data["trace"]["groups"]:
        ent = np.array(g["entity_targets"], dtype=bool)
        n = len(ent)
        groups.append(GroupTrace(
            group=g["group"],
            entity_word=g["entity_word"],
            is_abs=g["is_abs"],
            entity_targets=ent,
            attribute_word=g["attribute_word"],
            attribute_targets=None if g["attribute_targets"] is None
            else np.array(g["attribute_targets"], dtype=bool),
            location_word=g["location_word"],
            location_pairwise=None if g["location_pairwise"] is None
            else np.array(g["location_pairwise"], dtype=bool).reshape(n, n),
        ))
    n = len(groups[0].entity_targets)
    hops = [
        HopTrace(
            hop=h["hop"],
            relation_word=h["relation_word"],
            relation=h["relation"],
            relation_pairwise=np.array(h["relation_pairwise"], dtype=bool).reshape(n, n),
        )
        for h in data["trace"]["hops"]
    ]
    return QueryRecord(
        tokens=list(data["tokens"]),
        tags=[parse_tag(t) for t in data["tags"]],
        target_index=data["target"],
        split=data["split"],
        trace=ExecutionTrace(groups=groups, hops=hops,
                             final_target=data["trace"]["final_target"]),
        scene_id=data["scene_id"],
    )
