"""The 18-tag vocabulary: 6 roles x 3 group indices.

A tag is a (role, group) pair. Group indices tie attribute/location/relation
words to their entity phrase; relation k links group k (subject side) to
group k+1 (object side). MASK marks ignorable words, ABS marks abstraction
words ("item") that stand for any entity.
"""

from __future__ import annotations

ROLES = ("ENT", "ATT", "LOC", "REL", "MASK", "ABS")
N_GROUPS = 3
N_TAGS = len(ROLES) * N_GROUPS

Tag = tuple[str, int]


class ParseError(ValueError):
    """Structurally invalid tag sequence."""


def tag_id(tag: Tag) -> int:
    role, group = tag
    return ROLES.index(role) * N_GROUPS + group


def id_to_tag(index: int) -> Tag:
    if not 0 <= index < N_TAGS:
        raise ValueError(f"tag id {index} out of range")
    return (ROLES[index // N_GROUPS], index % N_GROUPS)


def format_tag(tag: Tag) -> str:
    return f"{tag[0]}:{tag[1]}"


def parse_tag(text: str) -> Tag:
    role, _, group = text.partition(":")
    if role not in ROLES or not group.isdigit() or not 0 <= int(group) < N_GROUPS:
        raise ParseError(f"bad tag string {text!r}")
    return (role, int(group))


def validate_tags(tags: list[Tag]) -> int:
    """Check well-formedness and return the hop count.

    Raises ParseError: "no entity group" when nothing but MASK is present or
    group 0 lacks an entity, "non-contiguous groups" on gaps in the group
    indices, "dangling relation" when relation hops do not line up with
    entity-bearing groups.
    """
    if not tags:
        raise ParseError("no entity group")
    used = {k for role, k in tags if role != "MASK"}
    if not used:
        raise ParseError("no entity group")
    n_groups = max(used) + 1
    if used != set(range(n_groups)):
        raise ParseError("non-contiguous groups")
    rel_groups = {k for role, k in tags if role == "REL"}
    hop_count = len(rel_groups)
    if rel_groups != set(range(hop_count)):
        raise ParseError("dangling relation")
    if n_groups != hop_count + 1:
        raise ParseError("dangling relation")
    entity_groups = {k for role, k in tags if role in ("ENT", "ABS")}
    for k in range(hop_count):
        if k not in entity_groups or k + 1 not in entity_groups:
            raise ParseError("dangling relation")
    if hop_count == 0 and 0 not in entity_groups:
        raise ParseError("no entity group")
    return hop_count
