"""World model for synthetic tabletop scenes.

Objects live in a 2D workspace: ``world_x`` in [-1, 1] runs left to right,
``world_y`` in [0, 1] runs from the front edge (nearest the camera) to the
back. An orthographic projection maps poses to pixel bounding boxes, and a
fixed set of geometric predicates turns object pairs into the boolean
relation matrices that serve as supervision.

Every predicate carries a margin so that generated annotations never depend
on near-ties.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

# Relation margins (world units unless noted).
EPS_X = 0.05          # left/right dead zone on world_x
EPS_DEPTH = 0.05      # behind/front dead zone on world_y
EPS_DIST = 0.05       # further/closer dead zone on viewer distance (depth axis)
SIZE_RATIO = 1.2      # bigger/smaller multiplicative area margin
NEAR_RADIUS = 0.25    # next-to center distance threshold

# Placement constraints for scene sampling.
MAX_PAIR_IOU = 0.1
MIN_CENTER_DIST = 0.12

DEFAULT_WIDTH = 256
DEFAULT_HEIGHT = 192
MIN_SIDE_PX = 8

RELATIVE_RELATIONS = (
    "left", "right", "further", "closer", "behind", "front",
    "bigger", "smaller", "next to",
)

# Absolute location word -> relative predicate that must hold against every
# other candidate ("leftmost bowl" = left of all other bowls).
ABSOLUTE_TO_RELATIVE = {
    "leftmost": "left",
    "rightmost": "right",
    "closest": "closer",
    "furthest": "further",
    "front": "front",
    "back": "behind",
    "biggest": "bigger",
    "smallest": "smaller",
}

# Antisymmetric predicate pairs: rel(a, b) <=> mirror(b, a).
MIRROR_RELATIONS = {
    "left": "right", "right": "left",
    "behind": "front", "front": "behind",
    "further": "closer", "closer": "further",
    "bigger": "smaller", "smaller": "bigger",
}


@dataclass(frozen=True)
class ColorSpec:
    name: str
    rgb: tuple[int, int, int]


@dataclass(frozen=True)
class InstanceSpec:
    category: str
    color: str
    alias: str | None
    base_size: float  # nominal glyph side in pixels at size=1, world_y=0


@dataclass(frozen=True)
class Catalogue:
    """Object inventory: categories, named colors, and concrete instances."""

    categories: tuple[str, ...]
    colors: tuple[ColorSpec, ...]
    instances: tuple[InstanceSpec, ...]

    def __post_init__(self):
        color_names = {c.name for c in self.colors}
        cat_tokens = {tok for cat in self.categories for tok in cat.split()}
        aliases = []
        per_category: dict[str, int] = {}
        for inst in self.instances:
            if inst.category not in self.categories:
                raise ValueError(f"instance references unknown category {inst.category!r}")
            if inst.color not in color_names:
                raise ValueError(f"instance references unknown color {inst.color!r}")
            if inst.base_size <= 0:
                raise ValueError("instance base_size must be positive")
            per_category[inst.category] = per_category.get(inst.category, 0) + 1
            if inst.alias is not None:
                if inst.alias in aliases:
                    raise ValueError(f"duplicate alias {inst.alias!r}")
                if inst.alias in cat_tokens:
                    raise ValueError(f"alias {inst.alias!r} collides with a category token")
                aliases.append(inst.alias)
        if not any(n >= 2 for n in per_category.values()):
            raise ValueError("catalogue needs at least two instances sharing a category")

    def color_rgb(self, name: str) -> tuple[int, int, int]:
        for c in self.colors:
            if c.name == name:
                return c.rgb
        raise KeyError(name)

    def alias_to_instance(self) -> dict[str, int]:
        return {inst.alias: i for i, inst in enumerate(self.instances) if inst.alias}

    def category_glyph_index(self, category: str) -> int:
        return self.categories.index(category)

    @staticmethod
    def from_dict(data: dict) -> "Catalogue":
        return Catalogue(
            categories=tuple(data["categories"]),
            colors=tuple(ColorSpec(c["name"], tuple(c["rgb"])) for c in data["colors"]),
            instances=tuple(
                InstanceSpec(i["category"], i["color"], i.get("alias"), float(i["base_size"]))
                for i in data["instances"]
            ),
        )

    def to_dict(self) -> dict:
        return {
            "categories": list(self.categories),
            "colors": [{"name": c.name, "rgb": list(c.rgb)} for c in self.colors],
            "instances": [
                {"category": i.category, "color": i.color, "alias": i.alias,
                 "base_size": i.base_size}
                for i in self.instances
            ],
        }


def load_catalogue(path: str | Path) -> Catalogue:
    with open(path, "r", encoding="utf-8") as fh:
        return Catalogue.from_dict(json.load(fh))


def save_catalogue(catalogue: Catalogue, path: str | Path) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(catalogue.to_dict(), fh, indent=2, sort_keys=True)
        fh.write("\n")


def default_catalogue() -> Catalogue:
    """Built-in inventory: 8 categories, 10 colors, 32 instances."""
    colors = (
        ColorSpec("red", (220, 40, 40)),
        ColorSpec("green", (40, 180, 70)),
        ColorSpec("blue", (50, 90, 220)),
        ColorSpec("yellow", (235, 220, 50)),
        ColorSpec("white", (245, 245, 245)),
        ColorSpec("black", (25, 25, 25)),
        ColorSpec("purple", (150, 60, 190)),
        ColorSpec("orange", (240, 150, 40)),
        ColorSpec("pink", (245, 150, 180)),
        ColorSpec("brown", (140, 90, 40)),
    )
    categories = (
        "bowl", "mug", "plate", "soda",
        "flashlight", "book", "cereal box", "juice box",
    )
    inst = [
        ("bowl", "red", None, 40), ("bowl", "blue", None, 40),
        ("bowl", "white", None, 34), ("bowl", "green", None, 46),
        ("mug", "red", None, 26), ("mug", "blue", None, 26),
        ("mug", "black", None, 24), ("mug", "yellow", None, 28),
        ("plate", "white", None, 48), ("plate", "brown", None, 48),
        ("plate", "purple", None, 44), ("plate", "pink", None, 52),
        ("soda", "red", "cola", 22), ("soda", "blue", "pepsi", 22),
        ("soda", "green", "sprite", 22), ("soda", "orange", "fanta", 20),
        ("flashlight", "yellow", None, 18), ("flashlight", "black", None, 18),
        ("flashlight", "red", None, 16),
        ("book", "brown", None, 38), ("book", "purple", None, 36),
        ("book", "green", None, 40), ("book", "black", None, 34),
        ("cereal box", "yellow", "chex", 44), ("cereal box", "brown", "crunch", 46),
        ("cereal box", "red", None, 42), ("cereal box", "white", None, 44),
        ("juice box", "orange", "mango", 24), ("juice box", "pink", "strawberry", 24),
        ("juice box", "purple", "grape", 22), ("juice box", "white", None, 26),
        ("juice box", "green", "apple", 24),
    ]
    return Catalogue(
        categories=categories,
        colors=colors,
        instances=tuple(InstanceSpec(c, col, a, float(s)) for c, col, a, s in inst),
    )


@dataclass(frozen=True)
class SceneObject:
    index: int
    instance_id: int
    world_x: float
    world_y: float
    size: float
    bbox: tuple[int, int, int, int]  # x, y, w, h in pixels

    @property
    def area(self) -> int:
        return self.bbox[2] * self.bbox[3]

    def center(self) -> tuple[float, float]:
        return (self.world_x, self.world_y)


def project_bbox(world_x: float, world_y: float, size: float, base_size: float,
                 width: int, height: int) -> tuple[int, int, int, int]:
    """Orthographic pose-to-pixel projection.

    The box center maps affinely into the image (depth drawn upward, so the
    back of the workspace is the top of the raster) and the side shrinks
    monotonically with depth. Pure: identical inputs give identical boxes.
    The result may stick out of the image; placement rejects those poses.
    """
    cx = (world_x + 1.0) / 2.0 * width
    cy = (1.0 - world_y) * height
    side = max(float(MIN_SIDE_PX), base_size * size * (1.0 - 0.25 * world_y))
    w = int(round(side))
    h = int(round(side))
    x = int(round(cx - side / 2.0))
    y = int(round(cy - side / 2.0))
    return (x, y, w, h)


def bbox_inside(bbox: tuple[int, int, int, int], width: int, height: int) -> bool:
    x, y, w, h = bbox
    return x >= 0 and y >= 0 and w >= 1 and h >= 1 and x + w <= width and y + h <= height


def bbox_iou(a: tuple[int, int, int, int], b: tuple[int, int, int, int]) -> float:
    ax, ay, aw, ah = a
    bx, by, bw, bh = b
    ix = max(0, min(ax + aw, bx + bw) - max(ax, bx))
    iy = max(0, min(ay + ah, by + bh) - max(ay, by))
    inter = ix * iy
    if inter == 0:
        return 0.0
    return inter / float(aw * ah + bw * bh - inter)


def placement_ok(obj: SceneObject, placed: list[SceneObject]) -> bool:
    """Reject poses that occlude or crowd an already-placed object."""
    for other in placed:
        if bbox_iou(obj.bbox, other.bbox) > MAX_PAIR_IOU:
            return False
        if math.hypot(obj.world_x - other.world_x, obj.world_y - other.world_y) < MIN_CENTER_DIST:
            return False
    return True


def evaluate_relation(rel: str, a: SceneObject, b: SceneObject) -> bool:
    """Deterministic geometric predicate between two distinct objects.

    further/closer order objects by distance from the viewer along the depth
    axis; with a front-facing viewpoint this coincides with behind/front, the
    same way the two word pairs are interchangeable in a tabletop scene.
    """
    if rel == "left":
        return a.world_x < b.world_x - EPS_X
    if rel == "right":
        return a.world_x > b.world_x + EPS_X
    if rel == "behind":
        return a.world_y > b.world_y + EPS_DEPTH
    if rel == "front":
        return a.world_y < b.world_y - EPS_DEPTH
    if rel == "further":
        return a.world_y > b.world_y + EPS_DIST
    if rel == "closer":
        return a.world_y < b.world_y - EPS_DIST
    if rel == "bigger":
        return a.area > SIZE_RATIO * b.area
    if rel == "smaller":
        return SIZE_RATIO * a.area < b.area
    if rel == "next to":
        return math.hypot(a.world_x - b.world_x, a.world_y - b.world_y) < NEAR_RADIUS
    raise ValueError(f"unknown relation: {rel!r}")


def build_relation_tensor(objects: list[SceneObject]) -> dict[str, np.ndarray]:
    """Evaluate every relative predicate over all ordered pairs; diagonal false."""
    n = len(objects)
    tensor = {rel: np.zeros((n, n), dtype=bool) for rel in RELATIVE_RELATIONS}
    for i in range(n):
        for j in range(n):
            if i == j:
                continue
            for rel in RELATIVE_RELATIONS:
                tensor[rel][i, j] = evaluate_relation(rel, objects[i], objects[j])
    return tensor


@dataclass
class SceneGraph:
    objects: list[SceneObject]
    relations: dict[str, np.ndarray]
    image_seed: int
    width: int = DEFAULT_WIDTH
    height: int = DEFAULT_HEIGHT
    scene_id: int = 0

    def __len__(self) -> int:
        return len(self.objects)

    def categories(self, catalogue: Catalogue) -> list[str]:
        return [catalogue.instances[o.instance_id].category for o in self.objects]

    def colors(self, catalogue: Catalogue) -> list[str]:
        return [catalogue.instances[o.instance_id].color for o in self.objects]


def validate_scene(scene: SceneGraph) -> None:
    """Check structural invariants; raises ValueError on the first violation."""
    n = len(scene.objects)
    for i, obj in enumerate(scene.objects):
        if obj.index != i:
            raise ValueError(f"object {i} carries index {obj.index}")
        if not (-1.0 <= obj.world_x <= 1.0 and 0.0 <= obj.world_y <= 1.0):
            raise ValueError(f"object {i} pose out of range")
        if not bbox_inside(obj.bbox, scene.width, scene.height):
            raise ValueError(f"object {i} bbox {obj.bbox} outside {scene.width}x{scene.height}")
    expected = set(RELATIVE_RELATIONS)
    if set(scene.relations) != expected:
        raise ValueError("relation tensor keys do not match the relation vocabulary")
    for rel, mat in scene.relations.items():
        if mat.shape != (n, n):
            raise ValueError(f"relation {rel!r} matrix has shape {mat.shape}")
        if n and mat.diagonal().any():
            raise ValueError(f"relation {rel!r} has a true diagonal entry")
    for rel, mirror in MIRROR_RELATIONS.items():
        if not np.array_equal(scene.relations[rel], scene.relations[mirror].T):
            raise ValueError(f"antisymmetry violated for {rel!r}/{mirror!r}")
    if not np.array_equal(scene.relations["next to"], scene.relations["next to"].T):
        raise ValueError("next to is not symmetric")
    recomputed = build_relation_tensor(scene.objects)
    for rel in RELATIVE_RELATIONS:
        if not np.array_equal(recomputed[rel], scene.relations[rel]):
            raise ValueError(f"relation {rel!r} does not match recomputation")


def scene_to_dict(scene: SceneGraph) -> dict:
    return {
        "scene_id": scene.scene_id,
        "image_seed": scene.image_seed,
        "width": scene.width,
        "height": scene.height,
        "objects": [
            {
                "index": o.index,
                "instance_id": o.instance_id,
                "world_x": o.world_x,
                "world_y": o.world_y,
                "size": o.size,
                "bbox": list(o.bbox),
            }
            for o in scene.objects
        ],
        "relations": {
            rel: [bool(v) for v in scene.relations[rel].reshape(-1)]
            for rel in RELATIVE_RELATIONS
        },
    }


def scene_from_dict(data: dict) -> SceneGraph:
    objects = [
        SceneObject(
            index=o["index"],
            instance_id=o["instance_id"],
            world_x=o["world_x"],
            world_y=o["world_y"],
            size=o["size"],
            bbox=tuple(o["bbox"]),
        )
        for o in data["objects"]
    ]
    n = len(objects)
    relations = {
        rel: np.array(flat, dtype=bool).reshape(n, n)
        for rel, flat in data["relations"].items()
    }
    return SceneGraph(
        objects=objects,
        relations=relations,
        image_seed=data["image_seed"],
        width=data["width"],
        height=data["height"],
        scene_id=data.get("scene_id", 0),
    )
