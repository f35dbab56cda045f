"""Scene sampling and rasterization.

Scenes are drawn as flat category-specific glyphs in catalogue colors over a
neutral gray background. The renderer is a pure function of the scene graph
and catalogue, so crops/histograms are reproducible from the serialized scene
alone.
"""

from __future__ import annotations

from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .scene import (
    Catalogue,
    SceneGraph,
    SceneObject,
    build_relation_tensor,
    bbox_inside,
    placement_ok,
    project_bbox,
    DEFAULT_HEIGHT,
    DEFAULT_WIDTH,
)

BACKGROUND = (128, 128, 128)  # collides with no catalogue color

# Solid glyphs only; every mask covers >= 60% of its bounding box
# (circle 78%, square 100%, octagon 87%, trapezoid 75%).
GLYPH_KINDS = ("circle", "square", "octagon", "trapezoid")

SIZE_RANGE = (0.8, 1.25)
DUPLICATE_PROB = 0.3  # chance to reuse an already-placed instance
PLACE_ATTEMPTS = 100


@dataclass
class RenderedScene:
    scene: SceneGraph
    pixels: np.ndarray            # H x W x 3 uint8
    crops: list[np.ndarray]       # one bbox sub-raster per object


def rng_from(*entropy) -> np.random.Generator:
    """Stable generator derived from a tuple of integers."""
    return np.random.Generator(np.random.PCG64(np.random.SeedSequence(entropy)))


def sample_scene(rng_seed: int, catalogue: Catalogue,
                 n_objects: tuple[int, int] = (5, 10),
                 width: int = DEFAULT_WIDTH, height: int = DEFAULT_HEIGHT,
                 duplicate_prob: float = DUPLICATE_PROB) -> SceneGraph:
    """Sample a valid scene with rejection on crowding/occlusion.

    If an object cannot be placed within the attempt budget the target count
    shrinks by one; below the range minimum the workspace is declared full.
    """
    lo, hi = n_objects
    if not (1 <= lo <= hi <= 15):
        raise ValueError(f"object count range {n_objects} outside [1, 15]")
    if not catalogue.instances:
        raise ValueError("catalogue has no instances")
    rng = rng_from(rng_seed)
    target = int(rng.integers(lo, hi + 1))
    placed: list[SceneObject] = []
    while len(placed) < target:
        for _ in range(PLACE_ATTEMPTS):
            if placed and rng.random() < duplicate_prob:
                instance_id = placed[int(rng.integers(len(placed)))].instance_id
            else:
                instance_id = int(rng.integers(len(catalogue.instances)))
            world_x = float(rng.uniform(-1.0, 1.0))
            world_y = float(rng.uniform(0.0, 1.0))
            size = float(rng.uniform(*SIZE_RANGE))
            bbox = project_bbox(world_x, world_y, size,
                                catalogue.instances[instance_id].base_size,
                                width, height)
            if not bbox_inside(bbox, width, height):
                continue
            candidate = SceneObject(len(placed), instance_id, world_x, world_y, size, bbox)
            if placement_ok(candidate, placed):
                placed.append(candidate)
                break
        else:
            if target <= lo:
                raise ValueError("workspace too crowded")
            target -= 1
    return SceneGraph(
        objects=placed,
        relations=build_relation_tensor(placed),
        image_seed=rng_seed,
        width=width,
        height=height,
    )


def glyph_mask(kind: str, w: int, h: int) -> np.ndarray:
    """Boolean fill mask for a glyph inside a w x h box."""
    ys, xs = np.mgrid[0:h, 0:w]
    # normalized coordinates in [-1, 1] at pixel centers
    u = (xs + 0.5) / w * 2.0 - 1.0
    v = (ys + 0.5) / h * 2.0 - 1.0
    if kind == "circle":
        return u * u + v * v <= 1.0
    if kind == "square":
        return np.ones((h, w), dtype=bool)
    if kind == "octagon":
        return np.abs(u) + np.abs(v) <= 1.5
    if kind == "trapezoid":
        half_width = 0.5 + 0.25 * (v + 1.0)  # narrow top, full-width base
        return np.abs(u) <= half_width
    raise ValueError(f"unknown glyph kind: {kind!r}")


def render(scene: SceneGraph, catalogue: Catalogue) -> RenderedScene:
    """Rasterize a scene back-to-front and crop each object's bbox."""
    pixels = np.empty((scene.height, scene.width, 3), dtype=np.uint8)
    pixels[:, :] = BACKGROUND
    order = sorted(range(len(scene.objects)),
                   key=lambda i: (-scene.objects[i].world_y, i))
    for i in order:
        obj = scene.objects[i]
        inst = catalogue.instances[obj.instance_id]
        kind = GLYPH_KINDS[catalogue.category_glyph_index(inst.category) % len(GLYPH_KINDS)]
        x, y, w, h = obj.bbox
        mask = glyph_mask(kind, w, h)
        region = pixels[y:y + h, x:x + w]
        region[mask] = catalogue.color_rgb(inst.color)
    crops = [
        pixels[o.bbox[1]:o.bbox[1] + o.bbox[3], o.bbox[0]:o.bbox[0] + o.bbox[2]].copy()
        for o in scene.objects
    ]
    return RenderedScene(scene=scene, pixels=pixels, crops=crops)


def annotate_bbox(pixels: np.ndarray, bbox: tuple[int, int, int, int],
                  color: tuple[int, int, int] = (255, 0, 255),
                  thickness: int = 2) -> np.ndarray:
    """Return a copy with the bbox outlined (used for grounding output)."""
    out = pixels.copy()
    x, y, w, h = bbox
    t = thickness
    out[y:y + t, x:x + w] = color
    out[y + h - t:y + h, x:x + w] = color
    out[y:y + h, x:x + t] = color
    out[y:y + h, x + w - t:x + w] = color
    return out


def write_ppm(path: str | Path, pixels: np.ndarray, comment: str = "") -> None:
    """Binary P6 PPM; a single comment line carries provenance (e.g. seed)."""
    h, w, _ = pixels.shape
    header = f"P6\n"
    if comment:
        header += f"# {comment}\n"
    header += f"{w} {h}\n255\n"
    with open(path, "wb") as fh:
        fh.write(header.encode("ascii"))
        fh.write(np.ascontiguousarray(pixels, dtype=np.uint8).tobytes())


def read_ppm(path: str | Path) -> np.ndarray:
    with open(path, "rb") as fh:
        data = fh.read()
    if not data.startswith(b"P6"):
        raise ValueError("not a binary PPM file")
    fields: list[bytes] = []
    pos = 2
    while len(fields) < 3:
        while pos < len(data) and data[pos:pos + 1].isspace():
            pos += 1
        if data[pos:pos + 1] == b"#":
            while pos < len(data) and data[pos] != 0x0A:
                pos += 1
            continue
        start = pos
        while pos < len(data) and not data[pos:pos + 1].isspace():
            pos += 1
        fields.append(data[start:pos])
    w, h, maxval = (int(f) for f in fields)
    if maxval != 255:
        raise ValueError("only 8-bit PPMs supported")
    pos += 1  # single whitespace after maxval
    raster = np.frombuffer(data, dtype=np.uint8, count=w * h * 3, offset=pos)
    return raster.reshape(h, w, 3).copy()
