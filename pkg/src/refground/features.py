"""Object-based representations consumed by the matching modules.

Each object is summarized by an entity vector, an attribute vector, and
normalized bounding-box features. Attribute vectors are genuine perception
(per-channel color histograms over rendered crops). Entity vectors come from
a pluggable provider: the default assigns every catalogue instance a fixed
random unit prototype and adds Gaussian noise per observation, which keeps
the instance-clustered statistics a visual encoder would produce without
needing one; a file provider can substitute precomputed vectors.
"""

from __future__ import annotations

from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .scene import Catalogue, SceneGraph
from .scenegen import rng_from

DEFAULT_ENTITY_DIM = 64
DEFAULT_ENTITY_SIGMA = 0.1
HIST_BINS = 256
ATTRIBUTE_DIM = 3 * HIST_BINS


@dataclass
class ObjectRepresentation:
    z_ent: np.ndarray   # entity vector, unit norm
    z_att: np.ndarray   # concatenated R|G|B histogram, each channel sums to 1
    b: np.ndarray       # 5 normalized bbox features


def bbox_features(bbox: tuple[int, int, int, int], width: int, height: int) -> np.ndarray:
    """(x/W, y/H, (x+w)/W, (y+h)/H, w*h/(W*H))."""
    x, y, w, h = bbox
    if w <= 0 or h <= 0:
        raise ValueError(f"degenerate bbox {bbox}")
    return np.array([
        x / width,
        y / height,
        (x + w) / width,
        (y + h) / height,
        (w * h) / (width * height),
    ], dtype=np.float64)


def color_histogram(crop: np.ndarray) -> np.ndarray:
    """256-bin histogram per channel, each normalized to sum 1, concatenated."""
    if crop.size == 0:
        raise ValueError("zero-pixel crop")
    channels = []
    pixels = crop.reshape(-1, 3)
    n = pixels.shape[0]
    for c in range(3):
        counts = np.bincount(pixels[:, c], minlength=HIST_BINS).astype(np.float64)
        channels.append(counts / n)
    return np.concatenate(channels)


class EntityFeatureProvider:
    """Seeded unit prototype per catalogue instance plus Gaussian noise.

    sigma is the expected noise-to-signal norm ratio: the Gaussian
    perturbation has expected norm sigma against unit-norm prototypes, so
    the perception-difficulty knob reads the same at any feature dimension.
    Noise is keyed by (scene_id, object index) so repeated extraction of the
    same dataset is reproducible; sigma=0 returns the prototype exactly.
    """

    def __init__(self, catalogue: Catalogue, dim: int = DEFAULT_ENTITY_DIM,
                 sigma: float = DEFAULT_ENTITY_SIGMA, seed: int = 0):
        self.dim = dim
        self.sigma = sigma
        self.seed = seed
        rng = rng_from(seed, len(catalogue.instances), dim)
        protos = rng.normal(size=(len(catalogue.instances), dim))
        self.prototypes = protos / np.linalg.norm(protos, axis=1, keepdims=True)

    def vector(self, instance_id: int, scene_id: int, obj_index: int) -> np.ndarray:
        proto = self.prototypes[instance_id]
        if self.sigma == 0.0:
            return proto.copy()
        noise_rng = rng_from(self.seed, 1, scene_id, obj_index)
        noisy = proto + (self.sigma / np.sqrt(self.dim)) * noise_rng.normal(size=self.dim)
        return noisy / np.linalg.norm(noisy)


class FileFeatureProvider:
    """Precomputed entity vectors: one line per object, `scene:obj v1 .. vD`."""

    def __init__(self, path: str | Path, dim: int = DEFAULT_ENTITY_DIM):
        self.dim = dim
        self.vectors: dict[tuple[int, int], np.ndarray] = {}
        with open(path, "r", encoding="utf-8") as fh:
            for lineno, line in enumerate(fh, start=1):
                line = line.strip()
                if not line:
                    continue
                parts = line.split()
                if len(parts) != dim + 1 or ":" not in parts[0]:
                    raise ValueError(f"malformed feature line {lineno}")
                scene_str, _, obj_str = parts[0].partition(":")
                key = (int(scene_str), int(obj_str))
                self.vectors[key] = np.array([float(v) for v in parts[1:]])

    def vector(self, instance_id: int, scene_id: int, obj_index: int) -> np.ndarray:
        key = (scene_id, obj_index)
        if key not in self.vectors:
            raise KeyError(f"no precomputed entity vector for {scene_id}:{obj_index}")
        return self.vectors[key].copy()


def write_feature_file(path: str | Path,
                       vectors: dict[tuple[int, int], np.ndarray]) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        for (scene_id, obj_index) in sorted(vectors):
            vals = " ".join(repr(float(v)) for v in vectors[(scene_id, obj_index)])
            fh.write(f"{scene_id}:{obj_index} {vals}\n")


def scene_representations(scene: SceneGraph, catalogue: Catalogue,
                          crops: list[np.ndarray],
                          provider) -> list[ObjectRepresentation]:
    reps = []
    for obj, crop in zip(scene.objects, crops):
        reps.append(ObjectRepresentation(
            z_ent=provider.vector(obj.instance_id, scene.scene_id, obj.index),
            z_att=color_histogram(crop),
            b=bbox_features(obj.bbox, scene.width, scene.height),
        ))
    return reps
