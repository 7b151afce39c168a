"""Procedural scene generation: boxy furniture placed in a rectangular room.

Every object is an axis-aligned box resting on the floor.  Class identity is
carried by a distinctive canonical size triple (jittered per instance) so a
geometry-only encoder can recover it; color is carried by the point cloud.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .. import vocab

# Canonical (sx, sy, sz) footprint per class, meters.  Chosen to be well
# separated in size space so classes stay distinguishable after jitter, with
# no dimension thinner than ~0.3 m (IoU thresholds get unforgiving on slivers).
CLASS_SIZES: dict[str, tuple[float, float, float]] = {
    "bed": (2.0, 1.6, 0.6),
    "bookshelf": (1.0, 0.38, 1.9),
    "cabinet": (0.9, 0.5, 1.1),
    "chair": (0.5, 0.5, 0.95),
    "counter": (1.6, 0.65, 0.95),
    "curtain": (1.4, 0.32, 2.2),
    "desk": (1.3, 0.7, 0.78),
    "door": (0.95, 0.3, 2.05),
    "dresser": (1.1, 0.5, 0.85),
    "lamp": (0.42, 0.42, 1.5),
    "monitor": (0.62, 0.35, 0.5),
    "nightstand": (0.5, 0.42, 0.62),
    "pillow": (0.7, 0.5, 0.35),
    "plant": (0.48, 0.48, 1.1),
    "refrigerator": (0.8, 0.7, 1.75),
    "shelf": (0.9, 0.35, 1.5),
    "sofa": (1.9, 0.9, 0.85),
    "table": (1.4, 0.9, 0.75),
    "toilet": (0.65, 0.45, 0.78),
    "window": (1.2, 0.3, 1.3),
}

SIZE_JITTER = 0.15          # per-axis uniform jitter around the canonical size
LARGE_THRESHOLD = 1.08      # mean jitter factor above which an object is "large"
SMALL_THRESHOLD = 0.92


class PlacementError(RuntimeError):
    """Raised when the requested object count cannot be placed without overlap."""


@dataclass(eq=False)
class ObjectSpec:
    id: int
    class_label: str
    center: np.ndarray        # (3,) meters
    size: np.ndarray          # (3,) meters, > 0
    color_name: str
    attributes: list[str]

    def __eq__(self, other) -> bool:
        return (
            isinstance(other, ObjectSpec)
            and self.id == other.id
            and self.class_label == other.class_label
            and np.array_equal(self.center, other.center)
            and np.array_equal(self.size, other.size)
            and self.color_name == other.color_name
            and self.attributes == other.attributes
        )

    def box(self) -> np.ndarray:
        """(6,) center+size box."""
        return np.concatenate([self.center, self.size])

    def lo(self) -> np.ndarray:
        return self.center - self.size / 2.0

    def hi(self) -> np.ndarray:
        return self.center + self.size / 2.0


@dataclass(eq=False)
class Scene:
    scene_id: str
    objects: list[ObjectSpec]
    extent: np.ndarray        # (2, 3): [min_corner, max_corner]
    cloud_seed: int = 0
    captions: dict[int, list[list[int]]] = field(default_factory=dict)

    def __eq__(self, other) -> bool:
        return (
            isinstance(other, Scene)
            and self.scene_id == other.scene_id
            and self.objects == other.objects
            and np.array_equal(self.extent, other.extent)
            and self.cloud_seed == other.cloud_seed
            and self.captions == other.captions
        )

    def object_by_id(self, obj_id: int) -> ObjectSpec:
        for o in self.objects:
            if o.id == obj_id:
                return o
        raise KeyError(f"no object with id {obj_id}")

    def labels_present(self) -> list[str]:
        seen: list[str] = []
        for o in self.objects:
            if o.class_label not in seen:
                seen.append(o.class_label)
        return seen


@dataclass
class GenConfig:
    min_objects: int = 3
    max_objects: int = 9
    room_size: tuple[float, float, float] = (6.0, 6.0, 3.0)
    labels: tuple[str, ...] = tuple(vocab.CLASS_LABELS)
    colors: tuple[str, ...] = tuple(vocab.COLOR_NAMES)
    wall_margin: float = 0.05
    min_gap: float = 0.05     # horizontal clearance enforced between boxes
    max_attempts: int = 400   # placement attempts per object before giving up


def box_iou(a_center, a_size, b_center, b_size) -> float:
    """Volume IoU of two axis-aligned boxes given as center+size."""
    a_center = np.asarray(a_center, float)
    a_size = np.asarray(a_size, float)
    b_center = np.asarray(b_center, float)
    b_size = np.asarray(b_size, float)
    lo = np.maximum(a_center - a_size / 2, b_center - b_size / 2)
    hi = np.minimum(a_center + a_size / 2, b_center + b_size / 2)
    inter = float(np.prod(np.clip(hi - lo, 0.0, None)))
    vol_a = float(np.prod(a_size))
    vol_b = float(np.prod(b_size))
    union = vol_a + vol_b - inter
    return inter / union if union > 0 else 0.0


def _overlaps(center, size, placed: list[ObjectSpec], gap: float) -> bool:
    """True when the (gap-inflated) box intersects any placed box."""
    lo = center - size / 2 - gap
    hi = center + size / 2 + gap
    for o in placed:
        if np.all(lo < o.hi()) and np.all(hi > o.lo()):
            return True
    return False


def generate_scene(seed: int, cfg: GenConfig | None = None) -> Scene:
    """Deterministically generate one scene from ``seed``.

    Objects rest on the floor, stay inside the room extent and keep pairwise
    IoU < 0.05 (a positive horizontal gap is enforced).  Objects of the same
    class receive distinct colors whenever enough colors exist, so a color
    attribute always disambiguates same-class instances.
    """
    cfg = cfg or GenConfig()
    rng = np.random.default_rng(seed)
    n_obj = int(rng.integers(cfg.min_objects, cfg.max_objects + 1))
    room = np.asarray(cfg.room_size, float)
    extent = np.stack([np.zeros(3), room])

    objects: list[ObjectSpec] = []
    colors_used: dict[str, set[str]] = {}
    for obj_id in range(n_obj):
        placed = False
        for _ in range(cfg.max_attempts):
            # class resampled per attempt so crowded rooms fill with items
            # that still fit
            label = str(rng.choice(list(cfg.labels)))
            base = np.asarray(CLASS_SIZES[label], float)
            jit = rng.uniform(1.0 - SIZE_JITTER, 1.0 + SIZE_JITTER, size=3)
            size = base * jit
            if np.any(size >= room - 2 * cfg.wall_margin):
                continue
            half = size / 2
            x = rng.uniform(half[0] + cfg.wall_margin, room[0] - half[0] - cfg.wall_margin)
            y = rng.uniform(half[1] + cfg.wall_margin, room[1] - half[1] - cfg.wall_margin)
            center = np.array([x, y, half[2]])
            if _overlaps(center, size, objects, cfg.min_gap):
                continue
            taken = colors_used.setdefault(label, set())
            free = [c for c in cfg.colors if c not in taken]
            color = str(rng.choice(free if free else list(cfg.colors)))
            taken.add(color)
            mean_jit = float(jit.mean())
            attrs = [color]
            if mean_jit >= LARGE_THRESHOLD:
                attrs.insert(0, "large")
            elif mean_jit <= SMALL_THRESHOLD:
                attrs.insert(0, "small")
            objects.append(ObjectSpec(obj_id, label, center, size, color, attrs))
            placed = True
            break
        if not placed:
            raise PlacementError(
                f"could not place object {obj_id + 1}/{n_obj} after "
                f"{cfg.max_attempts} attempts (seed={seed})"
            )

    return Scene(
        scene_id=f"scene{seed:06d}",
        objects=objects,
        extent=extent,
        cloud_seed=seed,
    )
