"""Corpus construction and the in-memory training dataset.

``generate_split`` builds train/val corpora on disk; ``Dataset`` loads one,
rendering point clouds and geometry caches lazily (both are deterministic per
scene, so they are built once and reused across epochs).
"""

from __future__ import annotations

import os
from dataclasses import dataclass, field

import numpy as np

from .. import datagen, vocab
from ..config import TrainConfig
from ..datagen.language import TextSample
from ..datagen.scene import Scene
from ..losses import SampleTargets
from ..model.backbone import GeometryCache, build_geometry_cache

CAPTIONS_PER_OBJECT = 2


def d4_transform_points(xyz: np.ndarray, sym: int, extent: np.ndarray) -> np.ndarray:
    """Apply one of the square room's 8 symmetries (z axis untouched).

    sym = flip * 4 + k: optional x-mirror followed by k 90-degree rotations
    about the room center.  sym 0 is the identity.  References only use
    distance relations, so these transforms keep every stored text valid.
    """
    out = xyz.copy()
    cx, cy = extent[0] / 2.0, extent[1] / 2.0
    x = out[..., 0] - cx
    y = out[..., 1] - cy
    if sym >= 4:
        x = -x
    for _ in range(sym % 4):
        x, y = -y, x
    out[..., 0] = x + cx
    out[..., 1] = y + cy
    return out


def d4_transform_boxes(boxes: np.ndarray, sym: int, extent: np.ndarray) -> np.ndarray:
    """Transform center+size boxes; odd rotations swap the xy size axes."""
    out = np.asarray(boxes, float).copy()
    out[..., :3] = d4_transform_points(out[..., :3], sym, extent)
    if sym % 2 == 1:
        out[..., [3, 4]] = out[..., [4, 3]]
    return out


def build_scene_samples(scene: Scene, cfg: TrainConfig, rng) -> list[TextSample]:
    """References (capped per scene) plus one prompt sample."""
    samples: list[TextSample] = []
    objs = list(scene.objects)
    rng.shuffle(objs)
    made = 0
    for obj in objs:
        if made >= cfg.max_references_per_scene:
            break
        try:
            ref = datagen.generate_reference(scene, obj, seed=int(rng.integers(1 << 31)))
        except datagen.DisambiguationError:
            continue
        samples.append(ref)
        made += 1
    positives = scene.labels_present()
    pool = [lab for lab in vocab.CLASS_LABELS if lab not in positives]
    n_neg = int(rng.integers(0, cfg.max_negative_labels + 1))
    negatives = [pool[i] for i in rng.permutation(len(pool))[:n_neg]]
    samples.append(datagen.build_caption_prompt(
        positives, negatives, seed=int(rng.integers(1 << 31)), scene=scene))
    return samples


def generate_split(cfg: TrainConfig, out_dir: str, n_scenes: int, seed: int,
                   scene_seed_offset: int = 0) -> tuple[list[Scene], list[TextSample]]:
    """Generate ``n_scenes`` scenes + samples and persist them under out_dir."""
    rng = np.random.default_rng(np.random.SeedSequence([seed, n_scenes]))
    scenes: list[Scene] = []
    samples: list[TextSample] = []
    i = 0
    attempts = 0
    while len(scenes) < n_scenes:
        scene_seed = scene_seed_offset + i
        i += 1
        attempts += 1
        if attempts > n_scenes * 10:
            raise RuntimeError("scene generation failed too often")
        try:
            scene = datagen.generate_scene(scene_seed)
        except datagen.PlacementError:
            continue
        scene.captions = {
            o.id: [datagen.generate_caption(scene, o, seed=v) for v in range(CAPTIONS_PER_OBJECT)]
            for o in scene.objects
        }
        scene_samples = build_scene_samples(scene, cfg, rng)
        if not any(s.kind == "reference" for s in scene_samples):
            continue
        scenes.append(scene)
        samples.extend(scene_samples)
    datagen.write_corpus(out_dir, scenes, samples)
    vocab.write_vocab_file(os.path.join(out_dir, "vocab.txt"))
    return scenes, samples


@dataclass
class SceneData:
    scene: Scene
    extent: np.ndarray
    n_points: int = 2048
    dtype: type = np.float32
    _variants: dict = field(default_factory=dict, repr=False)

    def cloud_variant(self, variant: int = 0) -> np.ndarray:
        """Deterministic augmentation render of the scene.

        Variant 0 is the canonical cloud (evaluation path).  Higher variants
        re-sample the surfaces, apply one of the room's 8 rigid symmetries
        (variant % 8) and shift the fps start point.
        """
        key = ("cloud", variant)
        if key not in self._variants:
            if variant == 0:
                self._variants[key] = datagen.render_point_cloud(
                    self.scene, self.n_points).astype(self.dtype)
            else:
                seed = int(np.random.SeedSequence(
                    [self.scene.cloud_seed, 71, variant]).generate_state(1)[0])
                cloud = datagen.render_point_cloud(self.scene, self.n_points, seed=seed)
                cloud[:, :3] = d4_transform_points(cloud[:, :3], variant % 8, self.extent)
                self._variants[key] = cloud.astype(self.dtype)
        return self._variants[key]

    def boxes_variant(self, variant: int = 0) -> np.ndarray:
        """All scene GT boxes in the variant's pose."""
        if variant == 0:
            return self.gt_boxes
        return d4_transform_boxes(self.gt_boxes, variant % 8, self.extent)

    def cache_variant(self, model_cfg, variant: int = 0) -> GeometryCache:
        key = ("cache", variant)
        if key not in self._variants:
            start = 0 if variant == 0 else (variant * 977) % self.n_points
            self._variants[key] = build_geometry_cache(
                self.cloud_variant(variant), model_cfg, start=start)
        return self._variants[key]

    @property
    def cloud(self) -> np.ndarray:
        return self.cloud_variant(0)

    def cache(self, model_cfg) -> GeometryCache:
        return self.cache_variant(model_cfg, 0)

    @property
    def gt_boxes(self) -> np.ndarray:
        return np.stack([o.box() for o in self.scene.objects])


class Dataset:
    def __init__(self, corpus_dir: str, cfg: TrainConfig):
        self.cfg = cfg
        scenes, samples = datagen.read_corpus(corpus_dir)
        self.scene_data = {
            s.scene_id: SceneData(scene=s, extent=s.extent[1].copy(),
                                  n_points=cfg.model.n_points,
                                  dtype=np.dtype(cfg.model.dtype).type)
            for s in scenes
        }
        self.samples = [s for s in samples if s.scene_id in self.scene_data]

    @property
    def references(self) -> list[TextSample]:
        return [s for s in self.samples if s.kind == "reference"]

    @property
    def prompts(self) -> list[TextSample]:
        return [s for s in self.samples if s.kind == "prompt"]

    def scene_of(self, sample: TextSample) -> SceneData:
        return self.scene_data[sample.scene_id]

    def scene_of_id(self, scene_id: str) -> SceneData:
        return self.scene_data[scene_id]

    def targets_for(self, sample: TextSample, caption_variant: int = 0,
                    cloud_variant: int = 0) -> SampleTargets:
        """SampleTargets reflecting the sample's span->object mapping.

        ``cloud_variant`` poses the GT boxes consistently with the
        augmentation transform applied to that variant's cloud.
        """
        sd = self.scene_data[sample.scene_id]
        scene = sd.scene

        def pose(boxes: np.ndarray) -> np.ndarray:
            if cloud_variant == 0:
                return boxes
            return d4_transform_boxes(boxes, cloud_variant % 8, sd.extent)

        if sample.kind == "reference":
            obj = scene.object_by_id(sample.target_id)
            return SampleTargets(
                boxes=pose(obj.box()[None, :]),
                spans=[sample.head_span()],
                object_ids=[obj.id],
            )
        per_object: dict[int, tuple[int, int]] = {}
        for s, e, oid in sample.span_map:
            if oid != vocab.NO_OBJECT:
                per_object[oid] = (s, e)
        object_ids = sorted(per_object)
        boxes = pose(np.stack([scene.object_by_id(oid).box() for oid in object_ids]))
        captions = [scene.captions[oid][caption_variant % len(scene.captions[oid])]
                    for oid in object_ids]
        return SampleTargets(
            boxes=boxes,
            spans=[per_object[oid] for oid in object_ids],
            object_ids=object_ids,
            captions=captions,
        )


def pad_token_batch(token_lists: list[list[int]]) -> tuple[np.ndarray, np.ndarray]:
    """Pad to the batch max length; returns (ids, valid mask)."""
    length = max(len(t) for t in token_lists)
    ids = np.full((len(token_lists), length), vocab.PAD_ID, dtype=np.int64)
    valid = np.zeros((len(token_lists), length), dtype=bool)
    for i, toks in enumerate(token_lists):
        ids[i, :len(toks)] = toks
        valid[i, :len(toks)] = True
    return ids, valid


def scene_grouped_batches(samples: list[TextSample], batch_size: int,
                          rng: np.random.Generator) -> list[list[TextSample]]:
    """Shuffled batches that keep samples of one scene adjacent, so each batch
    touches few unique scenes and the point pathway amortizes."""
    by_scene: dict[str, list[TextSample]] = {}
    for s in samples:
        by_scene.setdefault(s.scene_id, []).append(s)
    scene_ids = list(by_scene)
    rng.shuffle(scene_ids)
    ordered: list[TextSample] = []
    for sid in scene_ids:
        group = by_scene[sid]
        rng.shuffle(group)
        ordered.extend(group)
    return [ordered[i:i + batch_size] for i in range(0, len(ordered), batch_size)]
