"""Inference: single-box grounding and prompt-driven dense captioning."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .. import datagen, metrics, vocab
from ..config import TrainConfig
from ..datagen.language import TextSample
from ..model import GroundCapModel
from ..model.decoder import referring_scores
from ..nn.tensor import Tensor, no_grad
from .data import SceneData, pad_token_batch


@dataclass
class Detection:
    box: np.ndarray
    score: float
    caption_ids: list[int] = field(default_factory=list)

    @property
    def caption_text(self) -> str:
        return vocab.decode(self.caption_ids)


def span_scores_with_noobj(final, span: tuple[int, int], valid: np.ndarray,
                           batch_index: int = 0) -> np.ndarray:
    """Referring scores with the learned no-object slot in the softmax.

    Training teaches unmatched queries to concentrate on that slot, so scoring
    against it at inference suppresses them; a plain token softmax would let
    an unsupervised query win on noise.
    """
    align = final.align.data[batch_index]
    noobj = final.noobj.data[batch_index][:, None]
    ext = np.concatenate([align, noobj], axis=1)
    valid_ext = np.concatenate([np.asarray(valid, bool), [True]])
    return referring_scores(ext, span, valid_ext)


def infer_vg(model: GroundCapModel, scene_data: SceneData, sample: TextSample) -> np.ndarray:
    """Ground one referring expression; returns exactly one (6,) box."""
    with no_grad():
        out = model.forward(scene_data.cloud[None],
                            np.asarray([sample.token_ids]),
                            np.ones((1, len(sample.token_ids)), bool),
                            scene_data.extent,
                            [scene_data.cache(model.cfg.model)])
    final = out.final
    scores = span_scores_with_noobj(final, sample.head_span(), out.text_valid[0])
    best = int(np.argmax(scores))
    return final.box.data[0, best].copy()


def _select_detections(final, fused_v, valid, spans, model, cfg: TrainConfig,
                       threshold: float | None = None,
                       batch_index: int = 0) -> list[Detection]:
    """Queries whose best positive-span mass clears the threshold, then NMS,
    then a greedy caption per survivor."""
    threshold = cfg.dc_score_threshold if threshold is None else threshold
    per_span = np.stack([span_scores_with_noobj(final, span, valid, batch_index)
                         for span in spans], axis=1)
    best_score = per_span.max(axis=1)
    keep = np.flatnonzero(best_score >= threshold)
    if keep.size == 0:
        return []
    boxes = final.box.data[batch_index][keep]
    scores = best_score[keep]
    kept = metrics.nms(boxes, scores, cfg.nms_iou)
    keep = keep[kept]
    boxes = boxes[kept]
    scores = scores[kept]
    queries = Tensor(final.q.data[batch_index][keep])
    v_b = Tensor(fused_v.data[batch_index])
    tokens = model.captioner.greedy(queries, v_b)
    return [Detection(box=boxes[i].copy(), score=float(scores[i]),
                      caption_ids=[int(t) for t in tokens[i]])
            for i in range(len(keep))]


def infer_dc(model: GroundCapModel, scene_data: SceneData,
             positive_labels: list[str] | None = None,
             threshold: float | None = None,
             predict_labels: bool = False) -> list[Detection]:
    """Dense captioning via a label prompt.

    By default the prompt holds the scene's ground-truth positive labels;
    ``predict_labels`` derives them from a full-vocabulary probe prompt
    instead (labels whose span attracts enough referring mass).
    """
    cfg = model.cfg
    if predict_labels:
        positive_labels = predict_scene_labels(model, scene_data)
    elif positive_labels is None:
        positive_labels = scene_data.scene.labels_present()
    if not positive_labels:
        return []
    prompt = datagen.build_caption_prompt(positive_labels, [], seed=0,
                                          scene=scene_data.scene, shuffle=False)
    ids, valid = pad_token_batch([prompt.token_ids])
    with no_grad():
        out = model.forward(scene_data.cloud[None], ids, valid, scene_data.extent,
                            [scene_data.cache(cfg.model)])
    spans = sorted({(s, e) for s, e, _ in prompt.span_map})
    return _select_detections(out.final, out.fused_v, out.text_valid[0], spans,
                              model, cfg, threshold)


def predict_scene_labels(model: GroundCapModel, scene_data: SceneData,
                         threshold: float | None = None) -> list[str]:
    """Probe prompt over the full label vocabulary; keep labels whose span
    wins enough referring mass from some query."""
    cfg = model.cfg
    threshold = cfg.dc_score_threshold if threshold is None else threshold
    prompt = datagen.build_caption_prompt(list(vocab.CLASS_LABELS), [], seed=0,
                                          shuffle=False)
    ids, valid = pad_token_batch([prompt.token_ids])
    with no_grad():
        out = model.forward(scene_data.cloud[None], ids, valid, scene_data.extent,
                            [scene_data.cache(cfg.model)])
    labels = []
    for (s, e, _), label in zip(prompt.span_map, vocab.CLASS_LABELS):
        mass = span_scores_with_noobj(out.final, (s, e), out.text_valid[0])
        if float(mass.max()) >= threshold:
            labels.append(label)
    return labels
