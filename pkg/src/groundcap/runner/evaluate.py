"""Held-out evaluation: grounding accuracy tables and m@kIoU caption metrics.

Reports are plain JSON; predictions can be dumped to (and re-evaluated from)
a JSON-lines exchange file so external outputs can be scored too.
"""

from __future__ import annotations

import json

import numpy as np

from .. import metrics, vocab
from ..config import TrainConfig
from ..model import GroundCapModel
from ..model.decoder import referring_scores
from ..nn.tensor import index_select, no_grad
from .data import Dataset, pad_token_batch
from .infer import infer_dc

IOU_THRESHOLDS = (0.25, 0.5)
CAPTION_METRICS = ("cider", "bleu4", "rouge_l")


def _vg_records(model: GroundCapModel, dataset: Dataset, batch_size: int = 8):
    """(pred_box, gt_box, stratum) per held-out reference, batched by scene."""
    samples = dataset.references
    records = []
    for start in range(0, len(samples), batch_size):
        batch = samples[start:start + batch_size]
        scene_ids = []
        for s in batch:
            if s.scene_id not in scene_ids:
                scene_ids.append(s.scene_id)
        slot = {sid: i for i, sid in enumerate(scene_ids)}
        sds = [dataset.scene_of_id(sid) for sid in scene_ids]
        clouds = np.stack([sd.cloud for sd in sds])
        caches = [sd.cache(model.cfg.model) for sd in sds]
        extent = sds[0].extent
        ids, valid = pad_token_batch([s.token_ids for s in batch])
        with no_grad():
            coords_s, v0_s = model.encode_scenes(clouds, caches, extent)
            slots = np.array([slot[s.scene_id] for s in batch])
            out = model.ground(index_select(v0_s, slots), coords_s[slots],
                               ids, valid, extent)
        for b, sample in enumerate(batch):
            from .infer import span_scores_with_noobj
            scores = span_scores_with_noobj(out.final, sample.head_span(), valid[b], b)
            best = int(np.argmax(scores))
            pred = out.final.box.data[b, best]
            gt = dataset.scene_of(sample).scene.object_by_id(sample.target_id).box()
            records.append((pred.copy(), gt, sample.stratum))
    return records


def evaluate_vg(model: GroundCapModel, dataset: Dataset) -> dict:
    records = _vg_records(model, dataset)
    report = {"task": "vg", "n_samples": len(records)}
    for thr in IOU_THRESHOLDS:
        rec = metrics.acc_at_iou(records, thr)
        key = f"acc@{thr}"
        report[key] = {"overall": rec.overall, "unique": rec.unique,
                       "multiple": rec.multiple}
    return report


def dc_scene_items(model: GroundCapModel, dataset: Dataset,
                   predict_labels: bool = False) -> list[dict]:
    items = []
    for sid in sorted(dataset.scene_data):
        sd = dataset.scene_data[sid]
        dets = infer_dc(model, sd, predict_labels=predict_labels)
        items.append({
            "scene_id": sid,
            "gt_boxes": sd.gt_boxes,
            "gt_captions": [[vocab.strip_specials(c) for c in sd.scene.captions[o.id]]
                            for o in sd.scene.objects],
            "pred_boxes": np.array([d.box for d in dets]).reshape(-1, 6),
            "pred_captions": [vocab.strip_specials(d.caption_ids) for d in dets],
            "pred_scores": [d.score for d in dets],
        })
    return items


def evaluate_dc(model: GroundCapModel, dataset: Dataset,
                predict_labels: bool = False) -> tuple[dict, list[dict]]:
    items = dc_scene_items(model, dataset, predict_labels)
    report = dc_report_from_items(items)
    return report, items


def dc_report_from_items(items: list[dict]) -> dict:
    report = {"task": "dc", "n_scenes": len(items)}
    for thr in IOU_THRESHOLDS:
        for m in CAPTION_METRICS:
            report[f"{m}@{thr}"] = metrics.m_at_k_iou(items, m, thr)
    report["recall@0.5"] = metrics.dc_recall(items, 0.5)
    report["recall@0.25"] = metrics.dc_recall(items, 0.25)
    return report


def evaluate(model: GroundCapModel, dataset: Dataset, task: str,
             report_path: str | None = None,
             predictions_path: str | None = None,
             predict_labels: bool = False) -> dict:
    """Run held-out evaluation; optionally write the report and a predictions
    exchange file (JSON-lines: scene_id, boxes, scores, captions)."""
    if task == "vg":
        report = evaluate_vg(model, dataset)
        items = None
    elif task == "dc":
        report, items = evaluate_dc(model, dataset, predict_labels)
    else:
        raise ValueError(f"unknown task {task!r}")
    if predictions_path and items is not None:
        write_predictions(predictions_path, items)
    if report_path:
        with open(report_path, "w") as f:
            json.dump(report, f, indent=2, sort_keys=True)
    return report


def write_predictions(path: str, items: list[dict]) -> None:
    with open(path, "w") as f:
        for item in items:
            f.write(json.dumps({
                "scene_id": item["scene_id"],
                "boxes": np.asarray(item["pred_boxes"]).tolist(),
                "scores": list(map(float, item["pred_scores"])),
                "captions": [" ".join(vocab.TOKENS[t] for t in cap)
                             for cap in item["pred_captions"]],
            }) + "\n")


def evaluate_dc_from_file(predictions_path: str, dataset: Dataset) -> dict:
    """Score a third-party predictions exchange file against the corpus GT."""
    by_scene = {}
    with open(predictions_path) as f:
        for line in f:
            if not line.strip():
                continue
            rec = json.loads(line)
            by_scene[rec["scene_id"]] = rec
    items = []
    for sid in sorted(dataset.scene_data):
        sd = dataset.scene_data[sid]
        rec = by_scene.get(sid, {"boxes": [], "scores": [], "captions": []})
        items.append({
            "scene_id": sid,
            "gt_boxes": sd.gt_boxes,
            "gt_captions": [[vocab.strip_specials(c) for c in sd.scene.captions[o.id]]
                            for o in sd.scene.objects],
            "pred_boxes": np.array(rec["boxes"], dtype=float).reshape(-1, 6),
            "pred_captions": [vocab.encode(c, add_specials=False)
                              for c in rec["captions"]],
            "pred_scores": rec["scores"],
        })
    return dc_report_from_items(items)
