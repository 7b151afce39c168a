"""JSON-lines corpus persistence.

A corpus directory holds ``scenes.jsonl`` (one scene per line) and
``samples.jsonl`` (one text sample per line, keyed by scene_id).  Field names
are frozen in FORMATS.md.  Floats survive the round trip exactly (json repr
of Python floats is lossless).
"""

from __future__ import annotations

import json
import os

import numpy as np

from .language import TextSample
from .scene import ObjectSpec, Scene

SCENES_FILE = "scenes.jsonl"
SAMPLES_FILE = "samples.jsonl"


class CorpusFormatError(ValueError):
    """Malformed corpus line; carries the offending file and line number."""


def object_to_record(o: ObjectSpec) -> dict:
    return {
        "id": int(o.id),
        "class_label": o.class_label,
        "center": [float(v) for v in o.center],
        "size": [float(v) for v in o.size],
        "color_name": o.color_name,
        "attributes": list(o.attributes),
    }


def object_from_record(rec: dict) -> ObjectSpec:
    return ObjectSpec(
        id=int(rec["id"]),
        class_label=rec["class_label"],
        center=np.array(rec["center"], float),
        size=np.array(rec["size"], float),
        color_name=rec["color_name"],
        attributes=list(rec["attributes"]),
    )


def scene_to_record(s: Scene) -> dict:
    return {
        "scene_id": s.scene_id,
        "extent": [[float(v) for v in corner] for corner in s.extent],
        "cloud_seed": int(s.cloud_seed),
        "objects": [object_to_record(o) for o in s.objects],
        "captions": {str(k): v for k, v in s.captions.items()},
    }


def scene_from_record(rec: dict) -> Scene:
    return Scene(
        scene_id=rec["scene_id"],
        objects=[object_from_record(r) for r in rec["objects"]],
        extent=np.array(rec["extent"], float),
        cloud_seed=int(rec["cloud_seed"]),
        captions={int(k): [list(map(int, c)) for c in v]
                  for k, v in rec.get("captions", {}).items()},
    )


def sample_to_record(t: TextSample) -> dict:
    return {
        "scene_id": t.scene_id,
        "kind": t.kind,
        "raw_text": t.raw_text,
        "token_ids": [int(i) for i in t.token_ids],
        "span_map": [[int(s), int(e), int(oid)] for s, e, oid in t.span_map],
        "target_id": None if t.target_id is None else int(t.target_id),
        "stratum": t.stratum,
    }


def sample_from_record(rec: dict) -> TextSample:
    return TextSample(
        raw_text=rec["raw_text"],
        token_ids=[int(i) for i in rec["token_ids"]],
        span_map=[(int(s), int(e), int(oid)) for s, e, oid in rec["span_map"]],
        kind=rec["kind"],
        scene_id=rec["scene_id"],
        target_id=rec["target_id"],
        stratum=rec.get("stratum"),
    )


def _write_jsonl(path: str, records) -> None:
    tmp = path + ".tmp"
    with open(tmp, "w") as f:
        for rec in records:
            f.write(json.dumps(rec) + "\n")
    os.replace(tmp, path)


def _read_jsonl(path: str) -> list[dict]:
    records = []
    with open(path) as f:
        for lineno, line in enumerate(f, start=1):
            if not line.strip():
                continue
            try:
                records.append(json.loads(line))
            except json.JSONDecodeError as exc:
                raise CorpusFormatError(
                    f"{os.path.basename(path)}:{lineno}: malformed line ({exc.msg})"
                ) from exc
    return records


def write_corpus(dirpath: str, scenes: list[Scene], samples: list[TextSample]) -> None:
    os.makedirs(dirpath, exist_ok=True)
    _write_jsonl(os.path.join(dirpath, SCENES_FILE), map(scene_to_record, scenes))
    _write_jsonl(os.path.join(dirpath, SAMPLES_FILE), map(sample_to_record, samples))


def read_corpus(dirpath: str) -> tuple[list[Scene], list[TextSample]]:
    try:
        scenes = [scene_from_record(r)
                  for r in _read_jsonl(os.path.join(dirpath, SCENES_FILE))]
        samples = [sample_from_record(r)
                   for r in _read_jsonl(os.path.join(dirpath, SAMPLES_FILE))]
    except KeyError as exc:
        raise CorpusFormatError(f"missing field {exc} in corpus record") from exc
    return scenes, samples
