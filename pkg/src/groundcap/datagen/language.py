"""Templated referring expressions, object captions, and caption prompts.

References are built from attribute/relation clauses and are only emitted when
the clause set identifies the target uniquely; the check evaluates the clause
predicates over every object in the scene, which is also what the tests do.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .. import vocab
from .scene import ObjectSpec, Scene

NEAR_DIST = 1.5
FAR_DIST = 3.0
BESIDE_DIST = 1.0
AXIS_MARGIN = 0.5

RELATION_PHRASES = {
    "near": "near the {}",
    "far": "far from the {}",
    "left": "left of the {}",
    "right": "right of the {}",
    "front": "in front of the {}",
    "behind": "behind the {}",
    "beside": "beside the {}",
}

# references stick to distance-based relations so scenes can be rotated or
# mirrored at training time without invalidating the text
REFERENCE_RELATIONS = ("near", "far", "beside")


class DisambiguationError(RuntimeError):
    """No clause set uniquely identifies the target within its scene."""


class UnknownLabelError(ValueError):
    """A prompt label is outside the fixed class vocabulary."""


@dataclass
class TextSample:
    raw_text: str
    token_ids: list[int]                       # includes SOS/EOS
    span_map: list[tuple[int, int, int]]       # (start, end) half-open, object id
    kind: str                                  # "reference" | "prompt"
    scene_id: str = ""
    target_id: int | None = None               # reference kind only
    stratum: str | None = None                 # "unique" | "multiple"

    def head_span(self) -> tuple[int, int]:
        """Span carrying the target id (reference kind)."""
        for s, e, oid in self.span_map:
            if oid == self.target_id:
                return (s, e)
        raise ValueError("sample has no target span")

    def spans_for(self, obj_id: int) -> list[tuple[int, int]]:
        return [(s, e) for s, e, oid in self.span_map if oid == obj_id]


def relation_holds(a: ObjectSpec, relation: str, anchor_class: str, scene: Scene) -> bool:
    """True when some other object of ``anchor_class`` stands in ``relation`` to a."""
    for b in scene.objects:
        if b.id == a.id or b.class_label != anchor_class:
            continue
        d = float(np.linalg.norm(a.center - b.center))
        if relation == "near" and d <= NEAR_DIST:
            return True
        if relation == "far" and d >= FAR_DIST:
            return True
        if relation == "beside" and d <= BESIDE_DIST:
            return True
        if relation == "left" and a.center[0] <= b.center[0] - AXIS_MARGIN:
            return True
        if relation == "right" and a.center[0] >= b.center[0] + AXIS_MARGIN:
            return True
        if relation == "front" and a.center[1] <= b.center[1] - AXIS_MARGIN:
            return True
        if relation == "behind" and a.center[1] >= b.center[1] + AXIS_MARGIN:
            return True
    return False


def _matches(o: ObjectSpec, class_label: str, size_adj: str | None,
             color: str | None, rel: tuple[str, str] | None, scene: Scene) -> bool:
    if o.class_label != class_label:
        return False
    if size_adj is not None and size_adj not in o.attributes:
        return False
    if color is not None and o.color_name != color:
        return False
    if rel is not None and not relation_holds(o, rel[0], rel[1], scene):
        return False
    return True


def clause_satisfiers(scene: Scene, class_label: str, size_adj: str | None,
                      color: str | None, rel: tuple[str, str] | None) -> list[int]:
    """Ids of every scene object satisfying the clause set (the uniqueness oracle)."""
    return [o.id for o in scene.objects
            if _matches(o, class_label, size_adj, color, rel, scene)]


def _reference_text(target: ObjectSpec, size_adj, color, rel) -> tuple[str, int]:
    """Assembled utterance and the word index of the head noun."""
    words = ["the"]
    if size_adj:
        words.append(size_adj)
    if color:
        words.append(color)
    head_word = len(words)
    words.append(target.class_label)
    if rel:
        words.extend(RELATION_PHRASES[rel[0]].format(rel[1]).split())
    words.append(".")
    return " ".join(words), head_word


def generate_reference(scene: Scene, target: ObjectSpec, seed: int) -> TextSample:
    """Build a referring expression that uniquely identifies ``target``.

    Clause sets are tried from plain class mention up through attribute and
    relation combinations; among the unique ones a seeded choice (biased
    toward attribute-only phrasings) picks the final template.  Raises
    DisambiguationError when nothing separates the target from distractors.
    """
    if all(o.id != target.id for o in scene.objects):
        raise ValueError("target not part of scene")
    rng = np.random.default_rng(np.random.SeedSequence([seed, target.id]))

    size_adj = next((a for a in target.attributes if a in vocab.SIZE_ADJECTIVES), None)
    color = target.color_name
    anchors = [lab for lab in scene.labels_present() if lab != target.class_label]
    rng.shuffle(anchors)
    relations = []
    for anchor in anchors:
        for rel_name in REFERENCE_RELATIONS:
            if relation_holds(target, rel_name, anchor, scene):
                relations.append((rel_name, anchor))
    rng.shuffle(relations)
    relations = relations[:4]

    candidates: list[tuple[str | None, str | None, tuple[str, str] | None]] = [
        (None, None, None),
        (None, color, None),
    ]
    if size_adj:
        candidates += [(size_adj, None, None), (size_adj, color, None)]
    for rel in relations:
        candidates.append((None, None, rel))
        candidates.append((None, color, rel))
        if size_adj:
            candidates.append((size_adj, color, rel))

    unique_sets = [c for c in candidates
                   if clause_satisfiers(scene, target.class_label, *c) == [target.id]]
    if not unique_sets:
        raise DisambiguationError(
            f"object {target.id} ({target.class_label}) in {scene.scene_id} "
            "cannot be uniquely described"
        )
    weights = np.array([3.0 if c[2] is None else 1.0 for c in unique_sets])
    pick = unique_sets[int(rng.choice(len(unique_sets), p=weights / weights.sum()))]

    text, head_word = _reference_text(target, *pick)
    token_ids = vocab.encode(text)
    head = head_word + 1  # SOS occupies position 0
    n_class_instances = sum(o.class_label == target.class_label for o in scene.objects)
    return TextSample(
        raw_text=text,
        token_ids=token_ids,
        span_map=[(head, head + 1, target.id)],
        kind="reference",
        scene_id=scene.scene_id,
        target_id=target.id,
        stratum="unique" if n_class_instances == 1 else "multiple",
    )


def generate_caption(scene: Scene, obj: ObjectSpec, seed: int) -> list[int]:
    """Ground-truth caption token ids (SOS..EOS) for one object.

    States size adjective (when the object has one), color, class, and a
    nearest-neighbor clause naming the argmin-distance object's class; the
    clause is omitted when the object is alone in the room.
    """
    rng = np.random.default_rng(np.random.SeedSequence([seed, obj.id, 7]))
    size_adj = next((a for a in obj.attributes if a in vocab.SIZE_ADJECTIVES), None)

    neighbor = None
    best = np.inf
    for other in scene.objects:
        if other.id == obj.id:
            continue
        d = float(np.linalg.norm(obj.center - other.center))
        if d < best:
            best = d
            neighbor = other

    variant = int(rng.integers(2))
    words = ["there", "is", "a"] if variant else ["a"]
    if size_adj and variant == 0:
        words.append(size_adj)
    words += [obj.color_name, obj.class_label]
    if neighbor is not None:
        words += ["near", "the", neighbor.class_label]
    words.append(".")
    ids = vocab.encode(" ".join(words))
    assert len(ids) <= 30
    return ids


def build_caption_prompt(positive_labels, negative_labels, seed: int,
                         scene: Scene | None = None, shuffle: bool = True) -> TextSample:
    """Concatenate class labels into a detection prompt ("cabinet . bed . ...").

    Positive label spans map to every scene object of that class; negative
    labels (and positives absent from the scene) map to NO_OBJECT.  Label
    order is a seeded shuffle unless ``shuffle`` is off, in which case the
    given order (positives then negatives) is kept.
    """
    positive_labels = list(positive_labels)
    negative_labels = list(negative_labels)
    for lab in positive_labels + negative_labels:
        if lab not in vocab.CLASS_LABELS:
            raise UnknownLabelError(f"label {lab!r} not in the class vocabulary")
    if set(positive_labels) & set(negative_labels):
        raise ValueError("negative labels must be disjoint from positives")

    labels = positive_labels + negative_labels
    if shuffle:
        rng = np.random.default_rng(seed)
        labels = [labels[i] for i in rng.permutation(len(labels))]

    text = " . ".join(labels) + " ."
    token_ids = vocab.encode(text)
    positives = set(positive_labels)
    span_map: list[tuple[int, int, int]] = []
    pos = 1  # skip SOS
    for lab in labels:
        span = (pos, pos + 1)
        if lab in positives and scene is not None:
            ids = [o.id for o in scene.objects if o.class_label == lab]
            if ids:
                span_map.extend((span[0], span[1], oid) for oid in ids)
            else:
                span_map.append((span[0], span[1], vocab.NO_OBJECT))
        else:
            span_map.append((span[0], span[1], vocab.NO_OBJECT))
        pos += 2  # label + period

    return TextSample(
        raw_text=text,
        token_ids=token_ids,
        span_map=span_map,
        kind="prompt",
        scene_id=scene.scene_id if scene is not None else "",
    )
