"""Loss tests: matching optimality, closed forms, composition arithmetic."""

import itertools

import numpy as np
import pytest

from groundcap import losses, vocab
from groundcap.losses import Matching, SampleTargets
from groundcap.nn.tensor import Tensor


def brute_force_match(cost: np.ndarray) -> float:
    """Minimal assignment cost by permutation enumeration (G <= 6)."""
    k, g = cost.shape
    best = np.inf
    for rows in itertools.permutations(range(k), g):
        best = min(best, sum(cost[r, c] for c, r in enumerate(rows)))
    return best


def build_match_cost(boxes, align, valid, targets):
    s = losses.span_masses(align, valid, targets.spans)
    l1 = np.abs(boxes[:, None, :3] - targets.boxes[None, :, :3]).sum(axis=-1)
    from groundcap.metrics import pairwise_giou
    giou = pairwise_giou(boxes, targets.boxes)
    return 2 * (1 - s) + 5 * l1 + 2 * (1 - giou)


def random_instance(rng, k, g, length=8):
    boxes = np.concatenate([rng.normal(size=(k, 3)), rng.uniform(0.2, 1.5, (k, 3))], axis=1)
    align = rng.normal(size=(k, length))
    valid = np.ones(length, bool)
    gt_boxes = np.concatenate([rng.normal(size=(g, 3)), rng.uniform(0.2, 1.5, (g, 3))], axis=1)
    spans = [(int(s), int(s) + 1) for s in rng.integers(0, length, size=g)]
    targets = SampleTargets(boxes=gt_boxes, spans=spans, object_ids=list(range(g)))
    return boxes, align, valid, targets


def test_hungarian_matches_brute_force():
    rng = np.random.default_rng(0)
    for _ in range(60):
        k = int(rng.integers(2, 7))
        g = int(rng.integers(1, k + 1))
        boxes, align, valid, targets = random_instance(rng, k, g)
        m = losses.hungarian_match_arrays(boxes, align, valid, targets)
        cost = build_match_cost(boxes, align, valid, targets)
        achieved = sum(cost[q, gi] for q, gi in m.pairs)
        assert achieved == pytest.approx(brute_force_match(cost), abs=1e-9)
        qs = [q for q, _ in m.pairs]
        gs = [gi for _, gi in m.pairs]
        assert len(set(qs)) == len(qs) and sorted(gs) == list(range(g))


def test_match_single_pair_and_errors():
    rng = np.random.default_rng(1)
    boxes, align, valid, targets = random_instance(rng, 1, 1)
    m = losses.hungarian_match_arrays(boxes, align, valid, targets)
    assert m.pairs == [(0, 0)]
    boxes, align, valid, targets = random_instance(rng, 2, 2)
    targets.boxes = np.vstack([targets.boxes, targets.boxes, targets.boxes])
    targets.spans = targets.spans * 3
    with pytest.raises(ValueError):
        losses.hungarian_match_arrays(boxes, align, valid, targets)


def test_match_duplicate_queries_cost_invariant():
    rng = np.random.default_rng(2)
    boxes, align, valid, targets = random_instance(rng, 3, 1)
    boxes[1] = boxes[0]
    align[1] = align[0]
    cost = build_match_cost(boxes, align, valid, targets)
    m = losses.hungarian_match_arrays(boxes, align, valid, targets)
    q = m.pairs[0][0]
    assert cost[q, 0] == pytest.approx(min(cost[0, 0], cost[1, 0], cost[2, 0]))


# -- smooth-L1 box losses ------------------------------------------------------

def _box_targets(gt):
    g = len(gt)
    return SampleTargets(boxes=np.asarray(gt, float),
                         spans=[(0, 1)] * g, object_ids=list(range(g)))


def test_loss_coord_closed_forms():
    gt = [[0, 0, 0, 1, 1, 1]]
    targets = _box_targets(gt)
    m = Matching(pairs=[(0, 0)])
    pred = Tensor(np.array(gt, dtype=np.float64), requires_grad=True)
    assert losses.loss_coord(pred, m, targets).item() == 0.0
    assert losses.loss_size(pred, m, targets).item() == 0.0

    shifted = np.array(gt, float)
    shifted[0, :3] += 0.5            # quadratic branch: 0.5 * 0.5^2 = 0.125
    assert losses.loss_coord(Tensor(shifted), m, targets).item() == pytest.approx(0.125)
    shifted = np.array(gt, float)
    shifted[0, :3] += 3.0            # linear branch: 3 - 0.5 = 2.5
    assert losses.loss_coord(Tensor(shifted), m, targets).item() == pytest.approx(2.5)


def test_loss_giou_cases():
    gt = [[0, 0, 0, 1, 1, 1]]
    targets = _box_targets(gt)
    m = Matching(pairs=[(0, 0)])
    assert losses.loss_giou(Tensor(np.array(gt, float)), m, targets).item() == pytest.approx(0.0)
    off = np.array([[0.5, 0, 0, 1, 1, 1]])
    assert losses.loss_giou(Tensor(off), m, targets).item() == pytest.approx(2 / 3, abs=1e-12)
    far = np.array([[11.0, 0, 0, 1, 1, 1]])
    val = losses.loss_giou(Tensor(far), m, targets).item()
    assert val == pytest.approx(1 + 10 / 12, abs=1e-12) and val > 1


# -- alignment losses -------------------------------------------------------------

def test_loss_sem_uniform_closed_form():
    # 8 valid tokens, span of 2, uniform logits, no-object effectively absent
    k, length = 3, 8
    align = Tensor(np.zeros((k, length)))
    noobj = Tensor(np.full(k, -1e9))
    valid = np.ones(length, bool)
    targets = SampleTargets(boxes=np.zeros((1, 6)), spans=[(2, 4)], object_ids=[0])
    m = Matching(pairs=[(0, 0)])
    qt = losses.loss_sem(align, noobj, m, targets, valid, direction="qt")
    # matched query: -log(2/8); the two unmatched queries aim at the dead
    # no-object slot, contributing -log(~0) -> excluded via fixture matching all
    m_all = Matching(pairs=[(0, 0), (1, 0), (2, 0)])
    qt_all = losses.loss_sem(align, noobj, m_all, targets, valid, direction="qt")
    assert qt_all.item() == pytest.approx(np.log(4), abs=1e-9)
    tq = losses.loss_sem(align, noobj, m, targets, valid, direction="tq")
    assert tq.item() == pytest.approx(np.log(k), abs=1e-9)


def test_loss_sem_one_hot_limit():
    k, length = 2, 6
    align = np.zeros((k, length))
    align[0, 2] = 60.0     # query 0 concentrated on span token
    noobj = np.zeros(k)
    noobj[1] = 60.0        # query 1 concentrated on no-object
    valid = np.ones(length, bool)
    targets = SampleTargets(boxes=np.zeros((1, 6)), spans=[(2, 3)], object_ids=[0])
    m = Matching(pairs=[(0, 0)])
    val = losses.loss_sem(Tensor(align), Tensor(noobj), m, targets, valid, direction="qt")
    assert val.item() == pytest.approx(0.0, abs=1e-12)


def test_loss_sem_pad_and_permutation_invariance():
    rng = np.random.default_rng(3)
    k, length = 4, 7
    align = rng.normal(size=(k, length))
    noobj = rng.normal(size=k)
    valid = np.ones(length, bool)
    targets = SampleTargets(boxes=np.zeros((2, 6)), spans=[(1, 2), (4, 5)], object_ids=[0, 1])
    m = Matching(pairs=[(0, 0), (2, 1)])
    base = losses.loss_sem(Tensor(align), Tensor(noobj), m, targets, valid).item()
    # permuting the non-span columns (indices 3 and 6) leaves the loss unchanged
    perm = align.copy()
    perm[:, [3, 6]] = perm[:, [6, 3]]
    val = losses.loss_sem(Tensor(perm), Tensor(noobj), m, targets, valid).item()
    assert val == pytest.approx(base, abs=1e-12)
    # adding pad columns changes nothing
    align_pad = np.concatenate([align, rng.normal(size=(k, 3))], axis=1)
    valid_pad = np.concatenate([valid, np.zeros(3, bool)])
    val = losses.loss_sem(Tensor(align_pad), Tensor(noobj), m, targets, valid_pad).item()
    assert val == pytest.approx(base, abs=1e-9)


def test_loss_pos_closed_forms():
    k, length = 2, 8
    pos = Tensor(np.zeros((k, length)))
    valid = np.ones(length, bool)
    targets = SampleTargets(boxes=np.zeros((1, 6)), spans=[(0, 2)], object_ids=[0])
    m = Matching(pairs=[(1, 0)])
    assert losses.loss_pos(pos, m, targets, valid).item() == pytest.approx(np.log(4), abs=1e-9)
    conc = np.zeros((k, length))
    conc[1, 0] = 80.0
    assert losses.loss_pos(Tensor(conc), m, targets, valid).item() == pytest.approx(0.0, abs=1e-12)
    # pads do not contribute
    pos_pad = np.concatenate([np.zeros((k, length)), np.full((k, 2), 5.0)], axis=1)
    valid_pad = np.concatenate([valid, np.zeros(2, bool)])
    assert losses.loss_pos(Tensor(pos_pad), m, targets, valid_pad).item() == pytest.approx(
        np.log(4), abs=1e-9)


# -- KPS loss ---------------------------------------------------------------------

def test_kps_labels_and_closed_form():
    coords = np.array([[0.1, 0, 0.1], [0.2, 0, 0.1], [0.3, 0, 0.1],
                       [0.05, 0.05, 0.1], [0.15, 0.1, 0.1], [5, 5, 5]])
    box = np.array([[0.15, 0.05, 0.1, 0.5, 0.5, 0.5]])
    labels = losses.kps_positive_labels(coords, box)
    assert labels.sum() == 4  # five inside, four nearest kept
    assert labels[5] == 0
    # object containing no tokens contributes no positives
    empty = losses.kps_positive_labels(coords, np.array([[9, 9, 9, 0.1, 0.1, 0.1]]))
    assert empty.sum() == 0
    # uniform 0.5 scores -> log 2 regardless of labels
    logits = Tensor(np.zeros(len(coords)))
    assert losses.loss_kps(logits, coords, box).item() == pytest.approx(np.log(2), abs=1e-12)
    # perfect scores -> ~0
    strong = np.where(labels > 0, 80.0, -80.0)
    assert losses.loss_kps(Tensor(strong), coords, box).item() == pytest.approx(0.0, abs=1e-12)


# -- caption losses -----------------------------------------------------------------

def test_loss_cap_mle_closed_forms():
    g, t, v = 2, 5, 64
    tokens = np.full((g, t), vocab.PAD_ID, dtype=np.int64)
    tokens[:, 0] = vocab.SOS_ID
    tokens[0, 1:4] = [10, 11, vocab.EOS_ID]
    tokens[1, 1:3] = [12, vocab.EOS_ID]
    logits = Tensor(np.zeros((g, t - 1, v)))
    assert losses.loss_cap_mle(logits, tokens).item() == pytest.approx(np.log(64), abs=1e-9)
    # one-hot correct logits -> ~0
    strong = np.full((g, t - 1, v), -80.0)
    for i in range(g):
        for j in range(t - 1):
            tgt = tokens[i, j + 1]
            strong[i, j, tgt if tgt != vocab.PAD_ID else 0] = 80.0
    assert losses.loss_cap_mle(Tensor(strong), tokens).item() == pytest.approx(0.0, abs=1e-9)
    # pad-step logits are irrelevant
    noisy = strong.copy()
    noisy[0, 3, :] = np.random.default_rng(0).normal(size=v)  # step after EOS
    assert losses.loss_cap_mle(Tensor(noisy), tokens).item() == pytest.approx(0.0, abs=1e-9)


def test_loss_scst():
    lp = Tensor(np.array([-2.0, -3.0]), requires_grad=True)
    zero = losses.loss_scst(lp, np.array([1.0, 2.0]), np.array([1.0, 2.0]))
    assert zero.item() == 0.0
    # positive advantage, negative logprob -> positive loss
    val = losses.loss_scst(lp, np.array([2.0, 2.0]), np.array([1.0, 2.0]))
    assert val.item() == pytest.approx(-np.mean([1.0 * -2.0, 0.0 * -3.0]) )
    assert val.item() > 0
    # 2-query hand fixture
    val = losses.loss_scst(lp, np.array([3.0, 1.0]), np.array([1.0, 2.0]))
    hand = -np.mean([2.0 * -2.0, -1.0 * -3.0])
    assert val.item() == pytest.approx(hand)
    val.backward()
    np.testing.assert_allclose(lp.grad, [-2.0 / 2, 1.0 / 2])


# -- composition --------------------------------------------------------------------

def _unit_components(n_layers):
    return [{k: Tensor(np.float64(1.0)) for k in ("coord", "size", "giou", "sem", "pos")}
            for _ in range(n_layers)]


def test_compose_alpha1_for_six_layers():
    comps = _unit_components(6)
    beta = (5.0, 1.0, 1.0, 0.5, 0.5)
    alpha = (1.0 / 7.0, 5.0, 8.0)
    rep = losses.compose_total(comps, l_cap=1.0, l_kps=1.0, alpha=alpha, beta=beta)
    # per layer: 5+1+1+0.5+0.5 = 8; vg = 8; total = 8/7 + 5 + 8
    assert rep.l_vg == pytest.approx(8.0, abs=1e-12)
    assert rep.total_value == pytest.approx(8.0 / 7.0 + 5.0 + 8.0, abs=1e-9)


def test_compose_zero_and_linearity():
    comps = [{k: Tensor(np.float64(0.0)) for k in ("coord", "size", "giou", "sem", "pos")}]
    rep = losses.compose_total(comps, 0.0, 0.0, (0.5, 5.0, 8.0), (5, 1, 1, 0.5, 0.5))
    assert rep.total_value == 0.0
    comps = _unit_components(2)
    alpha, beta = (1 / 3, 5.0, 8.0), (5.0, 1.0, 1.0, 0.5, 0.5)
    base = losses.compose_total(comps, 1.0, 1.0, alpha, beta).total_value
    comps2 = _unit_components(2)
    for c in comps2:
        c["coord"] = Tensor(np.float64(2.0))
    doubled = losses.compose_total(comps2, 1.0, 1.0, alpha, beta).total_value
    assert doubled - base == pytest.approx(alpha[0] * beta[0] * 1.0, abs=1e-12)


def test_compose_hand_fixture():
    comps = [
        {"coord": Tensor(np.float64(0.2)), "size": Tensor(np.float64(0.1)),
         "giou": Tensor(np.float64(0.4)), "sem": Tensor(np.float64(1.0)),
         "pos": Tensor(np.float64(0.6))},
        {"coord": Tensor(np.float64(0.1)), "size": Tensor(np.float64(0.3)),
         "giou": Tensor(np.float64(0.2)), "sem": Tensor(np.float64(0.5)),
         "pos": Tensor(np.float64(0.6))},
    ]
    beta = (5.0, 1.0, 1.0, 0.5, 0.5)
    alpha = (1.0 / 3.0, 5.0, 8.0)
    l1 = 5 * 0.2 + 0.1 + 0.4 + 0.5 * 1.0 + 0.5 * 0.6
    l2 = 5 * 0.1 + 0.3 + 0.2 + 0.5 * 0.5 + 0.5 * 0.6
    expect = (l1 + l2) / 2 / 3 + 5 * 0.7 + 8 * 0.3
    rep = losses.compose_total(comps, 0.7, 0.3, alpha, beta)
    assert rep.total_value == pytest.approx(expect, abs=1e-12)
    assert rep.l_coord == [pytest.approx(0.2), pytest.approx(0.1)]


def test_all_losses_nonnegative_random():
    rng = np.random.default_rng(9)
    for _ in range(20):
        boxes, align, valid, targets = random_instance(rng, 5, 2)
        m = losses.hungarian_match_arrays(boxes, align, valid, targets)
        pred = Tensor(boxes)
        assert losses.loss_coord(pred, m, targets).item() >= 0
        assert losses.loss_size(pred, m, targets).item() >= 0
        gl = losses.loss_giou(pred, m, targets).item()
        assert 0 <= gl <= 2
        sem = losses.loss_sem(Tensor(align), Tensor(rng.normal(size=5)), m, targets, valid)
        assert sem.item() >= 0
