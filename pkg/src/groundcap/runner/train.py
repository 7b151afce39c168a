"""Training phases: grounding pre-train, joint MLE (5 schemes), SCST."""

from __future__ import annotations

import logging
import time

import numpy as np

from .. import losses, metrics
from ..vocab import strip_specials as strip
from ..config import TrainConfig
from ..model import GroundCapModel, save_checkpoint
from ..nn import AdamW, clip_grad_norm
from ..nn.tensor import Tensor, index_select, no_grad
from .data import Dataset, pad_token_batch, scene_grouped_batches

log = logging.getLogger("groundcap.train")


class DivergenceError(RuntimeError):
    pass


def _encode_batch(model: GroundCapModel, dataset: Dataset, batch, variant: int = 0):
    """Point pathway per unique scene, expanded to sample order.

    ``variant`` > 0 selects an augmentation re-render of each scene.
    """
    scene_ids = []
    for sample in batch:
        if sample.scene_id not in scene_ids:
            scene_ids.append(sample.scene_id)
    slot = {sid: i for i, sid in enumerate(scene_ids)}
    sds = [dataset.scene_of_id(sid) for sid in scene_ids]
    clouds = np.stack([sd.cloud_variant(variant) for sd in sds])
    caches = [sd.cache_variant(model.cfg.model, variant) for sd in sds]
    extent = sds[0].extent
    coords_s, v0_s = model.encode_scenes(clouds, caches, extent)
    slots = np.array([slot[s.scene_id] for s in batch], dtype=np.int64)
    v0 = index_select(v0_s, slots)
    coords = coords_s[slots]
    return v0, coords, extent


def compute_batch_loss(model: GroundCapModel, dataset: Dataset, batch,
                       cfg: TrainConfig, use_captions: bool,
                       caption_variant: int = 0, cloud_variant: int = 0):
    """Mean composed loss over a batch of text samples; returns (loss, reports)."""
    v0, coords, extent = _encode_batch(model, dataset, batch, cloud_variant)
    ids, valid = pad_token_batch([s.token_ids for s in batch])
    out = model.ground(v0, coords, ids, valid, extent)
    alpha = (cfg.alpha1, cfg.alpha_cap, cfg.alpha_kps)
    totals = []
    reports = []
    for b, sample in enumerate(batch):
        targets = dataset.targets_for(sample, caption_variant, cloud_variant)
        comps, matchings = losses.vg_sample_losses(out.layers, targets, valid[b], b)
        sd = dataset.scene_of(sample)
        l_kps = losses.loss_kps(out.selection.logits[b], out.token_coords[b],
                                sd.boxes_variant(cloud_variant))
        l_cap = 0.0
        if use_captions and sample.kind == "prompt" and targets.captions:
            final_match = matchings[-1]
            tok_batch, _ = pad_token_batch(
                [targets.captions[g] for _, g in final_match.pairs])
            queries = out.layers[-1].q[b][final_match.query_idx]
            logits = model.captioner(queries, out.fused_v[b], tok_batch[:, :-1])
            l_cap = losses.loss_cap_mle(logits, tok_batch)
        rep = losses.compose_total(comps, l_cap, l_kps, alpha, cfg.beta)
        totals.append(rep.total)
        reports.append(rep)
    total = losses.sum_tensors(totals) * (1.0 / len(totals))
    return total, reports


def _lr_factor(epoch: int, decay_epochs, rate: float) -> float:
    return rate ** sum(epoch >= e for e in decay_epochs)


def _run_epochs(model, dataset, cfg, optimizer, samples, epochs, decay_epochs,
                use_captions, start_epoch: int = 0, tag: str = "train"):
    history = []
    for epoch in range(start_epoch, epochs):
        optimizer.set_lr_factor(_lr_factor(epoch, decay_epochs, cfg.decay_rate))
        rng = np.random.default_rng(np.random.SeedSequence([cfg.seed, epoch, 17]))
        epoch_losses = []
        t0 = time.time()
        variant = epoch % cfg.cloud_variants
        for batch in scene_grouped_batches(samples, cfg.batch_size, rng):
            total, _ = compute_batch_loss(model, dataset, batch, cfg,
                                          use_captions, caption_variant=epoch,
                                          cloud_variant=variant)
            if not np.isfinite(total.data):
                raise DivergenceError(f"non-finite loss at epoch {epoch}")
            optimizer.zero_grad()
            total.backward()
            clip_grad_norm(list(optimizer.all_params()), cfg.grad_clip)
            optimizer.step()
            epoch_losses.append(float(total.data))
        history.append(float(np.mean(epoch_losses)))
        log.info("%s epoch %d loss %.4f (%.1fs)", tag, epoch, history[-1],
                 time.time() - t0)
    return history


def pretrain_vg(cfg: TrainConfig, dataset: Dataset, out_path: str,
                epochs: int | None = None) -> dict:
    """Grounding-only pre-training (caption head untouched)."""
    model = GroundCapModel(cfg)
    samples = dataset.references + dataset.prompts
    groups = [{"params": list(model.named_parameters()), "lr": cfg.pretrain_lr}]
    opt = AdamW(groups, weight_decay=cfg.weight_decay)
    epochs = cfg.pretrain_epochs if epochs is None else epochs
    history = _run_epochs(model, dataset, cfg, opt, samples, epochs,
                          cfg.pretrain_decay_epochs, use_captions=False,
                          tag="pretrain-vg")
    save_checkpoint(out_path, model, epoch=epochs,
                    optimizer_state=opt.state_dict(),
                    extra={"phase": "pretrain-vg", "history": history})
    return {"model": model, "history": history}


def make_scheme_optimizer(model: GroundCapModel, cfg: TrainConfig) -> AdamW:
    """Parameter groups per joint-training scheme.

    1: everything at lr_cap; 2: two groups, DC data only; 3: caption head
    only (grounding weights frozen); 4: everything at lr_cap, joint data;
    5: two groups, joint data.
    """
    cap = list(model.caption_parameters())
    rest = list(model.vg_parameters())
    if cfg.scheme in (1, 4):
        groups = [{"params": cap + rest, "lr": cfg.lr_cap}]
    elif cfg.scheme in (2, 5):
        groups = [{"params": cap, "lr": cfg.lr_cap},
                  {"params": rest, "lr": cfg.lr_vg}]
    elif cfg.scheme == 3:
        groups = [{"params": cap, "lr": cfg.lr_cap}]
    else:
        raise ValueError(f"unknown scheme {cfg.scheme}")
    return AdamW(groups, weight_decay=cfg.weight_decay)


def scheme_samples(cfg: TrainConfig, dataset: Dataset):
    if cfg.scheme in (1, 2, 3):
        return dataset.prompts
    return dataset.references + dataset.prompts


def train_joint_mle(cfg: TrainConfig, dataset: Dataset, init_model: GroundCapModel,
                    out_path: str, epochs: int | None = None) -> dict:
    """Joint MLE training from a grounding checkpoint under one of 5 schemes."""
    cfg.validate()
    model = init_model
    if cfg.scheme == 3:
        for _, p in model.vg_parameters():
            p.requires_grad = False
    opt = make_scheme_optimizer(model, cfg)
    samples = scheme_samples(cfg, dataset)
    epochs = cfg.mle_epochs if epochs is None else epochs
    history = _run_epochs(model, dataset, cfg, opt, samples, epochs,
                          cfg.mle_decay_epochs, use_captions=True,
                          tag=f"mle-scheme{cfg.scheme}")
    if cfg.scheme == 3:
        for _, p in model.vg_parameters():
            p.requires_grad = True
    save_checkpoint(out_path, model, epoch=epochs,
                    optimizer_state=opt.state_dict(),
                    extra={"phase": f"mle-scheme{cfg.scheme}", "history": history})
    return {"model": model, "history": history}


def train_scst(cfg: TrainConfig, dataset: Dataset, init_model: GroundCapModel,
               out_path: str, epochs: int | None = None) -> dict:
    """Self-critical fine-tune of the caption head; the rest stays frozen.

    Per batch scene: greedy baseline + one sampled caption per matched query;
    the advantage weights the sampled sequence log-prob.  Rewards are CIDEr-D
    against the matched object's reference captions with document frequencies
    from the whole training corpus.
    """
    model = init_model
    for _, p in model.vg_parameters():
        p.requires_grad = False
    opt = AdamW([{"params": list(model.caption_parameters()), "lr": cfg.scst_lr}],
                weight_decay=0.0)
    ref_sets = []
    for sd in dataset.scene_data.values():
        for caps in sd.scene.captions.values():
            ref_sets.append([strip(c) for c in caps])
    df, n_docs = metrics.cider_document_frequencies(ref_sets)
    epochs = cfg.scst_epochs if epochs is None else epochs
    history = []
    for epoch in range(epochs):
        opt.set_lr_factor(_lr_factor(epoch, cfg.scst_decay_epochs, cfg.decay_rate))
        rng = np.random.default_rng(np.random.SeedSequence([cfg.seed, epoch, 23]))
        prompts = list(dataset.prompts)
        idx = rng.permutation(len(prompts))
        epoch_losses = []
        any_advantage = False
        for bstart in range(0, len(prompts), cfg.scst_batch_size):
            batch = [prompts[i] for i in idx[bstart:bstart + cfg.scst_batch_size]]
            v0, coords, extent = _encode_batch(model, dataset, batch)
            ids, valid = pad_token_batch([s.token_ids for s in batch])
            with no_grad():
                out = model.ground(v0, coords, ids, valid, extent)
            batch_terms = []
            for b, sample in enumerate(batch):
                targets = dataset.targets_for(sample)
                match = losses.hungarian_match(out.layers[-1], targets, valid[b], b)
                queries = Tensor(out.layers[-1].q.data[b][match.query_idx])
                v_b = Tensor(out.fused_v.data[b])
                refs = [[strip(c) for c in dataset.scene_of(sample).scene.captions[
                    targets.object_ids[g]]] for _, g in match.pairs]
                greedy_toks = model.captioner.greedy(queries, v_b)
                sampled_toks, _ = model.captioner.sample(
                    queries, v_b, seed=int(rng.integers(1 << 31)))
                r_greedy = metrics.cider_d([strip(t) for t in greedy_toks], refs,
                                           df=df, n_docs=n_docs)
                r_sampled = metrics.cider_d([strip(t) for t in sampled_toks], refs,
                                            df=df, n_docs=n_docs)
                if np.any(r_sampled != r_greedy):
                    any_advantage = True
                logp = model.captioner.sequence_logprob(queries, v_b, sampled_toks)
                batch_terms.append(losses.loss_scst(logp, r_sampled, r_greedy))
            total = losses.sum_tensors(batch_terms) * (1.0 / len(batch_terms))
            if not np.isfinite(total.data):
                raise DivergenceError(f"non-finite SCST loss at epoch {epoch}")
            opt.zero_grad()
            total.backward()
            clip_grad_norm(list(opt.all_params()), cfg.grad_clip)
            opt.step()
            epoch_losses.append(float(total.data))
        if not any_advantage:
            log.warning("SCST epoch %d: all advantages zero (reward degeneracy)", epoch)
        history.append(float(np.mean(epoch_losses)))
        log.info("scst epoch %d loss %.4f", epoch, history[-1])
    for _, p in model.vg_parameters():
        p.requires_grad = True
    save_checkpoint(out_path, model, epoch=epochs,
                    optimizer_state=opt.state_dict(),
                    extra={"phase": "scst", "history": history})
    return {"model": model, "history": history}
