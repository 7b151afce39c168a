"""Dev probe: pretrain on the desk corpus, logging held-out Acc per epochs."""
import json
import logging
import sys
import time

import numpy as np

sys.path.insert(0, "src")
logging.basicConfig(level=logging.INFO, format="%(message)s")

from groundcap.config import TrainConfig
from groundcap.model import GroundCapModel, save_checkpoint
from groundcap.nn import AdamW, clip_grad_norm
from groundcap.runner.data import Dataset, generate_split, scene_grouped_batches
from groundcap.runner.evaluate import evaluate_vg
from groundcap.runner.train import compute_batch_loss, _lr_factor

cfg = TrainConfig()
gen_t = time.time()
generate_split(cfg, "/tmp/desk/train", cfg.train_scenes, seed=0)
generate_split(cfg, "/tmp/desk/val", cfg.val_scenes, seed=1, scene_seed_offset=1_000_000)
print(f"corpus gen {time.time()-gen_t:.1f}s", flush=True)

train = Dataset("/tmp/desk/train", cfg)
val = Dataset("/tmp/desk/val", cfg)
print(f"train refs {len(train.references)} prompts {len(train.prompts)}; "
      f"val refs {len(val.references)}", flush=True)

model = GroundCapModel(cfg)
samples = train.references + train.prompts
opt = AdamW([{"params": list(model.named_parameters()), "lr": cfg.pretrain_lr}],
            weight_decay=cfg.weight_decay)

for epoch in range(cfg.pretrain_epochs):
    opt.set_lr_factor(_lr_factor(epoch, cfg.pretrain_decay_epochs, cfg.decay_rate))
    rng = np.random.default_rng(np.random.SeedSequence([cfg.seed, epoch, 17]))
    t0 = time.time()
    losses_e = []
    variant = epoch % cfg.cloud_variants
    for batch in scene_grouped_batches(samples, cfg.batch_size, rng):
        total, _ = compute_batch_loss(model, train, batch, cfg, use_captions=False,
                                      cloud_variant=variant)
        opt.zero_grad()
        total.backward()
        clip_grad_norm(list(opt.all_params()), cfg.grad_clip)
        opt.step()
        losses_e.append(float(total.data))
    msg = f"epoch {epoch} loss {np.mean(losses_e):.4f} ({time.time()-t0:.0f}s)"
    if epoch % 3 == 2 or epoch == cfg.pretrain_epochs - 1:
        rep = evaluate_vg(model, val)
        msg += f" | acc@0.25 {rep['acc@0.25']['overall']:.3f} acc@0.5 {rep['acc@0.5']['overall']:.3f}"
    print(msg, flush=True)

save_checkpoint("/tmp/desk/vg_probe.npz", model, epoch=cfg.pretrain_epochs)
print("done", flush=True)
