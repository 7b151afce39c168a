"""Optimizers with parameter groups (the two-learning-rate scheme needs them)."""

from __future__ import annotations

import numpy as np


def clip_grad_norm(params, max_norm: float) -> float:
    """Scale all gradients so their global L2 norm is at most ``max_norm``.

    Reassigns (never mutates) the grad arrays: the engine may share a grad
    buffer between tensors until a second contribution arrives.
    """
    tensors = [p for _, p in params if p.grad is not None]
    total = 0.0
    for p in tensors:
        total += float((p.grad.astype(np.float64) ** 2).sum())
    norm = float(np.sqrt(total))
    if norm > max_norm and norm > 0:
        scale = max_norm / norm
        for p in tensors:
            p.grad = p.grad * scale
    return norm


class _Base:
    """Shared group handling.  ``groups`` is a list of dicts:
    {"params": [(name, tensor), ...], "lr": float}."""

    def __init__(self, groups):
        if isinstance(groups, list) and groups and isinstance(groups[0], tuple):
            groups = [{"params": groups, "lr": 1e-3}]
        self.groups = groups
        for g in self.groups:
            g.setdefault("base_lr", g["lr"])

    def zero_grad(self):
        for g in self.groups:
            for _, p in g["params"]:
                p.grad = None

    def set_lr_factor(self, factor: float):
        for g in self.groups:
            g["lr"] = g["base_lr"] * factor

    def all_params(self):
        for g in self.groups:
            yield from g["params"]


class SGD(_Base):
    """Plain SGD; exists mainly for the effective-step-size probes."""

    def step(self):
        for g in self.groups:
            lr = g["lr"]
            for _, p in g["params"]:
                if p.grad is not None:
                    p.data -= (lr * p.grad).astype(p.data.dtype)


class AdamW(_Base):
    def __init__(self, groups, betas=(0.9, 0.999), eps: float = 1e-8,
                 weight_decay: float = 1e-4):
        super().__init__(groups)
        self.betas = betas
        self.eps = eps
        self.weight_decay = weight_decay
        self.state: dict[str, dict] = {}

    def step(self):
        b1, b2 = self.betas
        for g in self.groups:
            lr = g["lr"]
            for name, p in g["params"]:
                if p.grad is None:
                    continue
                st = self.state.setdefault(name, {
                    "m": np.zeros_like(p.data, dtype=np.float64),
                    "v": np.zeros_like(p.data, dtype=np.float64),
                    "t": 0,
                })
                st["t"] += 1
                grad = p.grad.astype(np.float64)
                st["m"] = b1 * st["m"] + (1 - b1) * grad
                st["v"] = b2 * st["v"] + (1 - b2) * grad * grad
                mhat = st["m"] / (1 - b1 ** st["t"])
                vhat = st["v"] / (1 - b2 ** st["t"])
                update = mhat / (np.sqrt(vhat) + self.eps) + self.weight_decay * p.data
                p.data -= (lr * update).astype(p.data.dtype)

    def state_dict(self) -> dict:
        out = {}
        for name, st in self.state.items():
            out[f"{name}.m"] = st["m"]
            out[f"{name}.v"] = st["v"]
            out[f"{name}.t"] = np.array(st["t"])
        return out

    def load_state_dict(self, state: dict) -> None:
        names = {k.rsplit(".", 1)[0] for k in state}
        for name in names:
            self.state[name] = {
                "m": np.asarray(state[f"{name}.m"], dtype=np.float64),
                "v": np.asarray(state[f"{name}.v"], dtype=np.float64),
                "t": int(np.asarray(state[f"{name}.t"])),
            }
