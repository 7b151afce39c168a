"""Full model: point/text backbones, cross-encoder, KPS, decoder, captioner."""

from __future__ import annotations

import json
import os
import tempfile
from dataclasses import dataclass

import numpy as np

from ..config import TrainConfig, config_from_json, config_to_json
from ..nn import Module
from ..nn.tensor import Tensor
from .backbone import GeometryCache, PointEncoder, TextEncoder, VisualTokenizer
from .captioner import Captioner
from .crossnet import CrossEncoder, KPSHead, QuerySelection
from .decoder import DecoderLayerOutput, QueryDecoder


@dataclass
class ForwardOutput:
    layers: list[DecoderLayerOutput]
    selection: QuerySelection
    fused_v: Tensor            # (B, n, d)
    fused_t: Tensor            # (B, l, d)
    token_coords: np.ndarray   # (B, n, 3)
    text_valid: np.ndarray     # (B, l)

    @property
    def final(self) -> DecoderLayerOutput:
        return self.layers[-1]


class GroundCapModel(Module):
    def __init__(self, cfg: TrainConfig, seed: int | None = None):
        super().__init__()
        self.cfg = cfg
        mc = cfg.model
        dtype = np.dtype(mc.dtype).type
        rng = np.random.default_rng(cfg.seed if seed is None else seed)
        self.point_enc = PointEncoder(mc, rng, dtype)
        self.tokenizer = VisualTokenizer(mc, rng, dtype)
        self.text_enc = TextEncoder(mc, rng, dtype)
        self.cross_enc = CrossEncoder(mc, rng, dtype)
        self.kps = KPSHead(mc, rng, dtype)
        self.decoder = QueryDecoder(mc, rng, dtype)
        self.captioner = Captioner(mc, rng, dtype)
        self.dtype = dtype

    def forward(self, cloud: np.ndarray, token_ids: np.ndarray,
                text_valid: np.ndarray, extent: np.ndarray,
                cache: list[GeometryCache] | None = None) -> ForwardOutput:
        """cloud (B,N,6); token_ids/text_valid (B,l); extent (3,) room size."""
        if cloud.ndim == 2:
            cloud = cloud[None]
        extent = np.asarray(extent, dtype=np.float64)
        if cache is None:
            from .backbone import build_geometry_cache
            cache = [build_geometry_cache(cloud[i], self.cfg.model) for i in range(cloud.shape[0])]
        elif isinstance(cache, GeometryCache):
            cache = [cache]
        coords, v0 = self.encode_scenes(cloud, cache, extent)
        return self.ground(v0, coords, token_ids, text_valid, extent)

    __call__ = forward

    def encode_scenes(self, clouds: np.ndarray, caches: list[GeometryCache],
                      extent: np.ndarray):
        """Point pathway only: (S,N,6) -> (coords (S,n,3), tokens (S,n,d)).

        Batched per unique scene; ``ground`` then runs per text sample with
        the scene rows expanded to the sample order.
        """
        extent = np.asarray(extent, np.float64)
        _, src_feat = self.point_enc(clouds, caches, room_height=float(extent[2]))
        return self.tokenizer(src_feat, caches, extent)

    def ground(self, v0: Tensor, coords: np.ndarray, token_ids: np.ndarray,
               text_valid: np.ndarray, extent: np.ndarray) -> ForwardOutput:
        """Text encoding, fusion, query selection, decoding for a sample batch."""
        t0 = self.text_enc(token_ids, text_valid)
        v, t = self.cross_enc(v0, t0, text_valid)
        sel = self.kps(v, coords, self.cfg.model.k_queries)
        layers = self.decoder(sel.q0, sel.coords, t, text_valid,
                              np.asarray(extent, np.float64))
        return ForwardOutput(layers=layers, selection=sel, fused_v=v, fused_t=t,
                             token_coords=coords, text_valid=np.asarray(text_valid, bool))

    def vg_parameters(self):
        """Everything except the caption head."""
        cap = set(id(p) for _, p in self.captioner.named_parameters())
        for name, p in self.named_parameters():
            if id(p) not in cap:
                yield name, p

    def caption_parameters(self):
        for name, p in self.captioner.named_parameters("captioner."):
            yield name, p


def save_checkpoint(path: str, model: GroundCapModel, epoch: int = 0,
                    optimizer_state: dict | None = None,
                    extra: dict | None = None) -> None:
    """Single-file npz archive with embedded config; atomic via temp rename."""
    payload: dict[str, np.ndarray] = {}
    for name, arr in model.state_dict().items():
        payload["param/" + name] = arr
    if optimizer_state:
        for name, arr in optimizer_state.items():
            payload["opt/" + name] = np.asarray(arr)
    payload["meta/config"] = np.frombuffer(
        config_to_json(model.cfg).encode(), dtype=np.uint8)
    meta = {"epoch": int(epoch)}
    if extra:
        meta.update(extra)
    payload["meta/extra"] = np.frombuffer(json.dumps(meta).encode(), dtype=np.uint8)

    directory = os.path.dirname(os.path.abspath(path))
    os.makedirs(directory, exist_ok=True)
    fd, tmp = tempfile.mkstemp(dir=directory, suffix=".tmp")
    os.close(fd)
    try:
        with open(tmp, "wb") as f:
            np.savez(f, **payload)
        os.replace(tmp, path)
    finally:
        if os.path.exists(tmp):
            os.unlink(tmp)


def load_checkpoint(path: str) -> tuple[GroundCapModel, dict, dict]:
    """Rebuild the model from an archive; returns (model, optimizer_state, meta)."""
    with np.load(path) as z:
        cfg = config_from_json(bytes(z["meta/config"]).decode())
        meta = json.loads(bytes(z["meta/extra"]).decode())
        state = {k[len("param/"):]: z[k] for k in z.files if k.startswith("param/")}
        opt_state = {k[len("opt/"):]: z[k] for k in z.files if k.startswith("opt/")}
    model = GroundCapModel(cfg)
    model.load_state_dict(state)
    return model, opt_state, meta
