from .data import Dataset, SceneData, generate_split, pad_token_batch
from .train import pretrain_vg, train_joint_mle, train_scst
from .infer import infer_dc, infer_vg
from .evaluate import evaluate

__all__ = [
    "Dataset", "SceneData", "generate_split", "pad_token_batch",
    "pretrain_vg", "train_joint_mle", "train_scst",
    "infer_dc", "infer_vg", "evaluate",
]
