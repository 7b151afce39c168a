from .backbone import PointEncoder, TextEncoder, build_geometry_cache
from .crossnet import CrossEncoder, KPSHead, QuerySelection
from .decoder import DecoderLayerOutput, QueryDecoder, referring_scores
from .captioner import Captioner
from .network import ForwardOutput, GroundCapModel, load_checkpoint, save_checkpoint

__all__ = [
    "PointEncoder", "TextEncoder", "build_geometry_cache",
    "CrossEncoder", "KPSHead", "QuerySelection",
    "DecoderLayerOutput", "QueryDecoder", "referring_scores",
    "Captioner",
    "ForwardOutput", "GroundCapModel", "load_checkpoint", "save_checkpoint",
]
