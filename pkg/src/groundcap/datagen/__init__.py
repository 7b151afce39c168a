from .scene import GenConfig, ObjectSpec, PlacementError, Scene, generate_scene
from .cloud import COLOR_TABLE, nearest_color, render_point_cloud
from .language import (
    DisambiguationError,
    TextSample,
    UnknownLabelError,
    build_caption_prompt,
    generate_caption,
    generate_reference,
    relation_holds,
)
from .corpus import CorpusFormatError, read_corpus, write_corpus

__all__ = [
    "GenConfig", "ObjectSpec", "PlacementError", "Scene", "generate_scene",
    "COLOR_TABLE", "nearest_color", "render_point_cloud",
    "DisambiguationError", "TextSample", "UnknownLabelError",
    "build_caption_prompt", "generate_caption", "generate_reference",
    "relation_holds",
    "CorpusFormatError", "read_corpus", "write_corpus",
]
