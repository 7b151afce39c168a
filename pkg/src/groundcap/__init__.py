"""Joint 3D visual grounding and dense captioning on a synthetic desk-scale corpus."""

__version__ = "0.1.0"
