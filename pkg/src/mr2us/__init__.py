"""MR-to-US phantom simulation, freehand reconstruction, cross-modality
translation, and deformable registration."""

__version__ = "0.1.0"
