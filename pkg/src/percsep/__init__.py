"""Diarization-driven separation of two percussive voices.

The pipeline segments a single-channel recording, clusters the segments with
agglomerative information bottleneck, labels the clusters (solo voices vs.
overlap) with GMMs, and runs mask-based source separation only where both
voices play together.
"""

from .audio import AudioBuffer, read_wav, write_wav
from .segmentation import Annotation, Segment

__all__ = ["AudioBuffer", "Annotation", "Segment", "read_wav", "write_wav"]
__version__ = "0.1.0"
