"""Track-role classification of single-instrument music sequences."""
from .midi_io import Note, Sequence, TrackRole

__version__ = "0.1.0"
__all__ = ["Note", "Sequence", "TrackRole", "__version__"]
