"""tripletgen: synthesize, score, and curate audio-editing triplet datasets."""

from .audio import AudioClip, load_wav, save_wav

__all__ = ["AudioClip", "load_wav", "save_wav"]
__version__ = "0.1.0"
