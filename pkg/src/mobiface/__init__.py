"""MobiFace: a small NumPy inference engine, static analyzer and face-verification toolkit."""

from .estimators import MobiFaceEmbedder, PairVerifier
from .graph import build_architecture, build_mobiface, embed_with_flip, forward
from .weights import WeightStore, init_random, load, save

__version__ = "0.1.0"

__all__ = [
    "MobiFaceEmbedder",
    "PairVerifier",
    "WeightStore",
    "build_architecture",
    "build_mobiface",
    "embed_with_flip",
    "forward",
    "init_random",
    "load",
    "save",
]
