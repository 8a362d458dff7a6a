"""modreason: a modular cascaded-reasoning encoder-decoder.

A representation stack produces contextual states; above it, skill-specialized
reasoning modules are composed per instance by learned routers (top-k sparse
mixtures) across several cascaded steps, each softly gated by a stop gate.
Trained from scratch on synthetic skill corpora and verified with gradient
checks, structural invariants, and seeded trend experiments.
"""

__version__ = "0.1.0"

from . import autodiff
from .config import ModelConfig, desk_scale, paper_scale, tiny

__all__ = ["ModelConfig", "autodiff", "desk_scale", "paper_scale", "tiny", "__version__"]
