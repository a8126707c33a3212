"""Weakly supervised two-phase parsing of endoscopy-like videos.

Ego-motion from optical flow yields noisy phase labels; a frame classifier
trained on them supplies embeddings to a multi-stage temporal convolutional
network, and an optimal two-phase partition of its output gives the
transition point.
"""

from .features import FeatureNormalizer
from .frameclf import FrameClassifier
from .tcn import MSTCN
from .transition import TransitionDetector, detect_transition

__version__ = "0.1.0"

__all__ = ["FeatureNormalizer", "FrameClassifier", "MSTCN", "TransitionDetector", "detect_transition"]
