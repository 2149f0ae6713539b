"""Permutation-invariant multi-speaker source separation, desk scale.

Deep Clustering and utterance-level PIT objectives, K-means mask
construction, and a multi-scenario training rule that sums
per-scenario scale-invariant optimizer updates, exercised end to end
on a deterministic synthetic mixture corpus.
"""

__version__ = "0.1.0"

from .errors import PermsepError  # noqa: F401
