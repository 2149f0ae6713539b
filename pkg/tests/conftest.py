"""Shared fixtures: a small on-disk corpus reused across test modules."""

import numpy as np
import pytest

from permsep.corpus import CorpusConfig, build_corpus, read_manifest
from permsep.trainer import compute_feature_stats

SMALL_SEED = 11


@pytest.fixture(scope="session")
def small_corpus(tmp_path_factory):
    """A tiny two-scenario corpus: 6 train / 3 val / 4 test per scenario."""
    root = tmp_path_factory.mktemp("small_corpus")
    config = CorpusConfig(
        scenarios=(2, 3),
        train_per_scenario=6,
        validation_per_scenario=3,
        test_per_scenario=4,
    )
    manifests = build_corpus(config, root, seed=SMALL_SEED)
    return root, manifests


@pytest.fixture(scope="session")
def small_manifests(small_corpus):
    root, _ = small_corpus
    return {split: read_manifest(root, split) for split in ("train", "validation", "test")}


@pytest.fixture(scope="session")
def small_stats(small_corpus, small_manifests):
    root, _ = small_corpus
    return compute_feature_stats(root, small_manifests["train"], (2, 3))


@pytest.fixture()
def rng():
    return np.random.default_rng(1234)
