import sys
from pathlib import Path

import numpy as np
import pytest

sys.path.insert(0, str(Path(__file__).parent))

from affground import data
from affground.config import RunConfig


@pytest.fixture
def rng():
    return np.random.default_rng(0)


@pytest.fixture(scope="session")
def small_corpus(tmp_path_factory):
    """Noisy corpus small enough for per-test training runs."""
    out = tmp_path_factory.mktemp("corpus_noisy")
    spec = data.SyntheticSpec(num_train=16, num_test=8, sigma=0.05, seed=0)
    cache, records, masks = data.generate_synthetic(spec, out)
    return cache, records, masks, spec


@pytest.fixture(scope="session")
def clean_corpus(tmp_path_factory):
    """Noiseless corpus: every margin is exact."""
    out = tmp_path_factory.mktemp("corpus_clean")
    spec = data.SyntheticSpec(num_train=12, num_test=6, sigma=0.0, seed=0)
    cache, records, masks = data.generate_synthetic(spec, out)
    return cache, records, masks, spec


@pytest.fixture
def base_cfg(small_corpus):
    cache, _, _, _ = small_corpus
    return RunConfig(cache_dir=str(cache.path), epochs=1, batch_size=8, seed=0)
