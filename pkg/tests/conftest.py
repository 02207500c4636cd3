import pytest

from bwe.data import SyntheticSpec, generate_synthetic_dataset

TINY = SyntheticSpec(train_clips=4, validation_clips=2, test_clips=2, clip_seconds=0.5,
                     validation_seconds=1.0)


@pytest.fixture(scope="session")
def tiny_corpus(tmp_path_factory):
    """Small seeded corpus: 4 train, 2 validation (1 s), 2 test clips."""
    out = tmp_path_factory.mktemp("tiny")
    return generate_synthetic_dataset(out, TINY, seed=11)
