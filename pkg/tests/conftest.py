import random

import pytest

from selcot import generate_lastletter, group_to_record

_LETTERS = "abcdefghijklmnopqrstuvwxyz"


def synthetic_vocab(n=3000, seed=1, min_len=3, max_len=9):
    """Deterministic pseudo-word vocabulary (no bundled word list)."""
    rng = random.Random(seed)
    words = set()
    while len(words) < n:
        words.add("".join(rng.choice(_LETTERS) for _ in range(rng.randint(min_len, max_len))))
    return sorted(words)


@pytest.fixture(scope="session")
def vocab():
    return synthetic_vocab()


@pytest.fixture(scope="session")
def lastletter_split(vocab):
    return generate_lastletter(vocab, 1000, 5000, seed=7)


@pytest.fixture(scope="session")
def eval_records(lastletter_split):
    _, test_groups = lastletter_split
    return [group_to_record(group, i) for i, group in enumerate(test_groups)]
