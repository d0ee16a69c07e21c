import numpy as np
import pytest

from aumfilter.corpus import Dataset, LabeledSample, LabelSpace


def make_dataset(labels, *, num_classes=None, texts=None, prefix="s"):
    """Dataset with the given labels and either provided or generated texts."""
    samples = []
    for i, label in enumerate(labels):
        text = texts[i] if texts is not None else f"word{i} tok{label} filler"
        samples.append(
            LabeledSample(id=f"{prefix}{i:04d}", text=text, label=label, original_label=label)
        )
    space = LabelSpace(num_classes=num_classes or max(max(labels) + 1, 2))
    return Dataset(samples=tuple(samples), label_space=space)


def random_dataset(rng, n, num_classes=2, prefix="s"):
    labels = [int(rng.integers(num_classes)) for _ in range(n)]
    texts = [
        " ".join(f"w{rng.integers(50)}" for _ in range(6)) for _ in range(n)
    ]
    return make_dataset(labels, num_classes=num_classes, texts=texts, prefix=prefix)


@pytest.fixture
def rng():
    return np.random.default_rng(1234)
