import pytest
import torch

from imgsynth import load_classifier
from imgsynth.testkit import load_tiny

TINY_PHI = ("t1", "t2", "t3")


@pytest.fixture(scope="session")
def tiny():
    return load_classifier("tiny-test-net")


@pytest.fixture(scope="session")
def tiny_f64():
    return load_tiny(dtype=torch.float64)


def rand_image(seed, size=32, channels=3, dtype=torch.float32):
    gen = torch.Generator().manual_seed(seed)
    return torch.rand((channels, size, size), generator=gen, dtype=torch.float32).to(dtype)
