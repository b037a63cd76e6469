import numpy as np
import pytest

from streamattn.corpus import SyntheticTaskSpec, generate
from streamattn.model import ModelConfig, init_parameters


@pytest.fixture(scope="session")
def tiny_cfg():
    # small enough for finite differences, big enough for two heads
    return ModelConfig(layers=2, heads=2, d_model=16, vocab_size=16,
                       max_positions=256, precision="fp64")


@pytest.fixture(scope="session")
def tiny_params(tiny_cfg):
    return init_parameters(tiny_cfg, seed=1234)


@pytest.fixture(scope="session")
def copy_pairs():
    spec = SyntheticTaskSpec(kind="copy", vocab_size=16, len_min=3, len_max=6, seed=42)
    return generate(spec, 32)


def rand_source(rng, n, vocab=16):
    return rng.integers(3, vocab, size=n)
