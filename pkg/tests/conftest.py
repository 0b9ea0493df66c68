import numpy as np
import pytest

from basin_atlas.model import ModelConfig
from basin_atlas.tasks import TaskSpec, gen_split


@pytest.fixture(scope="session")
def model_config():
    return ModelConfig()


@pytest.fixture(scope="session")
def tiny_spec():
    return TaskSpec(
        split_sizes={"train": 600, "id_val": 400, "diagnostic": 200, "pretrain": 400},
        seed=7,
    )


@pytest.fixture(scope="session")
def tiny_splits(tiny_spec):
    return {
        name: gen_split(tiny_spec, name, tiny_spec.seed)
        for name in ("train", "id_val", "diagnostic", "pretrain")
    }


@pytest.fixture
def rng():
    return np.random.default_rng(0)
