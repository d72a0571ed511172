import sys
from pathlib import Path

import pytest

sys.path.insert(0, str(Path(__file__).parent))

from posetransfer.data import SyntheticSpec, make_synthetic_dataset
from posetransfer.discriminators import DiscriminatorConfig
from posetransfer.generator import GeneratorConfig
from posetransfer.training import TrainingConfig, train


@pytest.fixture(scope="session")
def toy_dataset(tmp_path_factory):
    """16 stick-figure pairs (8 identities x 2 poses) at 32x16."""
    root = tmp_path_factory.mktemp("toyds")
    spec = SyntheticSpec(num_identities=8, poses_per_identity=2,
                         image_size=(32, 16), seed=0)
    return make_synthetic_dataset(spec, str(root))


@pytest.fixture(scope="session")
def tiny_configs():
    gen = GeneratorConfig(num_blocks=2, base_channels=8, image_size=(32, 16))
    disc = DiscriminatorConfig(base_channels=8)
    return gen, disc


@pytest.fixture(scope="session")
def toy_run(tmp_path_factory, toy_dataset, tiny_configs):
    """A short shared training run for tests that need a trained model."""
    out = tmp_path_factory.mktemp("toyrun")
    gen_cfg, disc_cfg = tiny_configs
    tcfg = TrainingConfig(iterations=200, batch_size=8, seed=0,
                          checkpoint_interval=100, sigma=2.0)
    result = train(gen_cfg, disc_cfg, tcfg, toy_dataset.records, str(out))
    return {
        "result": result,
        "dataset": toy_dataset,
        "gen_config": gen_cfg,
        "disc_config": disc_cfg,
        "train_config": tcfg,
        "out": str(out),
    }
