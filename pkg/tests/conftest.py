import sys
from pathlib import Path

import numpy as np
import pytest

sys.path.insert(0, str(Path(__file__).parent))

from metseg.data import SyntheticSpec, generate_synthetic, normalize  # noqa: E402
from metseg.pipeline import PipelineConfig  # noqa: E402

ROOT = Path(__file__).resolve().parents[1]
DESK_CONFIG = ROOT / "configs" / "desk.yaml"


@pytest.fixture(scope="session")
def desk_config() -> PipelineConfig:
    return PipelineConfig.load(DESK_CONFIG)


@pytest.fixture(scope="session")
def tiny_config(desk_config) -> PipelineConfig:
    """Desk layout with a budget small enough for unit tests."""
    return desk_config.override(
        synth_cases=2, synth_shape=(32, 32, 32), det_epochs=2, det_val_every=1,
        seg_iterations=6, seg_iters_per_epoch=3, seeds=(0,),
        ablation_det_epochs=1, ablation_seg_iterations=2,
    )


@pytest.fixture(scope="session")
def small_cases():
    cases = generate_synthetic(SyntheticSpec(n_cases=2, shape=(32, 32, 32), seed=3))
    return [(normalize(v.select("t1c,t1,f")), lab) for v, lab in cases]


@pytest.fixture
def rng():
    return np.random.default_rng(1234)
