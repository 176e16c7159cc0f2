import pytest

from vitarc.model import ModelConfig
from vitarc.posenc import MixerVariant, RpeVariant, Scheme
from vitarc.tasks import TaskSpec, generate_splits
from vitarc.tokenizer import LayoutConfig


def toy_config(**overrides) -> ModelConfig:
    """Every feature on at the smallest useful size."""
    base = dict(
        n_layers=1, n_heads=2, d_model=16, layout=LayoutConfig(4, 4), scheme=Scheme.OPE_APE_2D,
        mixer=MixerVariant.WEIGHTED_SUM_NO_NORM_VEC, rpe=RpeVariant.TWO_DIR,
    )
    base.update(overrides)
    return ModelConfig(**base)


@pytest.fixture
def toy_cfg():
    return toy_config()


@pytest.fixture
def toy_samples():
    return generate_splits(TaskSpec("recolor_largest_object", max_size=4, seed=11), 6).samples
