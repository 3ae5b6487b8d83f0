import hypothesis
import numpy as np
import pytest

from td2ip.model import ModelConfig, init_params

np.seterr(all="warn")

hypothesis.settings.register_profile("default", max_examples=40, deadline=None, derandomize=True)
hypothesis.settings.register_profile("fast", max_examples=5, deadline=None)
hypothesis.settings.load_profile("default")


def labeled_frames(n: int, joints: int = 1) -> np.ndarray:
    """Frame t has every coordinate equal to t, so reorderings are easy to read."""
    return np.repeat(np.arange(n, dtype=np.float64)[:, None, None], joints, axis=1).repeat(3, axis=2)


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


@pytest.fixture
def toy_cfg():
    return ModelConfig(joints=3, t_p=4, t_f=3, d_e=4, d_h=5, feature=6)


@pytest.fixture
def toy_model(toy_cfg):
    return init_params(toy_cfg, seed=0)
