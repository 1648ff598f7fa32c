import os
import sys

import numpy as np
import pytest

sys.path.insert(0, os.path.abspath(os.path.join(os.path.dirname(__file__), '..')))

from config.settings import RunConfig  # noqa: E402
from models.mixture import DiagGaussian, GaussianMixture  # noqa: E402
from models.scene import make_scene  # noqa: E402
from services.scene_service import split_dataset  # noqa: E402
from services.simulator_service import generate_dataset  # noqa: E402


@pytest.fixture
def tiny_config():
    """足够小、几秒内能跑完训练的配置"""
    return RunConfig(
        d_z=4, m_q=2, m_p=2, vgae_hidden=8, enc_hidden=8, dec_hidden=8,
        conv_channels=4, teacher_epochs=2, student_epochs=2, batch_size=4,
        k_inner=2, em_max_iters=20, cpm_max_iters=30, mc_samples=2000,
        scenes_per_kind=2, agents_min=2, agents_max=3, seed=7,
    )


@pytest.fixture
def tiny_dataset(tiny_config):
    return split_dataset(generate_dataset(tiny_config), tiny_config.split_ratio, tiny_config.seed)


@pytest.fixture
def line_scene():
    """按给定的初始位置与恒定速度构造匀速场景"""

    def _make(starts, velocities, t_p=40, t_h=15, dt=0.2, kind='external', scene_id='s'):
        starts = np.asarray(starts, dtype=np.float64)
        velocities = np.asarray(velocities, dtype=np.float64)
        times = np.arange(t_p) * dt
        positions = starts[:, None, :] + times[None, :, None] * velocities[:, None, :]
        return make_scene(scene_id, kind, dt, t_h, positions)

    return _make


def mixture(weights, means, vars_):
    return GaussianMixture(
        weights=np.asarray(weights, dtype=np.float64),
        components=tuple(DiagGaussian(mean=np.asarray(m, dtype=np.float64), var=np.asarray(v, dtype=np.float64))
                         for m, v in zip(means, vars_)),
    )


@pytest.fixture
def make_mixture():
    return mixture
