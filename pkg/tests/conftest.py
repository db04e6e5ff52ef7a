import numpy as np
import pytest

import relief
from relief.unet import UNetConfig


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


@pytest.fixture
def small_config():
    """A 2-level net on 64px tiles: big enough to exercise every code path,
    small enough to train in tests."""
    return UNetConfig(levels=2, base_channels=4, dropout_rates=(0.0, 0.0),
                      tile_size=64, crop_border=8)


@pytest.fixture
def small_dem():
    return relief.synth_terrain(seed=11, rows=96, cols=80, cell_size=25.0)
