import numpy as np
import pytest

from services.channel import generate_realization
from services.schema import ChannelRealization, NoiseModel, SystemGeometry


def make_channel(num_subcarriers: int, num_users: int, seed: int) -> ChannelRealization:
    return generate_realization(SystemGeometry(num_users=num_users), NoiseModel(), num_subcarriers, seed)


def hand_channel(gamma_sr, gamma_sd1, gamma_sd2, gamma_rd, seed: int = 0) -> ChannelRealization:
    gamma_sd1 = np.atleast_2d(np.asarray(gamma_sd1, dtype=float))
    return ChannelRealization(
        N=gamma_sd1.shape[1], K=gamma_sd1.shape[0], seed=seed,
        gamma_SR=gamma_sr, gamma_SD1=gamma_sd1,
        gamma_SD2=np.atleast_2d(gamma_sd2), gamma_RD=np.atleast_2d(gamma_rd),
    )


@pytest.fixture
def channel_4x4() -> ChannelRealization:
    return make_channel(4, 4, seed=7)
