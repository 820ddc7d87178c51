import numpy as np
import pytest

from linksched import (
    ChannelConfig,
    LayoutConfig,
    compute_channel,
    generate_layout,
)


@pytest.fixture(scope="session")
def channel_cfg():
    return ChannelConfig()


def make_channel(num_pairs: int, seed: int, shadowing: float = 0.0, d_min=2.0, d_max=65.0):
    layout = generate_layout(
        LayoutConfig(num_pairs=num_pairs, d_min=d_min, d_max=d_max, seed=seed)
    )
    ch = ChannelConfig(shadowing_std_db=shadowing)
    return layout, compute_channel(layout, ch)


def scalar_sum_rate(gain, noise, power, rho, bandwidth, weights=None):
    """Independent per-link rate evaluation, loops and scalars only."""
    L = len(rho)
    if weights is None:
        weights = [1.0] * L
    per_link = []
    for l in range(L):
        if rho[l] == 0:
            per_link.append(0.0)
            continue
        interference = 0.0
        for k in range(L):
            if k != l:
                interference += rho[k] * power * gain[k][l]
        sinr = power * gain[l][l] / (noise + interference)
        per_link.append(weights[l] * bandwidth * np.log2(1.0 + sinr))
    return sum(per_link), per_link
