import sys
from pathlib import Path

import numpy as np
import pytest

sys.path.insert(0, str(Path(__file__).parent))  # for oracles.py

from fluidport.channel import (
    BsArray,
    CarrierConfig,
    FluidGrid,
    MultipathChannel,
    PathParams,
)


def random_channel(rng, n_y=2, n_z=2, grid_n=6, grid_m=5, n_paths=3, f_c=39e9):
    """Random but reproducible multipath channel for oracle comparisons."""
    carrier = CarrierConfig(f_c)
    lam = carrier.wavelength
    bs = BsArray(n_y=n_y, n_z=n_z, d_ty=lam / 2, d_tz=lam / 2)
    grid = FluidGrid.from_aperture(
        w_y=grid_m / 10.0, w_z=grid_n / 5.0, m=grid_m, n=grid_n, carrier=carrier
    )
    paths = []
    for _ in range(n_paths):
        paths.append(
            PathParams(
                theta_tx=rng.uniform(0, np.pi),
                phi_tx=rng.uniform(-np.pi, np.pi),
                theta_rx=rng.uniform(0, np.pi),
                phi_rx=rng.uniform(-np.pi, np.pi),
                tau=rng.uniform(0, 1e-6),
                alpha=rng.uniform(0.1, 1.0),
                beta=np.exp(1j * rng.uniform(0, 2 * np.pi)),
                w=rng.uniform(-500.0, 500.0),
            )
        )
    return MultipathChannel(carrier, bs, grid, tuple(paths))


@pytest.fixture
def rng():
    return np.random.default_rng(20260817)
