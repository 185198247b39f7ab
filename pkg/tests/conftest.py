import numpy as np
import pytest

from idid_smm.datasets import PanelData, RcsData


@pytest.fixture
def wald_example_panel():
    """Four rows whose additive trend ratio is (2 - 1) / (1 - 0.5) = 2."""
    return PanelData.from_arrays(
        z=[1, 1, 0, 0],
        d0=[0, 0, 0, 0],
        y0=[0, 0, 0, 0],
        d1=[1, 1, 1, 0],
        y1=[2, 2, 1, 1],
    )


def random_panel(rng, n=400, y_scale=1.0):
    """Generic positive-outcome panel with a real instrument-exposure link."""
    z = rng.binomial(1, 0.5, n).astype(float)
    d0 = rng.binomial(1, 0.3 + 0.2 * z).astype(float)
    d1 = rng.binomial(1, 0.4 + 0.4 * z).astype(float)
    y0 = y_scale * rng.exponential(1.0, n) + 0.1
    y1 = y_scale * rng.exponential(1.2, n) + 0.1
    return PanelData.from_arrays(z=z, d0=d0, y0=y0, d1=d1, y1=y1)


def random_rcs(rng, n=2000, beta=0.5):
    """Pooled two-period data satisfying the multiplicative model at beta."""
    z = rng.binomial(1, 0.5, n).astype(float)
    t = rng.binomial(1, 0.5, n).astype(float)
    # the instrument moves the exposure trend: its effect grows over time
    d = rng.binomial(1, 0.2 + 0.1 * z + (0.2 + 0.4 * z) * t).astype(float)
    y = rng.exponential(1.0, n) * np.exp(beta * d + 0.3 * t)
    return RcsData.from_arrays(z=z, t=t, d=d, y=y)
