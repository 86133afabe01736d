import numpy as np
import pytest
from hypothesis import settings

from parametrix.lti import FIR, StateSpacePlant
from parametrix.plants import h2_weighted_plant

settings.register_profile("default", max_examples=40, deadline=None)
settings.load_profile("default")


def scalar_plant(a=0.5, b2=1.0, c2=1.0, **kw):
    """Scalar plant; by default w enters the state, z = x and y = x."""
    kw.setdefault("B1", 1.0)
    kw.setdefault("C1", 1.0)
    return StateSpacePlant(A=a, B2=b2, C2=c2, **kw)


def scalar_h2_plant(a=0.5):
    return h2_weighted_plant([[a]], [[1.0]], [[1.0]])


def fir_close(a: FIR, b: FIR) -> float:
    T = max(a.horizon, b.horizon)
    return float(np.max(np.abs(a.pad(T).coeffs - b.pad(T).coeffs)))


@pytest.fixture
def rng():
    return np.random.default_rng(12345)
