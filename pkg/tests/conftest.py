import numpy as np
import pytest
from hypothesis import HealthCheck, settings

from uwbcal import geom
from uwbcal.models import NavState

settings.register_profile("default", deadline=None, max_examples=60,
                          suppress_health_check=[HealthCheck.too_slow])
settings.load_profile("default")


def random_quat(rng):
    return geom.normalize(rng.standard_normal(4))


def random_state(rng, t=0.0):
    return NavState(
        t=t,
        p=rng.uniform(-3, 3, 3),
        v=rng.uniform(-1, 1, 3),
        q=random_quat(rng),
        b_a=rng.normal(0, 0.05, 3),
        b_w=rng.normal(0, 0.01, 3),
        p_iu=rng.uniform(-0.3, 0.3, 3),
        t_d=float(rng.uniform(-0.03, 0.03)),
    )


@pytest.fixture
def rng():
    return np.random.default_rng(12345)
