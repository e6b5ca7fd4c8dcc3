import numpy as np
import pytest
from hypothesis import HealthCheck, settings

settings.register_profile("default", deadline=None, max_examples=60,
                          suppress_health_check=[HealthCheck.too_slow])
settings.load_profile("default")


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


@pytest.fixture(scope="session")
def oracle_scene():
    """Reduced-extent scene at the native 0.06 m/px with every span visible."""
    from pgrid.synth import SceneConfig, generate_scene

    return generate_scene(SceneConfig(extent=(150.0, 150.0), resolution=0.06, line_visibility=1.0), seed=2)
