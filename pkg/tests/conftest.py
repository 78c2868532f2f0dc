import pytest
from hypothesis import HealthCheck, settings

from helpers import two_triangle_square

settings.register_profile("default", deadline=None, max_examples=30,
                          suppress_health_check=[HealthCheck.too_slow])
settings.load_profile("default")


@pytest.fixture
def square2():
    return two_triangle_square()
