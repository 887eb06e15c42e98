import numpy as np
import pytest

from levybigjump import LevyModel, RngStream, TailSpec, canonical_model


@pytest.fixture(scope="session")
def m0() -> LevyModel:
    """Canonical model: Pareto(2, 1) jumps at unit rate, drift -3, sigma 0."""
    return canonical_model()


@pytest.fixture(scope="session")
def drift_only() -> LevyModel:
    return LevyModel(-3.0, 0.0, TailSpec(2.0, 1.0, 0.0))


@pytest.fixture()
def rng() -> RngStream:
    return RngStream(20240817)


def assert_within(value, target, tol, label=""):
    assert abs(value - target) <= tol, \
        f"{label}: |{value} - {target}| = {abs(value - target)} > {tol}"
