import numpy as np
import pytest

from mudet.airlink import build_constellation


@pytest.fixture(scope="session")
def qpsk():
    return build_constellation("qpsk")


@pytest.fixture(scope="session")
def qam16():
    return build_constellation("qam16")


def crandn(rng, *shape):
    return (rng.standard_normal(shape) + 1j * rng.standard_normal(shape)) / np.sqrt(2.0)
