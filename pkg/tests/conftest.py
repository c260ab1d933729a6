import numpy as np
import pytest

from offmanifold import SeededRng, init_network, random_subspace
from offmanifold.experiments import random_labeled_points


@pytest.fixture
def small_setup():
    """d=12, l=4 random subspace, a Kaiming net of width 10 and 8 labelled points on P."""
    rng = SeededRng(7)
    sub = random_subspace(12, 4, rng.child("sub"))
    net = init_network(12, 10, None, rng.child("net"))
    data = random_labeled_points(sub, 8, 3.0, rng.child("data"))
    return sub, net, data


@pytest.fixture
def rng():
    return SeededRng(1234)


def assert_close(a, b, rtol=0.0, atol=0.0):
    np.testing.assert_allclose(a, b, rtol=rtol, atol=atol)
