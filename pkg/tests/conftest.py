import numpy as np
import pytest

from cmsphere import triangulation as tr


@pytest.fixture(scope="session")
def ico3():
    return tr.build_icosahedral(3)


@pytest.fixture(scope="session")
def ps3(ico3):
    return tr.PowellSabinSplit(ico3)


@pytest.fixture(scope="session")
def random_points():
    rng = np.random.default_rng(42)
    pts = rng.normal(size=(5000, 3))
    return pts / np.linalg.norm(pts, axis=1, keepdims=True)


def unit(v):
    v = np.asarray(v, dtype=float)
    return v / np.linalg.norm(v, axis=-1, keepdims=True)


def sphere_cloud(n, seed=0):
    rng = np.random.default_rng(seed)
    return unit(rng.normal(size=(n, 3)))
