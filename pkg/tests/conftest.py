import numpy as np
import pytest

from geoprog.scene import SceneHeader, SceneTree
from geoprog.suite import build_city_bundle, build_query_suite


@pytest.fixture(scope="session")
def bundle():
    return build_city_bundle(seed=7)


@pytest.fixture(scope="session")
def suite(bundle):
    return build_query_suite(bundle)


def make_tiny_tree(n_leaves=4, latent_dim=2, leaf_scale=(1.0, 1.0, 0.1)):
    """One root, one mid, n leaves in a row along x."""
    n = 2 + n_leaves
    positions = np.zeros((n, 3))
    scales = np.tile(np.array(leaf_scale), (n, 1))
    parent = np.full(n, -1, dtype=np.int64)
    level = np.zeros(n, dtype=np.uint16)
    for i in range(n_leaves):
        positions[2 + i] = (2.0 * i + 1.0, 1.0, 0.0)
        parent[2 + i] = 1
        level[2 + i] = 2
    positions[1] = positions[2:].mean(axis=0)
    scales[1] = (n_leaves, 1.5, 0.2)
    parent[1] = 0
    level[1] = 1
    positions[0] = positions[1]
    scales[0] = (n_leaves + 1, 2.0, 0.3)
    header = SceneHeader(latent_dim=latent_dim,
                         bounds=np.array([[-50.0, -50.0, -50.0],
                                          [50.0, 50.0, 50.0]]),
                         node_count=n)
    return SceneTree(
        positions=positions,
        rotations=np.tile(np.array([1.0, 0.0, 0.0, 0.0]), (n, 1)),
        scales=scales,
        opacity=np.ones(n),
        color=np.full((n, 3), 0.5),
        latents=np.zeros((n, latent_dim)),
        parent=parent,
        level=level,
        header=header)


@pytest.fixture
def tiny_tree():
    return make_tiny_tree()
