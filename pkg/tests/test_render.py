import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from geoprog.errors import PixelBudgetExceeded
from geoprog.grids import TopDownView
from geoprog.render import (projected_diameter_px, quat_to_matrix,
                            render_topdown, select_lod_cut)
from geoprog.scene import SceneHeader, SceneTree

from conftest import make_tiny_tree


def centered_view(n, res):
    half = n * res / 2.0
    return TopDownView(origin_xy=(-half, -half), width_px=n, height_px=n,
                       resolution=res)


def single_gaussian_tree(z=0.0, opacity=0.8, scale=(2.0, 2.0, 1.0),
                         color=(1.0, 0.0, 0.0), extra=None):
    """Root plus one leaf (plus optional second leaf dict)."""
    nodes = [dict(pos=(0.0, 0.0, z), opacity=opacity, scale=scale, color=color)]
    if extra:
        nodes.append(extra)
    n = 1 + len(nodes)
    positions = np.zeros((n, 3))
    scales = np.ones((n, 3))
    opac = np.ones(n)
    colors = np.zeros((n, 3))
    parent = np.full(n, -1, dtype=np.int64)
    level = np.zeros(n, dtype=np.uint16)
    positions[0] = (0, 0, 0)
    scales[0] = (10, 10, 5)
    for i, nd in enumerate(nodes, start=1):
        positions[i] = nd["pos"]
        scales[i] = nd["scale"]
        opac[i] = nd["opacity"]
        colors[i] = nd["color"]
        parent[i] = 0
        level[i] = 1
    header = SceneHeader(latent_dim=1,
                         bounds=np.array([[-50.0, -50, -50], [50.0, 50, 50]]),
                         node_count=n)
    return SceneTree(positions=positions,
                     rotations=np.tile([1.0, 0, 0, 0], (n, 1)),
                     scales=scales, opacity=opac, color=colors,
                     latents=np.ones((n, 1)), parent=parent, level=level,
                     header=header)


# -- LOD cut ------------------------------------------------------------------

def brute_force_cut(tree, view):
    """Recursive restatement of the cut rule, node by node."""
    diam = projected_diameter_px(tree, view)

    def rec(i):
        kids = tree.children[i]
        if not kids or diam[i] <= 1.0:
            return [i]
        out = []
        for k in kids:
            out.extend(rec(k))
        return out

    cut = []
    for r in tree.roots:
        cut.extend(rec(int(r)))
    return sorted(cut)


def is_antichain_covering(tree, cut):
    cut_set = set(int(i) for i in cut)
    for leaf in tree.leaves:
        hits = 0
        cur = int(leaf)
        while cur >= 0:
            if cur in cut_set:
                hits += 1
            cur = int(tree.parent[cur])
        if hits != 1:
            return False
    return True


@pytest.mark.parametrize("res", [0.1, 0.5, 1.0, 3.0, 10.0, 100.0])
def test_cut_matches_brute_force(tiny_tree, res):
    view = centered_view(16, res)
    cut = select_lod_cut(tiny_tree, view)
    assert sorted(cut.tolist()) == brute_force_cut(tiny_tree, view)
    assert is_antichain_covering(tiny_tree, cut)


@pytest.mark.parametrize("res", [0.5, 2.0, 10.0, 40.0])
def test_city_cut_is_covering_antichain(bundle, res):
    view = centered_view(32, res)
    cut = select_lod_cut(bundle.tree, view)
    assert is_antichain_covering(bundle.tree, cut)
    diam = projected_diameter_px(bundle.tree, view)
    is_leaf = bundle.tree.is_leaf
    for i in cut:
        parent = int(bundle.tree.parent[i])
        assert is_leaf[i] or diam[i] <= 1.0
        if parent >= 0:
            assert diam[parent] > 1.0  # coarsest admissible


@given(st.floats(0.05, 200.0))
@settings(max_examples=30, deadline=None)
def test_cut_antichain_any_resolution(res):
    tree = make_tiny_tree(n_leaves=6)
    view = centered_view(8, res)
    cut = select_lod_cut(tree, view)
    assert is_antichain_covering(tree, cut)


# -- quaternions --------------------------------------------------------------

def test_quat_identity():
    assert np.allclose(quat_to_matrix([1.0, 0, 0, 0]), np.eye(3))


def test_quat_90deg_about_z():
    q = [np.cos(np.pi / 4), 0.0, 0.0, np.sin(np.pi / 4)]
    expected = np.array([[0.0, -1, 0], [1, 0, 0], [0, 0, 1.0]])
    assert np.allclose(quat_to_matrix(q), expected, atol=1e-12)


@given(st.lists(st.floats(-1, 1), min_size=4, max_size=4))
@settings(max_examples=50)
def test_quat_matrix_is_rotation(q):
    q = np.asarray(q)
    norm = np.linalg.norm(q)
    if norm < 1e-3:
        return
    m = quat_to_matrix(q / norm)
    assert np.allclose(m @ m.T, np.eye(3), atol=1e-9)
    assert np.linalg.det(m) == pytest.approx(1.0, abs=1e-9)


# -- compositing --------------------------------------------------------------

def test_single_gaussian_alpha_and_color():
    tree = single_gaussian_tree()
    view = centered_view(9, 1.0)  # pixel centers at integer coordinates
    prod = render_topdown(tree, view)
    c = 4  # center pixel
    # w = opacity * exp(-0.5 * (x^2 + y^2) / 4), independent per axis
    assert prod.alpha[c, c] == pytest.approx(0.8, abs=1e-6)
    assert prod.alpha[c, c + 2] == pytest.approx(0.8 * np.exp(-0.5), abs=1e-6)
    assert prod.alpha[c + 1, c + 2] == pytest.approx(
        0.8 * np.exp(-0.5 * 5 / 4), abs=1e-6)
    # color is weight * red
    assert prod.rgb[c, c, 0] == pytest.approx(0.8, abs=1e-6)
    assert prod.rgb[c, c, 1] == 0.0


def test_truncation_beyond_three_sigma():
    tree = single_gaussian_tree()
    view = centered_view(17, 1.0)
    prod = render_topdown(tree, view)
    c = 8
    # 3 sigma = 6 units; at x = 7 the footprint is truncated to zero
    assert prod.alpha[c, c + 7] == 0.0
    assert prod.alpha[c, c + 5] > 0.0


def test_two_gaussian_front_to_back_blend():
    front = dict(pos=(0.0, 0.0, 5.0), opacity=0.6, scale=(2.0, 2.0, 1.0),
                 color=(1.0, 0.0, 0.0))
    tree = single_gaussian_tree(z=0.0, opacity=0.8, color=(0.0, 0.0, 1.0),
                                extra=front)
    view = centered_view(9, 1.0)
    prod = render_topdown(tree, view)
    c = 4
    w1 = 0.6               # front (higher z) at its center
    w2 = 0.8 * (1 - 0.6)   # back attenuated by front
    assert prod.rgb[c, c, 0] == pytest.approx(w1, abs=1e-6)
    assert prod.rgb[c, c, 2] == pytest.approx(w2, abs=1e-6)
    assert prod.alpha[c, c] == pytest.approx(w1 + w2, abs=1e-6)
    # the front node carries more than half the alpha -> height = its z
    assert prod.height[c, c] == pytest.approx(5.0)


def test_height_picks_dominant_back_node():
    front = dict(pos=(0.0, 0.0, 5.0), opacity=0.2, scale=(2.0, 2.0, 1.0),
                 color=(1.0, 0.0, 0.0))
    tree = single_gaussian_tree(z=1.0, opacity=1.0, color=(0.0, 0.0, 1.0),
                                extra=front)
    view = centered_view(9, 1.0)
    prod = render_topdown(tree, view)
    c = 4
    # front weight 0.2, back weight 0.8: back exceeds half of 1.0 total
    assert prod.height[c, c] == pytest.approx(1.0)


def test_alpha_range_and_feature_masked(bundle):
    view = centered_view(64, 4.0)
    prod = render_topdown(bundle.tree, view)
    assert prod.alpha.min() >= 0.0
    assert prod.alpha.max() <= 1.0
    assert np.all(prod.feature[prod.alpha == 0] == 0.0)
    assert prod.rgb.min() >= 0.0 and prod.rgb.max() <= 1.0


def test_pixel_budget():
    tree = single_gaussian_tree()
    view = centered_view(5000, 0.01)
    with pytest.raises(PixelBudgetExceeded):
        render_topdown(tree, view, pixel_budget=4096 * 4096)


def test_render_deterministic(bundle):
    view = centered_view(50, 5.0)
    a = render_topdown(bundle.tree, view)
    b = render_topdown(bundle.tree, view)
    assert np.array_equal(a.rgb, b.rgb)
    assert np.array_equal(a.alpha, b.alpha)
    assert np.array_equal(a.height, b.height)
    assert np.array_equal(a.cut, b.cut)
