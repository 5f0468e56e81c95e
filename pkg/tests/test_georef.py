import json

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from geoprog.errors import DegenerateConfiguration, Underdetermined
from geoprog.georef import (AFFINE, SIMILARITY, ControlPointSet, GeoTransform,
                            apply_transform, estimate_transform)


def similarity_matrix(scale, theta_deg, tx, ty):
    th = np.deg2rad(theta_deg)
    rot = np.array([[np.cos(th), -np.sin(th)], [np.sin(th), np.cos(th)]])
    return np.hstack([scale * rot, np.array([[tx], [ty]])])


def make_points(matrix, n=25, seed=0):
    rng = np.random.default_rng(seed)
    src = rng.uniform(-100, 100, size=(n, 2))
    dst = src @ matrix[:, :2].T + matrix[:, 2]
    return ControlPointSet(src, dst)


def test_recover_known_similarity():
    m = similarity_matrix(2.5, 30.0, 12.0, -7.0)
    t = estimate_transform(make_points(m))
    assert np.allclose(t.matrix, m, atol=1e-9)
    assert t.residual_rmse < 1e-9
    assert t.scale == pytest.approx(2.5, abs=1e-9)


def test_recover_known_affine():
    m = np.array([[1.2, 0.3, 4.0], [-0.1, 0.9, -2.0]])
    t = estimate_transform(make_points(m), kind=AFFINE)
    assert np.allclose(t.matrix, m, atol=1e-9)
    assert t.residual_rmse < 1e-9


@given(st.floats(0.1, 50.0), st.floats(-180, 180),
       st.floats(-1e3, 1e3), st.floats(-1e3, 1e3))
@settings(max_examples=50, deadline=None)
def test_similarity_recovery_property(scale, theta, tx, ty):
    m = similarity_matrix(scale, theta, tx, ty)
    t = estimate_transform(make_points(m, n=10, seed=1))
    assert np.allclose(t.matrix, m, atol=1e-6 * max(1.0, scale))


def test_roundtrip_inverse():
    m = similarity_matrix(3.0, -45.0, 5.0, 9.0)
    t = estimate_transform(make_points(m))
    pts = np.random.default_rng(2).uniform(-50, 50, size=(40, 2))
    assert np.allclose(t.to_scene(t.to_world(pts)), pts, atol=1e-9)
    assert np.allclose(apply_transform(t, apply_transform(t, pts), "to_scene"),
                       pts, atol=1e-9)


def test_min_points():
    cps = ControlPointSet([[0, 0]], [[1, 1]])
    with pytest.raises(Underdetermined):
        estimate_transform(cps)
    cps2 = ControlPointSet([[0, 0], [1, 0]], [[0, 0], [2, 0]])
    t = estimate_transform(cps2)
    assert t.scale == pytest.approx(2.0)
    with pytest.raises(Underdetermined):
        estimate_transform(cps2, kind=AFFINE)


def test_duplicate_points_rejected():
    cps = ControlPointSet([[1, 1], [1, 1], [1, 1]], [[0, 0], [0, 0], [0, 0]])
    with pytest.raises(DegenerateConfiguration):
        estimate_transform(cps)


def test_collinear_rejected_for_affine():
    src = [[0, 0], [1, 0], [2, 0], [3, 0]]
    dst = [[0, 0], [2, 0], [4, 0], [6, 0]]
    with pytest.raises(DegenerateConfiguration):
        estimate_transform(ControlPointSet(src, dst), kind=AFFINE)
    # similarity is still well posed on a line
    t = estimate_transform(ControlPointSet(src, dst), kind=SIMILARITY)
    assert t.scale == pytest.approx(2.0)


def test_noise_robustness():
    m = similarity_matrix(1.5, 20.0, 3.0, -4.0)
    sigma = 0.5
    rmses = []
    for seed in range(100):
        rng = np.random.default_rng(seed)
        src = rng.uniform(-100, 100, size=(25, 2))
        dst = src @ m[:, :2].T + m[:, 2] + rng.normal(0, sigma, size=(25, 2))
        t = estimate_transform(ControlPointSet(src, dst))
        rmses.append(t.residual_rmse)
    mean = float(np.mean(rmses))
    assert 0.5 * sigma < mean < 2.0 * sigma


def test_metric_scaling_doubles():
    base = estimate_transform(make_points(similarity_matrix(1.0, 10.0, 0, 0)))
    doubled = estimate_transform(make_points(similarity_matrix(2.0, 10.0, 0, 0)))
    assert doubled.scale == pytest.approx(2.0 * base.scale)


def test_json_roundtrip():
    m = similarity_matrix(2.0, 15.0, 1.0, 2.0)
    t = estimate_transform(make_points(m))
    t2 = GeoTransform.from_json_dict(t.to_json_dict())
    assert np.allclose(t2.matrix, t.matrix)
    assert np.allclose(t2.inverse, t.inverse, atol=1e-12)
    assert t2.kind == t.kind


def test_control_points_file(tmp_path):
    pairs = [{"scene": [0, 0], "world": [10, 10]},
             {"scene": [1, 0], "world": [12, 10]},
             {"scene": [0, 1], "world": [10, 12]}]
    p = tmp_path / "cps.json"
    p.write_text(json.dumps(pairs))
    cps = ControlPointSet.from_file(p)
    assert len(cps) == 3
    t = estimate_transform(cps)
    assert t.scale == pytest.approx(2.0)
    assert np.allclose(t.to_world([0, 0]), [10, 10])


def test_identity():
    t = GeoTransform.identity()
    pts = np.array([[1.5, -2.5]])
    assert np.allclose(t.to_world(pts), pts)
    assert t.scale == 1.0


def test_mismatched_lengths():
    with pytest.raises(ValueError):
        ControlPointSet([[0, 0]], [[0, 0], [1, 1]])
