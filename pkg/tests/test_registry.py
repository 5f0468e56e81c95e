import json

import numpy as np
import pytest
from shapely.geometry import Point, Polygon

from geoprog.errors import (DuplicateName, LandmarkNotFound, MalformedRegistry)
from geoprog.georef import GeoTransform
from geoprog.grids import TopDownView
from geoprog.registry import (Landmark, LandmarkRegistry, load_registry,
                              lookup_landmark, normalize_name,
                              points_in_polygon, rasterize_polygon)

SQUARE = np.array([[0.0, 0.0], [10.0, 0.0], [10.0, 10.0], [0.0, 10.0]])


def test_normalize_name():
    assert normalize_name("  The   View ") == "the view"
    assert normalize_name("St. Mark's") == "st marks"
    assert normalize_name("BLDG-7") == "bldg7"


def test_landmark_validation():
    with pytest.raises(MalformedRegistry):
        Landmark(name="line", footprint=[[0, 0], [1, 1]])
    with pytest.raises(MalformedRegistry):
        Landmark(name="bowtie",
                 footprint=[[0, 0], [1, 1], [1, 0], [0, 1]])


def test_lookup_by_name_and_alias():
    reg = LandmarkRegistry([Landmark(name="Building A", aliases=("Bldg A",),
                                     footprint=SQUARE)])
    assert reg.lookup("building a").name == "Building A"
    assert reg.lookup("BLDG A").name == "Building A"
    assert lookup_landmark(reg, "Building A").name == "Building A"
    with pytest.raises(LandmarkNotFound):
        reg.lookup("Building Z")


def test_duplicate_names_rejected():
    a = Landmark(name="Tower", footprint=SQUARE)
    b = Landmark(name="  TOWER ", footprint=SQUARE + 20)
    with pytest.raises(DuplicateName):
        LandmarkRegistry([a, b])
    c = Landmark(name="Other", aliases=("tower",), footprint=SQUARE + 40)
    with pytest.raises(DuplicateName):
        LandmarkRegistry([a, c])


def test_geojson_roundtrip(tmp_path):
    reg = LandmarkRegistry(
        [Landmark(name="Building A", aliases=("Bldg A",), footprint=SQUARE,
                  tags={"height_m": 12.5})],
        crs_note="local planar meters")
    p = tmp_path / "reg.geojson"
    reg.save(p)
    back = load_registry(p)
    assert len(back) == 1
    lm = back.lookup("bldg a")
    assert lm.name == "Building A"
    assert np.allclose(lm.footprint, SQUARE)  # closing repeat dropped
    assert lm.tags == {"height_m": 12.5}
    assert back.crs_note == "local planar meters"


def test_load_registry_errors(tmp_path):
    p = tmp_path / "bad.geojson"
    p.write_text("not json")
    with pytest.raises(MalformedRegistry):
        load_registry(p)
    p.write_text(json.dumps({"type": "FeatureCollection", "features": [
        {"type": "Feature",
         "geometry": {"type": "Point", "coordinates": [0, 0]},
         "properties": {"name": "x"}}]}))
    with pytest.raises(MalformedRegistry):
        load_registry(p)
    p.write_text(json.dumps({"type": "FeatureCollection", "features": [
        {"type": "Feature",
         "geometry": {"type": "Polygon", "coordinates": [SQUARE.tolist()]},
         "properties": {}}]}))
    with pytest.raises(MalformedRegistry):
        load_registry(p)


def test_points_in_polygon_vs_shapely():
    rng = np.random.default_rng(5)
    for trial in range(10):
        n = rng.integers(3, 9)
        angles = np.sort(rng.uniform(0, 2 * np.pi, n))
        radii = rng.uniform(2, 10, n)
        poly = np.stack([radii * np.cos(angles), radii * np.sin(angles)], axis=1)
        sp = Polygon(poly)
        if not sp.is_valid:
            continue
        pts = rng.uniform(-12, 12, size=(200, 2))
        mine = points_in_polygon(pts, poly)
        # skip points too close to the boundary, where tie-breaking differs
        d = np.array([sp.exterior.distance(Point(*p)) for p in pts])
        far = d > 1e-6
        ref = np.array([sp.contains(Point(*p)) for p in pts])
        assert np.array_equal(mine[far], ref[far])


def test_rasterize_square_pixel_count():
    view = TopDownView(origin_xy=(0.0, 0.0), width_px=20, height_px=20,
                       resolution=1.0)
    seg = rasterize_polygon(SQUARE, view, GeoTransform.identity())
    # pixel centers 0.5..9.5 in both axes: exactly 10x10 inside
    assert seg.pixel_count == 100
    assert seg.bbox() == (10, 0, 19, 9)
    assert np.all(seg.confidence[seg.mask] == 1.0)


def test_rasterize_scaled_transform():
    # world polygon twice the scene size; scene mask must shrink accordingly
    view = TopDownView(origin_xy=(0.0, 0.0), width_px=20, height_px=20,
                       resolution=1.0)
    m = np.array([[2.0, 0.0, 0.0], [0.0, 2.0, 0.0]])
    t = GeoTransform(kind="similarity", matrix=m,
                     inverse=np.array([[0.5, 0, 0], [0, 0.5, 0.0]]),
                     residual_rmse=0.0)
    seg = rasterize_polygon(SQUARE, view, t)  # scene footprint is 5x5
    assert seg.pixel_count == 25


def test_rasterize_outside_view_flag():
    view = TopDownView(origin_xy=(1000.0, 1000.0), width_px=8, height_px=8,
                       resolution=1.0)
    seg = rasterize_polygon(SQUARE, view, GeoTransform.identity())
    assert seg.is_empty
    assert "outside_view" in seg.flags
