"""Named landmark store: world-coordinate polygons looked up by name or alias.

Registry files are a GeoJSON FeatureCollection subset: Polygon geometry
only, ``properties.name`` plus optional ``properties.aliases``, world
coordinates in the local planar meter frame (origin declared in a
top-level ``crs_note`` property).
"""

from __future__ import annotations

import json
import re
import string
from dataclasses import dataclass, field

import numpy as np
from shapely.geometry import Polygon as ShapelyPolygon

from .errors import DuplicateName, LandmarkNotFound, MalformedRegistry
from .georef import GeoTransform
from .grids import Segment, TopDownView

_PUNCT_TABLE = str.maketrans("", "", string.punctuation)


def normalize_name(name: str) -> str:
    """Case-fold, trim, collapse whitespace, strip punctuation."""
    name = name.translate(_PUNCT_TABLE)
    return re.sub(r"\s+", " ", name.strip()).casefold()


@dataclass(frozen=True)
class Landmark:
    name: str
    footprint: np.ndarray  # (n, 2) world meters, simple polygon, no closing repeat
    aliases: tuple = ()
    tags: dict = field(default_factory=dict)

    def __post_init__(self):
        pts = np.asarray(self.footprint, dtype=np.float64).reshape(-1, 2)
        object.__setattr__(self, "footprint", pts)
        object.__setattr__(self, "aliases", tuple(self.aliases))
        if len(pts) < 3:
            raise MalformedRegistry(f"{self.name!r}: polygon needs >= 3 vertices")
        poly = ShapelyPolygon(pts)
        if not poly.is_valid or poly.area <= 0:
            raise MalformedRegistry(
                f"{self.name!r}: polygon must be simple with positive area")

    @property
    def polygon(self):
        return ShapelyPolygon(self.footprint)


class LandmarkRegistry:
    def __init__(self, landmarks, crs_note=""):
        self.crs_note = crs_note
        self._entries = []
        self._by_norm = {}
        for lm in landmarks:
            self.add(lm)

    def add(self, landmark: Landmark):
        norm = normalize_name(landmark.name)
        if norm in self._by_norm:
            raise DuplicateName(f"{landmark.name!r} normalizes to existing {norm!r}")
        self._entries.append(landmark)
        self._by_norm[norm] = landmark
        for alias in landmark.aliases:
            anorm = normalize_name(alias)
            existing = self._by_norm.get(anorm)
            if existing is not None and existing is not landmark:
                raise DuplicateName(
                    f"alias {alias!r} of {landmark.name!r} collides with {existing.name!r}")
            self._by_norm[anorm] = landmark

    def __len__(self):
        return len(self._entries)

    def __iter__(self):
        return iter(self._entries)

    def lookup(self, name: str) -> Landmark:
        lm = self._by_norm.get(normalize_name(name))
        if lm is None:
            raise LandmarkNotFound(f"no landmark matches {name!r}")
        return lm

    def to_geojson(self):
        return {
            "type": "FeatureCollection",
            "crs_note": self.crs_note,
            "features": [
                {
                    "type": "Feature",
                    "geometry": {
                        "type": "Polygon",
                        "coordinates": [
                            lm.footprint.tolist() + [lm.footprint[0].tolist()]],
                    },
                    "properties": {
                        "name": lm.name,
                        "aliases": list(lm.aliases),
                        **({"tags": lm.tags} if lm.tags else {}),
                    },
                }
                for lm in self._entries
            ],
        }

    def save(self, path):
        with open(path, "w") as f:
            json.dump(self.to_geojson(), f, indent=2)


def lookup_landmark(registry: LandmarkRegistry, name: str) -> Landmark:
    return registry.lookup(name)


def load_registry(path) -> LandmarkRegistry:
    with open(path) as f:
        try:
            doc = json.load(f)
        except json.JSONDecodeError as exc:
            raise MalformedRegistry(f"not valid JSON: {exc}") from exc
    if not isinstance(doc, dict) or doc.get("type") != "FeatureCollection":
        raise MalformedRegistry("expected a GeoJSON FeatureCollection")
    landmarks = []
    for feat in doc.get("features", []):
        geom = feat.get("geometry") or {}
        if geom.get("type") != "Polygon":
            raise MalformedRegistry(
                f"unsupported geometry type {geom.get('type')!r}")
        rings = geom.get("coordinates") or []
        if len(rings) != 1:
            raise MalformedRegistry("only single-ring polygons are supported")
        ring = np.asarray(rings[0], dtype=np.float64)
        if len(ring) >= 2 and np.allclose(ring[0], ring[-1]):
            ring = ring[:-1]  # drop GeoJSON closing repeat
        props = feat.get("properties") or {}
        name = props.get("name")
        if not name:
            raise MalformedRegistry("feature missing properties.name")
        landmarks.append(Landmark(name=name, footprint=ring,
                                  aliases=tuple(props.get("aliases", [])),
                                  tags=props.get("tags", {})))
    return LandmarkRegistry(landmarks, crs_note=doc.get("crs_note", ""))


def points_in_polygon(points, polygon):
    """Even-odd rule point-in-polygon test, vectorized over points.

    points: (m, 2); polygon: (n, 2) without closing repeat.
    """
    pts = np.asarray(points, dtype=np.float64)
    poly = np.asarray(polygon, dtype=np.float64)
    x, y = pts[:, 0], pts[:, 1]
    inside = np.zeros(len(pts), dtype=bool)
    n = len(poly)
    for i in range(n):
        x1, y1 = poly[i]
        x2, y2 = poly[(i + 1) % n]
        crosses = (y1 > y) != (y2 > y)
        with np.errstate(divide="ignore", invalid="ignore"):
            xint = x1 + (y - y1) * (x2 - x1) / (y2 - y1)
        inside ^= crosses & (x < np.where(crosses, xint, np.inf))
    return inside


def rasterize_polygon(footprint, view: TopDownView,
                      transform: GeoTransform) -> Segment:
    """World polygon -> boolean mask of pixel centers inside it (even-odd rule)."""
    scene_poly = transform.to_scene(np.asarray(footprint, dtype=np.float64))
    h, w = view.shape
    xs = view.pixel_centers_x()
    ys = view.pixel_centers_y()

    # restrict the test to the polygon's bounding box in pixel space
    min_xy = scene_poly.min(axis=0)
    max_xy = scene_poly.max(axis=0)
    cols = np.flatnonzero((xs >= min_xy[0] - view.resolution) &
                          (xs <= max_xy[0] + view.resolution))
    rows = np.flatnonzero((ys >= min_xy[1] - view.resolution) &
                          (ys <= max_xy[1] + view.resolution))
    mask = np.zeros((h, w), dtype=bool)
    if cols.size and rows.size:
        gx, gy = np.meshgrid(xs[cols], ys[rows])
        pts = np.stack([gx.ravel(), gy.ravel()], axis=1)
        hit = points_in_polygon(pts, scene_poly).reshape(len(rows), len(cols))
        mask[np.ix_(rows, cols)] = hit

    flags = set()
    if not mask.any():
        flags.add("outside_view")
    conf = np.where(mask, 1.0, np.nan)
    return Segment(view, mask, confidence=conf, provenance="rasterize_polygon",
                   flags=frozenset(flags))
