"""Deterministic synthetic city scenes with full ground truth.

Generates a three-level Gaussian tree (root, cluster, leaf) for a square
city block: a flat ground sheet, box buildings with flat roofs, green
sports fields, and red cars. Every object's class label, footprint
polygon, and height are emitted as ground truth, along with a landmark
registry and a query/answer benchmark suite, so end-to-end runs can be
scored without any real data.
"""

from __future__ import annotations

import string
from dataclasses import dataclass, field

import numpy as np
from shapely.geometry import Point, Polygon as ShapelyPolygon

from .errors import SpecInfeasible
from .georef import GeoTransform
from .grids import TopDownView
from .registry import Landmark, LandmarkRegistry, rasterize_polygon
from .scene import SceneHeader, SceneTree

CLASS_COLORS = {
    "ground": (0.55, 0.55, 0.55),
    "building": (0.72, 0.62, 0.50),
    "car": (0.85, 0.08, 0.08),
    "sports field": (0.10, 0.65, 0.15),
}

CAR_SCALE = (1.1, 0.7, 0.45)
CAR_Z = 0.6
FIELD_Z = 0.15
SHEET_THICKNESS = 0.05
LEAF_SCALE_FACTOR = 0.7  # leaf xy scale as a fraction of its grid cell


@dataclass(frozen=True)
class SynthSpec:
    extent: float = 250.0        # square side, scene units (= meters at scale 1)
    building_count: int = 12
    car_count: int = 8
    field_count: int = 2
    ground_cell: float = 2.5
    object_cell: float = 2.0     # roof / field leaf spacing
    latent_dim: int = 8
    border_margin: float = 12.0
    min_gap: float = 10.0        # clearance between placed rectangles
    car_spacing: float = 6.0
    car_clearance: float = 4.0   # car distance from any rectangle
    max_place_tries: int = 500


@dataclass(frozen=True)
class BuildingInfo:
    name: str
    aliases: tuple
    footprint: np.ndarray  # (4, 2) scene-coordinate rectangle corners, ccw
    height: float

    @property
    def centroid(self):
        return self.footprint.mean(axis=0)

    @property
    def polygon(self):
        return ShapelyPolygon(self.footprint)


@dataclass(frozen=True)
class FieldInfo:
    footprint: np.ndarray

    @property
    def centroid(self):
        return self.footprint.mean(axis=0)

    @property
    def polygon(self):
        return ShapelyPolygon(self.footprint)


@dataclass(frozen=True)
class CarInfo:
    position: np.ndarray  # (2,)


@dataclass
class CityGroundTruth:
    seed: int
    spec: SynthSpec
    labels: list           # per-node class label
    buildings: list
    fields: list
    cars: list

    @property
    def classes(self):
        return sorted(set(self.labels))


def _rect(cx, cy, w, d):
    hw, hd = w / 2, d / 2
    return np.array([[cx - hw, cy - hd], [cx + hw, cy - hd],
                     [cx + hw, cy + hd], [cx - hw, cy + hd]])


def _rects_clear(rect, others, gap):
    poly = ShapelyPolygon(rect)
    return all(poly.distance(ShapelyPolygon(o)) >= gap for o in others)


def synth_city(seed: int, spec: SynthSpec = SynthSpec()):
    """Build (SceneTree, CityGroundTruth); identical for identical inputs."""
    rng = np.random.default_rng(seed)
    ext = spec.extent
    lo = spec.border_margin
    hi = ext - spec.border_margin

    # -- place buildings and fields (disjoint rectangles) --------------------
    rects = []
    buildings = []
    heights = rng.choice(np.arange(10.0, 61.0, 2.5),
                         size=spec.building_count, replace=False) \
        if spec.building_count <= 21 else None
    if heights is None:
        heights = rng.uniform(10.0, 60.0, size=spec.building_count)
    letters = [a + b for a in [""] + list(string.ascii_uppercase)
               for b in string.ascii_uppercase]
    for i in range(spec.building_count):
        placed = False
        for _ in range(spec.max_place_tries):
            w = rng.uniform(16.0, 34.0)
            d = rng.uniform(16.0, 34.0)
            cx = rng.uniform(lo + w / 2, hi - w / 2)
            cy = rng.uniform(lo + d / 2, hi - d / 2)
            rect = _rect(cx, cy, w, d)
            if _rects_clear(rect, rects, spec.min_gap):
                rects.append(rect)
                name = f"Building {letters[i]}"
                buildings.append(BuildingInfo(
                    name=name, aliases=(f"Bldg {letters[i]}",),
                    footprint=rect, height=float(heights[i])))
                placed = True
                break
        if not placed:
            raise SpecInfeasible(
                f"could not place building {i + 1}/{spec.building_count}")

    fields = []
    for i in range(spec.field_count):
        placed = False
        for _ in range(spec.max_place_tries):
            side = rng.uniform(38.0, 46.0)
            cx = rng.uniform(lo + side / 2, hi - side / 2)
            cy = rng.uniform(lo + side / 2, hi - side / 2)
            rect = _rect(cx, cy, side, side)
            if _rects_clear(rect, rects, spec.min_gap):
                rects.append(rect)
                fields.append(FieldInfo(footprint=rect))
                placed = True
                break
        if not placed:
            raise SpecInfeasible(f"could not place field {i + 1}/{spec.field_count}")

    cars = []
    polys = [ShapelyPolygon(r) for r in rects]
    for i in range(spec.car_count):
        placed = False
        for _ in range(spec.max_place_tries):
            cx = rng.uniform(lo, hi)
            cy = rng.uniform(lo, hi)
            p = Point(cx, cy)
            if any(poly.distance(p) < spec.car_clearance for poly in polys):
                continue
            if any(np.hypot(*(c.position - (cx, cy))) < spec.car_spacing
                   for c in cars):
                continue
            cars.append(CarInfo(position=np.array([cx, cy])))
            placed = True
            break
        if not placed:
            raise SpecInfeasible(f"could not place car {i + 1}/{spec.car_count}")

    # -- leaf Gaussians -------------------------------------------------------
    leaf_pos, leaf_scale, leaf_color, leaf_label, leaf_group = [], [], [], [], []

    def emit_sheet(rect_or_extent, z, cell, color, label, group_prefix):
        """Grid of flat Gaussians covering a rectangle; 2x2 cells per cluster."""
        if isinstance(rect_or_extent, float):
            x0 = y0 = 0.0
            x1 = y1 = rect_or_extent
        else:
            x0, y0 = rect_or_extent.min(axis=0)
            x1, y1 = rect_or_extent.max(axis=0)
        nx = max(1, int(round((x1 - x0) / cell)))
        ny = max(1, int(round((y1 - y0) / cell)))
        dx = (x1 - x0) / nx
        dy = (y1 - y0) / ny
        s = (LEAF_SCALE_FACTOR * dx, LEAF_SCALE_FACTOR * dy, SHEET_THICKNESS)
        for iy in range(ny):
            for ix in range(nx):
                leaf_pos.append((x0 + (ix + 0.5) * dx, y0 + (iy + 0.5) * dy, z))
                leaf_scale.append(s)
                leaf_color.append(color)
                leaf_label.append(label)
                leaf_group.append((group_prefix, ix // 2, iy // 2))

    emit_sheet(ext, 0.0, spec.ground_cell, CLASS_COLORS["ground"], "ground",
               ("ground",))
    for bi, b in enumerate(buildings):
        emit_sheet(b.footprint, b.height, spec.object_cell,
                   CLASS_COLORS["building"], "building", ("building", bi))
    for fi, f in enumerate(fields):
        emit_sheet(f.footprint, FIELD_Z, spec.object_cell,
                   CLASS_COLORS["sports field"], "sports field", ("field", fi))
    for ci, c in enumerate(cars):
        leaf_pos.append((c.position[0], c.position[1], CAR_Z))
        leaf_scale.append(CAR_SCALE)
        leaf_color.append(CLASS_COLORS["car"])
        leaf_label.append("car")
        leaf_group.append(("car", ci))

    leaf_pos = np.array(leaf_pos)
    leaf_scale = np.array(leaf_scale)
    leaf_color = np.array(leaf_color)
    n_leaf = len(leaf_pos)

    # -- cluster (level 1) and root (level 0) nodes --------------------------
    groups = {}
    for i, g in enumerate(leaf_group):
        groups.setdefault(g, []).append(i)
    group_keys = sorted(groups.keys(), key=repr)

    n_mid = len(group_keys)
    n_total = 1 + n_mid + n_leaf
    positions = np.zeros((n_total, 3))
    scales = np.zeros((n_total, 3))
    colors = np.zeros((n_total, 3))
    opacity = np.ones(n_total)
    parent = np.full(n_total, -1, dtype=np.int64)
    level = np.zeros(n_total, dtype=np.uint16)
    labels = [None] * n_total

    leaf_base = 1 + n_mid
    positions[leaf_base:] = leaf_pos
    scales[leaf_base:] = leaf_scale
    colors[leaf_base:] = leaf_color
    level[leaf_base:] = 2
    for i in range(n_leaf):
        labels[leaf_base + i] = leaf_label[i]

    for mi, key in enumerate(group_keys):
        node = 1 + mi
        members = groups[key]
        pos = leaf_pos[members].mean(axis=0)
        span = np.max(np.abs(leaf_pos[members] - pos) + leaf_scale[members], axis=0)
        positions[node] = pos
        scales[node] = span
        colors[node] = leaf_color[members].mean(axis=0)
        level[node] = 1
        labels[node] = leaf_label[members[0]]
        parent[leaf_base + np.array(members)] = node
        parent[node] = 0

    positions[0] = (ext / 2, ext / 2, float(leaf_pos[:, 2].max()) / 2)
    scales[0] = (ext / 2, ext / 2, float(leaf_pos[:, 2].max()) + 1.0)
    colors[0] = CLASS_COLORS["ground"]
    level[0] = 0
    labels[0] = "ground"

    pad = 1.0
    header = SceneHeader(
        latent_dim=spec.latent_dim,
        bounds=np.array([positions.min(axis=0) - pad, positions.max(axis=0) + pad]),
        node_count=n_total)
    tree = SceneTree(
        positions=positions,
        rotations=np.tile(np.array([1.0, 0.0, 0.0, 0.0]), (n_total, 1)),
        scales=scales,
        opacity=opacity,
        color=colors,
        latents=np.zeros((n_total, spec.latent_dim)),
        parent=parent,
        level=level,
        header=header)
    gt = CityGroundTruth(seed=seed, spec=spec, labels=labels,
                         buildings=buildings, fields=fields, cars=cars)
    return tree, gt


def build_registry(gt: CityGroundTruth,
                   transform: GeoTransform) -> LandmarkRegistry:
    """Landmark registry with building footprints in world meters."""
    landmarks = [
        Landmark(name=b.name, aliases=b.aliases,
                 footprint=transform.to_world(b.footprint),
                 tags={"height_m": b.height})
        for b in gt.buildings
    ]
    return LandmarkRegistry(landmarks,
                            crs_note="local planar meter frame, origin at scene (0,0)")


def default_view(spec: SynthSpec, resolution=1.0) -> TopDownView:
    n = int(round(spec.extent / resolution))
    return TopDownView(origin_xy=(0.0, 0.0), width_px=n, height_px=n,
                       resolution=resolution)
