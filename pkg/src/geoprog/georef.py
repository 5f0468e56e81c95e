"""Scene-to-world alignment from manually chosen control points.

Fits a 2D similarity (default) or affine transform between scene
coordinates and a local planar meter frame by least squares, and applies
it in both directions.
"""

from __future__ import annotations

import json
from dataclasses import dataclass

import numpy as np

from .errors import DegenerateConfiguration, Underdetermined

SIMILARITY = "similarity"
AFFINE = "affine"

_MIN_POINTS = {SIMILARITY: 2, AFFINE: 3}


@dataclass(frozen=True)
class ControlPointSet:
    scene_xy: np.ndarray  # (n, 2)
    world_xy: np.ndarray  # (n, 2)

    def __post_init__(self):
        object.__setattr__(self, "scene_xy",
                           np.asarray(self.scene_xy, dtype=np.float64).reshape(-1, 2))
        object.__setattr__(self, "world_xy",
                           np.asarray(self.world_xy, dtype=np.float64).reshape(-1, 2))
        if len(self.scene_xy) != len(self.world_xy):
            raise ValueError("scene/world point counts differ")

    def __len__(self):
        return len(self.scene_xy)

    @classmethod
    def from_file(cls, path):
        """JSON list of {"scene": [x, y], "world": [x, y]}."""
        with open(path) as f:
            pairs = json.load(f)
        return cls(np.array([p["scene"] for p in pairs]),
                   np.array([p["world"] for p in pairs]))


@dataclass(frozen=True)
class GeoTransform:
    kind: str
    matrix: np.ndarray    # (2, 3) scene -> world
    inverse: np.ndarray   # (2, 3) world -> scene
    residual_rmse: float  # meters

    @property
    def scale(self):
        """Isotropic scale factor (similarity); mean singular value otherwise."""
        a = self.matrix[:, :2]
        if self.kind == SIMILARITY:
            return float(np.sqrt(abs(np.linalg.det(a))))
        return float(np.mean(np.linalg.svd(a, compute_uv=False)))

    def to_world(self, p):
        p = np.asarray(p, dtype=np.float64)
        return p @ self.matrix[:, :2].T + self.matrix[:, 2]

    def to_scene(self, p):
        p = np.asarray(p, dtype=np.float64)
        return p @ self.inverse[:, :2].T + self.inverse[:, 2]

    def to_json_dict(self):
        return {"kind": self.kind, "matrix": self.matrix.tolist(),
                "residual_rmse": self.residual_rmse}

    @classmethod
    def from_json_dict(cls, d):
        matrix = np.asarray(d["matrix"], dtype=np.float64).reshape(2, 3)
        return cls(kind=d["kind"], matrix=matrix, inverse=_invert_2x3(matrix),
                   residual_rmse=float(d.get("residual_rmse", 0.0)))

    @classmethod
    def identity(cls):
        eye = np.array([[1.0, 0.0, 0.0], [0.0, 1.0, 0.0]])
        return cls(kind=SIMILARITY, matrix=eye, inverse=eye.copy(), residual_rmse=0.0)


def _invert_2x3(matrix):
    a = matrix[:, :2]
    t = matrix[:, 2]
    det = np.linalg.det(a)
    if abs(det) < 1e-15:
        raise DegenerateConfiguration("transform linear part is singular")
    a_inv = np.linalg.inv(a)
    return np.hstack([a_inv, (-a_inv @ t)[:, None]])


def apply_transform(transform: GeoTransform, p, direction="to_world"):
    if direction == "to_world":
        return transform.to_world(p)
    if direction == "to_scene":
        return transform.to_scene(p)
    raise ValueError(f"unknown direction {direction!r}")


def estimate_transform(points: ControlPointSet, kind=SIMILARITY) -> GeoTransform:
    """Least-squares fit minimizing sum ||world_i - A(scene_i)||^2."""
    if kind not in _MIN_POINTS:
        raise ValueError(f"unknown transform kind {kind!r}")
    n = len(points)
    if n < _MIN_POINTS[kind]:
        raise Underdetermined(
            f"{kind} needs >= {_MIN_POINTS[kind]} control points, got {n}")
    src, dst = points.scene_xy, points.world_xy

    uniq = np.unique(src, axis=0)
    if len(uniq) < _MIN_POINTS[kind]:
        raise DegenerateConfiguration("duplicate scene points")
    if _collinear(uniq) and kind == AFFINE:
        raise DegenerateConfiguration("scene points are collinear")
    if kind == SIMILARITY and len(uniq) < 2:
        raise DegenerateConfiguration("similarity needs two distinct scene points")

    if kind == SIMILARITY:
        matrix = _fit_similarity(src, dst)
    else:
        matrix = _fit_affine(src, dst)

    pred = src @ matrix[:, :2].T + matrix[:, 2]
    rmse = float(np.sqrt(np.mean(np.sum((dst - pred) ** 2, axis=1))))
    return GeoTransform(kind=kind, matrix=matrix, inverse=_invert_2x3(matrix),
                        residual_rmse=rmse)


def _collinear(pts, tol=1e-12):
    if len(pts) < 3:
        return True
    d = pts - pts.mean(axis=0)
    s = np.linalg.svd(d, compute_uv=False)
    return s[-1] <= tol * max(s[0], 1.0)


def _fit_similarity(src, dst):
    """Closed-form 4-DOF fit (scale, rotation, translation), Umeyama-style."""
    mu_s = src.mean(axis=0)
    mu_d = dst.mean(axis=0)
    sc = src - mu_s
    dc = dst - mu_d
    var_s = np.sum(sc ** 2)
    if var_s < 1e-30:
        raise DegenerateConfiguration("scene points coincide")
    cov = dc.T @ sc
    u, s, vt = np.linalg.svd(cov)
    d = np.sign(np.linalg.det(u @ vt))
    diag = np.diag([1.0, d])
    rot = u @ diag @ vt
    scale = np.trace(np.diag(s) @ diag) / var_s
    t = mu_d - scale * rot @ mu_s
    return np.hstack([scale * rot, t[:, None]])


def _fit_affine(src, dst):
    ones = np.ones((len(src), 1))
    design = np.hstack([src, ones])
    sol, *_ = np.linalg.lstsq(design, dst, rcond=None)
    return sol.T  # (2, 3)
