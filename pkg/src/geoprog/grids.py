"""Top-down metric grids and the raster values that flow between operations.

Grid convention: ``origin_xy`` is the lower-left corner of the view in
scene units, row 0 is the top (largest y), column 0 the left (smallest x).
Pixel (r, c) has its center at
``x = origin_x + (c + 0.5) * resolution`` and
``y = origin_y + (height_px - r - 0.5) * resolution``.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field

import numpy as np

from .errors import GridMismatch

DEFAULT_PIXEL_BUDGET = 4096 * 4096


@dataclass(frozen=True)
class TopDownView:
    origin_xy: tuple  # (x, y) scene units, lower-left corner
    width_px: int
    height_px: int
    resolution: float  # scene units per pixel

    def __post_init__(self):
        if self.resolution <= 0:
            raise ValueError("resolution must be > 0")
        if self.width_px <= 0 or self.height_px <= 0:
            raise ValueError("view dimensions must be positive")
        object.__setattr__(self, "origin_xy",
                           (float(self.origin_xy[0]), float(self.origin_xy[1])))

    @property
    def shape(self):
        return (self.height_px, self.width_px)

    @property
    def pixel_count(self):
        return self.width_px * self.height_px

    def pixel_centers_x(self):
        ox, _ = self.origin_xy
        return ox + (np.arange(self.width_px) + 0.5) * self.resolution

    def pixel_centers_y(self):
        """Per-row y coordinates (row 0 = top)."""
        _, oy = self.origin_xy
        return oy + (self.height_px - np.arange(self.height_px) - 0.5) * self.resolution

    def scene_to_pixel(self, xy):
        """Scene (x, y) -> fractional (row, col)."""
        xy = np.asarray(xy, dtype=np.float64)
        ox, oy = self.origin_xy
        col = (xy[..., 0] - ox) / self.resolution - 0.5
        row = self.height_px - 0.5 - (xy[..., 1] - oy) / self.resolution
        return np.stack([row, col], axis=-1)

    def pixel_to_scene(self, rc):
        """Fractional (row, col) -> scene (x, y)."""
        rc = np.asarray(rc, dtype=np.float64)
        ox, oy = self.origin_xy
        x = ox + (rc[..., 1] + 0.5) * self.resolution
        y = oy + (self.height_px - rc[..., 0] - 0.5) * self.resolution
        return np.stack([x, y], axis=-1)

    def to_json_dict(self):
        return {"origin": list(self.origin_xy), "res": self.resolution,
                "w": self.width_px, "h": self.height_px}

    @classmethod
    def from_json_dict(cls, d):
        return cls(origin_xy=tuple(d["origin"]), width_px=int(d["w"]),
                   height_px=int(d["h"]), resolution=float(d["res"]))


def check_same_grid(a: TopDownView, b: TopDownView):
    if a != b:
        raise GridMismatch(f"grid geometries differ: {a} vs {b}")


@dataclass
class Segment:
    """Boolean raster mask on a view grid, optionally with per-pixel confidence.

    ``confidence`` (when present) holds values on mask pixels and NaN
    elsewhere. ``flags`` records provenance conditions such as
    ``outside_view`` or ``low_confidence_fallback``; an empty mask is only
    legal when at least one flag explains it.
    """

    view: TopDownView
    mask: np.ndarray  # (H, W) bool
    confidence: np.ndarray | None = None
    provenance: str = ""
    flags: frozenset = frozenset()

    def __post_init__(self):
        self.mask = np.ascontiguousarray(self.mask, dtype=bool)
        if self.mask.shape != self.view.shape:
            raise GridMismatch(
                f"mask shape {self.mask.shape} != view shape {self.view.shape}")
        if self.confidence is not None:
            conf = np.array(self.confidence, dtype=np.float64)
            if conf.shape != self.mask.shape:
                raise GridMismatch("confidence shape != mask shape")
            conf[~self.mask] = np.nan
            self.confidence = conf
        self.flags = frozenset(self.flags)

    @property
    def is_empty(self):
        return not self.mask.any()

    @property
    def pixel_count(self):
        return int(self.mask.sum())

    def bbox(self):
        """Inclusive (r0, c0, r1, c1) of the mask, or None if empty."""
        rows = np.flatnonzero(self.mask.any(axis=1))
        cols = np.flatnonzero(self.mask.any(axis=0))
        if rows.size == 0:
            return None
        return (int(rows[0]), int(cols[0]), int(rows[-1]), int(cols[-1]))

    def centroid_scene(self):
        """Scene-coordinate centroid of mask pixel centers, or None if empty."""
        rs, cs = np.nonzero(self.mask)
        if rs.size == 0:
            return None
        rc = np.stack([rs.mean(), cs.mean()])
        return self.view.pixel_to_scene(rc)

    def with_flags(self, *extra):
        return Segment(self.view, self.mask, self.confidence,
                       self.provenance, self.flags | set(extra))


def full_segment(view: TopDownView, provenance="full_view") -> Segment:
    return Segment(view, np.ones(view.shape, dtype=bool), provenance=provenance)


def empty_segment(view: TopDownView, provenance, *flags) -> Segment:
    return Segment(view, np.zeros(view.shape, dtype=bool),
                   provenance=provenance, flags=frozenset(flags))


@dataclass
class DetectionSet:
    """Axis-aligned boxes in grid pixel coordinates (x=col, y=row)."""

    view: TopDownView
    boxes: np.ndarray   # (n, 4) float: x0, y0, x1, y1 with x0 < x1, y0 < y1
    scores: np.ndarray  # (n,) float in [0, 1], descending
    labels: list        # n label strings

    def __post_init__(self):
        self.boxes = np.asarray(self.boxes, dtype=np.float64).reshape(-1, 4)
        self.scores = np.asarray(self.scores, dtype=np.float64).reshape(-1)
        n = len(self.boxes)
        if len(self.scores) != n or len(self.labels) != n:
            raise ValueError("boxes/scores/labels length mismatch")
        if n:
            if np.any(self.boxes[:, 0] >= self.boxes[:, 2]) or \
               np.any(self.boxes[:, 1] >= self.boxes[:, 3]):
                raise ValueError("boxes must have x0 < x1 and y0 < y1")
            if np.any(np.diff(self.scores) > 1e-12):
                raise ValueError("scores must be sorted descending")

    def __len__(self):
        return len(self.boxes)

    def centers(self):
        """(n, 2) box centers as (x, y) grid coordinates."""
        b = self.boxes
        return np.stack([(b[:, 0] + b[:, 2]) / 2, (b[:, 1] + b[:, 3]) / 2], axis=1)


# -- raster export ------------------------------------------------------------

def save_mask_png(segment: Segment, path):
    from PIL import Image
    img = (segment.mask.astype(np.uint8)) * 255
    Image.fromarray(img, mode="L").save(path)


def load_mask_png(path, view: TopDownView) -> np.ndarray:
    from PIL import Image
    arr = np.asarray(Image.open(path).convert("L"))
    if arr.shape != view.shape:
        raise GridMismatch(f"mask PNG shape {arr.shape} != view shape {view.shape}")
    return arr > 127


def save_f32_raster(arr: np.ndarray, path, view: TopDownView, extra=None):
    """Flat little-endian float32 dump plus a JSON sidecar describing it."""
    arr = np.ascontiguousarray(arr, dtype="<f4")
    with open(path, "wb") as f:
        f.write(arr.tobytes())
    meta = {"shape": list(arr.shape), "dtype": "<f4", "view": view.to_json_dict()}
    if extra:
        meta.update(extra)
    with open(str(path) + ".json", "w") as f:
        json.dump(meta, f, indent=2)


def load_f32_raster(path):
    with open(str(path) + ".json") as f:
        meta = json.load(f)
    arr = np.fromfile(path, dtype="<f4").reshape(meta["shape"])
    return arr, meta
