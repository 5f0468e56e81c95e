"""The nine geographic vision operations over scene, registry, and providers.

A :class:`GeoEngine` binds an immutable scene tree, landmark registry,
geo-transform, and the active top-down view; its methods are the
operations that generated programs compose. Rendered products are cached
per view, so repeated relevancy queries reuse one compositing pass.
"""

from __future__ import annotations

import io
import threading

import numpy as np
from scipy import ndimage

from .errors import (EmptyArea, EmptyInput, NonPositiveDistance,
                     ViewNotNorthAligned)
from .georef import GeoTransform
from .grids import DetectionSet, Segment, TopDownView, check_same_grid, full_segment
from .language import (DEFAULT_TAU, IdentityCodec, relevancy_map,
                       threshold_segment)
from .registry import LandmarkRegistry, rasterize_polygon
from .render import quat_to_matrix, render_topdown
from .scene import SceneTree

DIRECTIONS = ("north", "south", "east", "west",
              "northeast", "northwest", "southeast", "southwest")
_DIRECTION_ALIASES = {"n": "north", "s": "south", "e": "east", "w": "west",
                      "ne": "northeast", "nw": "northwest",
                      "se": "southeast", "sw": "southwest"}

FLATNESS_CONE_DEG = 30.0
GROUND_SEARCH_DILATION_M = 10.0
HEIGHT_PERCENTILES = (5.0, 95.0)
DEFAULT_DETAIL_RESOLUTION = 0.25
EXISTS_CONFIDENCE_THRESHOLD = 0.5


class GeoEngine:
    def __init__(self, tree: SceneTree, registry: LandmarkRegistry,
                 transform: GeoTransform, view: TopDownView,
                 embedder=None, detector=None, codec=None,
                 tau=DEFAULT_TAU, detail_resolution=DEFAULT_DETAIL_RESOLUTION,
                 distance_mode="centroid"):
        self.tree = tree
        self.registry = registry
        self.transform = transform
        self.view = view
        self.embedder = embedder
        self.detector = detector
        self.codec = codec if codec is not None else IdentityCodec(tree.latent_dim)
        self.tau = tau
        self.detail_resolution = detail_resolution
        self.distance_mode = distance_mode  # "centroid" | "boundary"
        self._render_cache = {}
        self._lock = threading.Lock()

    # scene units per meter along the transform
    @property
    def meters_per_scene_unit(self):
        return self.transform.scale

    def render(self, view=None):
        view = view or self.view
        with self._lock:
            product = self._render_cache.get(view)
        if product is None:
            product = render_topdown(self.tree, view)
            with self._lock:
                self._render_cache[view] = product
        return product

    def full_seg(self) -> Segment:
        return full_segment(self.view)

    # -- 1) landmark segmentation --------------------------------------------

    def get_landmark_seg(self, query: str) -> Segment:
        landmark = self.registry.lookup(query)
        seg = rasterize_polygon(landmark.footprint, self.view, self.transform)
        return Segment(seg.view, seg.mask, seg.confidence,
                       provenance=f"GetLandmarkSeg({landmark.name!r})",
                       flags=seg.flags)

    # -- 2) open-vocabulary structure segmentation ---------------------------

    def get_structure_seg(self, query: str, area: Segment) -> Segment:
        check_same_grid(area.view, self.view)
        if area.is_empty:
            raise EmptyArea("structure search area is empty")
        product = self.render()
        conf = relevancy_map(product, query, self.embedder, self.codec)
        seg = threshold_segment(conf, area, self.tau)
        return Segment(seg.view, seg.mask, seg.confidence,
                       provenance=f"GetStructureSeg({query!r})", flags=seg.flags)

    # -- 3) metric buffer -----------------------------------------------------

    def seg_around(self, area: Segment, distance: float) -> Segment:
        if distance <= 0:
            raise NonPositiveDistance(f"distance {distance} must be > 0")
        if area.is_empty:
            raise EmptyInput("cannot buffer an empty segment")
        radius_px = distance / (self.view.resolution * self.meters_per_scene_unit)
        dist = ndimage.distance_transform_edt(~area.mask)
        ring = (dist > 0) & (dist <= radius_px)
        flags = {"empty_ring"} if not ring.any() else set()
        return Segment(self.view, ring, provenance=f"SegAround({distance}m)",
                       flags=frozenset(flags))

    # -- 4) directional half-planes ------------------------------------------

    def _check_north_aligned(self):
        lin = self.transform.matrix[:, :2] / self.meters_per_scene_unit
        if not np.allclose(lin, np.eye(2), atol=1e-6):
            raise ViewNotNorthAligned(
                "view axes are rotated relative to world N/E")

    def seg_direction(self, seg: Segment, direction: str) -> Segment:
        if seg.is_empty:
            raise EmptyInput("direction of an empty segment is undefined")
        key = direction.strip().casefold()
        key = _DIRECTION_ALIASES.get(key, key)
        if key not in DIRECTIONS:
            raise ValueError(f"unknown direction {direction!r}")
        self._check_north_aligned()
        r0, c0, r1, c1 = seg.bbox()
        h, w = self.view.shape
        rows = np.arange(h)[:, None]
        cols = np.arange(w)[None, :]
        half = {
            "north": rows < r0,   # row 0 is the largest y
            "south": rows > r1,
            "east": cols > c1,
            "west": cols < c0,
        }
        if key in half:
            mask = np.broadcast_to(half[key], (h, w)).copy()
        else:
            first, second = {"northeast": ("north", "east"),
                             "northwest": ("north", "west"),
                             "southeast": ("south", "east"),
                             "southwest": ("south", "west")}[key]
            mask = np.broadcast_to(half[first] & half[second], (h, w)).copy()
        mask &= ~seg.mask
        flags = {"empty_halfplane"} if not mask.any() else set()
        return Segment(self.view, mask, provenance=f"SegDirection({key})",
                       flags=frozenset(flags))

    # -- 5) region between two segments --------------------------------------

    def seg_between(self, seg1: Segment, seg2: Segment) -> Segment:
        check_same_grid(seg1.view, seg2.view)
        check_same_grid(seg1.view, self.view)
        if seg1.is_empty or seg2.is_empty:
            raise EmptyInput("SegBetween needs two non-empty segments")
        union = seg1.mask | seg2.mask
        hull = _convex_hull_mask(union)
        mask = hull & ~seg1.mask & ~seg2.mask
        flags = {"empty_between"} if not mask.any() else set()
        return Segment(self.view, mask, provenance="SegBetween",
                       flags=frozenset(flags))

    # -- 6) largest connected component --------------------------------------

    def largest_seg(self, segs: Segment) -> Segment:
        if segs.is_empty:
            raise EmptyInput("LargestSeg of an empty segment")
        labels, count = ndimage.label(segs.mask, structure=np.ones((3, 3), int))
        sizes = np.bincount(labels.ravel())
        sizes[0] = 0
        best_size = sizes.max()
        tied = np.flatnonzero(sizes == best_size)
        if len(tied) > 1:
            # earliest first pixel in row-major order wins
            flat = labels.ravel()
            firsts = {t: np.argmax(flat == t) for t in tied}
            winner = min(tied, key=lambda t: firsts[t])
        else:
            winner = tied[0]
        mask = labels == winner
        conf = None
        if segs.confidence is not None:
            conf = np.where(mask, segs.confidence, np.nan)
        return Segment(self.view, mask, confidence=conf,
                       provenance="LargestSeg", flags=segs.flags)

    # -- 7) metric distance ---------------------------------------------------

    def measure_dist(self, seg_from: Segment, seg_to: Segment) -> float:
        check_same_grid(seg_from.view, seg_to.view)
        if seg_from.is_empty or seg_to.is_empty:
            raise EmptyInput("MeasureDist needs two non-empty segments")
        if self.distance_mode == "boundary":
            dist = ndimage.distance_transform_edt(~seg_from.mask)
            px = float(dist[seg_to.mask].min())
            return px * self.view.resolution * self.meters_per_scene_unit
        a = self.transform.to_world(seg_from.centroid_scene())
        b = self.transform.to_world(seg_to.centroid_scene())
        return float(np.linalg.norm(a - b))

    # -- 8) metric height -----------------------------------------------------

    def measure_height(self, area: Segment) -> float:
        if area.is_empty:
            raise EmptyInput("MeasureHeight of an empty segment")
        check_same_grid(area.view, self.view)
        tree = self.tree
        leaves = tree.leaves
        flat = leaves[self._flat_leaf_mask(leaves)]
        if flat.size == 0:
            raise EmptyInput("scene has no horizontal-plane Gaussians")

        in_area = flat[self._leaves_in_mask(flat, area.mask)]
        radius_px = GROUND_SEARCH_DILATION_M / (
            self.view.resolution * self.meters_per_scene_unit)
        dist = ndimage.distance_transform_edt(~area.mask)
        dilated = area.mask | (dist <= radius_px)
        in_dilated = flat[self._leaves_in_mask(flat, dilated)]
        if in_area.size == 0 or in_dilated.size == 0:
            from .errors import NoFlatGaussians
            raise NoFlatGaussians("no horizontal-plane Gaussians in area")
        top = np.percentile(tree.positions[in_area, 2].astype(np.float64),
                            HEIGHT_PERCENTILES[1])
        ground = np.percentile(tree.positions[in_dilated, 2].astype(np.float64),
                               HEIGHT_PERCENTILES[0])
        return float((top - ground) * self.meters_per_scene_unit)

    def _flat_leaf_mask(self, leaves):
        """Smallest scale axis within the flatness cone of +z after rotation."""
        scales = self.tree.scales[leaves]
        axis = np.argmin(scales, axis=1)
        rot = quat_to_matrix(self.tree.rotations[leaves])
        normal_z = np.abs(rot[np.arange(len(leaves)), 2, axis])
        return normal_z >= np.cos(np.deg2rad(FLATNESS_CONE_DEG))

    def _leaves_in_mask(self, leaf_idx, mask):
        rc = self.view.scene_to_pixel(self.tree.positions[leaf_idx, :2])
        rows = np.rint(rc[:, 0]).astype(int)
        cols = np.rint(rc[:, 1]).astype(int)
        h, w = self.view.shape
        ok = (rows >= 0) & (rows < h) & (cols >= 0) & (cols < w)
        hit = np.zeros(len(leaf_idx), dtype=bool)
        hit[ok] = mask[rows[ok], cols[ok]]
        return hit

    # -- 9) object detection --------------------------------------------------

    def get_object_seg(self, query: str, area: Segment) -> DetectionSet:
        if self.detector is None:
            from .errors import ProviderUnavailable
            raise ProviderUnavailable("no detector provider configured")
        if area.is_empty:
            raise EmptyArea("detection area is empty")
        check_same_grid(area.view, self.view)
        r0, c0, r1, c1 = area.bbox()
        res = self.view.resolution
        ox, oy = self.view.origin_xy
        patch_origin = (ox + c0 * res,
                        oy + (self.view.height_px - (r1 + 1)) * res)
        width_u = (c1 - c0 + 1) * res
        height_u = (r1 - r0 + 1) * res
        detail = min(self.detail_resolution, res)
        patch_view = TopDownView(
            origin_xy=patch_origin,
            width_px=max(1, int(round(width_u / detail))),
            height_px=max(1, int(round(height_u / detail))),
            resolution=detail)
        product = self.render(patch_view)
        png = _encode_png(product.rgb)
        raw = self.detector.detect(png, query, view=patch_view)

        boxes, scores, labels = [], [], []
        for (x0, y0, x1, y1), score in raw:
            center_scene = patch_view.pixel_to_scene(
                np.array([(y0 + y1) / 2 - 0.5, (x0 + x1) / 2 - 0.5]))
            rc = self.view.scene_to_pixel(center_scene)
            r, c = int(np.rint(rc[0])), int(np.rint(rc[1]))
            h, w = self.view.shape
            if not (0 <= r < h and 0 <= c < w) or not area.mask[r, c]:
                continue
            # map the box corners from patch pixels to view pixels
            tl = self.view.scene_to_pixel(patch_view.pixel_to_scene(
                np.array([y0 - 0.5, x0 - 0.5])))
            br = self.view.scene_to_pixel(patch_view.pixel_to_scene(
                np.array([y1 - 0.5, x1 - 0.5])))
            bx0, by0 = tl[1], tl[0]
            bx1, by1 = br[1], br[0]
            boxes.append([min(bx0, bx1), min(by0, by1),
                          max(bx0, bx1) + 1e-9, max(by0, by1) + 1e-9])
            scores.append(score)
            labels.append(query)
        order = np.argsort([-s for s in scores], kind="stable")
        return DetectionSet(self.view,
                            np.array([boxes[i] for i in order]).reshape(-1, 4),
                            np.array([scores[i] for i in order]),
                            [labels[i] for i in order])


def segment_exists(segment: Segment) -> bool:
    """Existence test behind the Exists builtin.

    A segment produced by confidence thresholding only counts as present
    when its best raw confidence clears an absolute bar; the min-max
    normalized mask alone is never empty, so the raw cosine is the signal
    that distinguishes a real match from the low-confidence fallback.
    """
    if segment.is_empty:
        return False
    if "low_confidence_fallback" in segment.flags:
        return False
    if segment.confidence is not None:
        vals = segment.confidence[segment.mask]
        vals = vals[np.isfinite(vals)]
        if vals.size == 0 or float(vals.max()) < EXISTS_CONFIDENCE_THRESHOLD:
            return False
    return True


def _convex_hull_mask(mask):
    """Rasterize the convex hull of a boolean mask's pixel centers."""
    from scipy.spatial import ConvexHull, QhullError
    rs, cs = np.nonzero(mask)
    pts = np.stack([cs, rs], axis=1).astype(np.float64)  # (x, y) = (col, row)
    h, w = mask.shape
    cols = np.arange(w)[None, :]
    rows = np.arange(h)[:, None]
    if len(pts) < 3:
        return _segment_band(pts, mask.shape)
    try:
        hull = ConvexHull(pts)
    except QhullError:
        return _segment_band(pts, mask.shape)
    out = np.ones(mask.shape, dtype=bool)
    for a, b, c in hull.equations:  # a*x + b*y + c <= 0 inside
        out &= (a * cols + b * rows + c) <= 1e-9
    return out


def _segment_band(pts, shape):
    """Degenerate hull (collinear points): pixels within half a pixel of
    the segment spanned by the extreme points."""
    if len(pts) == 0:
        return np.zeros(shape, dtype=bool)
    h, w = shape
    d = pts - pts.mean(axis=0)
    if len(pts) == 1 or np.allclose(d, 0):
        out = np.zeros(shape, dtype=bool)
        out[int(pts[0][1]), int(pts[0][0])] = True
        return out
    u, s, vt = np.linalg.svd(d, full_matrices=False)
    direction = vt[0]
    t = d @ direction
    p0 = pts.mean(axis=0) + t.min() * direction
    p1 = pts.mean(axis=0) + t.max() * direction
    cols, rows = np.meshgrid(np.arange(w), np.arange(h))
    px = np.stack([cols.ravel(), rows.ravel()], axis=1).astype(np.float64)
    seg = p1 - p0
    seglen2 = seg @ seg
    proj = np.clip((px - p0) @ seg / seglen2, 0.0, 1.0)
    nearest = p0 + proj[:, None] * seg
    distsq = np.sum((px - nearest) ** 2, axis=1)
    return (distsq <= 0.25 + 1e-9).reshape(shape)


def _encode_png(rgb) -> bytes:
    from PIL import Image
    buf = io.BytesIO()
    Image.fromarray((np.clip(rgb, 0, 1) * 255).astype(np.uint8)).save(buf, "PNG")
    return buf.getvalue()
