"""Level-of-detail selection and orthographic top-down compositing.

The renderer picks the coarsest antichain of tree nodes whose footprints
project to at most one pixel (leaves are always admissible), then
alpha-composites RGB, language features, and a top-surface height raster
front-to-back in descending z.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import PixelBudgetExceeded
from .grids import DEFAULT_PIXEL_BUDGET, TopDownView
from .scene import SceneTree

FOOTPRINT_TRUNCATION_SIGMA = 3.0


@dataclass
class RenderProduct:
    view: TopDownView
    rgb: np.ndarray      # (H, W, 3) in [0, 1]
    feature: np.ndarray  # (H, W, L) alpha-weighted composite of latents
    alpha: np.ndarray    # (H, W) in [0, 1]
    height: np.ndarray   # (H, W) top-surface z; undefined where alpha == 0
    cut: np.ndarray      # node indices used
    nodes_touched: int   # instrumentation: nodes visited during compositing


def projected_diameter_px(tree: SceneTree, view: TopDownView, idx=None):
    """Footprint diameter in pixels: 2 * max(scale_x, scale_y) / resolution."""
    scales = tree.scales if idx is None else tree.scales[idx]
    return 2.0 * np.maximum(scales[..., 0], scales[..., 1]) / view.resolution


def select_lod_cut(tree: SceneTree, view: TopDownView) -> np.ndarray:
    """Antichain covering the tree: stop at nodes projecting <= 1 px, or leaves."""
    diam = projected_diameter_px(tree, view)
    children = tree.children
    cut = []
    stack = list(tree.roots)
    while stack:
        i = stack.pop()
        kids = children[i]
        if not kids or diam[i] <= 1.0:
            cut.append(i)
        else:
            stack.extend(kids)
    return np.array(sorted(cut), dtype=np.int64)


def quat_to_matrix(q):
    """Scalar-first unit quaternion(s) -> rotation matrix, shape (..., 3, 3)."""
    q = np.asarray(q, dtype=np.float64)
    w, x, y, z = q[..., 0], q[..., 1], q[..., 2], q[..., 3]
    m = np.empty(q.shape[:-1] + (3, 3))
    m[..., 0, 0] = 1 - 2 * (y * y + z * z)
    m[..., 0, 1] = 2 * (x * y - w * z)
    m[..., 0, 2] = 2 * (x * z + w * y)
    m[..., 1, 0] = 2 * (x * y + w * z)
    m[..., 1, 1] = 1 - 2 * (x * x + z * z)
    m[..., 1, 2] = 2 * (y * z - w * x)
    m[..., 2, 0] = 2 * (x * z - w * y)
    m[..., 2, 1] = 2 * (y * z + w * x)
    m[..., 2, 2] = 1 - 2 * (x * x + y * y)
    return m


def _projected_cov2(tree: SceneTree, idx):
    """Top-left 2x2 of R S S^T R^T for each node in idx."""
    rot = quat_to_matrix(tree.rotations[idx])
    s = tree.scales[idx].astype(np.float64)
    rs = rot * s[:, None, :]
    cov3 = rs @ np.swapaxes(rs, 1, 2)
    return cov3[:, :2, :2]


def render_topdown(tree: SceneTree, view: TopDownView,
                   pixel_budget=DEFAULT_PIXEL_BUDGET) -> RenderProduct:
    if view.pixel_count > pixel_budget:
        raise PixelBudgetExceeded(
            f"{view.width_px}x{view.height_px} exceeds budget {pixel_budget}")

    cut = select_lod_cut(tree, view)
    h, w = view.shape
    lat = tree.latent_dim
    rgb = np.zeros((h, w, 3))
    feature = np.zeros((h, w, lat))
    alpha = np.zeros((h, w))
    height = np.zeros((h, w))

    # front-to-back: descending z, ties broken by node index
    order = cut[np.lexsort((cut, -tree.positions[cut, 2].astype(np.float64)))]
    cov2 = _projected_cov2(tree, order)
    inv_cov = np.linalg.inv(cov2 + 1e-12 * np.eye(2))
    pos = tree.positions[order].astype(np.float64)
    opac = tree.opacity[order].astype(np.float64)
    colors = tree.color[order].astype(np.float64)
    latents = tree.latents[order].astype(np.float64)

    xs = view.pixel_centers_x()
    ys = view.pixel_centers_y()
    res = view.resolution
    ox, oy = view.origin_xy

    def patches():
        """Yield (k, rows, cols, a) with a = opacity * footprint on the patch."""
        for k in range(len(order)):
            cx, cy, cz = pos[k]
            radius = FOOTPRINT_TRUNCATION_SIGMA * float(
                np.sqrt(max(cov2[k, 0, 0], cov2[k, 1, 1])))
            c0 = max(0, int(np.floor((cx - radius - ox) / res - 0.5)))
            c1 = min(w - 1, int(np.ceil((cx + radius - ox) / res - 0.5)))
            r0 = max(0, int(np.floor(h - 0.5 - (cy + radius - oy) / res)))
            r1 = min(h - 1, int(np.ceil(h - 0.5 - (cy - radius - oy) / res)))
            if c0 > c1 or r0 > r1:
                continue
            dx = xs[c0:c1 + 1] - cx
            dy = ys[r0:r1 + 1] - cy
            a, b, d = inv_cov[k, 0, 0], inv_cov[k, 0, 1], inv_cov[k, 1, 1]
            d2 = (a * dx[None, :] ** 2 + 2 * b * dy[:, None] * dx[None, :]
                  + d * dy[:, None] ** 2)
            g = np.where(d2 <= FOOTPRINT_TRUNCATION_SIGMA ** 2, np.exp(-0.5 * d2), 0.0)
            yield k, slice(r0, r1 + 1), slice(c0, c1 + 1), opac[k] * g

    touched = 0
    transmit = np.ones((h, w))
    for k, rs_, cs_, a in patches():
        touched += 1
        wgt = a * transmit[rs_, cs_]
        rgb[rs_, cs_] += wgt[:, :, None] * colors[k]
        feature[rs_, cs_] += wgt[:, :, None] * latents[k]
        alpha[rs_, cs_] += wgt
        transmit[rs_, cs_] *= 1.0 - a

    # second pass: height = z of the first node contributing more than half
    # the pixel's total accumulated alpha
    transmit = np.ones((h, w))
    assigned = np.zeros((h, w), dtype=bool)
    for k, rs_, cs_, a in patches():
        wgt = a * transmit[rs_, cs_]
        hit = (~assigned[rs_, cs_]) & (wgt > 0.5 * alpha[rs_, cs_]) & (wgt > 0)
        height[rs_, cs_] = np.where(hit, pos[k, 2], height[rs_, cs_])
        assigned[rs_, cs_] |= hit
        transmit[rs_, cs_] *= 1.0 - a

    np.clip(alpha, 0.0, 1.0, out=alpha)
    np.clip(rgb, 0.0, 1.0, out=rgb)
    feature[alpha == 0] = 0.0
    return RenderProduct(view=view, rgb=rgb, feature=feature, alpha=alpha,
                         height=height, cut=cut, nodes_touched=touched)


def save_render_pngs(product: RenderProduct, rgb_path, alpha_path=None):
    from PIL import Image
    Image.fromarray((product.rgb * 255).astype(np.uint8)).save(rgb_path)
    if alpha_path is not None:
        Image.fromarray((product.alpha * 255).astype(np.uint8), mode="L").save(alpha_path)
