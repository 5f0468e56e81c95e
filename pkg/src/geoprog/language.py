"""Language features on Gaussians and per-pixel relevancy for text queries.

Latents are compressed embeddings; the codec maps between the full
embedding space (dim E) and the latent space stored on Gaussians (dim L).
Relevancy is the cosine similarity between the query embedding and the
decoded composited feature at each rendered pixel.
"""

from __future__ import annotations

from collections import Counter
from dataclasses import dataclass

import numpy as np

from .errors import GridMismatch, UnknownClass
from .grids import Segment, TopDownView
from .render import RenderProduct
from .scene import SceneTree

DEFAULT_TAU = 0.5
FALLBACK_FRACTION = 0.01
_CONST_EPS = 1e-9


class IdentityCodec:
    """E == L; encode/decode are the identity map (desk-scale default)."""

    def __init__(self, dim):
        self.embed_dim = int(dim)
        self.latent_dim = int(dim)

    def encode(self, x):
        return np.asarray(x, dtype=np.float64)

    def decode(self, z):
        return np.asarray(z, dtype=np.float64)


class LinearCodec:
    """Loadable linear projection codec (encode = W, decode = W^+)."""

    def __init__(self, weight):
        self.weight = np.asarray(weight, dtype=np.float64)  # (L, E)
        self.latent_dim, self.embed_dim = self.weight.shape
        self._pinv = np.linalg.pinv(self.weight)

    def encode(self, x):
        return np.asarray(x, dtype=np.float64) @ self.weight.T

    def decode(self, z):
        return np.asarray(z, dtype=np.float64) @ self._pinv.T

    @classmethod
    def load(cls, path):
        return cls(np.load(path))


def bake_features(tree: SceneTree, labels, provider, codec) -> SceneTree:
    """Assign latents per class label; internal nodes take the plurality
    class of their descendant leaves (ties go to the lexicographically
    smallest class name)."""
    labels = list(labels)
    if len(labels) != len(tree):
        raise UnknownClass(f"{len(labels)} labels for {len(tree)} nodes")
    classes = sorted(set(labels) - {None})
    if any(lbl is None for lbl in labels):
        raise UnknownClass("every node must be labeled")
    vectors = provider.embed_text(classes)
    latents_by_class = {cls: np.asarray(codec.encode(vec), dtype=np.float64)
                        for cls, vec in zip(classes, vectors)}

    effective = _plurality_labels(tree, labels)
    lat = np.stack([latents_by_class[effective[i]] for i in range(len(tree))])
    return tree.with_latents(lat)


def _plurality_labels(tree: SceneTree, labels):
    """Leaf labels stay; internal nodes inherit the plurality leaf class."""
    children = tree.children
    is_leaf = tree.is_leaf
    counts = [None] * len(tree)
    order = np.argsort(tree.level)[::-1]  # deepest first
    effective = list(labels)
    for i in order:
        i = int(i)
        if is_leaf[i]:
            counts[i] = Counter({labels[i]: 1})
        else:
            total = Counter()
            for k in children[i]:
                total.update(counts[k])
            counts[i] = total
            top = max(total.values())
            effective[i] = min(c for c, n in total.items() if n == top)
    return effective


@dataclass
class ConfidenceMap:
    view: TopDownView
    raw: np.ndarray        # (H, W) cosine in [-1, 1]; NaN on invalid pixels
    normalized: np.ndarray  # (H, W) in [0, 1]; 0 on invalid pixels
    valid: np.ndarray      # (H, W) bool (alpha > 0)


def normalize_confidence(raw, valid):
    """Min-max over valid pixels; a constant map normalizes to all zeros."""
    normalized = np.zeros_like(raw, dtype=np.float64)
    vals = raw[valid]
    if vals.size:
        lo, hi = float(np.min(vals)), float(np.max(vals))
        if hi - lo > _CONST_EPS:
            normalized[valid] = (raw[valid] - lo) / (hi - lo)
    return normalized


def relevancy_map(product: RenderProduct, query: str, provider, codec) -> ConfidenceMap:
    if product.feature.shape[2] != codec.latent_dim:
        raise GridMismatch(
            f"feature dim {product.feature.shape[2]} != codec latent dim {codec.latent_dim}")
    q = np.asarray(provider.embed_text([query])[0], dtype=np.float64)
    qn = np.linalg.norm(q)
    valid = product.alpha > 0
    h, w = product.alpha.shape
    raw = np.full((h, w), np.nan)
    if valid.any() and qn > 0:
        feats = codec.decode(product.feature[valid])
        norms = np.linalg.norm(feats, axis=1)
        cos = np.zeros(len(feats))
        nz = norms > 0
        cos[nz] = feats[nz] @ q / (norms[nz] * qn)
        raw[valid] = np.clip(cos, -1.0, 1.0)
    normalized = normalize_confidence(raw, valid)
    return ConfidenceMap(view=product.view, raw=raw, normalized=normalized, valid=valid)


def threshold_segment(conf: ConfidenceMap, area: Segment | None,
                      tau: float = DEFAULT_TAU) -> Segment:
    """Pixels of ``area`` whose normalized relevancy reaches ``tau``.

    Empty result falls back to the top 1% of normalized values within the
    area, flagged ``low_confidence_fallback``. The returned segment
    carries the raw cosine as confidence.
    """
    if not 0.0 <= tau <= 1.0:
        raise ValueError("tau must be in [0, 1]")
    if area is None:
        area_mask = np.ones(conf.view.shape, dtype=bool)
    else:
        if area.view != conf.view:
            raise GridMismatch("area grid differs from confidence map grid")
        area_mask = area.mask
    candidates = area_mask & conf.valid
    mask = candidates & (conf.normalized >= tau)
    flags = set()
    if not mask.any() and candidates.any():
        vals = conf.normalized[candidates]
        k = max(1, int(np.ceil(FALLBACK_FRACTION * vals.size)))
        cutoff = np.partition(vals, -k)[-k]
        mask = candidates & (conf.normalized >= cutoff)
        flags.add("low_confidence_fallback")
    if not mask.any():
        flags.add("empty_area")
    confidence = np.where(mask, conf.raw, np.nan)
    return Segment(conf.view, mask, confidence=confidence,
                   provenance="threshold_segment", flags=frozenset(flags))


def save_confidence_png(conf: ConfidenceMap, path):
    """16-bit grayscale PNG of the normalized map plus a JSON sidecar."""
    import json
    from PIL import Image
    img = (conf.normalized * 65535).astype(np.uint16)
    Image.fromarray(img).save(path)
    vals = conf.raw[conf.valid]
    meta = {
        "min": float(np.min(vals)) if vals.size else None,
        "max": float(np.max(vals)) if vals.size else None,
        "view": conf.view.to_json_dict(),
    }
    with open(str(path) + ".json", "w") as f:
        json.dump(meta, f, indent=2)
