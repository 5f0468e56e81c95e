"""Hierarchical Gaussian scene model and the .gclf container format.

A scene is a coarse-to-fine tree of anisotropic Gaussian primitives.
Node attributes are stored as struct-of-arrays (float32/int64/uint16)
so city-scale scenes stay compact and save/load round-trips are exact.
"""

from __future__ import annotations

import json
import struct
from dataclasses import dataclass, field, replace

import numpy as np

from .errors import InvariantViolation, MalformedContainer

CONTAINER_MAGIC = b"GCLF"
CONTAINER_VERSION = 1

QUAT_NORM_TOL = 1e-6


@dataclass(frozen=True)
class SceneHeader:
    latent_dim: int
    bounds: np.ndarray  # (2, 3) row 0 = min corner, row 1 = max corner
    node_count: int
    version: int = CONTAINER_VERSION
    up_axis: str = "+z"
    geo_transform: dict | None = None  # optional embedded transform (georef module)

    def to_json_dict(self):
        d = {
            "latent_dim": int(self.latent_dim),
            "bounds": np.asarray(self.bounds, dtype=float).tolist(),
            "node_count": int(self.node_count),
            "version": int(self.version),
            "up_axis": self.up_axis,
        }
        if self.geo_transform is not None:
            d["geo_transform"] = self.geo_transform
        return d

    @classmethod
    def from_json_dict(cls, d):
        try:
            return cls(
                latent_dim=int(d["latent_dim"]),
                bounds=np.asarray(d["bounds"], dtype=np.float64),
                node_count=int(d["node_count"]),
                version=int(d.get("version", CONTAINER_VERSION)),
                up_axis=d.get("up_axis", "+z"),
                geo_transform=d.get("geo_transform"),
            )
        except (KeyError, TypeError, ValueError) as exc:
            raise MalformedContainer(f"bad header: {exc}") from exc


@dataclass(frozen=True)
class GaussianPrimitive:
    """A single splat; a read-only view of one tree node."""

    position: np.ndarray  # (3,)
    rotation: np.ndarray  # (4,) unit quaternion, scalar-first (w, x, y, z)
    scale: np.ndarray     # (3,) positive semi-axis lengths
    opacity: float
    color: np.ndarray     # (3,) RGB in [0, 1]
    latent: np.ndarray    # (L,)


@dataclass
class SceneTree:
    """Struct-of-arrays Gaussian tree; immutable after construction."""

    positions: np.ndarray  # (N, 3) float32
    rotations: np.ndarray  # (N, 4) float32
    scales: np.ndarray     # (N, 3) float32
    opacity: np.ndarray    # (N,)   float32
    color: np.ndarray      # (N, 3) float32
    latents: np.ndarray    # (N, L) float32
    parent: np.ndarray     # (N,)   int64, -1 marks a root
    level: np.ndarray      # (N,)   uint16, 0 = coarsest
    header: SceneHeader
    _children: list | None = field(default=None, repr=False, compare=False)

    def __post_init__(self):
        self.positions = np.ascontiguousarray(self.positions, dtype=np.float32)
        self.rotations = np.ascontiguousarray(self.rotations, dtype=np.float32)
        self.scales = np.ascontiguousarray(self.scales, dtype=np.float32)
        self.opacity = np.ascontiguousarray(self.opacity, dtype=np.float32)
        self.color = np.ascontiguousarray(self.color, dtype=np.float32)
        self.latents = np.ascontiguousarray(self.latents, dtype=np.float32)
        self.parent = np.ascontiguousarray(self.parent, dtype=np.int64)
        self.level = np.ascontiguousarray(self.level, dtype=np.uint16)
        for arr in (self.positions, self.rotations, self.scales, self.opacity,
                    self.color, self.latents, self.parent, self.level):
            arr.setflags(write=False)

    def __len__(self):
        return self.positions.shape[0]

    @property
    def latent_dim(self):
        return self.latents.shape[1]

    @property
    def roots(self):
        return np.flatnonzero(self.parent < 0)

    @property
    def children(self):
        """Per-node child index lists, built on first use."""
        if self._children is None:
            kids = [[] for _ in range(len(self))]
            for i, p in enumerate(self.parent):
                if p >= 0:
                    kids[p].append(i)
            self._children = kids
        return self._children

    @property
    def is_leaf(self):
        mask = np.ones(len(self), dtype=bool)
        parents = self.parent[self.parent >= 0]
        mask[parents] = False
        return mask

    @property
    def leaves(self):
        return np.flatnonzero(self.is_leaf)

    def node(self, i) -> GaussianPrimitive:
        return GaussianPrimitive(
            position=self.positions[i].copy(),
            rotation=self.rotations[i].copy(),
            scale=self.scales[i].copy(),
            opacity=float(self.opacity[i]),
            color=self.color[i].copy(),
            latent=self.latents[i].copy(),
        )

    def with_latents(self, latents, latent_dim=None) -> "SceneTree":
        """New tree sharing geometry but carrying different latents."""
        latents = np.ascontiguousarray(latents, dtype=np.float32)
        if latents.shape[0] != len(self):
            raise InvariantViolation("latent row count != node count")
        header = replace(self.header, latent_dim=int(latents.shape[1]))
        return SceneTree(self.positions, self.rotations, self.scales,
                         self.opacity, self.color, latents,
                         self.parent, self.level, header)


def validate_tree(tree: SceneTree) -> list[str]:
    """Check every scene invariant; returns one message per violation.

    Empty list means the tree is valid. Never raises.
    """
    report = []
    n = len(tree)
    if n == 0:
        return ["tree has no nodes"]
    if tree.header.node_count != n:
        report.append(f"header node_count {tree.header.node_count} != {n} nodes")
    if tree.header.latent_dim != tree.latents.shape[1]:
        report.append(
            f"header latent_dim {tree.header.latent_dim} != latent width {tree.latents.shape[1]}")

    bad = np.flatnonzero(~np.all(tree.scales > 0, axis=1))
    for i in bad:
        report.append(f"node {i}: scale components must be > 0")
    qnorm = np.linalg.norm(tree.rotations.astype(np.float64), axis=1)
    bad = np.flatnonzero(np.abs(qnorm - 1.0) > QUAT_NORM_TOL)
    for i in bad:
        report.append(f"node {i}: rotation quaternion norm {qnorm[i]:.8f} != 1")
    bad = np.flatnonzero((tree.opacity < 0) | (tree.opacity > 1))
    for i in bad:
        report.append(f"node {i}: opacity {tree.opacity[i]} outside [0, 1]")

    bounds = np.asarray(tree.header.bounds, dtype=np.float64)
    lo, hi = bounds[0], bounds[1]
    outside = np.flatnonzero(
        np.any(tree.positions < lo - 1e-6, axis=1) | np.any(tree.positions > hi + 1e-6, axis=1))
    for i in outside:
        report.append(f"node {i}: position outside header bounds")

    # structural checks
    roots = tree.roots
    if roots.size == 0:
        report.append("no root node (every node has a parent)")
    bad_parent = np.flatnonzero(tree.parent >= n)
    for i in bad_parent:
        report.append(f"node {i}: parent index {tree.parent[i]} out of range")
    self_parent = np.flatnonzero(tree.parent == np.arange(n))
    for i in self_parent:
        report.append(f"node {i}: is its own parent")

    valid_parent = (tree.parent >= 0) & (tree.parent < n)
    idx = np.flatnonzero(valid_parent)
    mismatch = idx[tree.level[idx].astype(int) != tree.level[tree.parent[idx]].astype(int) + 1]
    for i in mismatch:
        report.append(
            f"node {i}: level {tree.level[i]} != parent level {tree.level[tree.parent[i]]} + 1")
    for i in roots:
        if tree.level[i] != 0:
            report.append(f"node {i}: root level {tree.level[i]} != 0")

    # reachability + cycle detection via parent walk
    reach = np.zeros(n, dtype=np.int8)  # 0 unknown, 1 reaches a root, 2 in a cycle
    for start in range(n):
        if reach[start]:
            continue
        path = []
        cur = start
        while True:
            if cur < 0:
                for p in path:
                    reach[p] = 1
                break
            if reach[cur]:
                mark = reach[cur]
                for p in path:
                    reach[p] = mark
                break
            if cur in path:
                cyc = path[path.index(cur):]
                report.append(f"cycle through nodes {sorted(cyc)}")
                for p in path:
                    reach[p] = 2
                break
            path.append(cur)
            p = tree.parent[cur]
            cur = int(p) if 0 <= p < n else (-1 if p < 0 else -2)
            if cur == -2:  # out-of-range parent already reported
                for p in path:
                    reach[p] = 1
                break
    unreachable = np.flatnonzero(reach == 2)
    for i in unreachable:
        if not any(f"cycle" in r and str(i) in r for r in report):
            report.append(f"node {i}: not reachable from any root")

    if tree.is_leaf.sum() == 0:
        report.append("leaf set is empty")
    return report


# -- container I/O -----------------------------------------------------------

_ARRAY_SPECS = (
    # (name, attribute, columns, dtype)
    ("positions", "positions", 3, "<f4"),
    ("rotations", "rotations", 4, "<f4"),
    ("scales", "scales", 3, "<f4"),
    ("opacity", "opacity", 1, "<f4"),
    ("color", "color", 3, "<f4"),
    ("latents", "latents", None, "<f4"),  # L columns from header
    ("parent", "parent", 1, "<i8"),
    ("level", "level", 1, "<u2"),
)


def save_scene(tree: SceneTree, path) -> None:
    """Write the tree as a .gclf container (JSON header + packed arrays)."""
    errors = validate_tree(tree)
    if errors:
        raise InvariantViolation("; ".join(errors))

    blobs = []
    offsets = {}
    offset = 0
    for name, attr, cols, dtype in _ARRAY_SPECS:
        arr = getattr(tree, attr)
        blob = np.ascontiguousarray(arr, dtype=dtype).tobytes()
        offsets[name] = [offset, len(blob)]
        offset += len(blob)
        blobs.append(blob)

    header = dict(tree.header.to_json_dict(), arrays=offsets)
    header_bytes = json.dumps(header, sort_keys=True).encode("utf-8")
    with open(path, "wb") as f:
        f.write(CONTAINER_MAGIC)
        f.write(struct.pack("<I", CONTAINER_VERSION))
        f.write(struct.pack("<Q", len(header_bytes)))
        f.write(header_bytes)
        for blob in blobs:
            f.write(blob)


def load_scene(path) -> SceneTree:
    """Read a .gclf container; validates before returning."""
    with open(path, "rb") as f:
        data = f.read()
    if len(data) < 16 or data[:4] != CONTAINER_MAGIC:
        raise MalformedContainer("bad magic (not a .gclf file)")
    (version,) = struct.unpack_from("<I", data, 4)
    if version != CONTAINER_VERSION:
        raise MalformedContainer(f"unsupported container version {version}")
    (header_len,) = struct.unpack_from("<Q", data, 8)
    body_start = 16 + header_len
    if body_start > len(data):
        raise MalformedContainer("truncated header")
    try:
        header_dict = json.loads(data[16:body_start].decode("utf-8"))
    except (UnicodeDecodeError, json.JSONDecodeError) as exc:
        raise MalformedContainer(f"header is not valid JSON: {exc}") from exc
    header = SceneHeader.from_json_dict(header_dict)
    offsets = header_dict.get("arrays")
    if not isinstance(offsets, dict):
        raise MalformedContainer("header missing array offsets")

    n = header.node_count
    arrays = {}
    for name, attr, cols, dtype in _ARRAY_SPECS:
        if name not in offsets:
            raise MalformedContainer(f"missing array {name!r}")
        off, length = offsets[name]
        start, end = body_start + off, body_start + off + length
        if end > len(data):
            raise MalformedContainer(f"array {name!r} extends past end of file")
        ncols = header.latent_dim if cols is None else cols
        expected = n * ncols * np.dtype(dtype).itemsize
        if length != expected:
            raise MalformedContainer(
                f"array {name!r}: {length} bytes, expected {expected}")
        arr = np.frombuffer(data[start:end], dtype=dtype)
        if ncols > 1 or cols is None:
            arr = arr.reshape(n, ncols)
        arrays[attr] = arr

    tree = SceneTree(header=header, **arrays)
    errors = validate_tree(tree)
    if errors:
        raise InvariantViolation("; ".join(errors))
    return tree


def trees_equal(a: SceneTree, b: SceneTree) -> bool:
    """Exact field-by-field equality (round-trip oracle)."""
    if len(a) != len(b) or a.header.latent_dim != b.header.latent_dim:
        return False
    return all(
        np.array_equal(getattr(a, attr), getattr(b, attr))
        for _, attr, _, _ in _ARRAY_SPECS
    )
