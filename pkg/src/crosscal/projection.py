"""Pinhole projection, patch-plane coordinates, and cross-modal coordinate
alignment.

The alignment path is the geometric heart of the pipeline: LiDAR points are
moved into the camera frame, projected through the pinhole model, rescaled
into patch units, and mapped onto the normalized plane shared with the image
patch grid. Points that land outside the image are clipped into a margin box
rather than discarded, so every input point keeps a coordinate row.

A diagnostic z-buffer renderer is included to quantify how much of a cloud a
conventional depth-map encoding would lose at a given extrinsic hypothesis.
"""

from __future__ import annotations

from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .exceptions import ParseError
from .geometry import RigidTransform
from .validation import as_float_array, check_finite, check_matrix, check_points

# Depth floor in meters: projection divides by max(depth, EPS_DEPTH) so
# points at or behind the camera plane still produce finite coordinates.
EPS_DEPTH = 1e-6


@dataclass(frozen=True)
class Intrinsics:
    """Pinhole camera parameters plus the patch tiling of the image."""

    fx: float
    fy: float
    cx: float
    cy: float
    width: int
    height: int
    patch_w: int = 16
    patch_h: int = 16

    def __post_init__(self):
        if self.fx <= 0 or self.fy <= 0:
            raise ValueError("focal lengths must be positive")
        if self.patch_w <= 0 or self.patch_h <= 0:
            raise ValueError("patch size must be positive")
        if self.width % self.patch_w or self.height % self.patch_h:
            raise ValueError(
                f"image size {self.width}x{self.height} is not divisible by "
                f"patch size {self.patch_w}x{self.patch_h}"
            )
        if self.width < self.patch_w or self.height < self.patch_h:
            raise ValueError("image must hold at least one patch")

    @property
    def n_w(self) -> int:
        """Number of patch columns."""
        return self.width // self.patch_w

    @property
    def n_h(self) -> int:
        """Number of patch rows."""
        return self.height // self.patch_h

    @classmethod
    def default(cls) -> "Intrinsics":
        """A 448x224 camera tiled into 16x16 patches (28x14 grid)."""
        return cls(fx=300.0, fy=300.0, cx=224.0, cy=112.0, width=448, height=224)


@dataclass(frozen=True, eq=False)
class NormalizedCoords:
    """Rows of (x, y) on the normalized patch plane, every component within
    ``[-bound, bound]`` where ``bound = 1 + margin ratio``."""

    coords: np.ndarray
    bound: float = 1.0

    def __post_init__(self):
        c = as_float_array(self.coords, "coords")
        if c.ndim != 2 or c.shape[1] != 2:
            from .exceptions import ShapeMismatch

            raise ShapeMismatch(f"coords must be (N, 2), got {c.shape}")
        if np.abs(c).max(initial=0.0) > self.bound * (1 + 1e-12):
            raise ValueError(f"coordinates exceed the stated bound {self.bound}")
        c = c.copy()
        c.flags.writeable = False
        object.__setattr__(self, "coords", c)

    def __len__(self) -> int:
        return self.coords.shape[0]

    def __array__(self, dtype=None, copy=None):
        return np.asarray(self.coords, dtype=dtype)


def transform_points(points: np.ndarray, T: RigidTransform) -> np.ndarray:
    """Map an (N, 3) cloud through a rigid transform: row i -> R p_i + t."""
    pts = check_points(points, "points")
    check_finite(pts, "points")
    return T.apply(pts)


def project(points_cam: np.ndarray, K: Intrinsics):
    """Pinhole projection of camera-frame points.

    Returns ``(pixels, depth)`` where pixels is (N, 2) of (u, v) and depth
    is the raw (N,) camera-frame z. The projective division uses
    ``max(z, EPS_DEPTH)`` so rows behind the camera still produce finite
    pixels; callers decide what to do with them based on the depth sign.
    """
    pts = check_points(points_cam, "points_cam")
    depth = pts[:, 2].copy()
    safe = np.maximum(depth, EPS_DEPTH)
    u = K.fx * pts[:, 0] / safe + K.cx
    v = K.fy * pts[:, 1] / safe + K.cy
    return np.stack([u, v], axis=1), depth


def patch_grid_coords(K: Intrinsics) -> NormalizedCoords:
    """Normalized coordinates of the image patch grid, row-major.

    The entry for patch row i, column j is ``(2i/n_h - 1, 2j/n_w - 1)``,
    so all components lie in [-1, 1).
    """
    i = np.arange(K.n_h, dtype=np.float64)
    j = np.arange(K.n_w, dtype=np.float64)
    a = 2.0 * i / K.n_h - 1.0
    b = 2.0 * j / K.n_w - 1.0
    first, second = np.meshgrid(a, b, indexing="ij")
    coords = np.stack([first.ravel(), second.ravel()], axis=1)
    return NormalizedCoords(coords, bound=1.0)


def align_coords(
    points: np.ndarray, T_CL: RigidTransform, K: Intrinsics, r_p: float
) -> NormalizedCoords:
    """Project a LiDAR cloud and place it on the normalized patch plane.

    Pipeline: rigid transform into the camera frame, pinhole projection,
    division by the patch size, affine map to [-1, 1] over the patch grid,
    then a clip of each axis into [-(1 + r_p), 1 + r_p]. The output always
    has exactly one row per input point; nothing is dropped, however far
    outside the image a point falls.
    """
    if r_p < 0:
        raise ValueError(f"margin ratio must be non-negative, got {r_p}")
    pts = check_points(points, "points")
    pixels, _ = project(T_CL.apply(pts), K)
    u_t = pixels[:, 0] / K.patch_w
    v_t = pixels[:, 1] / K.patch_h
    x = 2.0 * u_t / K.n_w - 1.0
    y = 2.0 * v_t / K.n_h - 1.0
    bound = 1.0 + r_p
    coords = np.clip(np.stack([x, y], axis=1), -bound, bound)
    return NormalizedCoords(coords, bound=bound)


def unalign_coords(coords: NormalizedCoords, K: Intrinsics) -> np.ndarray:
    """Inverse of the normalization step of :func:`align_coords` (no
    unclipping): maps normalized (x, y) back to pixel (u, v)."""
    c = np.asarray(coords)
    u = (c[:, 0] + 1.0) * 0.5 * K.n_w * K.patch_w
    v = (c[:, 1] + 1.0) * 0.5 * K.n_h * K.patch_h
    return np.stack([u, v], axis=1)


def render_depth_map(points: np.ndarray, T_CL: RigidTransform, K: Intrinsics):
    """Z-buffer render of a cloud under an extrinsic hypothesis.

    Returns ``(depth_image, dropout_fraction)``. The image is (H, W) with 0
    for empty pixels and the nearest positive depth elsewhere. Pixel (0, 0)
    is the top-left pixel center, so a projection at (u, v) lands in cell
    ``(floor(v + 0.5), floor(u + 0.5))``. The dropout fraction counts points
    that a depth-map encoding would lose: depth at or below ``EPS_DEPTH``,
    or a cell outside the image.
    """
    pts = check_points(points, "points")
    image = np.zeros((K.height, K.width))
    n = pts.shape[0]
    if n == 0:
        return image, 0.0
    pixels, depth = project(T_CL.apply(pts), K)
    with np.errstate(invalid="ignore"):
        cols = np.floor(pixels[:, 0] + 0.5)
        rows = np.floor(pixels[:, 1] + 0.5)
        visible = (
            (depth > EPS_DEPTH)
            & (cols >= 0)
            & (cols < K.width)
            & (rows >= 0)
            & (rows < K.height)
        )
    dropout = float(n - int(visible.sum())) / n
    r = rows[visible].astype(np.intp)
    c = cols[visible].astype(np.intp)
    d = depth[visible]
    # write far points first so near ones overwrite them
    order = np.argsort(-d, kind="stable")
    image[r[order], c[order]] = d[order]
    return image, dropout


# ---------------------------------------------------------------------------
# Point cloud files: `.bin` is little-endian float32 xyz triples, anything
# else is text with one `x y z` line per point.
# ---------------------------------------------------------------------------


def load_point_cloud(path) -> np.ndarray:
    path = Path(path)
    if path.suffix == ".bin":
        raw = np.fromfile(path, dtype="<f4")
        if raw.size % 3:
            raise ParseError(
                f"binary cloud holds {raw.size} floats, not a multiple of 3"
            )
        return raw.reshape(-1, 3).astype(np.float64)
    rows = []
    with open(path) as fh:
        for lineno, line in enumerate(fh, start=1):
            stripped = line.strip()
            if not stripped:
                continue
            tokens = stripped.split()
            if len(tokens) != 3:
                raise ParseError(
                    f"expected 3 coordinates, got {len(tokens)}", line=lineno
                )
            try:
                rows.append([float(t) for t in tokens])
            except ValueError:
                raise ParseError(f"invalid number in {stripped!r}", line=lineno) from None
    return np.array(rows, dtype=np.float64).reshape(-1, 3)


def save_point_cloud(points: np.ndarray, path) -> None:
    pts = check_points(points, "points")
    path = Path(path)
    if path.suffix == ".bin":
        pts.astype("<f4").tofile(path)
        return
    with open(path, "w") as fh:
        for row in pts:
            fh.write(f"{row[0]:.17g} {row[1]:.17g} {row[2]:.17g}\n")


# ---------------------------------------------------------------------------
# Depth map files: a `W H` header line, then H rows of W depths in meters,
# 0 for empty cells.
# ---------------------------------------------------------------------------


def save_depth_map(image: np.ndarray, path) -> None:
    img = as_float_array(image, "image")
    if img.ndim != 2:
        from .exceptions import ShapeMismatch

        raise ShapeMismatch(f"depth image must be 2-d, got shape {img.shape}")
    h, w = img.shape
    with open(path, "w") as fh:
        fh.write(f"{w} {h}\n")
        for row in img:
            fh.write(" ".join(f"{v:.17g}" for v in row) + "\n")


def load_depth_map(path) -> np.ndarray:
    with open(path) as fh:
        lines = [ln.strip() for ln in fh]
    lines = [(i + 1, ln) for i, ln in enumerate(lines) if ln]
    if not lines:
        raise ParseError("empty depth map file")
    header_line, header = lines[0]
    tokens = header.split()
    if len(tokens) != 2:
        raise ParseError("header must be `W H`", line=header_line)
    try:
        w, h = int(tokens[0]), int(tokens[1])
    except ValueError:
        raise ParseError("header must be `W H`", line=header_line) from None
    body = lines[1:]
    if len(body) != h:
        raise ParseError(f"expected {h} rows, got {len(body)}")
    rows = []
    for lineno, ln in body:
        vals = ln.split()
        if len(vals) != w:
            raise ParseError(f"expected {w} values, got {len(vals)}", line=lineno)
        try:
            rows.append([float(v) for v in vals])
        except ValueError:
            raise ParseError("invalid number in depth row", line=lineno) from None
    return np.array(rows, dtype=np.float64)
