"""Point-cloud grouping: seeded downsampling, furthest point sampling, kNN
group formation, and a permutation-invariant group encoder.

Groups are built around furthest-point-sampled centroids; each group holds
its centroid plus the k nearest points, with member coordinates re-expressed
relative to the centroid so the encoder sees local geometry only. The
encoder is a shared per-point MLP followed by a coordinate-wise max over the
group, which makes the group feature independent of member ordering.
"""

from __future__ import annotations

from dataclasses import dataclass, replace

import numpy as np

from .exceptions import EmptyInput, ShapeMismatch, TooFewPoints
from .nnops import init_weight, silu
from .seeding import as_rng
from .validation import check_points

DEFAULT_ENCODER_DIMS = (3, 64, 128, 384)


@dataclass(frozen=True, eq=False)
class PointGroups:
    """Centroid-indexed groups over a source cloud.

    ``member_coords`` holds each member's offset from its group centroid;
    ``group_features`` is filled in by :func:`encode_groups`.
    """

    centroid_indices: np.ndarray  # (G,) into the source cloud
    centroids: np.ndarray  # (G, 3) meters
    members: np.ndarray  # (G, k) into the source cloud
    member_coords: np.ndarray  # (G, k, 3) centroid-relative
    group_features: np.ndarray | None = None  # (G, D)

    def __post_init__(self):
        g = self.centroid_indices.shape[0]
        if self.centroids.shape != (g, 3):
            raise ShapeMismatch(
                f"centroids shape {self.centroids.shape} does not match {g} groups"
            )
        if self.members.ndim != 2 or self.members.shape[0] != g:
            raise ShapeMismatch(f"members must be (G, k), got {self.members.shape}")
        if self.member_coords.shape != self.members.shape + (3,):
            raise ShapeMismatch(
                f"member_coords shape {self.member_coords.shape} does not match "
                f"members {self.members.shape}"
            )
        for own, group in zip(self.centroid_indices, self.members):
            if own not in group:
                raise ValueError(f"group does not contain its centroid index {own}")

    @property
    def n_groups(self) -> int:
        return self.centroid_indices.shape[0]

    @property
    def k(self) -> int:
        return self.members.shape[1]

    def with_features(self, features: np.ndarray) -> "PointGroups":
        if features.shape[0] != self.n_groups:
            raise ShapeMismatch(
                f"features rows {features.shape[0]} != {self.n_groups} groups"
            )
        return replace(self, group_features=features)


@dataclass(frozen=True, eq=False)
class EncoderParams:
    """Weights of the shared per-point MLP (three linear layers with SiLU)."""

    weights: tuple
    biases: tuple

    def __post_init__(self):
        if len(self.weights) != len(self.biases):
            raise ShapeMismatch("weights and biases must pair up")
        for i, (w, b) in enumerate(zip(self.weights, self.biases)):
            if w.ndim != 2 or b.shape != (w.shape[1],):
                raise ShapeMismatch(f"layer {i}: weight {w.shape} and bias {b.shape}")
            if i and w.shape[0] != self.weights[i - 1].shape[1]:
                raise ShapeMismatch(
                    f"layer {i} input width {w.shape[0]} does not chain with "
                    f"previous output {self.weights[i - 1].shape[1]}"
                )

    @property
    def in_dim(self) -> int:
        return self.weights[0].shape[0]

    @property
    def out_dim(self) -> int:
        return self.weights[-1].shape[1]


def init_encoder_params(seed, dims=DEFAULT_ENCODER_DIMS) -> EncoderParams:
    rng = as_rng(seed)
    weights = []
    biases = []
    for fan_in, fan_out in zip(dims[:-1], dims[1:]):
        weights.append(init_weight(rng, fan_in, fan_out))
        biases.append(np.zeros(fan_out))
    return EncoderParams(tuple(weights), tuple(biases))


def downsample(points: np.ndarray, target: int, seed) -> np.ndarray:
    """Uniform random subset of ``target`` points, without replacement.

    Clouds already at or below the target pass through unchanged.
    """
    pts = check_points(points, "points")
    if pts.shape[0] == 0:
        raise EmptyInput("cannot downsample an empty cloud")
    if target < 1:
        raise ValueError(f"target must be at least 1, got {target}")
    if pts.shape[0] <= target:
        return pts
    rng = as_rng(seed)
    keep = rng.choice(pts.shape[0], size=target, replace=False)
    return pts[keep]


def fps(points: np.ndarray, n_centroids: int) -> np.ndarray:
    """Furthest point sampling: greedy max-min centroid selection.

    Starts at index 0; each subsequent pick maximizes the minimum squared
    distance to the centroids chosen so far, breaking ties toward the
    lowest index. Deterministic.
    """
    pts = check_points(points, "points")
    m = pts.shape[0]
    if n_centroids > m:
        raise TooFewPoints(f"asked for {n_centroids} centroids from {m} points")
    if n_centroids < 1:
        raise ValueError("need at least one centroid")
    chosen = np.empty(n_centroids, dtype=np.intp)
    chosen[0] = 0
    min_sq = ((pts - pts[0]) ** 2).sum(axis=1)
    for i in range(1, n_centroids):
        nxt = int(np.argmax(min_sq))  # argmax takes the first max: lowest index
        chosen[i] = nxt
        d = ((pts - pts[nxt]) ** 2).sum(axis=1)
        np.minimum(min_sq, d, out=min_sq)
    return chosen


def knn_group(points: np.ndarray, centroid_indices: np.ndarray, k: int) -> PointGroups:
    """Form a group of the k nearest points around each centroid.

    Distances are Euclidean with ties broken toward the lowest index; the
    centroid itself always leads its group. Member coordinates are stored
    relative to the centroid.
    """
    pts = check_points(points, "points")
    m = pts.shape[0]
    idx = np.asarray(centroid_indices, dtype=np.intp)
    if idx.ndim != 1:
        raise ShapeMismatch(f"centroid_indices must be 1-d, got shape {idx.shape}")
    if k > m:
        raise TooFewPoints(f"asked for {k} neighbors from {m} points")
    if k < 1:
        raise ValueError("k must be at least 1")
    if idx.size and (idx.min() < 0 or idx.max() >= m):
        raise ValueError("centroid index out of range")
    members = np.empty((idx.size, k), dtype=np.intp)
    for g, ci in enumerate(idx):
        d = ((pts - pts[ci]) ** 2).sum(axis=1)
        d[ci] = -1.0  # the centroid leads its own group even among duplicates
        members[g] = np.argsort(d, kind="stable")[:k]
    centroids = pts[idx]
    member_coords = pts[members] - centroids[:, None, :]
    return PointGroups(idx, centroids, members, member_coords)


def encode_groups(groups: PointGroups, params: EncoderParams) -> np.ndarray:
    """Encode each group into a feature vector.

    A shared MLP (SiLU after every layer) maps each centroid-relative member
    coordinate to ``params.out_dim`` channels; a coordinate-wise max over
    the group's members yields the group feature. The max makes the result
    invariant to member order.
    """
    if params.in_dim != 3:
        raise ShapeMismatch(f"encoder expects 3 input channels, got {params.in_dim}")
    x = groups.member_coords  # (G, k, 3)
    for w, b in zip(params.weights, params.biases):
        x = silu(x @ w + b)
    return x.max(axis=1)


def format_groups(groups: PointGroups) -> str:
    """Debug dump: one line per group, centroid index then member indices."""
    lines = []
    for ci, mem in zip(groups.centroid_indices, groups.members):
        lines.append(" ".join(str(int(v)) for v in [ci, *mem]))
    return "\n".join(lines) + "\n"


def save_groups(groups: PointGroups, path) -> None:
    with open(path, "w") as fh:
        fh.write(format_groups(groups))
