"""End-to-end predictor assembly.

Chains every stage into one callable suitable for the refinement loop:
depth render of the cloud under the current hypothesis, patch features
through a seeded linear embedder (the desk-scale stand-in for a camera
image encoder), real point grouping and encoding, coordinate-aware token
assembly, dual-branch cross-attention, and the twist regressor.

The assembled network runs and is shape-checked end to end, but its
weights are only seeded, never trained, so its predictions carry no
accuracy claims; accuracy statements belong to the oracle predictors in
:mod:`crosscal.evaluation`.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .attention import AttentionParams, dual_branch, init_attention_params
from .embedding import HarmonicConfig, assemble_tokens
from .evaluation import CalibrationSample
from .exceptions import ShapeMismatch
from .geometry import RigidTransform, Se3Tangent
from .grouping import (
    DEFAULT_ENCODER_DIMS,
    EncoderParams,
    downsample,
    encode_groups,
    fps,
    init_encoder_params,
    knn_group,
)
from .nnops import init_weight
from .projection import Intrinsics, align_coords, patch_grid_coords, render_depth_map
from .regressor import HeadParams, init_head_params, regress
from .seeding import STREAM_DOWNSAMPLE, STREAM_WEIGHTS, derive_rng


@dataclass(frozen=True)
class NetworkConfig:
    """Hyperparameters of the assembled network.

    ``margin`` is the clip ratio of the normalized coordinate plane and
    ``n_harmonics`` the number of frequency pairs in the positional
    embedding; both feed the ablation axes, as does ``shared_attention``
    (one attention branch feeding both regression heads instead of two).
    """

    d_model: int = 384
    n_heads: int = 6
    d_head: int = 64
    n_harmonics: int = 6
    margin: float = 2.0
    n_groups: int = 512
    k_neighbors: int = 16
    max_points: int = 8192
    encoder_dims: tuple = DEFAULT_ENCODER_DIMS
    channel_plan: tuple = (384, 192, 96)
    mlp_hidden: int = 128
    shared_attention: bool = False
    steps: int = 3

    def __post_init__(self):
        for name in (
            "d_model",
            "n_heads",
            "d_head",
            "n_groups",
            "k_neighbors",
            "max_points",
            "mlp_hidden",
            "steps",
        ):
            if getattr(self, name) < 1:
                raise ValueError(f"{name} must be >= 1, got {getattr(self, name)}")
        if self.n_harmonics < 0:
            raise ValueError(f"n_harmonics must be >= 0, got {self.n_harmonics}")
        if self.margin < 0:
            raise ValueError(f"margin must be >= 0, got {self.margin}")
        if self.encoder_dims[0] != 3 or self.encoder_dims[-1] != self.d_model:
            raise ShapeMismatch(
                f"encoder_dims must run from 3 to d_model={self.d_model}, "
                f"got {self.encoder_dims}"
            )
        if self.channel_plan[0] != self.d_model:
            raise ShapeMismatch(
                f"channel_plan must start at d_model={self.d_model}, "
                f"got {self.channel_plan}"
            )

    @property
    def harmonic(self) -> HarmonicConfig:
        return HarmonicConfig(n_h=self.n_harmonics, r_p=self.margin)

    @property
    def token_width(self) -> int:
        """Width of an assembled token: content plus positional channels."""
        return self.d_model + 2 * (self.n_harmonics + 1)

    @classmethod
    def small(cls) -> "NetworkConfig":
        """A scaled-down configuration for demos and fast tests."""
        return cls(
            d_model=32,
            n_heads=2,
            d_head=8,
            n_harmonics=2,
            n_groups=24,
            k_neighbors=4,
            max_points=256,
            encoder_dims=(3, 16, 32),
            channel_plan=(32, 16, 8),
            mlp_hidden=16,
        )


@dataclass(frozen=True)
class NetworkParams:
    """Every weight of the assembled network."""

    patch_embed_w: np.ndarray
    patch_embed_b: np.ndarray
    encoder: EncoderParams
    attn_rot: AttentionParams
    attn_tsl: AttentionParams
    head: HeadParams

    def __post_init__(self):
        w = np.asarray(self.patch_embed_w, dtype=np.float64)
        b = np.asarray(self.patch_embed_b, dtype=np.float64)
        if w.ndim != 2 or b.shape != (w.shape[1],):
            raise ShapeMismatch(
                f"patch embedder shapes inconsistent: {w.shape} vs {b.shape}"
            )
        object.__setattr__(self, "patch_embed_w", w)
        object.__setattr__(self, "patch_embed_b", b)


def init_network_params(
    config: NetworkConfig, intrinsics: Intrinsics, seed: int
) -> NetworkParams:
    """Seeded initialization of all weights, one derived stream per stage."""
    patch_dim = intrinsics.patch_w * intrinsics.patch_h
    rng_patch = derive_rng(seed, STREAM_WEIGHTS, 0)
    return NetworkParams(
        patch_embed_w=init_weight(rng_patch, patch_dim, config.d_model),
        patch_embed_b=np.zeros(config.d_model),
        encoder=init_encoder_params(
            derive_rng(seed, STREAM_WEIGHTS, 1), config.encoder_dims
        ),
        attn_rot=init_attention_params(
            derive_rng(seed, STREAM_WEIGHTS, 2),
            config.token_width,
            config.d_model,
            config.n_heads,
            config.d_head,
        ),
        attn_tsl=init_attention_params(
            derive_rng(seed, STREAM_WEIGHTS, 3),
            config.token_width,
            config.d_model,
            config.n_heads,
            config.d_head,
        ),
        head=init_head_params(
            derive_rng(seed, STREAM_WEIGHTS, 4),
            channel_plan=config.channel_plan,
            hidden=config.mlp_hidden,
        ),
    )


class CalibrationNetwork:
    """The assembled predictor: callable on a CalibrationSample.

    Instances are deterministic functions of ``(config, intrinsics, seed)``;
    calling one with the same sample twice gives bit-identical twists.
    """

    def __init__(
        self,
        config: NetworkConfig | None = None,
        intrinsics: Intrinsics | None = None,
        seed: int = 0,
    ):
        self.config = config if config is not None else NetworkConfig()
        self.intrinsics = intrinsics if intrinsics is not None else Intrinsics.default()
        self.seed = seed
        self.params = init_network_params(self.config, self.intrinsics, seed)

    @property
    def grid_shape(self):
        return (self.intrinsics.n_h, self.intrinsics.n_w)

    def patch_features(self, depth_image: np.ndarray) -> np.ndarray:
        """Linear features of the depth render, one row per patch, in the
        same row-major patch order as the coordinate grid."""
        K = self.intrinsics
        img = np.asarray(depth_image, dtype=np.float64)
        if img.shape != (K.height, K.width):
            raise ShapeMismatch(
                f"depth image must be {(K.height, K.width)}, got {img.shape}"
            )
        patches = (
            img.reshape(K.n_h, K.patch_h, K.n_w, K.patch_w)
            .transpose(0, 2, 1, 3)
            .reshape(K.n_h * K.n_w, K.patch_h * K.patch_w)
        )
        return patches @ self.params.patch_embed_w + self.params.patch_embed_b

    def point_features(self, points: np.ndarray, T_hyp: RigidTransform):
        """Grouped point features and the normalized coordinates of their
        centroids under the hypothesis."""
        cfg = self.config
        pts = downsample(
            points, cfg.max_points, derive_rng(self.seed, STREAM_DOWNSAMPLE)
        )
        groups = knn_group(pts, fps(pts, cfg.n_groups), cfg.k_neighbors)
        features = encode_groups(groups, self.params.encoder)
        coords = align_coords(groups.centroids, T_hyp, self.intrinsics, cfg.margin)
        return features, coords

    def forward(self, sample: CalibrationSample) -> Se3Tangent:
        if sample.intrinsics != self.intrinsics:
            raise ShapeMismatch(
                "sample intrinsics do not match the network's; the patch "
                "embedder is sized for one camera geometry"
            )
        T = sample.T_init
        depth_image, _ = render_depth_map(sample.points, T, self.intrinsics)
        image_tokens = assemble_tokens(
            self.patch_features(depth_image),
            patch_grid_coords(self.intrinsics),
            self.config.harmonic,
        )
        features, coords = self.point_features(sample.points, T)
        point_tokens = assemble_tokens(features, coords, self.config.harmonic)
        out_rot, out_tsl = dual_branch(
            image_tokens,
            point_tokens,
            self.params.attn_rot,
            self.params.attn_tsl,
            shared=self.config.shared_attention,
        )
        return regress(
            out_rot.output, out_tsl.output, self.params.head, self.grid_shape
        )

    __call__ = forward
