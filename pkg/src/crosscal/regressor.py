"""Aggregation head: turns the two attention branch outputs into a twist.

Each branch unflattens its token rows onto the patch grid, refines the map
with two shape-preserving residual convolution blocks (3x3 kernels, channel
plan narrowing 384 -> 192 -> 96 at full scale), pools spatially, and feeds
a small MLP that emits a 3-vector: rotation from one branch, translation
from the other. The two branches share no parameters.

Backward helpers propagate gradients to the branch inputs only, which is
what the end-to-end gradient check through the attention block needs;
training the head is out of scope.
"""

from __future__ import annotations

from dataclasses import dataclass
from functools import partial

import numpy as np

from .attention import load_checkpoint, save_checkpoint
from .exceptions import ShapeMismatch
from .geometry import Se3Tangent
from .nnops import EPS_NORM, init_weight, silu, silu_grad
from .seeding import as_rng
from .validation import as_float_array

# the contractions below are big enough that einsum's default
# left-to-right loop evaluation, not BLAS, becomes the bottleneck
einsum = partial(np.einsum, optimize=True)

DEFAULT_CHANNEL_PLAN = (384, 192, 96)
DEFAULT_MLP_HIDDEN = 128


# ---------------------------------------------------------------------------
# Parameter containers
# ---------------------------------------------------------------------------


@dataclass(frozen=True, eq=False)
class ResidualBlockParams:
    """conv3x3 -> norm -> SiLU -> conv3x3 -> norm, plus skip, then SiLU.

    The skip is the identity when input and output channels agree and a
    learned 1x1 projection otherwise.
    """

    w1: np.ndarray  # (c_out, c_in, 3, 3)
    b1: np.ndarray  # (c_out,)
    g1: np.ndarray  # (c_out,) norm gain
    be1: np.ndarray  # (c_out,) norm bias
    w2: np.ndarray  # (c_out, c_out, 3, 3)
    b2: np.ndarray
    g2: np.ndarray
    be2: np.ndarray
    proj_w: np.ndarray | None = None  # (c_out, c_in)
    proj_b: np.ndarray | None = None  # (c_out,)

    def __post_init__(self):
        if self.w1.ndim != 4 or self.w1.shape[2:] != (3, 3):
            raise ShapeMismatch(f"w1 must be (c_out, c_in, 3, 3), got {self.w1.shape}")
        c_out, c_in = self.w1.shape[:2]
        if self.w2.shape != (c_out, c_out, 3, 3):
            raise ShapeMismatch(f"w2 must be ({c_out}, {c_out}, 3, 3), got {self.w2.shape}")
        for name in ("b1", "g1", "be1", "b2", "g2", "be2"):
            if getattr(self, name).shape != (c_out,):
                raise ShapeMismatch(f"{name} must be ({c_out},)")
        if c_in != c_out:
            if self.proj_w is None or self.proj_w.shape != (c_out, c_in):
                raise ShapeMismatch(
                    f"channel change {c_in}->{c_out} needs a ({c_out}, {c_in}) projection"
                )
            if self.proj_b is not None and self.proj_b.shape != (c_out,):
                raise ShapeMismatch(f"proj_b must be ({c_out},)")

    @property
    def c_in(self) -> int:
        return self.w1.shape[1]

    @property
    def c_out(self) -> int:
        return self.w1.shape[0]


@dataclass(frozen=True, eq=False)
class MlpParams:
    """One hidden layer with SiLU, linear 3-channel output."""

    w1: np.ndarray  # (c_in, hidden)
    b1: np.ndarray
    w2: np.ndarray  # (hidden, 3)
    b2: np.ndarray

    def __post_init__(self):
        if self.w1.ndim != 2 or self.b1.shape != (self.w1.shape[1],):
            raise ShapeMismatch("mlp first layer shapes disagree")
        if self.w2.shape != (self.w1.shape[1], 3) or self.b2.shape != (3,):
            raise ShapeMismatch("mlp must end in exactly 3 outputs")


@dataclass(frozen=True, eq=False)
class BranchParams:
    block1: ResidualBlockParams
    block2: ResidualBlockParams
    mlp: MlpParams

    def __post_init__(self):
        if self.block2.c_in != self.block1.c_out:
            raise ShapeMismatch(
                f"block2 expects {self.block2.c_in} channels, block1 emits "
                f"{self.block1.c_out}"
            )
        if self.mlp.w1.shape[0] != self.block2.c_out:
            raise ShapeMismatch(
                f"mlp expects {self.mlp.w1.shape[0]} channels, block2 emits "
                f"{self.block2.c_out}"
            )

    @property
    def d_in(self) -> int:
        return self.block1.c_in


@dataclass(frozen=True, eq=False)
class HeadParams:
    """The two independent regression branches."""

    rot: BranchParams
    tsl: BranchParams


def init_residual_block(seed, c_in: int, c_out: int) -> ResidualBlockParams:
    rng = as_rng(seed)
    scale1 = 1.0 / np.sqrt(9 * c_in)
    scale2 = 1.0 / np.sqrt(9 * c_out)
    proj_w = None
    proj_b = None
    if c_in != c_out:
        proj_w = rng.normal(0.0, 1.0 / np.sqrt(c_in), (c_out, c_in))
        proj_b = np.zeros(c_out)
    return ResidualBlockParams(
        w1=rng.normal(0.0, scale1, (c_out, c_in, 3, 3)),
        b1=np.zeros(c_out),
        g1=np.ones(c_out),
        be1=np.zeros(c_out),
        w2=rng.normal(0.0, scale2, (c_out, c_out, 3, 3)),
        b2=np.zeros(c_out),
        g2=np.ones(c_out),
        be2=np.zeros(c_out),
        proj_w=proj_w,
        proj_b=proj_b,
    )


def init_branch_params(
    seed, channel_plan=DEFAULT_CHANNEL_PLAN, hidden: int = DEFAULT_MLP_HIDDEN
) -> BranchParams:
    rng = as_rng(seed)
    d_in, mid, out_ch = channel_plan
    block1 = init_residual_block(rng, d_in, mid)
    block2 = init_residual_block(rng, mid, out_ch)
    mlp = MlpParams(
        w1=init_weight(rng, out_ch, hidden),
        b1=np.zeros(hidden),
        w2=init_weight(rng, hidden, 3),
        b2=np.zeros(3),
    )
    return BranchParams(block1, block2, mlp)


def init_head_params(
    seed, channel_plan=DEFAULT_CHANNEL_PLAN, hidden: int = DEFAULT_MLP_HIDDEN
) -> HeadParams:
    rng = as_rng(seed)
    return HeadParams(
        rot=init_branch_params(rng, channel_plan, hidden),
        tsl=init_branch_params(rng, channel_plan, hidden),
    )


# ---------------------------------------------------------------------------
# Primitive layers
# ---------------------------------------------------------------------------


def conv3x3(x: np.ndarray, w: np.ndarray, b: np.ndarray) -> np.ndarray:
    """Shape-preserving 3x3 convolution (stride 1, zero padding 1) over a
    (C_in, H, W) map."""
    c_in, hh, ww = x.shape
    xp = np.pad(x, ((0, 0), (1, 1), (1, 1)))
    patches = np.empty((c_in, 3, 3, hh, ww))
    for di in range(3):
        for dj in range(3):
            patches[:, di, dj] = xp[:, di : di + hh, dj : dj + ww]
    return einsum("ocij,cijhw->ohw", w, patches) + b[:, None, None]


def _conv3x3_input_grad(dout: np.ndarray, w: np.ndarray) -> np.ndarray:
    c_out, hh, ww = dout.shape
    c_in = w.shape[1]
    dxp = np.zeros((c_in, hh + 2, ww + 2))
    for di in range(3):
        for dj in range(3):
            dxp[:, di : di + hh, dj : dj + ww] += einsum("ohw,oc->chw", dout, w[:, :, di, dj]
            )
    return dxp[:, 1 : hh + 1, 1 : ww + 1]


def _instance_norm_forward(x, gain, bias):
    # per-channel statistics over the spatial axes; single-sample, batch-free
    mu = x.mean(axis=(1, 2), keepdims=True)
    xc = x - mu
    s = np.sqrt((xc**2).mean(axis=(1, 2), keepdims=True))
    denom = s + EPS_NORM
    xhat = xc / denom
    return xhat * gain[:, None, None] + bias[:, None, None], (xc, s, denom)


def _instance_norm_input_grad(dout, gain, cache):
    xc, s, denom = cache
    n = xc.shape[1] * xc.shape[2]
    dxhat = dout * gain[:, None, None]
    dxc = dxhat / denom
    coef = -(dxhat * xc).sum(axis=(1, 2), keepdims=True) / denom**2
    with np.errstate(invalid="ignore", divide="ignore"):
        ds = np.where(s > 0, xc / (n * s), 0.0)
    dxc = dxc + coef * ds
    return dxc - dxc.mean(axis=(1, 2), keepdims=True)


def _block_forward(x, p: ResidualBlockParams):
    h1 = conv3x3(x, p.w1, p.b1)
    n1, c1 = _instance_norm_forward(h1, p.g1, p.be1)
    a1 = silu(n1)
    h2 = conv3x3(a1, p.w2, p.b2)
    n2, c2 = _instance_norm_forward(h2, p.g2, p.be2)
    if p.proj_w is None:
        skip = x
    else:
        skip = einsum("oc,chw->ohw", p.proj_w, x)
        if p.proj_b is not None:
            skip = skip + p.proj_b[:, None, None]
    z = n2 + skip
    return silu(z), (n1, c1, c2, z)


def _block_input_grad(dout, p: ResidualBlockParams, cache):
    n1, c1, c2, z = cache
    dz = dout * silu_grad(z)
    dh2 = _instance_norm_input_grad(dz, p.g2, c2)
    da1 = _conv3x3_input_grad(dh2, p.w2)
    dn1 = da1 * silu_grad(n1)
    dh1 = _instance_norm_input_grad(dn1, p.g1, c1)
    dx = _conv3x3_input_grad(dh1, p.w1)
    if p.proj_w is None:
        dx = dx + dz
    else:
        dx = dx + einsum("ohw,oc->chw", dz, p.proj_w)
    return dx


def residual_block(x: np.ndarray, params: ResidualBlockParams) -> np.ndarray:
    """Apply one residual block to a (C_in, H, W) feature map."""
    x = as_float_array(x, "x")
    if x.ndim != 3 or x.shape[0] != params.c_in:
        raise ShapeMismatch(
            f"expected ({params.c_in}, H, W) input, got shape {x.shape}"
        )
    out, _ = _block_forward(x, params)
    return out


# ---------------------------------------------------------------------------
# Grid reshaping
# ---------------------------------------------------------------------------


def unflatten(tokens: np.ndarray, grid_shape) -> np.ndarray:
    """Rows of an (N_H N_W, D) token matrix onto a (D, N_H, N_W) map.

    Inverse of the row-major patch-grid ordering: grid cell (i, j) takes
    token row i N_W + j.
    """
    t = as_float_array(tokens, "tokens")
    n_h, n_w = grid_shape
    if t.ndim != 2 or t.shape[0] != n_h * n_w:
        raise ShapeMismatch(
            f"expected {n_h * n_w} token rows for a {n_h}x{n_w} grid, got {t.shape}"
        )
    return t.T.reshape(t.shape[1], n_h, n_w)


def flatten_grid(fmap: np.ndarray) -> np.ndarray:
    """Inverse of :func:`unflatten`."""
    f = as_float_array(fmap, "fmap")
    if f.ndim != 3:
        raise ShapeMismatch(f"expected (D, N_H, N_W), got shape {f.shape}")
    return f.reshape(f.shape[0], -1).T


# ---------------------------------------------------------------------------
# Regression
# ---------------------------------------------------------------------------


def _branch_forward(tokens, p: BranchParams, grid_shape):
    f0 = unflatten(tokens, grid_shape)
    if f0.shape[0] != p.d_in:
        raise ShapeMismatch(f"branch expects {p.d_in} channels, got {f0.shape[0]}")
    f1, cache1 = _block_forward(f0, p.block1)
    f2, cache2 = _block_forward(f1, p.block2)
    pooled = f2.mean(axis=(1, 2))
    pre = pooled @ p.mlp.w1 + p.mlp.b1
    hidden = silu(pre)
    out = hidden @ p.mlp.w2 + p.mlp.b2
    return out, (cache1, cache2, f2.shape, pre)


def _branch_input_grad(dout, p: BranchParams, grid_shape, cache):
    cache1, cache2, f2_shape, pre = cache
    dhidden = dout @ p.mlp.w2.T
    dpre = dhidden * silu_grad(pre)
    dpooled = dpre @ p.mlp.w1.T
    n_cells = f2_shape[1] * f2_shape[2]
    df2 = np.broadcast_to(
        dpooled[:, None, None] / n_cells, f2_shape
    ).copy()
    df1 = _block_input_grad(df2, p.block2, cache2)
    df0 = _block_input_grad(df1, p.block1, cache1)
    return flatten_grid(df0)


def regress(o_rot, o_tsl, params: HeadParams, grid_shape) -> Se3Tangent:
    """Map the two branch token matrices to a twist.

    Each branch: unflatten onto the grid, two residual blocks, global
    average pool, MLP to a 3-vector. The rotation branch never sees the
    translation tokens or parameters, and vice versa.
    """
    xi_rot, _ = _branch_forward(as_float_array(o_rot, "o_rot"), params.rot, grid_shape)
    xi_tsl, _ = _branch_forward(as_float_array(o_tsl, "o_tsl"), params.tsl, grid_shape)
    return Se3Tangent(xi_rot, xi_tsl)


def regress_input_grad(o_rot, o_tsl, params: HeadParams, grid_shape, upstream):
    """Twist plus gradients of ``sum(upstream * xi)`` w.r.t. both inputs.

    ``upstream`` is a 6-vector: rotation components first.
    """
    up = as_float_array(upstream, "upstream")
    if up.shape != (6,):
        raise ShapeMismatch(f"upstream must be a 6-vector, got shape {up.shape}")
    o_rot = as_float_array(o_rot, "o_rot")
    o_tsl = as_float_array(o_tsl, "o_tsl")
    xi_rot, cache_r = _branch_forward(o_rot, params.rot, grid_shape)
    xi_tsl, cache_t = _branch_forward(o_tsl, params.tsl, grid_shape)
    d_rot = _branch_input_grad(up[:3], params.rot, grid_shape, cache_r)
    d_tsl = _branch_input_grad(up[3:], params.tsl, grid_shape, cache_t)
    return Se3Tangent(xi_rot, xi_tsl), d_rot, d_tsl


# ---------------------------------------------------------------------------
# Checkpointing (same on-disk format as the attention block)
# ---------------------------------------------------------------------------

_BLOCK_FIELDS = ("w1", "b1", "g1", "be1", "w2", "b2", "g2", "be2", "proj_w", "proj_b")
_MLP_FIELDS = ("w1", "b1", "w2", "b2")


def head_params_to_dict(params: HeadParams) -> dict:
    out = {}
    for branch_name in ("rot", "tsl"):
        branch = getattr(params, branch_name)
        for block_name in ("block1", "block2"):
            block = getattr(branch, block_name)
            for f in _BLOCK_FIELDS:
                val = getattr(block, f)
                if val is not None:
                    out[f"{branch_name}.{block_name}.{f}"] = val
        for f in _MLP_FIELDS:
            out[f"{branch_name}.mlp.{f}"] = getattr(branch.mlp, f)
    return out


def head_params_from_dict(arrays: dict) -> HeadParams:
    def block(prefix):
        kwargs = {}
        for f in _BLOCK_FIELDS:
            key = f"{prefix}.{f}"
            if key in arrays:
                kwargs[f] = np.asarray(arrays[key], dtype=np.float64)
        return ResidualBlockParams(**kwargs)

    def branch(prefix):
        mlp = MlpParams(
            **{f: np.asarray(arrays[f"{prefix}.mlp.{f}"], dtype=np.float64) for f in _MLP_FIELDS}
        )
        return BranchParams(block(f"{prefix}.block1"), block(f"{prefix}.block2"), mlp)

    return HeadParams(rot=branch("rot"), tsl=branch("tsl"))


def save_head_params(params: HeadParams, path) -> None:
    save_checkpoint(head_params_to_dict(params), path)


def load_head_params(path) -> HeadParams:
    return head_params_from_dict(load_checkpoint(path))
