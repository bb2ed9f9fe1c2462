"""Scale-free multi-head cross-attention with analytic gradients.

The block attends image-side tokens (queries) over point-side tokens (keys
and values). Its two departures from stock attention:

* no 1/sqrt(d) logit scaling; instead the query and key projections are
  RMS-normalized per head, which bounds the logit magnitude by the learned
  gains alone;
* LayerNorm is applied to the query side only, before projection.

Keys and values both come from the point side, so the block is invariant to
any permutation of the point tokens and equivariant to permutations of the
query tokens.

Every forward intermediate is cached so :func:`cross_attend_grad` can run
exact reverse-mode differentiation of the whole composition; the gradients
are verified against central finite differences in the test suite.
"""

from __future__ import annotations

from dataclasses import dataclass
from functools import partial
from pathlib import Path

import numpy as np

from .exceptions import ParseError, ShapeMismatch
from .nnops import EPS_NORM
from .seeding import as_rng
from .validation import as_float_array

# the contractions below are big enough that einsum's default
# left-to-right loop evaluation, not BLAS, becomes the bottleneck
einsum = partial(np.einsum, optimize=True)


def _embedded(tokens) -> np.ndarray:
    """Accept a TokenSequence or a bare (N, D) array."""
    return as_float_array(getattr(tokens, "embedded", tokens), "tokens")


@dataclass(frozen=True, eq=False)
class AttentionParams:
    """Weights of one cross-attention block.

    Per-head projections are stacked on a leading head axis; ``w_o`` mixes
    the concatenated head outputs back to ``d_out`` channels.
    """

    w_q: np.ndarray  # (h, d_in, d_h)
    w_k: np.ndarray  # (h, d_in, d_h)
    w_v: np.ndarray  # (h, d_in, d_h)
    w_o: np.ndarray  # (h * d_h, d_out)
    ln_gain: np.ndarray  # (d_in,)
    ln_bias: np.ndarray  # (d_in,)
    rms_gain_q: np.ndarray  # (h, d_h)
    rms_gain_k: np.ndarray  # (h, d_h)

    def __post_init__(self):
        if self.w_q.ndim != 3:
            raise ShapeMismatch(f"w_q must be (h, d_in, d_h), got {self.w_q.shape}")
        h, d_in, d_h = self.w_q.shape
        for name in ("w_k", "w_v"):
            if getattr(self, name).shape != (h, d_in, d_h):
                raise ShapeMismatch(
                    f"{name} shape {getattr(self, name).shape} != {(h, d_in, d_h)}"
                )
        if self.w_o.ndim != 2 or self.w_o.shape[0] != h * d_h:
            raise ShapeMismatch(
                f"w_o must have {h * d_h} rows for {h} heads of width {d_h}, "
                f"got {self.w_o.shape}"
            )
        for name in ("ln_gain", "ln_bias"):
            if getattr(self, name).shape != (d_in,):
                raise ShapeMismatch(f"{name} must be ({d_in},)")
        for name in ("rms_gain_q", "rms_gain_k"):
            if getattr(self, name).shape != (h, d_h):
                raise ShapeMismatch(f"{name} must be ({h}, {d_h})")

    @property
    def n_heads(self) -> int:
        return self.w_q.shape[0]

    @property
    def d_in(self) -> int:
        return self.w_q.shape[1]

    @property
    def d_head(self) -> int:
        return self.w_q.shape[2]

    @property
    def d_out(self) -> int:
        return self.w_o.shape[1]

    def to_dict(self) -> dict:
        return {
            "w_q": self.w_q,
            "w_k": self.w_k,
            "w_v": self.w_v,
            "w_o": self.w_o,
            "ln_gain": self.ln_gain,
            "ln_bias": self.ln_bias,
            "rms_gain_q": self.rms_gain_q,
            "rms_gain_k": self.rms_gain_k,
        }

    @classmethod
    def from_dict(cls, arrays: dict) -> "AttentionParams":
        return cls(**{k: np.asarray(arrays[k], dtype=np.float64) for k in cls.__dataclass_fields__})


@dataclass(frozen=True, eq=False)
class AttentionOutput:
    """Forward result: mixed output rows plus the attention maps kept for
    inspection."""

    output: np.ndarray  # (n_q, d_out)
    attn_weights: np.ndarray  # (h, n_q, n_kv)

    def __post_init__(self):
        sums = self.attn_weights.sum(axis=-1)
        if self.attn_weights.size and np.abs(sums - 1.0).max() > 1e-6:
            raise ValueError("attention rows must sum to 1")


@dataclass(frozen=True, eq=False)
class AttentionGrads:
    """Gradients with the same shapes as :class:`AttentionParams`."""

    w_q: np.ndarray
    w_k: np.ndarray
    w_v: np.ndarray
    w_o: np.ndarray
    ln_gain: np.ndarray
    ln_bias: np.ndarray
    rms_gain_q: np.ndarray
    rms_gain_k: np.ndarray

    def to_dict(self) -> dict:
        return {k: getattr(self, k) for k in self.__dataclass_fields__}


def init_attention_params(
    seed, d_in: int, d_out: int = 384, n_heads: int = 6, d_head: int = 64
) -> AttentionParams:
    """Seeded Gaussian init (std 1/sqrt(fan_in)); norm gains start at 1."""
    rng = as_rng(seed)
    scale = 1.0 / np.sqrt(d_in)
    shape = (n_heads, d_in, d_head)
    return AttentionParams(
        w_q=rng.normal(0.0, scale, shape),
        w_k=rng.normal(0.0, scale, shape),
        w_v=rng.normal(0.0, scale, shape),
        w_o=rng.normal(0.0, 1.0 / np.sqrt(n_heads * d_head), (n_heads * d_head, d_out)),
        ln_gain=np.ones(d_in),
        ln_bias=np.zeros(d_in),
        rms_gain_q=np.ones((n_heads, d_head)),
        rms_gain_k=np.ones((n_heads, d_head)),
    )


# ---------------------------------------------------------------------------
# Normalization layers
# ---------------------------------------------------------------------------


def layer_norm(x: np.ndarray, gain: np.ndarray, bias: np.ndarray) -> np.ndarray:
    """Row-wise (x - mean) / (std + eps) * gain + bias."""
    out, _ = _layer_norm_forward(as_float_array(x, "x"), gain, bias)
    return out


def rms_norm(x: np.ndarray, gain: np.ndarray) -> np.ndarray:
    """Row-wise x / (rms + eps) * gain."""
    out, _ = _rms_norm_forward(as_float_array(x, "x"), gain)
    return out


def _layer_norm_forward(x, gain, bias):
    mu = x.mean(axis=-1, keepdims=True)
    xc = x - mu
    s = np.sqrt((xc**2).mean(axis=-1, keepdims=True))
    denom = s + EPS_NORM
    xhat = xc / denom
    return xhat * gain + bias, (xc, s, denom, xhat)


def _layer_norm_backward(dout, gain, cache):
    xc, s, denom, xhat = cache
    d = xc.shape[-1]
    dgain = (dout * xhat).sum(axis=tuple(range(dout.ndim - 1)))
    dbias = dout.sum(axis=tuple(range(dout.ndim - 1)))
    dxhat = dout * gain
    dxc = dxhat / denom
    coef = -(dxhat * xc).sum(axis=-1, keepdims=True) / denom**2
    with np.errstate(invalid="ignore", divide="ignore"):
        ds = np.where(s > 0, xc / (d * s), 0.0)  # constant rows have no std path
    dxc = dxc + coef * ds
    dx = dxc - dxc.mean(axis=-1, keepdims=True)
    return dx, dgain, dbias


def _rms_norm_forward(x, gain):
    r = np.sqrt((x**2).mean(axis=-1, keepdims=True))
    denom = r + EPS_NORM
    u = x / denom
    return u * gain, (x, r, denom, u)


def _rms_norm_backward(dout, gain, cache, gain_sum_axes=(0,)):
    # gain_sum_axes: the axes the gain was broadcast over, reduced away to
    # recover the gain's own shape in its gradient
    x, r, denom, u = cache
    d = x.shape[-1]
    dgain = (dout * u).sum(axis=gain_sum_axes)
    du = dout * gain
    dx = du / denom
    coef = -(du * x).sum(axis=-1, keepdims=True) / denom**2
    with np.errstate(invalid="ignore", divide="ignore"):
        dr = np.where(r > 0, x / (d * r), 0.0)
    return dx + coef * dr, dgain


def _softmax(logits):
    z = logits - logits.max(axis=-1, keepdims=True)
    e = np.exp(z)
    return e / e.sum(axis=-1, keepdims=True)


# ---------------------------------------------------------------------------
# Forward / backward
# ---------------------------------------------------------------------------


def _forward(x, y, p: AttentionParams):
    n_q = x.shape[0]
    h, _, d_h = p.w_q.shape
    xn, ln_cache = _layer_norm_forward(x, p.ln_gain, p.ln_bias)
    preq = einsum("nd,hde->hne", xn, p.w_q)
    prek = einsum("nd,hde->hne", y, p.w_k)
    v = einsum("nd,hde->hne", y, p.w_v)
    q, q_cache = _rms_norm_forward(preq, p.rms_gain_q[:, None, :])
    k, k_cache = _rms_norm_forward(prek, p.rms_gain_k[:, None, :])
    logits = einsum("hqe,hke->hqk", q, k)
    attn = _softmax(logits)
    heads = einsum("hqk,hke->hqe", attn, v)
    concat = heads.transpose(1, 0, 2).reshape(n_q, h * d_h)
    output = concat @ p.w_o
    cache = {
        "x": x,
        "y": y,
        "xn": xn,
        "ln_cache": ln_cache,
        "q": q,
        "k": k,
        "v": v,
        "q_cache": q_cache,
        "k_cache": k_cache,
        "logits": logits,
        "attn": attn,
        "concat": concat,
    }
    return output, attn, cache


def _check_inputs(x, y, p: AttentionParams):
    if x.ndim != 2 or y.ndim != 2:
        raise ShapeMismatch("token arrays must be 2-d")
    if x.shape[1] != p.d_in or y.shape[1] != p.d_in:
        raise ShapeMismatch(
            f"token width mismatch: X has {x.shape[1]}, Y has {y.shape[1]}, "
            f"params expect {p.d_in}"
        )


def cross_attend(X, Y, params: AttentionParams) -> AttentionOutput:
    """Attend query tokens X over key/value tokens Y.

    Per head: Q = RMSNorm(LayerNorm(X) W_q), K = RMSNorm(Y W_k), V = Y W_v,
    weights = softmax(Q K^T) with no logit scaling, head output = weights V.
    Heads are concatenated and mixed by W_o. The output has one row per
    query token.
    """
    x = _embedded(X)
    y = _embedded(Y)
    _check_inputs(x, y, params)
    output, attn, _ = _forward(x, y, params)
    return AttentionOutput(output, attn)


def cross_attend_grad(X, Y, params: AttentionParams, upstream: np.ndarray):
    """Reverse-mode gradients of :func:`cross_attend`.

    ``upstream`` is the gradient of some scalar loss with respect to the
    block output. Returns ``(d_x, d_y, grads)`` where d_x / d_y are the
    gradients with respect to the embedded token arrays and ``grads``
    mirrors the parameter shapes.
    """
    x = _embedded(X)
    y = _embedded(Y)
    _check_inputs(x, y, params)
    up = as_float_array(upstream, "upstream")
    n_q = x.shape[0]
    h, d_in, d_h = params.w_q.shape
    if up.shape != (n_q, params.d_out):
        raise ShapeMismatch(
            f"upstream must be ({n_q}, {params.d_out}), got {up.shape}"
        )
    _, _, c = _forward(x, y, params)

    d_wo = c["concat"].T @ up
    dconcat = up @ params.w_o.T
    dheads = dconcat.reshape(n_q, h, d_h).transpose(1, 0, 2)

    dattn = einsum("hqe,hke->hqk", dheads, c["v"])
    d_v = einsum("hqk,hqe->hke", c["attn"], dheads)

    inner = (c["attn"] * dattn).sum(axis=-1, keepdims=True)
    dlogits = c["attn"] * (dattn - inner)

    dq = einsum("hqk,hke->hqe", dlogits, c["k"])
    dk = einsum("hqk,hqe->hke", dlogits, c["q"])

    dpreq, dgain_q = _rms_norm_backward(
        dq, params.rms_gain_q[:, None, :], c["q_cache"], gain_sum_axes=(1,)
    )
    dprek, dgain_k = _rms_norm_backward(
        dk, params.rms_gain_k[:, None, :], c["k_cache"], gain_sum_axes=(1,)
    )

    d_wq = einsum("nd,hne->hde", c["xn"], dpreq)
    dxn = einsum("hne,hde->nd", dpreq, params.w_q)
    d_wk = einsum("nd,hne->hde", y, dprek)
    d_y = einsum("hne,hde->nd", dprek, params.w_k)
    d_wv = einsum("nd,hne->hde", y, d_v)
    d_y = d_y + einsum("hne,hde->nd", d_v, params.w_v)

    d_x, dln_gain, dln_bias = _layer_norm_backward(dxn, params.ln_gain, c["ln_cache"])

    grads = AttentionGrads(
        w_q=d_wq,
        w_k=d_wk,
        w_v=d_wv,
        w_o=d_wo,
        ln_gain=dln_gain,
        ln_bias=dln_bias,
        rms_gain_q=dgain_q,
        rms_gain_k=dgain_k,
    )
    return d_x, d_y, grads


def dual_branch(
    X, Y, params_rot: AttentionParams, params_tsl: AttentionParams, shared: bool = False
):
    """Run the rotation and translation attention branches.

    With ``shared=True`` (the single-branch ablation) the rotation branch's
    output is routed to both heads; otherwise the two branches are fully
    independent applications with their own parameters.
    """
    out_rot = cross_attend(X, Y, params_rot)
    if shared:
        return out_rot, out_rot
    return out_rot, cross_attend(X, Y, params_tsl)


# ---------------------------------------------------------------------------
# Checkpoint format: flat little-endian float64 binary plus a `.manifest`
# text file listing `name dim0 dim1 ...` per tensor, in file order.
# ---------------------------------------------------------------------------


def _manifest_path(path) -> Path:
    return Path(str(path) + ".manifest")


def save_checkpoint(arrays: dict, path) -> None:
    """Write named float64 arrays as one flat binary with a manifest."""
    path = Path(path)
    with open(path, "wb") as fh:
        for name, arr in arrays.items():
            fh.write(np.ascontiguousarray(arr, dtype="<f8").tobytes())
    lines = []
    for name, arr in arrays.items():
        dims = " ".join(str(d) for d in np.shape(arr))
        lines.append(f"{name} {dims}".rstrip())
    _manifest_path(path).write_text("\n".join(lines) + "\n")


def load_checkpoint(path) -> dict:
    """Bit-exact reload of :func:`save_checkpoint` output."""
    path = Path(path)
    manifest = _manifest_path(path)
    entries = []
    for lineno, line in enumerate(manifest.read_text().splitlines(), start=1):
        if not line.strip():
            continue
        tokens = line.split()
        try:
            shape = tuple(int(t) for t in tokens[1:])
        except ValueError:
            raise ParseError(f"bad shape in {line!r}", line=lineno) from None
        entries.append((tokens[0], shape))
    flat = np.fromfile(path, dtype="<f8")
    total = sum(int(np.prod(shape)) for _, shape in entries)
    if flat.size != total:
        raise ParseError(
            f"checkpoint holds {flat.size} values but manifest expects {total}"
        )
    out = {}
    offset = 0
    for name, shape in entries:
        size = int(np.prod(shape))
        out[name] = flat[offset : offset + size].reshape(shape).copy()
        offset += size
    return out


def save_attention_params(params: AttentionParams, path) -> None:
    save_checkpoint(params.to_dict(), path)


def load_attention_params(path) -> AttentionParams:
    return AttentionParams.from_dict(load_checkpoint(path))
