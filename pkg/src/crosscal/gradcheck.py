"""Finite-difference verification of the attention gradients.

Used both by the test suite and by the ``gradcheck`` CLI subcommand. The
check builds a small randomized cross-attention instance, flattens tokens
and parameters into one vector, and compares the analytic gradient of a
linear probe loss against central differences.
"""

import numpy as np

from .attention import (
    AttentionParams,
    cross_attend,
    cross_attend_grad,
    init_attention_params,
)

PARAM_FIELDS = (
    "w_q",
    "w_k",
    "w_v",
    "w_o",
    "ln_gain",
    "ln_bias",
    "rms_gain_q",
    "rms_gain_k",
)

#: default acceptance threshold on the max relative error
GRAD_TOL = 1e-4


def make_attention_instance(seed, n_q=5, n_kv=7, n_heads=2, d_head=3, d_in=6, d_out=5):
    """A small randomized attention problem: tokens, params, upstream."""
    rng = np.random.default_rng(seed)
    x = rng.normal(size=(n_q, d_in))
    y = rng.normal(size=(n_kv, d_in))
    params = init_attention_params(rng, d_in, d_out, n_heads, d_head)
    # move gains off their initialization so their gradients are exercised
    params = AttentionParams(
        w_q=params.w_q,
        w_k=params.w_k,
        w_v=params.w_v,
        w_o=params.w_o,
        ln_gain=rng.normal(1.0, 0.2, d_in),
        ln_bias=rng.normal(0.0, 0.2, d_in),
        rms_gain_q=rng.normal(1.0, 0.2, (n_heads, d_head)),
        rms_gain_k=rng.normal(1.0, 0.2, (n_heads, d_head)),
    )
    upstream = rng.normal(size=(n_q, d_out))
    return x, y, params, upstream


def pack_attention_vars(x, y, params):
    """Flatten tokens and parameters into one vector plus a rebuild recipe."""
    pieces = [x, y] + [getattr(params, f) for f in PARAM_FIELDS]
    shapes = [p.shape for p in pieces]
    vec = np.concatenate([p.ravel() for p in pieces])
    return vec, shapes


def unpack_attention_vars(vec, shapes):
    arrays = []
    offset = 0
    for shape in shapes:
        size = int(np.prod(shape))
        arrays.append(vec[offset : offset + size].reshape(shape))
        offset += size
    x, y = arrays[0], arrays[1]
    params = AttentionParams(**dict(zip(PARAM_FIELDS, arrays[2:])))
    return x, y, params


def attention_loss(vec, shapes, upstream):
    x, y, params = unpack_attention_vars(vec, shapes)
    return float((upstream * cross_attend(x, y, params).output).sum())


def attention_analytic_grad(x, y, params, upstream):
    dx, dy, grads = cross_attend_grad(x, y, params, upstream)
    pieces = [dx, dy] + [getattr(grads, f) for f in PARAM_FIELDS]
    return np.concatenate([p.ravel() for p in pieces])


def central_difference(f, vec, step=1e-5):
    grad = np.empty(vec.size)
    for i in range(vec.size):
        hi = vec.copy()
        lo = vec.copy()
        hi[i] += step
        lo[i] -= step
        grad[i] = (f(hi) - f(lo)) / (2.0 * step)
    return grad


def relative_error(a, b, floor=1e-6):
    scale = np.maximum(np.maximum(np.abs(a), np.abs(b)), floor)
    return np.abs(a - b) / scale


def attention_gradcheck_max_error(seed, corrupt=False, **instance_kwargs):
    """Max relative error between analytic and finite-difference gradients
    on one random instance.

    ``corrupt`` deliberately scales one analytic component as a negative
    control, proving the comparison can fail.
    """
    x, y, params, upstream = make_attention_instance(seed, **instance_kwargs)
    vec, shapes = pack_attention_vars(x, y, params)
    analytic = attention_analytic_grad(x, y, params, upstream)
    if corrupt:
        worst = int(np.argmax(np.abs(analytic)))
        analytic = analytic.copy()
        analytic[worst] *= 1.5
    numeric = central_difference(lambda v: attention_loss(v, shapes, upstream), vec)
    return float(relative_error(analytic, numeric).max())
