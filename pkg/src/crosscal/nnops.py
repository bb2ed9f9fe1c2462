"""Shared numeric pieces for the small networks in this package: the SiLU
activation and seeded weight initialization."""

from __future__ import annotations

import numpy as np

# Epsilon added to normalization denominators throughout the package.
EPS_NORM = 1e-6


def sigmoid(x: np.ndarray) -> np.ndarray:
    # exp may overflow for very negative inputs; the quotient still
    # evaluates to the correct limit of 0
    with np.errstate(over="ignore"):
        return 1.0 / (1.0 + np.exp(-x))


def silu(x: np.ndarray) -> np.ndarray:
    """x * sigmoid(x)."""
    return x * sigmoid(x)


def silu_grad(x: np.ndarray) -> np.ndarray:
    """Derivative of SiLU at x."""
    s = sigmoid(x)
    return s * (1.0 + x * (1.0 - s))


def init_weight(rng: np.random.Generator, fan_in: int, fan_out: int) -> np.ndarray:
    """Gaussian (fan_in, fan_out) weight with 1/sqrt(fan_in) scale."""
    return rng.normal(0.0, 1.0 / np.sqrt(fan_in), size=(fan_in, fan_out))
