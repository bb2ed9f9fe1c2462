"""Harmonic positional embedding of normalized plane coordinates and token
assembly.

The embedding uses an axis-asymmetric basis: the x axis gets a bank of
cosines, the y axis a bank of sines, each followed by the raw coordinate.
Frequencies are octaves of a base frequency chosen so the longest period
exactly spans the clipped coordinate range [-(1+r_p), 1+r_p]; the appended
raw coordinates keep opposite margin edges distinguishable where the cosine
alone would alias.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .exceptions import ParseError, ShapeMismatch
from .validation import as_float_array, check_coords_2d


@dataclass(frozen=True)
class HarmonicConfig:
    """Embedding shape: number of harmonic functions per axis and the margin
    ratio of the coordinate plane the basis must cover."""

    n_h: int = 6
    r_p: float = 2.0

    def __post_init__(self):
        if self.n_h < 0 or int(self.n_h) != self.n_h:
            raise ValueError(f"n_h must be a non-negative integer, got {self.n_h}")
        if self.r_p < 0:
            raise ValueError(f"margin ratio must be non-negative, got {self.r_p}")

    @property
    def omega0(self) -> float:
        """Base frequency, the reciprocal of the coordinate half-range."""
        return 1.0 / (1.0 + self.r_p)

    @property
    def width(self) -> int:
        """Output channels per coordinate pair: 2 (n_h + 1)."""
        return 2 * (self.n_h + 1)


@dataclass(frozen=True, eq=False)
class TokenSequence:
    """Per-row bundle of content features, plane coordinates, and the
    assembled feature+position embedding."""

    features: np.ndarray  # (N, D)
    coords: np.ndarray  # (N, 2)
    embedded: np.ndarray  # (N, D + 2 (n_h + 1))

    def __post_init__(self):
        n = self.features.shape[0]
        if self.coords.shape[0] != n or self.embedded.shape[0] != n:
            raise ShapeMismatch(
                f"row counts disagree: features {self.features.shape[0]}, "
                f"coords {self.coords.shape[0]}, embedded {self.embedded.shape[0]}"
            )

    def __len__(self) -> int:
        return self.features.shape[0]


def harmonic_embed(coords, cfg: HarmonicConfig) -> np.ndarray:
    """Embed (N, 2) normalized coordinates into 2 (n_h + 1) channels.

    Row layout: cosines of x at frequencies omega0 * 2^i * pi for
    i = 0 .. n_h - 1, then x itself, then sines of y at the same
    frequencies, then y. With n_h = 0 the output degenerates to the raw
    (x, y) pair.
    """
    c = check_coords_2d(np.asarray(coords), "coords")
    x = c[:, 0:1]
    y = c[:, 1:2]
    freqs = cfg.omega0 * np.exp2(np.arange(cfg.n_h)) * np.pi
    return np.concatenate([np.cos(x * freqs), x, np.sin(y * freqs), y], axis=1)


def assemble_tokens(features, coords, cfg: HarmonicConfig) -> TokenSequence:
    """Concatenate content features with the positional embedding, row-wise.

    Each output row is [feature channels ; embedding channels]; rows never
    mix.
    """
    f = as_float_array(features, "features")
    if f.ndim != 2:
        raise ShapeMismatch(f"features must be (N, D), got shape {f.shape}")
    c = check_coords_2d(np.asarray(coords), "coords")
    if f.shape[0] != c.shape[0]:
        raise ShapeMismatch(
            f"features rows {f.shape[0]} != coords rows {c.shape[0]}"
        )
    embedded = np.concatenate([f, harmonic_embed(c, cfg)], axis=1)
    return TokenSequence(f, c, embedded)


def format_matrix(arr: np.ndarray) -> str:
    """Debug text dump: one row per line, full precision."""
    a = np.atleast_2d(np.asarray(arr, dtype=np.float64))
    return "\n".join(" ".join(f"{v:.17g}" for v in row) for row in a) + "\n"


def save_matrix(arr: np.ndarray, path) -> None:
    with open(path, "w") as fh:
        fh.write(format_matrix(arr))


def parse_matrix(text: str) -> np.ndarray:
    """Inverse of :func:`format_matrix`: whitespace-separated rows, all the
    same width. Blank lines are ignored; anything else malformed raises
    ParseError with its line number."""
    rows = []
    width = None
    for lineno, raw in enumerate(text.splitlines(), start=1):
        line = raw.strip()
        if not line:
            continue
        parts = line.split()
        try:
            row = [float(p) for p in parts]
        except ValueError:
            raise ParseError(f"expected numbers, got {raw!r}", line=lineno) from None
        if width is None:
            width = len(row)
        elif len(row) != width:
            raise ParseError(
                f"expected {width} columns, got {len(row)}", line=lineno
            )
        rows.append(row)
    if not rows:
        raise ParseError("no rows found")
    return np.array(rows)


def load_matrix(path) -> np.ndarray:
    with open(path) as fh:
        return parse_matrix(fh.read())
