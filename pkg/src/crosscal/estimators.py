"""Scikit-learn style front doors to the calibration pipeline.

Thin estimator wrappers so the stages compose with sklearn tooling
(pipelines, cloning, parameter search): a transformer for the positional
embedding, a transformer for point grouping and encoding, and an estimator
running the full refinement loop. All heavy lifting stays in the functional
modules; these classes only hold parameters and fitted state.
"""

from __future__ import annotations

import numpy as np
from sklearn.base import BaseEstimator, TransformerMixin
from sklearn.utils.validation import check_is_fitted

from .embedding import HarmonicConfig, harmonic_embed
from .evaluation import (
    CalibrationSample,
    MetricsReport,
    contraction_oracle,
    evaluate,
    perfect_oracle,
    refine,
)
from .exceptions import EmptyInput, ShapeMismatch
from .grouping import (
    DEFAULT_ENCODER_DIMS,
    downsample,
    encode_groups,
    fps,
    init_encoder_params,
    knn_group,
)
from .pipeline import CalibrationNetwork, NetworkConfig
from .seeding import STREAM_DOWNSAMPLE, STREAM_WEIGHTS, derive_rng
from .validation import check_coords_2d, check_points


class HarmonicCoordinateEncoder(TransformerMixin, BaseEstimator):
    """Positional embedding of normalized 2-d coordinates as a transformer.

    ``transform`` maps (N, 2) coordinates to the (N, 2 * (n_harmonics + 1))
    harmonic embedding; with ``n_harmonics=0`` the output is the input.
    """

    def __init__(self, n_harmonics: int = 6, margin: float = 2.0):
        self.n_harmonics = n_harmonics
        self.margin = margin

    def fit(self, X, y=None):
        check_coords_2d(X, "X")
        self.config_ = HarmonicConfig(n_h=self.n_harmonics, r_p=self.margin)
        self.n_features_in_ = 2
        return self

    def transform(self, X):
        check_is_fitted(self)
        return harmonic_embed(check_coords_2d(X, "X"), self.config_)


class PointGroupFeaturizer(TransformerMixin, BaseEstimator):
    """Point-cloud grouping and encoding as a transformer.

    ``transform`` takes one cloud of shape (N, 3) and returns one encoded
    feature row per group, shape (n_groups, encoder_dims[-1]). The row count
    therefore differs from the input row count, as with any resampling
    transformer.
    """

    def __init__(
        self,
        n_groups: int = 64,
        k_neighbors: int = 8,
        max_points: int = 2048,
        encoder_dims: tuple = DEFAULT_ENCODER_DIMS,
        random_state: int = 0,
    ):
        self.n_groups = n_groups
        self.k_neighbors = k_neighbors
        self.max_points = max_points
        self.encoder_dims = encoder_dims
        self.random_state = random_state

    def fit(self, X, y=None):
        check_points(X, "X")
        self.encoder_params_ = init_encoder_params(
            derive_rng(self.random_state, STREAM_WEIGHTS), self.encoder_dims
        )
        self.n_features_in_ = 3
        return self

    def transform(self, X):
        check_is_fitted(self)
        pts = downsample(
            check_points(X, "X"),
            self.max_points,
            derive_rng(self.random_state, STREAM_DOWNSAMPLE),
        )
        groups = knn_group(pts, fps(pts, self.n_groups), self.k_neighbors)
        return encode_groups(groups, self.encoder_params_)


class ExtrinsicCalibrator(BaseEstimator):
    """Iterative extrinsic refinement with a pluggable predictor.

    ``predictor`` selects what produces the per-step update: "network" runs
    the assembled seeded model, "perfect" and "contraction" are the oracle
    predictors. ``predict`` maps a list of CalibrationSample to an
    (n, 4, 4) array of refined extrinsics; ``score`` is the fraction of
    samples inside the relaxed success band.
    """

    def __init__(
        self,
        predictor: str = "contraction",
        contraction: float = 0.5,
        steps: int = 3,
        config: NetworkConfig | None = None,
        random_state: int = 0,
    ):
        self.predictor = predictor
        self.contraction = contraction
        self.steps = steps
        self.config = config
        self.random_state = random_state

    def _check_samples(self, X):
        X = list(X)
        if not X:
            raise EmptyInput("need at least one sample")
        for s in X:
            if not isinstance(s, CalibrationSample):
                raise ShapeMismatch("X must contain CalibrationSample instances")
        return X

    def fit(self, X, y=None):
        X = self._check_samples(X)
        if self.predictor == "perfect":
            self.predictor_ = perfect_oracle
        elif self.predictor == "contraction":
            self.predictor_ = contraction_oracle(self.contraction)
        elif self.predictor == "network":
            config = self.config if self.config is not None else NetworkConfig.small()
            self.network_ = CalibrationNetwork(
                config, X[0].intrinsics, seed=self.random_state
            )
            self.predictor_ = self.network_
        else:
            raise ValueError(
                f"predictor must be 'network', 'perfect' or 'contraction', "
                f"got {self.predictor!r}"
            )
        return self

    def predict(self, X) -> np.ndarray:
        check_is_fitted(self)
        X = self._check_samples(X)
        return np.stack(
            [refine(s, self.predictor_, self.steps).transform.as_matrix() for s in X]
        )

    def evaluate(self, X) -> MetricsReport:
        check_is_fitted(self)
        return evaluate(self._check_samples(X), self.predictor_, self.steps)

    def score(self, X, y=None) -> float:
        """Relaxed-band success fraction in [0, 1]; higher is better."""
        return self.evaluate(X).l2_rate / 100.0
