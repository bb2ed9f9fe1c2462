"""Evaluation harness: calibration samples, error metrics, iterative
refinement, synthetic scenes, and oracle predictors.

A predictor is any callable mapping a CalibrationSample to an Se3Tangent
update; refinement left-multiplies the exponential of that update onto the
current hypothesis for a fixed number of steps. Metrics compare the final
hypothesis against the ground-truth extrinsics.
"""

from __future__ import annotations

import csv
import json
from dataclasses import dataclass, replace

import numpy as np

from .exceptions import AngleNearPi, EmptyInput, GimbalLock, ShapeMismatch
from .geometry import (
    PerturbRange,
    RigidTransform,
    Se3Tangent,
    compose,
    euler_zyx,
    exp_se3,
    invert,
    log_se3,
    sample_perturbation,
)
from .projection import Intrinsics
from .seeding import STREAM_PERTURB, STREAM_SCENE, derive_rng
from .validation import check_points

# success thresholds: rotation RMSE in degrees, translation RMSE in cm
L1_ROT_DEG = 1.0
L1_TSL_CM = 2.5
L2_ROT_DEG = 2.0
L2_TSL_CM = 5.0


@dataclass(frozen=True)
class CalibrationSample:
    """One calibration problem: a point cloud in the range-sensor frame, the
    camera intrinsics, the true extrinsics, and the starting hypothesis."""

    points: np.ndarray
    intrinsics: Intrinsics
    T_gt: RigidTransform
    T_init: RigidTransform

    def __post_init__(self):
        object.__setattr__(self, "points", check_points(self.points, "points"))
        for name in ("T_gt", "T_init"):
            if not isinstance(getattr(self, name), RigidTransform):
                raise ShapeMismatch(f"{name} must be a RigidTransform")
        if not isinstance(self.intrinsics, Intrinsics):
            raise ShapeMismatch("intrinsics must be an Intrinsics instance")

    def with_init(self, T: RigidTransform) -> "CalibrationSample":
        """The same problem restarted from hypothesis ``T``."""
        return replace(self, T_init=T)


@dataclass(frozen=True)
class SampleMetrics:
    """Per-sample calibration errors and threshold verdicts."""

    rot_rmse: float
    rot_mae: float
    tsl_rmse: float
    tsl_mae: float
    l1_pass: bool
    l2_pass: bool


def error_transform(T_pred: RigidTransform, T_gt: RigidTransform) -> RigidTransform:
    """Residual transform ``T_pred ∘ inverse(T_gt)``; identity iff exact."""
    return compose(T_pred, invert(T_gt))


def sample_metrics(T_pred: RigidTransform, T_gt: RigidTransform) -> SampleMetrics:
    """Errors of a prediction against ground truth.

    Rotation errors are the three aviation-convention angles of the residual
    transform in degrees, averaged as RMSE and MAE over the 3 components;
    translation errors are the residual translation components in cm.
    Raises GimbalLock when the residual rotation has pitch at +-90 degrees.
    """
    err = error_transform(T_pred, T_gt)
    ang_deg = np.degrees(euler_zyx(err))
    tsl_cm = 100.0 * err.translation
    rot_rmse = float(np.sqrt(np.mean(ang_deg**2)))
    rot_mae = float(np.mean(np.abs(ang_deg)))
    tsl_rmse = float(np.sqrt(np.mean(tsl_cm**2)))
    tsl_mae = float(np.mean(np.abs(tsl_cm)))
    return SampleMetrics(
        rot_rmse=rot_rmse,
        rot_mae=rot_mae,
        tsl_rmse=tsl_rmse,
        tsl_mae=tsl_mae,
        l1_pass=bool(rot_rmse < L1_ROT_DEG and tsl_rmse < L1_TSL_CM),
        l2_pass=bool(rot_rmse < L2_ROT_DEG and tsl_rmse < L2_TSL_CM),
    )


@dataclass(frozen=True)
class RefineResult:
    """Final hypothesis plus the per-step history of the refinement loop.

    ``trace[0]`` is the starting hypothesis and ``trace[k]`` the hypothesis
    after step k; ``twists[k]`` is the update the predictor returned at step
    k, so ``trace[k + 1] = exp(twists[k]) ∘ trace[k]``.
    """

    transform: RigidTransform
    trace: tuple
    twists: tuple


def refine(sample: CalibrationSample, predictor, steps: int = 3) -> RefineResult:
    """Iteratively improve the hypothesis by composing predicted updates."""
    if steps < 1:
        raise ValueError(f"steps must be >= 1, got {steps}")
    current = sample.T_init
    trace = [current]
    twists = []
    for _ in range(steps):
        xi = predictor(sample.with_init(current))
        if not isinstance(xi, Se3Tangent):
            raise ShapeMismatch("predictor must return an Se3Tangent")
        current = compose(exp_se3(xi), current)
        trace.append(current)
        twists.append(xi)
    return RefineResult(transform=current, trace=tuple(trace), twists=tuple(twists))


def convergence_rows(trace, T_gt: RigidTransform):
    """Per-step error summary ``(step, rot_err_deg, tsl_err_cm)`` for a
    refinement trace, both errors as RMSE over components."""
    rows = []
    for step, T in enumerate(trace):
        m = sample_metrics(T, T_gt)
        rows.append((step, m.rot_rmse, m.tsl_rmse))
    return rows


def save_convergence_csv(rows, path) -> None:
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["step", "rot_err_deg", "tsl_err_cm"])
        for step, rot, tsl in rows:
            writer.writerow([step, "%.17g" % rot, "%.17g" % tsl])


@dataclass(frozen=True)
class MetricsReport:
    """Aggregate metrics over an evaluation run.

    ``samples`` holds the per-sample metrics of every successfully scored
    sample; samples whose scoring failed (gimbal lock in the residual) are
    only counted in ``n_failed``. Rates are percentages over the scored
    samples; means and standard deviations (population) likewise.
    """

    samples: tuple
    n_failed: int

    @property
    def n_samples(self) -> int:
        return len(self.samples)

    def _column(self, field):
        return np.array([getattr(m, field) for m in self.samples])

    def _mean_std(self, field):
        if not self.samples:
            return float("nan"), float("nan")
        col = self._column(field)
        return float(col.mean()), float(col.std())

    def _rate(self, field):
        if not self.samples:
            return float("nan")
        return float(100.0 * self._column(field).mean())

    def to_dict(self) -> dict:
        out = {"n_samples": self.n_samples, "n_failed": self.n_failed}
        for field in ("rot_rmse", "rot_mae", "tsl_rmse", "tsl_mae"):
            mean, std = self._mean_std(field)
            out[field + "_mean"] = mean
            out[field + "_std"] = std
        out["l1_rate"] = self._rate("l1_pass")
        out["l2_rate"] = self._rate("l2_pass")
        return out

    def __getattr__(self, name):
        # expose the serialized aggregates (rot_rmse_mean, l1_rate, ...) as
        # attributes without hand-writing one property per column
        d = self.to_dict()
        if name in d:
            return d[name]
        raise AttributeError(name)


def evaluate(samples, predictor, steps: int = 3) -> MetricsReport:
    """Refine every sample and aggregate the resulting metrics.

    Samples are evaluated independently; a sample whose residual lands in
    gimbal lock is counted as failed rather than aborting the run.
    """
    samples = list(samples)
    if not samples:
        raise EmptyInput("evaluate needs at least one sample")
    scored = []
    n_failed = 0
    for sample in samples:
        try:
            result = refine(sample, predictor, steps)
            scored.append(sample_metrics(result.transform, sample.T_gt))
        except (GimbalLock, AngleNearPi):
            n_failed += 1
    return MetricsReport(samples=tuple(scored), n_failed=n_failed)


def save_metrics_json(report: MetricsReport, path) -> None:
    with open(path, "w") as fh:
        json.dump(report.to_dict(), fh, indent=2, sort_keys=True)
        fh.write("\n")


def perfect_oracle(sample: CalibrationSample) -> Se3Tangent:
    """Predictor returning the full remaining correction; one step suffices."""
    return log_se3(compose(sample.T_gt, invert(sample.T_init)))


def contraction_oracle(factor: float = 0.5):
    """Predictor returning ``factor`` times the remaining correction.

    Because each update shares its screw axis with the remaining residual,
    k steps shrink the residual log by exactly ``(1 - factor) ** k``.
    """
    if not 0.0 < factor <= 1.0:
        raise ValueError(f"factor must be in (0, 1], got {factor}")

    def predictor(sample: CalibrationSample) -> Se3Tangent:
        return perfect_oracle(sample).scaled(factor)

    return predictor


@dataclass(frozen=True)
class SceneConfig:
    """Synthetic desk-scale scene description.

    ``kind`` selects the geometry: "plane" puts every point on a frontal
    plane at ``depth`` meters filling the camera frustum; "blocks" scatters
    axis-aligned boxes around ``depth``. ``gt_range`` draws the true
    extrinsics, ``perturb`` the starting-hypothesis offset.
    """

    kind: str = "plane"
    n_points: int = 2048
    depth: float = 10.0
    n_blocks: int = 5
    gt_range: PerturbRange = PerturbRange(5.0, 10.0)
    perturb: PerturbRange = PerturbRange(15.0, 15.0)
    intrinsics: Intrinsics = Intrinsics.default()

    def __post_init__(self):
        if self.kind not in ("plane", "blocks"):
            raise ValueError(f"unknown scene kind {self.kind!r}")
        if self.n_points < 1:
            raise ValueError("n_points must be >= 1")
        if self.depth <= 0.0:
            raise ValueError("depth must be positive")
        if self.n_blocks < 1:
            raise ValueError("n_blocks must be >= 1")


def _backproject(u, v, z, K: Intrinsics):
    x = (u - K.cx) * z / K.fx
    y = (v - K.cy) * z / K.fy
    return np.column_stack([x, y, z])


def _scene_points_camera(cfg: SceneConfig, rng) -> np.ndarray:
    K = cfg.intrinsics
    if cfg.kind == "plane":
        # sample pixels away from the border so rounding to cells stays inside
        u = rng.uniform(2.0, K.width - 2.0, cfg.n_points)
        v = rng.uniform(2.0, K.height - 2.0, cfg.n_points)
        return _backproject(u, v, np.full(cfg.n_points, cfg.depth), K)
    u = rng.uniform(0.15 * K.width, 0.85 * K.width, cfg.n_blocks)
    v = rng.uniform(0.15 * K.height, 0.85 * K.height, cfg.n_blocks)
    z = rng.uniform(0.7 * cfg.depth, 1.3 * cfg.depth, cfg.n_blocks)
    centers = _backproject(u, v, z, K)
    half = rng.uniform(0.03, 0.08, (cfg.n_blocks, 1)) * cfg.depth
    owner = rng.integers(cfg.n_blocks, size=cfg.n_points)
    offsets = rng.uniform(-1.0, 1.0, (cfg.n_points, 3))
    return centers[owner] + half[owner] * offsets


def synth_scene(cfg: SceneConfig, seed: int) -> CalibrationSample:
    """Generate one deterministic synthetic calibration sample.

    Points are drawn inside the camera frustum, expressed in the range-sensor
    frame under the true extrinsics, and the starting hypothesis is the truth
    left-composed with a drawn perturbation.
    """
    rng = derive_rng(seed, STREAM_SCENE)
    T_gt = sample_perturbation(cfg.gt_range, derive_rng(seed, STREAM_SCENE, 1))
    T_r = sample_perturbation(cfg.perturb, derive_rng(seed, STREAM_PERTURB))
    points_cam = _scene_points_camera(cfg, rng)
    points = invert(T_gt).apply(points_cam)
    return CalibrationSample(
        points=points,
        intrinsics=cfg.intrinsics,
        T_gt=T_gt,
        T_init=compose(T_r, T_gt),
    )


def synth_suite(cfg: SceneConfig, n: int, seed: int):
    """A list of ``n`` independent samples derived from one master seed."""
    if n < 1:
        raise ValueError("n must be >= 1")
    child = np.random.SeedSequence(seed).generate_state(n, np.uint64)
    return [synth_scene(cfg, int(s)) for s in child]
