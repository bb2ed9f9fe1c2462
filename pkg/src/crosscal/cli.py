"""Command-line entry point exposing every pipeline stage.

Subcommands: perturb, project, render-depth, group, embed, attend,
gradcheck, evaluate, demo. Every command is deterministic under a fixed
seed and writes plot-ready text files.

Exit codes: 0 on success, 1 on validation failures (bad shapes, bad
values, failed gradient check, bad configuration), 2 on I/O or parse
failures. The output directory resolves in this order: the
``CROSSCAL_OUTPUT_DIR`` environment variable overrides everything, then
the ``--out-dir`` flag, then the config file's ``output_dir`` (for
``evaluate``), then ``out``.
"""

from __future__ import annotations

import argparse
import json
import os
import sys
from pathlib import Path

import numpy as np

from . import __version__
from .config import RunConfig, load_run_config, save_run_config
from .embedding import HarmonicConfig, harmonic_embed, load_matrix, save_matrix
from .evaluation import (
    MetricsReport,
    SceneConfig,
    contraction_oracle,
    convergence_rows,
    perfect_oracle,
    refine,
    sample_metrics,
    save_convergence_csv,
    save_metrics_json,
    synth_scene,
    synth_suite,
)
from .exceptions import CalibrationError, EmptyInput, GimbalLock, AngleNearPi, ParseError
from .geometry import (
    PerturbRange,
    compose,
    load_transform,
    sample_perturbation,
    save_transform,
)
from .gradcheck import GRAD_TOL, attention_gradcheck_max_error
from .grouping import (
    downsample,
    encode_groups,
    fps,
    init_encoder_params,
    knn_group,
    save_groups,
)
from .pipeline import CalibrationNetwork, NetworkConfig
from .projection import (
    Intrinsics,
    load_point_cloud,
    project,
    render_depth_map,
    save_depth_map,
    transform_points,
)
from .seeding import (
    STREAM_DOWNSAMPLE,
    STREAM_PERTURB,
    STREAM_TOKENS,
    STREAM_WEIGHTS,
    derive_rng,
)
from .attention import init_attention_params, cross_attend
from .validation import check_coords_2d

ENV_OUTPUT_DIR = "CROSSCAL_OUTPUT_DIR"


def _resolve_out_dir(flag_value, config_value=None) -> Path:
    env = os.environ.get(ENV_OUTPUT_DIR)
    if env:
        chosen = env
    elif flag_value:
        chosen = flag_value
    elif config_value:
        chosen = config_value
    else:
        chosen = "out"
    path = Path(chosen)
    path.mkdir(parents=True, exist_ok=True)
    return path


def _add_intrinsics_args(parser):
    d = Intrinsics.default()
    parser.add_argument("--fx", type=float, default=d.fx)
    parser.add_argument("--fy", type=float, default=d.fy)
    parser.add_argument("--cx", type=float, default=d.cx)
    parser.add_argument("--cy", type=float, default=d.cy)
    parser.add_argument("--width", type=int, default=d.width)
    parser.add_argument("--height", type=int, default=d.height)
    parser.add_argument("--patch-w", type=int, default=d.patch_w)
    parser.add_argument("--patch-h", type=int, default=d.patch_h)


def _intrinsics(args) -> Intrinsics:
    return Intrinsics(
        fx=args.fx, fy=args.fy, cx=args.cx, cy=args.cy,
        width=args.width, height=args.height,
        patch_w=args.patch_w, patch_h=args.patch_h,
    )


def _emit(payload: dict) -> None:
    print(json.dumps(payload, indent=2, sort_keys=True))


def cmd_perturb(args) -> int:
    out = _resolve_out_dir(args.out_dir)
    T_gt = load_transform(args.gt_file)
    T_r = sample_perturbation(
        PerturbRange(args.rot_deg, args.tsl_cm),
        derive_rng(args.seed, STREAM_PERTURB),
    )
    init_path = out / "init.txt"
    delta_path = out / "delta.txt"
    save_transform(compose(T_r, T_gt), init_path)
    save_transform(T_r, delta_path)
    _emit({"init": str(init_path), "delta": str(delta_path)})
    return 0


def cmd_project(args) -> int:
    out = _resolve_out_dir(args.out_dir)
    points = load_point_cloud(args.cloud_file)
    T = load_transform(args.transform_file)
    K = _intrinsics(args)
    pixels, depth = project(transform_points(points, T), K)
    path = out / "pixels.txt"
    save_matrix(np.column_stack([pixels, depth]), path)
    _emit({"n_points": int(points.shape[0]), "pixels": str(path)})
    return 0


def cmd_render_depth(args) -> int:
    out = _resolve_out_dir(args.out_dir)
    points = load_point_cloud(args.cloud_file)
    if points.shape[0] == 0:
        raise EmptyInput("cannot render an empty cloud")
    T = load_transform(args.transform_file)
    K = _intrinsics(args)
    image, dropout = render_depth_map(points, T, K)
    path = out / "depth.txt"
    save_depth_map(image, path)
    _emit(
        {
            "depth_map": str(path),
            "dropout_fraction": dropout,
            "n_points": int(points.shape[0]),
        }
    )
    return 0


def cmd_group(args) -> int:
    out = _resolve_out_dir(args.out_dir)
    points = load_point_cloud(args.cloud_file)
    pts = downsample(points, args.max_points, derive_rng(args.seed, STREAM_DOWNSAMPLE))
    groups = knn_group(pts, fps(pts, args.n_groups), args.k)
    groups_path = out / "groups.txt"
    save_groups(groups, groups_path)
    payload = {
        "groups": str(groups_path),
        "n_groups": groups.n_groups,
        "k": groups.k,
    }
    if args.features:
        params = init_encoder_params(derive_rng(args.seed, STREAM_WEIGHTS))
        features_path = out / "group_features.txt"
        save_matrix(encode_groups(groups, params), features_path)
        payload["features"] = str(features_path)
    _emit(payload)
    return 0


def cmd_embed(args) -> int:
    out = _resolve_out_dir(args.out_dir)
    coords = check_coords_2d(load_matrix(args.coords_file), "coords")
    cfg = HarmonicConfig(n_h=args.n_h, r_p=args.r_p)
    path = out / "embedding.txt"
    save_matrix(harmonic_embed(coords, cfg), path)
    _emit({"embedding": str(path), "width": cfg.width, "n_rows": coords.shape[0]})
    return 0


def cmd_attend(args) -> int:
    out = _resolve_out_dir(args.out_dir)
    rng = derive_rng(args.seed, STREAM_TOKENS)
    x = rng.normal(size=(args.n_q, args.d_in))
    y = rng.normal(size=(args.n_kv, args.d_in))
    params = init_attention_params(
        derive_rng(args.seed, STREAM_WEIGHTS),
        args.d_in, args.d_out, args.heads, args.d_head,
    )
    result = cross_attend(x, y, params)
    out_path = out / "attention_output.txt"
    attn_path = out / "attention_weights.txt"
    save_matrix(result.output, out_path)
    # weights stacked head-major: rows h * n_q + q
    save_matrix(result.attn_weights.reshape(-1, args.n_kv), attn_path)
    row_sum_err = float(np.abs(result.attn_weights.sum(axis=-1) - 1.0).max())
    _emit(
        {
            "output": str(out_path),
            "weights": str(attn_path),
            "output_shape": list(result.output.shape),
            "max_row_sum_error": row_sum_err,
        }
    )
    return 0


def cmd_gradcheck(args) -> int:
    worst = 0.0
    per_seed = []
    for i in range(args.repeats):
        err = attention_gradcheck_max_error(
            args.seed + i,
            corrupt=args.corrupt,
            n_q=args.n_q,
            n_kv=args.n_kv,
            n_heads=args.heads,
            d_head=args.d_head,
            d_in=args.d_in,
            d_out=args.d_out,
        )
        per_seed.append(err)
        worst = max(worst, err)
    passed = worst < args.tol
    _emit(
        {
            "max_relative_error": worst,
            "per_seed": per_seed,
            "tolerance": args.tol,
            "passed": passed,
        }
    )
    return 0 if passed else 1


def _make_predictor(cfg: RunConfig):
    if cfg.predictor == "perfect":
        return perfect_oracle
    if cfg.predictor == "contraction":
        return contraction_oracle(cfg.contraction)
    return CalibrationNetwork(cfg.network(), cfg.intrinsics(), seed=cfg.seed)


def _run_suite(scene: SceneConfig, cfg: RunConfig, predictor):
    """Refine every sample once; returns the report and the per-step mean
    errors over the samples that scored."""
    samples = synth_suite(scene, cfg.n_samples, cfg.seed)
    scored = []
    traces = []
    n_failed = 0
    for sample in samples:
        try:
            result = refine(sample, predictor, cfg.steps)
            rows = convergence_rows(result.trace, sample.T_gt)
            scored.append(sample_metrics(result.transform, sample.T_gt))
            traces.append(rows)
        except (GimbalLock, AngleNearPi):
            n_failed += 1
    report = MetricsReport(samples=tuple(scored), n_failed=n_failed)
    mean_rows = []
    if traces:
        stacked = np.array([[row[1:] for row in t] for t in traces])
        means = stacked.mean(axis=0)
        mean_rows = [(k, means[k, 0], means[k, 1]) for k in range(means.shape[0])]
    return report, mean_rows


def cmd_evaluate(args) -> int:
    cfg = load_run_config(args.config)
    out = _resolve_out_dir(args.out_dir, cfg.output_dir)
    report, mean_rows = _run_suite(cfg.scene(), cfg, _make_predictor(cfg))
    metrics_path = out / "metrics.json"
    csv_path = out / "convergence.csv"
    resolved_path = out / "resolved.cfg"
    save_metrics_json(report, metrics_path)
    save_convergence_csv(mean_rows, csv_path)
    save_run_config(cfg, resolved_path)
    payload = dict(report.to_dict())
    payload["metrics"] = str(metrics_path)
    payload["convergence"] = str(csv_path)
    payload["resolved_config"] = str(resolved_path)
    _emit(payload)
    return 0


def cmd_demo(args) -> int:
    out = _resolve_out_dir(args.out_dir)
    K = Intrinsics(
        fx=40.0, fy=40.0, cx=32.0, cy=16.0, width=64, height=32,
        patch_w=8, patch_h=8,
    )
    scene = SceneConfig(
        kind="blocks",
        n_points=400,
        depth=8.0,
        gt_range=PerturbRange(3.0, 5.0),
        perturb=PerturbRange(10.0, 25.0),
        intrinsics=K,
    )
    sample = synth_scene(scene, args.seed)
    save_transform(sample.T_gt, out / "gt.txt")
    save_transform(sample.T_init, out / "init.txt")
    image, dropout = render_depth_map(sample.points, sample.T_init, K)
    save_depth_map(image, out / "depth.txt")
    pts = downsample(sample.points, 256, derive_rng(args.seed, STREAM_DOWNSAMPLE))
    save_groups(knn_group(pts, fps(pts, 24), 4), out / "groups.txt")

    network = CalibrationNetwork(NetworkConfig.small(), K, seed=args.seed)
    net_result = refine(sample, network, steps=3)
    save_convergence_csv(
        convergence_rows(net_result.trace, sample.T_gt), out / "network_trace.csv"
    )

    oracle_cfg = RunConfig(
        scene_kind="blocks", n_points=400, depth_m=8.0,
        gt_rot_deg=3.0, gt_tsl_cm=5.0,
        perturb_rot_deg=10.0, perturb_tsl_cm=25.0,
        fx=40.0, fy=40.0, cx=32.0, cy=16.0, width=64, height=32,
        patch_w=8, patch_h=8,
        predictor="contraction", n_samples=20, seed=args.seed,
        output_dir=str(out),
    )
    report, mean_rows = _run_suite(scene, oracle_cfg, contraction_oracle(0.5))
    save_metrics_json(report, out / "metrics.json")
    save_convergence_csv(mean_rows, out / "convergence.csv")
    save_run_config(oracle_cfg, out / "resolved.cfg")

    payload = dict(report.to_dict())
    payload["render_dropout"] = dropout
    payload["output_dir"] = str(out)
    _emit(payload)
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="crosscal",
        description=__doc__,
        formatter_class=argparse.RawDescriptionHelpFormatter,
    )
    parser.add_argument("--version", action="version", version=__version__)
    sub = parser.add_subparsers(dest="command", required=True)

    def add(name, func, help_text):
        p = sub.add_parser(name, help=help_text)
        p.set_defaults(func=func)
        p.add_argument("--out-dir", help="output directory")
        return p

    p = add("perturb", cmd_perturb, "draw a perturbed starting hypothesis")
    p.add_argument("gt_file", help="ground-truth transform file")
    p.add_argument("--rot-deg", type=float, default=15.0)
    p.add_argument("--tsl-cm", type=float, default=15.0)
    p.add_argument("--seed", type=int, default=0)

    p = add("project", cmd_project, "project a cloud to pixel coordinates")
    p.add_argument("cloud_file")
    p.add_argument("transform_file")
    _add_intrinsics_args(p)

    p = add("render-depth", cmd_render_depth, "z-buffer depth render plus dropout")
    p.add_argument("cloud_file")
    p.add_argument("transform_file")
    _add_intrinsics_args(p)

    p = add("group", cmd_group, "furthest-point grouping of a cloud")
    p.add_argument("cloud_file")
    p.add_argument("--n-groups", type=int, default=64)
    p.add_argument("--k", type=int, default=8)
    p.add_argument("--max-points", type=int, default=2048)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument(
        "--features", action="store_true", help="also write encoded group features"
    )

    p = add("embed", cmd_embed, "harmonic embedding of 2-d coordinates")
    p.add_argument("coords_file")
    p.add_argument("--n-h", type=int, default=6)
    p.add_argument("--r-p", type=float, default=2.0)

    p = add("attend", cmd_attend, "run cross-attention on a seeded instance")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--n-q", type=int, default=6)
    p.add_argument("--n-kv", type=int, default=8)
    p.add_argument("--heads", type=int, default=2)
    p.add_argument("--d-head", type=int, default=4)
    p.add_argument("--d-in", type=int, default=10)
    p.add_argument("--d-out", type=int, default=7)

    p = add("gradcheck", cmd_gradcheck, "finite-difference check of the gradients")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--repeats", type=int, default=3)
    p.add_argument("--n-q", type=int, default=5)
    p.add_argument("--n-kv", type=int, default=7)
    p.add_argument("--heads", type=int, default=2)
    p.add_argument("--d-head", type=int, default=3)
    p.add_argument("--d-in", type=int, default=6)
    p.add_argument("--d-out", type=int, default=5)
    p.add_argument("--tol", type=float, default=GRAD_TOL)
    p.add_argument(
        "--corrupt",
        action="store_true",
        help="negative control: corrupt the analytic gradient so the check fails",
    )

    p = add("evaluate", cmd_evaluate, "run a configured evaluation suite")
    p.add_argument("--config", required=True, help="flat key = value config file")

    p = add("demo", cmd_demo, "small end-to-end run writing every artifact kind")
    p.add_argument("--seed", type=int, default=0)

    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return args.func(args)
    except (ParseError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    except CalibrationError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
