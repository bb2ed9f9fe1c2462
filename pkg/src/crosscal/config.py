"""Run configuration for the evaluation CLI.

Flat ``key = value`` text with a fixed key set: unknown keys, duplicate
keys, malformed lines, and out-of-range values are all rejected with the
offending key named, so an experiment record can only mean one thing.
``format_run_config`` writes the fully resolved configuration back in the
same format; a parse of its own output reproduces the config exactly.
"""

from __future__ import annotations

from dataclasses import dataclass, fields

from .evaluation import SceneConfig
from .exceptions import ConfigError
from .geometry import PerturbRange
from .pipeline import NetworkConfig
from .projection import Intrinsics


def _parse_bool(value: str) -> bool:
    low = value.lower()
    if low == "true":
        return True
    if low == "false":
        return False
    raise ValueError(f"expected true or false, got {value!r}")


@dataclass(frozen=True)
class RunConfig:
    """Everything an evaluation run depends on, with defaults."""

    # scene
    scene_kind: str = "plane"
    n_points: int = 2048
    depth_m: float = 10.0
    n_blocks: int = 5
    gt_rot_deg: float = 5.0
    gt_tsl_cm: float = 10.0
    perturb_rot_deg: float = 15.0
    perturb_tsl_cm: float = 15.0
    # camera
    fx: float = 300.0
    fy: float = 300.0
    cx: float = 224.0
    cy: float = 112.0
    width: int = 448
    height: int = 224
    patch_w: int = 16
    patch_h: int = 16
    # tokens and attention
    r_p: float = 2.0
    n_h: int = 6
    d_model: int = 384
    n_heads: int = 6
    d_head: int = 64
    mlp_hidden: int = 128
    shared_attention: bool = False
    # point branch
    n_groups: int = 512
    k_neighbors: int = 16
    max_points: int = 8192
    # run
    predictor: str = "contraction"
    contraction: float = 0.5
    n_samples: int = 20
    steps: int = 3
    seed: int = 0
    output_dir: str = "out"

    def __post_init__(self):
        def bad(key, why):
            raise ConfigError(f"config key {key!r} {why}", key=key)

        if self.scene_kind not in ("plane", "blocks"):
            bad("scene_kind", f"must be plane or blocks, got {self.scene_kind!r}")
        if self.predictor not in ("perfect", "contraction", "network"):
            bad(
                "predictor",
                f"must be perfect, contraction or network, got {self.predictor!r}",
            )
        if not 0.0 < self.contraction <= 1.0:
            bad("contraction", f"must be in (0, 1], got {self.contraction}")
        positive = (
            "n_points", "n_blocks", "width", "height", "patch_w", "patch_h",
            "d_model", "n_heads", "d_head", "mlp_hidden", "n_groups",
            "k_neighbors", "max_points", "n_samples", "steps",
        )
        for key in positive:
            if getattr(self, key) < 1:
                bad(key, f"must be >= 1, got {getattr(self, key)}")
        strictly_positive = ("depth_m", "fx", "fy")
        for key in strictly_positive:
            if getattr(self, key) <= 0.0:
                bad(key, f"must be positive, got {getattr(self, key)}")
        non_negative = (
            "gt_rot_deg", "gt_tsl_cm", "perturb_rot_deg", "perturb_tsl_cm",
            "r_p", "n_h", "seed",
        )
        for key in non_negative:
            if getattr(self, key) < 0:
                bad(key, f"must be >= 0, got {getattr(self, key)}")
        if self.width % self.patch_w != 0:
            bad("patch_w", f"must divide width {self.width}, got {self.patch_w}")
        if self.height % self.patch_h != 0:
            bad("patch_h", f"must divide height {self.height}, got {self.patch_h}")

    def intrinsics(self) -> Intrinsics:
        return Intrinsics(
            fx=self.fx, fy=self.fy, cx=self.cx, cy=self.cy,
            width=self.width, height=self.height,
            patch_w=self.patch_w, patch_h=self.patch_h,
        )

    def scene(self) -> SceneConfig:
        return SceneConfig(
            kind=self.scene_kind,
            n_points=self.n_points,
            depth=self.depth_m,
            n_blocks=self.n_blocks,
            gt_range=PerturbRange(self.gt_rot_deg, self.gt_tsl_cm),
            perturb=PerturbRange(self.perturb_rot_deg, self.perturb_tsl_cm),
            intrinsics=self.intrinsics(),
        )

    def network(self) -> NetworkConfig:
        return NetworkConfig(
            d_model=self.d_model,
            n_heads=self.n_heads,
            d_head=self.d_head,
            n_harmonics=self.n_h,
            margin=self.r_p,
            n_groups=self.n_groups,
            k_neighbors=self.k_neighbors,
            max_points=self.max_points,
            encoder_dims=(3, 64, 128, self.d_model),
            channel_plan=(
                self.d_model,
                max(self.d_model // 2, 1),
                max(self.d_model // 4, 1),
            ),
            mlp_hidden=self.mlp_hidden,
            shared_attention=self.shared_attention,
            steps=self.steps,
        )


# dataclass field annotations are strings under `from __future__ import
# annotations`; build the key -> parser table once, explicitly
_PARSERS = {}
for _f in fields(RunConfig):
    _type_name = _f.type if isinstance(_f.type, str) else _f.type.__name__
    _PARSERS[_f.name] = {"int": int, "float": float, "str": str,
                         "bool": _parse_bool}[_type_name]
del _f, _type_name


def parse_run_config(text: str) -> RunConfig:
    """Parse flat ``key = value`` lines; ``#`` starts a comment."""
    values = {}
    for lineno, raw in enumerate(text.splitlines(), start=1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigError(f"line {lineno}: expected 'key = value', got {raw!r}")
        key, _, value = line.partition("=")
        key = key.strip()
        value = value.strip()
        if key not in _PARSERS:
            raise ConfigError(f"line {lineno}: unknown config key {key!r}", key=key)
        if key in values:
            raise ConfigError(f"line {lineno}: duplicate config key {key!r}", key=key)
        try:
            values[key] = _PARSERS[key](value)
        except ValueError as exc:
            raise ConfigError(
                f"line {lineno}: bad value for {key!r}: {exc}", key=key
            ) from exc
    return RunConfig(**values)


def load_run_config(path) -> RunConfig:
    with open(path) as fh:
        return parse_run_config(fh.read())


def _format_value(value) -> str:
    if isinstance(value, bool):
        return "true" if value else "false"
    if isinstance(value, float):
        return "%.17g" % value
    return str(value)


def format_run_config(cfg: RunConfig) -> str:
    lines = [
        f"{f.name} = {_format_value(getattr(cfg, f.name))}" for f in fields(RunConfig)
    ]
    return "\n".join(lines) + "\n"


def save_run_config(cfg: RunConfig, path) -> None:
    with open(path, "w") as fh:
        fh.write(format_run_config(cfg))
