"""Pipeline configuration: one flat key=value namespace.

Every constant the pipeline depends on lives here so runs are fully
reproducible from a config file.  Values come from (lowest to highest
precedence) built-in defaults, a config file, and CLI overrides; the
effective configuration is echoed into every output directory.
"""

from __future__ import annotations

from dataclasses import asdict, dataclass, fields
from pathlib import Path

from .render import RenderSettings
from .train import TrainConfig


class ConfigError(ValueError):
    """Malformed config file or inconsistent settings."""


@dataclass
class PipelineConfig:
    # rendering
    resolution: int = 512
    fov_y_deg: float = 60.0
    near_factor: float = 0.05
    far_factor: float = 4.0
    ambient: float = 0.1
    diffuse: float = 0.6
    specular: float = 0.3
    shininess: float = 32.0
    silhouette_radius: int = 2
    silhouette_depth_tol: float = 0.05
    upright_height: bool = False
    # sampling and view selection
    num_points: int = 1024
    coverage_target: float = 1.0
    max_views_per_scale: int = 40
    visibility_depth_tol: float = 0.0075
    fixed_views: bool = False
    # surface graph
    geodesic_cutoff: float = 0.1
    # network and training
    net_width: int = 16
    learning_rate: float = 1e-3
    momentum: float = 0.9
    weight_decay: float = 1e-3
    views_per_step: int = 24
    epochs: int = 30
    mode: str = "joint"
    mf_iters: int = 20
    mf_tol: float = 1e-4
    mf_damping: float = 0.5
    crf_grad_norm: bool = True
    # execution
    seed: int = 0
    workers: int = 1

    def validate(self):
        if self.resolution % 8 != 0:
            raise ConfigError(
                f"resolution {self.resolution} not divisible by 8")
        if self.mode not in ("joint", "disjoint", "unary_only"):
            raise ConfigError(f"unknown mode {self.mode!r}")
        if self.num_points < 1:
            raise ConfigError("num_points must be >= 1")
        return self

    def render_settings(self) -> RenderSettings:
        return RenderSettings(
            resolution=self.resolution, fov_y_deg=self.fov_y_deg,
            near_factor=self.near_factor, far_factor=self.far_factor,
            ambient=self.ambient, diffuse=self.diffuse,
            specular=self.specular, shininess=self.shininess,
            silhouette_radius=self.silhouette_radius,
            silhouette_depth_tol=self.silhouette_depth_tol,
            upright_height=self.upright_height)

    def train_config(self) -> TrainConfig:
        return TrainConfig(
            learning_rate=self.learning_rate, momentum=self.momentum,
            weight_decay=self.weight_decay,
            views_per_model_per_batch=self.views_per_step,
            epochs=self.epochs, seed=self.seed, mode=self.mode,
            fixed_views=self.fixed_views, mf_iters=self.mf_iters,
            mf_tol=self.mf_tol, mf_damping=self.mf_damping,
            net_width=self.net_width, upright_height=self.upright_height,
            crf_grad_norm=self.crf_grad_norm)


def _coerce(name: str, kind, raw: str):
    if kind is bool:
        low = raw.strip().lower()
        if low in ("1", "true", "yes", "on"):
            return True
        if low in ("0", "false", "no", "off"):
            return False
        raise ConfigError(f"{name}: expected a boolean, got {raw!r}")
    try:
        return kind(raw)
    except ValueError as exc:
        raise ConfigError(f"{name}: {exc}") from exc


def load_config(path=None, overrides: dict | None = None) -> PipelineConfig:
    cfg = PipelineConfig()
    types = {f.name: f.type for f in fields(PipelineConfig)}
    kinds = {"int": int, "float": float, "bool": bool, "str": str}
    if path is not None:
        for lineno, line in enumerate(
                Path(path).read_text(encoding="utf-8").splitlines(), 1):
            body = line.split("#", 1)[0].strip()
            if not body:
                continue
            if "=" not in body:
                raise ConfigError(f"{path}:{lineno}: expected key=value")
            key, raw = (s.strip() for s in body.split("=", 1))
            if key not in types:
                raise ConfigError(f"{path}:{lineno}: unknown key {key!r}")
            setattr(cfg, key, _coerce(key, kinds[types[key]], raw))
    for key, value in (overrides or {}).items():
        if value is None:
            continue
        if key not in types:
            raise ConfigError(f"unknown config key {key!r}")
        setattr(cfg, key, value)
    return cfg.validate()


def dump_config(cfg: PipelineConfig) -> str:
    lines = [f"{name} = {value}" for name, value in
             sorted(asdict(cfg).items())]
    return "\n".join(lines) + "\n"


def echo_config(cfg: PipelineConfig, out_dir) -> None:
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    (out_dir / "config.echo.txt").write_text(dump_config(cfg),
                                             encoding="utf-8")
