"""Flat ``key = value`` configuration shared by every CLI subcommand.

Unknown keys are rejected so a typo cannot silently fall back to a default.
``format_config`` writes the canonical form, which ``load_config`` reads back
unchanged.
"""

from __future__ import annotations

from dataclasses import dataclass, fields, replace
from pathlib import Path

from .errors import ConfigError
from .metrics import DEFAULT_ALPHAS, EvalConfig
from .reid import ReidConfig
from .stereo import ONE_TO_ONE_MODES


@dataclass(frozen=True)
class PipelineConfig:
    reid_window: int = 100
    reid_radius: float = 50.0
    reid_overlap_limit: int = 10
    reid_min_track_len: int = 30
    id_start: int = 0
    match_threshold: float = 10.0
    match_one_to_one: str = "greedy"
    eval_mode: str = "center"
    eval_dist_threshold: float | None = None
    eval_iou_threshold: float = 0.5
    eval_alphas: tuple[float, ...] = DEFAULT_ALPHAS
    fps: float = 240.0
    density_bins: int = 20
    temporal_window: int = 24
    image_width: int = 1920
    image_height: int = 1080
    yolo_normalize: bool = True
    svg: bool = True

    def __post_init__(self) -> None:
        if self.match_one_to_one not in ONE_TO_ONE_MODES:
            raise ConfigError(f"match_one_to_one must be one of {ONE_TO_ONE_MODES}")
        if not self.match_threshold > 0 or not self.fps > 0:
            raise ConfigError("match_threshold and fps must be positive")
        if self.density_bins < 1 or self.temporal_window < 1:
            raise ConfigError("density_bins and temporal_window must be >= 1")
        try:
            self.reid()
            self.evaluation()
        except ValueError as exc:
            raise ConfigError(str(exc)) from None

    def reid(self) -> ReidConfig:
        return ReidConfig(self.reid_window, self.reid_radius, self.reid_overlap_limit, self.reid_min_track_len,
                          self.id_start)

    def evaluation(self) -> EvalConfig:
        return EvalConfig(self.eval_mode, self.eval_dist_threshold, self.eval_iou_threshold, tuple(self.eval_alphas))

    @property
    def image_size(self) -> tuple[int, int]:
        return (self.image_width, self.image_height)

    def to_dict(self) -> dict:
        return {f.name: (list(v) if isinstance(v := getattr(self, f.name), tuple) else v) for f in fields(self)}


def _convert(name: str, raw: str, default):
    raw = raw.strip()
    try:
        if name == "eval_dist_threshold":
            return None if raw.lower() in ("auto", "none", "") else float(raw)
        if name == "eval_alphas":
            return tuple(float(x) for x in raw.replace(",", " ").split())
        if isinstance(default, bool):
            if raw.lower() not in ("true", "false", "1", "0", "yes", "no"):
                raise ValueError(raw)
            return raw.lower() in ("true", "1", "yes")
        if isinstance(default, int):
            return int(raw)
        if isinstance(default, float):
            return float(raw)
        return raw
    except ValueError:
        raise ConfigError(f"bad value for {name}: {raw!r}") from None


def load_config(text: str, base: PipelineConfig | None = None) -> PipelineConfig:
    base = base or PipelineConfig()
    known = {f.name: getattr(base, f.name) for f in fields(base)}
    updates = {}
    for lineno, line in enumerate(text.splitlines(), start=1):
        line = line.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigError(f"config line {lineno}: expected 'key = value'")
        key, value = (s.strip() for s in line.split("=", 1))
        if key not in known:
            raise ConfigError(f"config line {lineno}: unknown key {key!r}")
        default = known[key] if known[key] is not None else 0.0
        updates[key] = _convert(key, value, default)
    return replace(base, **updates)


def read_config(path: str | Path | None) -> PipelineConfig:
    if path is None:
        return PipelineConfig()
    return load_config(Path(path).read_text())


def format_config(cfg: PipelineConfig) -> str:
    lines = []
    for f in fields(cfg):
        v = getattr(cfg, f.name)
        if v is None:
            v = "auto"
        elif isinstance(v, bool):
            v = "true" if v else "false"
        elif isinstance(v, tuple):
            v = " ".join(repr(x) for x in v)
        lines.append(f"{f.name} = {v}")
    return "\n".join(lines) + "\n"


def config_from_dict(d: dict) -> PipelineConfig:
    """Inverse of ``PipelineConfig.to_dict``; unknown keys are rejected."""
    known = {f.name for f in fields(PipelineConfig)}
    extra = sorted(set(d) - known)
    if extra:
        raise ConfigError(f"unknown config keys: {extra}")
    values = {k: tuple(v) if isinstance(v, list) else v for k, v in d.items()}
    try:
        return PipelineConfig(**values)
    except TypeError as exc:
        raise ConfigError(str(exc)) from None
