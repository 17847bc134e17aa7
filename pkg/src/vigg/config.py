"""
vigg | Copyright (c) The vigg developers
"""
import dataclasses
import json
import typing as t
from dataclasses import dataclass
from pathlib import Path

from .compat import DEFAULT_MAX_CLIQUES, DEFAULT_MIN_SIZE
from .exceptions import FormatError, InvalidConfig
from .gvca import GvcaConfig
from .vgm import DEFAULT_GAMMA_SQ, DEFAULT_MAX_SOURCE_POINTS, DEFAULT_MIN_INLIERS, VgmConfig


MAX_ITERATIONS = 10

PRESETS: dict[str, dict[str, float]] = {
    "indoor": {"voxel_size": 0.025, "t_inlier": 0.10},
    "outdoor": {"voxel_size": 0.30, "t_inlier": 0.60},
}


@dataclass(frozen=True)
class PipelineConfig:
    """
    Every knob of a registration run. The defaults are the indoor preset.

    Derived values: the compatibility threshold defaults to `t_inlier` and the
    sigma floor to `(0.25 · voxel_size)²`.
    """

    voxel_size: float = 0.025
    t_inlier: float = 0.10
    gamma_sq: float = DEFAULT_GAMMA_SQ
    iterations: int = 3
    max_source_points: int | None = DEFAULT_MAX_SOURCE_POINTS
    c_geo_cap: int | None = 1000
    seed: int = 0
    weight_bandwidth: float | None = None
    compat_threshold: float | None = None
    min_clique_size: int = DEFAULT_MIN_SIZE
    max_cliques: int = DEFAULT_MAX_CLIQUES
    min_inliers: int = DEFAULT_MIN_INLIERS
    sigma_floor: float | None = None
    zone_radius: float | None = None
    guidance: bool = True

    def __post_init__(self) -> None:
        if not (0 <= self.iterations <= MAX_ITERATIONS):
            raise InvalidConfig(f"iterations must be within 0..{MAX_ITERATIONS}, got {self.iterations}")
        for name in ("voxel_size", "t_inlier", "gamma_sq"):
            if not getattr(self, name) > 0:
                raise InvalidConfig(f"{name} must be positive, got {getattr(self, name)}")
        for name in ("weight_bandwidth", "compat_threshold", "sigma_floor", "zone_radius"):
            value = getattr(self, name)
            if value is not None and not value > 0:
                raise InvalidConfig(f"{name} must be positive, got {value}")
        for name in ("max_source_points", "c_geo_cap"):
            value = getattr(self, name)
            if value is not None and value < 1:
                raise InvalidConfig(f"{name} must be >= 1, got {value}")
        if not (0 <= self.seed < 2**64):
            raise InvalidConfig(f"seed must be a 64-bit unsigned integer, got {self.seed}")

    @classmethod
    def preset(cls, name: str, **overrides: t.Any) -> "PipelineConfig":
        if name not in PRESETS:
            raise InvalidConfig(f"unknown preset `{name}`, expected one of {sorted(PRESETS)}")
        return cls(**{**PRESETS[name], **overrides})

    @classmethod
    def from_dict(cls, data: dict[str, t.Any]) -> "PipelineConfig":
        return cls().replace(**data)

    def replace(self, **changes: t.Any) -> "PipelineConfig":
        names = {f.name for f in dataclasses.fields(self)}
        unknown = sorted(set(changes) - names)
        if unknown:
            raise InvalidConfig(f"unknown configuration keys: {', '.join(unknown)}")
        return dataclasses.replace(self, **changes)

    def to_dict(self) -> dict[str, t.Any]:
        return dataclasses.asdict(self)

    @property
    def effective_sigma_floor(self) -> float:
        if self.sigma_floor is not None:
            return self.sigma_floor
        return (0.25 * self.voxel_size) ** 2

    def gvca(self) -> GvcaConfig:
        return GvcaConfig(
            t_inlier=self.t_inlier,
            min_clique_size=self.min_clique_size,
            max_cliques=self.max_cliques,
            compat_threshold=self.compat_threshold,
        )

    def vgm(self) -> VgmConfig:
        return VgmConfig(
            t_inlier=self.t_inlier,
            sigma_floor=self.effective_sigma_floor,
            gamma_sq=self.gamma_sq,
            min_inliers=self.min_inliers,
            max_source_points=self.max_source_points,
            zone_radius=self.zone_radius,
            bandwidth=self.weight_bandwidth,
        )


def load_config_file(path: "str | Path") -> dict[str, t.Any]:
    """
    Reads a JSON object of PipelineConfig field names.
    """
    path = Path(path)
    try:
        data = json.loads(path.read_text())
    except json.JSONDecodeError as err:
        raise FormatError(f"[{path}:{err.lineno}] invalid JSON: {err.msg}") from err
    if not isinstance(data, dict):
        raise FormatError(f"[{path}] a config file must contain a JSON object")
    return data


def resolve_config(
    *,
    config_file: "str | Path | None" = None,
    preset: str | None = None,
    overrides: dict[str, t.Any] | None = None,
    base: PipelineConfig | None = None,
) -> PipelineConfig:
    """
    Defaults (`base`) < config file < preset < explicit overrides
    (`None` values are skipped).
    """
    cfg = base or PipelineConfig()
    if config_file is not None:
        cfg = cfg.replace(**load_config_file(config_file))
    if preset is not None:
        if preset not in PRESETS:
            raise InvalidConfig(f"unknown preset `{preset}`, expected one of {sorted(PRESETS)}")
        cfg = cfg.replace(**PRESETS[preset])
    explicit = {k: v for k, v in (overrides or {}).items() if v is not None}
    return cfg.replace(**explicit) if explicit else cfg
