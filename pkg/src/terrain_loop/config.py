"""Run configuration: defaults, JSON config files, validation and hashing."""
from __future__ import annotations

import dataclasses
import hashlib
import json
from dataclasses import dataclass, field
from pathlib import Path
from typing import Optional

from .errors import ConfigError
from .features import DetectorParams
from .gp import PARAMETERIZATIONS
from .raster import DEFAULT_RESOLUTION, MAX_PIXELS
from .registration import SSD_MODES, RansacParams


@dataclass(frozen=True)
class BuildConfig:
    resolution: float = DEFAULT_RESOLUTION
    kernel: str = "literal"
    sigma_z: float = 0.02
    length_init: Optional[float] = None  # None: 0.1 m length-scale in the chosen parameterization
    fit_hyperparameters: bool = True
    fit_max_points: Optional[int] = 1000
    downsample_target: int = 5000
    seed: int = 0
    tau_v_rel: float = 0.5
    max_keypoints: int = 500
    max_pixels: int = MAX_PIXELS

    def validate(self):
        if not self.resolution > 0:
            raise ConfigError("resolution must be positive")
        if self.kernel not in PARAMETERIZATIONS:
            raise ConfigError(f"kernel must be one of {PARAMETERIZATIONS}")
        if not self.sigma_z > 0:
            raise ConfigError("sigma_z must be positive")
        if self.length_init is not None and not self.length_init > 0:
            raise ConfigError("length_init must be positive")
        if self.fit_max_points is not None and self.fit_max_points < 3:
            raise ConfigError("fit_max_points must be >= 3")
        if self.downsample_target < 1:
            raise ConfigError("downsample_target must be >= 1")
        if not self.tau_v_rel > 0:
            raise ConfigError("tau_v_rel must be positive")
        if self.max_keypoints < 1 or self.max_pixels < 1:
            raise ConfigError("max_keypoints and max_pixels must be >= 1")

    def detector(self) -> DetectorParams:
        return DetectorParams(tau_v_rel=self.tau_v_rel, max_keypoints=self.max_keypoints)


@dataclass(frozen=True)
class MatchConfig:
    ratio: Optional[float] = 0.85
    max_iterations: int = 2000
    inlier_dist: float = 0.15
    min_inliers_accept: int = 4
    ssd_max: float = 0.02
    ssd_mode: str = "weights"
    seed: int = 0

    def validate(self):
        if self.ratio is not None and not 0 < self.ratio <= 1:
            raise ConfigError("ratio must be in (0, 1] or null")
        if self.max_iterations < 1:
            raise ConfigError("max_iterations must be >= 1")
        if not self.inlier_dist > 0:
            raise ConfigError("inlier_dist must be positive")
        if self.min_inliers_accept < 2:
            raise ConfigError("min_inliers_accept must be >= 2")
        if not self.ssd_max >= 0:
            raise ConfigError("ssd_max must be non-negative")
        if self.ssd_mode not in SSD_MODES:
            raise ConfigError(f"ssd_mode must be one of {SSD_MODES}")

    def ransac(self) -> RansacParams:
        return RansacParams(self.max_iterations, self.inlier_dist, self.min_inliers_accept,
                            self.ssd_max, self.ssd_mode, self.seed)


@dataclass(frozen=True)
class EvalConfig:
    iou_threshold: float = 0.3
    sweep_min: int = 1
    sweep_max: int = 20
    exclude_consecutive: bool = False

    def validate(self):
        if not 0 <= self.iou_threshold <= 1:
            raise ConfigError("iou_threshold must be in [0, 1]")
        if not 1 <= self.sweep_min <= self.sweep_max:
            raise ConfigError("sweep range must satisfy 1 <= min <= max")

    @property
    def thresholds(self) -> range:
        return range(self.sweep_min, self.sweep_max + 1)


@dataclass(frozen=True)
class Config:
    build: BuildConfig = field(default_factory=BuildConfig)
    match: MatchConfig = field(default_factory=MatchConfig)
    eval: EvalConfig = field(default_factory=EvalConfig)
    threads: int = 1

    def validate(self) -> "Config":
        self.build.validate()
        self.match.validate()
        self.eval.validate()
        if self.threads < 1:
            raise ConfigError("threads must be >= 1")
        return self

    def to_dict(self) -> dict:
        return dataclasses.asdict(self)

    @classmethod
    def from_dict(cls, data: dict) -> "Config":
        sections = {"build": BuildConfig, "match": MatchConfig, "eval": EvalConfig}
        unknown = set(data) - set(sections) - {"threads"}
        if unknown:
            raise ConfigError(f"unknown config keys: {sorted(unknown)}")
        kwargs = {}
        for name, klass in sections.items():
            section = data.get(name, {})
            if not isinstance(section, dict):
                raise ConfigError(f"config section {name!r} must be an object")
            allowed = {f.name for f in dataclasses.fields(klass)}
            bad = set(section) - allowed
            if bad:
                raise ConfigError(f"unknown keys in {name!r}: {sorted(bad)}")
            kwargs[name] = klass(**section)
        if "threads" in data:
            kwargs["threads"] = data["threads"]
        return cls(**kwargs).validate()

    def with_overrides(self, section: str, **values) -> "Config":
        """Apply flag overrides, skipping values that are ``None``."""
        values = {k: v for k, v in values.items() if v is not None}
        if not values:
            return self
        new = dataclasses.replace(getattr(self, section), **values)
        return dataclasses.replace(self, **{section: new}).validate()


def load_config(path=None) -> Config:
    if path is None:
        return Config().validate()
    try:
        data = json.loads(Path(path).read_text())
    except (OSError, json.JSONDecodeError) as exc:
        raise ConfigError(f"cannot read config {path}: {exc}") from exc
    if not isinstance(data, dict):
        raise ConfigError("config file must hold a JSON object")
    try:
        return Config.from_dict(data)
    except TypeError as exc:
        raise ConfigError(str(exc)) from exc


def config_hash(build: BuildConfig) -> str:
    """Stable hash of the settings that shape built artifacts."""
    blob = json.dumps(dataclasses.asdict(build), sort_keys=True, separators=(",", ":"))
    return hashlib.sha256(blob.encode()).hexdigest()[:16]
