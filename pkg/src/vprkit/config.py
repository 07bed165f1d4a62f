"""Pipeline configuration loaded from JSON, with range checks on every field."""

from __future__ import annotations

import dataclasses
import json
import math
from dataclasses import dataclass, field
from pathlib import Path

from .errors import InvalidInputError
from .fusion import FusionWeights, HardMinerState, LossConfig


@dataclass
class PipelineConfig:
    dist_threshold_m: float = 10.0
    angle_threshold_deg: float = 45.0
    consec_window_us: int = 2_000_000
    offset_m: float = 25.0
    dim: int = 640
    variant: str = "convap"
    params_path: str | None = None
    fuse: bool = True
    normalize: bool = True
    w_v: float = 1.0
    w_s: float = 1.0
    margin: float = 0.5
    alpha: float = 1.0
    beta: float = 1.0
    gamma: float = 1.0
    n_pos: int = 1
    n_neg: int = 6
    hard_ratio: float = 0.5
    step_delta: float = 0.1
    r_min: float = 0.1
    r_max: float = 0.9
    tolerance: float = 1e-3
    test_fraction: float = 0.3
    ks: list = field(default_factory=lambda: [1, 5, 10])
    seed: int = 0

    def __post_init__(self):
        self.validate()

    def validate(self) -> None:
        checks = [
            ("dist_threshold_m", self.dist_threshold_m > 0, "(0, inf)"),
            ("angle_threshold_deg", 0 < self.angle_threshold_deg <= 180, "(0, 180]"),
            ("consec_window_us", self.consec_window_us >= 0, "[0, inf)"),
            ("offset_m", self.offset_m > 0, "(0, inf)"),
            ("dim", self.dim >= 1, "[1, inf)"),
            ("margin", self.margin > 0, "(0, inf)"),
            ("alpha", self.alpha >= 0, "[0, inf)"),
            ("beta", self.beta >= 0, "[0, inf)"),
            ("gamma", self.gamma >= 0, "[0, inf)"),
            ("n_pos", self.n_pos >= 1, "[1, inf)"),
            ("n_neg", self.n_neg >= 1, "[1, inf)"),
            ("r_min", 0 <= self.r_min <= 1, "[0, 1]"),
            ("r_max", self.r_min <= self.r_max <= 1, "[r_min, 1]"),
            ("hard_ratio", self.r_min <= self.hard_ratio <= self.r_max, "[r_min, r_max]"),
            ("step_delta", self.step_delta >= 0, "[0, inf)"),
            ("tolerance", self.tolerance >= 0, "[0, inf)"),
            ("test_fraction", 0 < self.test_fraction < 1, "(0, 1)"),
            ("ks", bool(self.ks) and all(int(k) >= 1 for k in self.ks), "non-empty list of integers >= 1"),
        ]
        for name, ok, allowed in checks:
            value = getattr(self, name)
            if isinstance(value, float) and not math.isfinite(value):
                ok = False
            if not ok:
                raise InvalidInputError(f"config field {name!r}={value!r} outside permitted range {allowed}")

    @property
    def angle_threshold_rad(self) -> float:
        return math.radians(self.angle_threshold_deg)

    def loss_config(self) -> LossConfig:
        return LossConfig(margin=self.margin, alpha=self.alpha, beta=self.beta, gamma=self.gamma,
                          n_pos=self.n_pos, n_neg=self.n_neg)

    def miner_state(self) -> HardMinerState:
        return HardMinerState(hard_ratio=self.hard_ratio, step_delta=self.step_delta,
                              tolerance=self.tolerance, r_min=self.r_min, r_max=self.r_max)

    def fusion_weights(self) -> FusionWeights:
        return FusionWeights(self.w_v, self.w_s)

    def replace(self, **changes) -> "PipelineConfig":
        changes = {k: v for k, v in changes.items() if v is not None}
        return dataclasses.replace(self, **changes)

    @classmethod
    def from_dict(cls, d: dict) -> "PipelineConfig":
        known = {f.name for f in dataclasses.fields(cls)}
        unknown = sorted(set(d) - known)
        if unknown:
            raise InvalidInputError(f"unknown config keys: {', '.join(unknown)}")
        return cls(**d)

    @classmethod
    def load(cls, path) -> "PipelineConfig":
        return cls.from_dict(json.loads(Path(path).read_text(encoding="utf-8")))

    def to_dict(self) -> dict:
        return dataclasses.asdict(self)
