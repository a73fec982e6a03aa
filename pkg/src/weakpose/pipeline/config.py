"""Run configuration: one JSON file drives every subcommand."""

from __future__ import annotations

import json
import os
from dataclasses import asdict, dataclass, field, fields
from pathlib import Path

from ..supervision import LossWeights

SCHEMA_VERSION = 1
SEED_ENV = "UNIPOSE_SEED"
MANNERS = ("ray", "project3d2d")


class ConfigError(ValueError):
    pass


@dataclass
class RunConfig:
    schema_version: int = SCHEMA_VERSION
    data: str = ""  # dataset directory or .jsonl file
    out: str = "runs/default"
    stage: int = 1
    seed: int = 0
    test_fraction: float = 0.2

    # stage 1
    steps: int = 300
    batch_size: int = 2  # sequences per step
    lr: float = 3e-3
    weight_decay: float = 1e-4
    lr_schedule: str = "cosine"  # or "constant"
    weights: LossWeights = field(default_factory=LossWeights)
    loss_manner: str = "ray"
    detach_mu: bool = False
    disable_bone: bool = False
    disable_sym: bool = False
    disable_con: bool = False
    disable_fusion: bool = False
    point: dict = field(default_factory=dict)  # PointBranchConfig overrides

    # stage 2
    stage2_steps: int = 400
    stage2_batch: int = 32  # frames per step
    stage2_lr: float = 1e-3
    single_anchor_baseline: bool = False
    lift: dict = field(default_factory=dict)  # LiftConfig overrides

    # simulate / ablate
    sim: dict = field(default_factory=dict)  # SimConfig overrides
    variants: list = field(default_factory=lambda: ["full", "project3d2d", "no_con", "no_sym", "no_bone"])
    log_every: int = 0

    def __post_init__(self):
        if isinstance(self.weights, dict):
            self.weights = LossWeights(**self.weights)
        self.validate()

    def validate(self):
        if self.schema_version != SCHEMA_VERSION:
            raise ConfigError(f"schema_version {self.schema_version} (supported: {SCHEMA_VERSION})")
        if self.loss_manner not in MANNERS:
            raise ConfigError(f"loss_manner must be one of {MANNERS}, got {self.loss_manner!r}")
        if self.lr_schedule not in ("cosine", "constant"):
            raise ConfigError(f"unknown lr_schedule {self.lr_schedule!r}")
        if self.stage not in (1, 2):
            raise ConfigError(f"stage must be 1 or 2, got {self.stage}")
        if self.steps < 0 or self.stage2_steps < 0 or self.batch_size < 1 or self.stage2_batch < 1:
            raise ConfigError("step counts must be >= 0 and batch sizes >= 1")
        if not 0.0 <= self.test_fraction < 1.0:
            raise ConfigError(f"test_fraction {self.test_fraction} outside [0, 1)")
        if self.loss_manner == "project3d2d" and self.detach_mu:
            raise ConfigError("detach_mu only applies to the ray loss")
        unknown = set(self.variants) - set(VARIANTS)
        if unknown:
            raise ConfigError(f"unknown ablation variants {sorted(unknown)}")

    def to_json(self):
        d = asdict(self)
        d["weights"] = asdict(self.weights)
        return d

    @classmethod
    def from_json(cls, d):
        known = {f.name for f in fields(cls)}
        extra = set(d) - known
        if extra:
            raise ConfigError(f"unknown config keys {sorted(extra)}")
        if "schema_version" not in d:
            raise ConfigError("config is missing schema_version")
        return cls(**d)

    def with_overrides(self, **kw):
        d = self.to_json()
        d.update(kw)
        return RunConfig.from_json(d)


# ablation variant name -> config overrides
VARIANTS = {
    "full": {},
    "project3d2d": {"loss_manner": "project3d2d"},
    "no_con": {"disable_con": True},
    "no_sym": {"disable_sym": True},
    "no_bone": {"disable_bone": True},
    "no_fusion": {"disable_fusion": True},
    "detach_mu": {"detach_mu": True},
}


def load_config(path, require_data=True) -> RunConfig:
    """Read a JSON config; ``UNIPOSE_SEED`` overrides the seed."""
    try:
        doc = json.loads(Path(path).read_text())
    except FileNotFoundError:
        raise ConfigError(f"config file {path} not found") from None
    except json.JSONDecodeError as exc:
        raise ConfigError(f"{path}: invalid JSON ({exc})") from None
    if not isinstance(doc, dict):
        raise ConfigError(f"{path}: top level must be an object")
    env = os.environ.get(SEED_ENV)
    if env is not None:
        try:
            doc["seed"] = int(env)
        except ValueError:
            raise ConfigError(f"{SEED_ENV}={env!r} is not an integer") from None
    cfg = RunConfig.from_json(doc)
    if require_data:
        if not cfg.data:
            raise ConfigError("config does not name a dataset (data)")
        if not Path(cfg.data).exists():
            raise ConfigError(f"dataset {cfg.data} does not exist")
    return cfg


def save_config(cfg: RunConfig, path):
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(json.dumps(cfg.to_json(), indent=2, sort_keys=True))
    return path
