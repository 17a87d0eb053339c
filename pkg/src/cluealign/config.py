"""Run configuration: a flat key-value document mirrored by the TOML config file."""

from __future__ import annotations

import dataclasses
import sys
from dataclasses import dataclass, field
from pathlib import Path
from typing import Optional

if sys.version_info >= (3, 11):
    import tomllib
else:
    import tomli as tomllib

from .heads import BRANCHES, ModelDims

TASKS = ("detect", "attribute")


class ConfigError(ValueError):
    pass


@dataclass
class RunConfig:
    """Everything a training or evaluation run needs, with appendix defaults."""

    task: str = "detect"
    batch_size: int = 64
    learning_rate: float = 1e-4
    optimizer: str = "adam"
    epochs: int = 50
    seed: int = 0
    branch_mask: list = field(default_factory=list)
    precision: str = "float32"

    # architecture dims
    d_joint: int = 512
    d_sem: int = 768
    d_manip: int = 256
    d_out: int = 256
    d_t: int = 1
    hidden_dim: int = 256
    rep_dim: int = 16
    share_compare: bool = False
    gate_stop_gradient: bool = False

    # data and artifact paths
    dataset: str = ""
    fixture_table: str = ""
    split_manifest: str = ""
    split_ratios: list = field(default_factory=lambda: [0.7, 0.1, 0.2])
    clue_cache: str = ""
    feature_cache: str = ""
    checkpoint_dir: str = "checkpoints"
    report_dir: str = "reports"
    providers: str = "fixture"
    adapters: str = "fixture"
    adapter_seed: int = 0
    warm_start_from: str = ""

    def __post_init__(self):
        if self.task not in TASKS:
            raise ConfigError(f"task must be one of {TASKS}, got {self.task!r}")
        if self.optimizer != "adam":
            raise ConfigError(f"only the adam optimizer is supported, got {self.optimizer!r}")
        if self.precision not in ("float32", "float64"):
            raise ConfigError(f"precision must be float32 or float64, got {self.precision!r}")
        unknown = set(self.branch_mask).difference(BRANCHES)
        if unknown:
            raise ConfigError(f"unknown branches in branch_mask: {sorted(unknown)}")
        if len(self.split_ratios) != 3:
            raise ConfigError("split_ratios must be a (train, val, test) triple")

    def dims(self) -> ModelDims:
        return ModelDims(
            d_joint=self.d_joint,
            d_sem=self.d_sem,
            d_manip=self.d_manip,
            d_out=self.d_out,
            d_t=self.d_t,
            hidden_dim=self.hidden_dim,
            rep_dim=self.rep_dim,
        )

    def checkpoint_path(self) -> Path:
        return Path(self.checkpoint_dir) / f"{self.task}_best.pt"

    def log_path(self) -> Path:
        return Path(self.report_dir) / f"train_{self.task}.log.jsonl"

    def to_dict(self) -> dict:
        return dataclasses.asdict(self)


def load_config(path) -> RunConfig:
    """Read a RunConfig from a flat TOML document; unknown keys are an error."""
    raw = Path(path).read_bytes()
    data = tomllib.loads(raw.decode("utf-8"))
    known = {f.name for f in dataclasses.fields(RunConfig)}
    unknown = set(data).difference(known)
    if unknown:
        raise ConfigError(f"unknown config keys: {sorted(unknown)}")
    return RunConfig(**data)


def save_config(config: RunConfig, path) -> None:
    """Write the flat TOML mirror of a RunConfig."""
    lines = []
    for key, value in config.to_dict().items():
        if isinstance(value, bool):
            rendered = "true" if value else "false"
        elif isinstance(value, (int, float)):
            rendered = repr(value)
        elif isinstance(value, str):
            rendered = '"' + value.replace("\\", "\\\\").replace('"', '\\"') + '"'
        elif isinstance(value, list):
            rendered = "[" + ", ".join(
                '"' + str(item) + '"' if isinstance(item, str) else repr(item) for item in value
            ) + "]"
        else:
            raise ConfigError(f"cannot render config value {key}={value!r}")
        lines.append(f"{key} = {rendered}")
    Path(path).write_text("\n".join(lines) + "\n", encoding="utf-8")
