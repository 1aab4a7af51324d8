"""Flat ``key = value`` run configuration files.

Each line holds one field and a JSON literal. Every field of the training,
generator and sampling configs is written, defaults included, in a fixed
order, so a saved file is a complete record of a run. Unknown keys are errors.
"""

from __future__ import annotations

import dataclasses
import json
from dataclasses import dataclass, field
from pathlib import Path

from .core import TrainingConfig
from .generator import GeneratorConfig
from .sampler import SamplingSpec

__all__ = ["RunConfig", "ConfigError", "parse_run_config", "dump_run_config",
           "read_run_config", "write_run_config", "FIELD_OWNERS"]


class ConfigError(ValueError):
    pass


_SECTIONS = (("training", TrainingConfig), ("generator", GeneratorConfig), ("sampling", SamplingSpec))
FIELD_OWNERS = {f.name: sec for sec, cls in _SECTIONS for f in dataclasses.fields(cls)}
FIELD_OWNERS["z_indices"] = None


@dataclass(frozen=True)
class RunConfig:
    training: TrainingConfig = field(default_factory=TrainingConfig)
    generator: GeneratorConfig = field(default_factory=GeneratorConfig)
    sampling: SamplingSpec = field(default_factory=SamplingSpec)
    z_indices: tuple[int, ...] | None = None

    def with_overrides(self, **values) -> "RunConfig":
        """Return a copy with flat field overrides; ``None`` values are ignored."""
        grouped: dict[str, dict] = {"training": {}, "generator": {}, "sampling": {}}
        z = self.z_indices
        for key, val in values.items():
            if val is None:
                continue
            if key not in FIELD_OWNERS:
                raise ConfigError(f"unknown config key {key!r}")
            owner = FIELD_OWNERS[key]
            if owner is None:
                z = tuple(int(i) for i in val)
            else:
                grouped[owner][key] = val
        try:
            return RunConfig(
                dataclasses.replace(self.training, **grouped["training"]),
                dataclasses.replace(self.generator, **grouped["generator"]),
                dataclasses.replace(self.sampling, **grouped["sampling"]),
                z,
            )
        except (TypeError, ValueError) as exc:
            raise ConfigError(str(exc)) from exc

    def flat(self) -> dict:
        out = {}
        for sec, _ in _SECTIONS:
            out.update(dataclasses.asdict(getattr(self, sec)))
        out["z_indices"] = list(self.z_indices) if self.z_indices is not None else None
        return out


def parse_run_config(text: str) -> RunConfig:
    values = {}
    for lineno, raw in enumerate(text.splitlines(), 1):
        line = raw.strip()
        if not line or line.startswith("#"):
            continue
        key, sep, val = line.partition("=")
        key = key.strip()
        if not sep:
            raise ConfigError(f"line {lineno}: expected 'key = value'")
        if key not in FIELD_OWNERS:
            raise ConfigError(f"line {lineno}: unknown key {key!r}")
        if key in values:
            raise ConfigError(f"line {lineno}: duplicate key {key!r}")
        try:
            values[key] = json.loads(val.strip())
        except json.JSONDecodeError as exc:
            raise ConfigError(f"line {lineno}: bad value for {key!r}: {exc}") from exc
    z = values.pop("z_indices", None)
    cfg = RunConfig().with_overrides(**values)
    if z is not None:
        cfg = dataclasses.replace(cfg, z_indices=tuple(int(i) for i in z))
    return cfg


def dump_run_config(cfg: RunConfig) -> str:
    return "".join(f"{k} = {json.dumps(v)}\n" for k, v in cfg.flat().items())


def read_run_config(path) -> RunConfig:
    return parse_run_config(Path(path).read_text())


def write_run_config(cfg: RunConfig, path) -> Path:
    path = Path(path)
    path.write_text(dump_run_config(cfg))
    return path
