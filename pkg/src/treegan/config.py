"""Run configuration: presets, ``key = value`` files and flag overrides."""
from __future__ import annotations

import dataclasses
from dataclasses import dataclass, fields
from pathlib import Path

from .training import TrainConfig


class ConfigError(ValueError):
    pass


@dataclass
class RunConfig:
    # training
    batch_size: int = 64
    pretrain_epochs: int = 50
    disc_epochs: int = 50
    adv_epochs: int = 50
    lr_gen: float = 0.01
    lr_disc: float = 0.01
    clip_norm: float = 5.0
    g_steps: int = 1
    d_steps: int = 1
    budget: int | None = None
    seed: int = 0
    baseline_decay: float = 0.9
    disc_holdout: float = 0.2
    converge_tol: float = 1e-4
    converge_window: int = 3
    # model sizes
    gen_embed: int = 16
    gen_hidden: int = 32
    disc_embed: int = 16
    disc_hidden: int = 32
    disc_rule_ids: bool = True
    # sampling
    n_samples: int = 1000
    preset: str | None = None

    def __post_init__(self):
        for name in ("gen_embed", "gen_hidden", "disc_embed", "disc_hidden", "n_samples"):
            if getattr(self, name) <= 0:
                raise ConfigError(f"{name} must be positive")
        try:
            self.train_config()
        except ValueError as e:
            raise ConfigError(str(e)) from None

    def train_config(self) -> TrainConfig:
        names = {f.name for f in fields(TrainConfig)}
        return TrainConfig(**{k: v for k, v in dataclasses.asdict(self).items() if k in names})


_FULL = {"batch_size": 64, "pretrain_epochs": 50, "disc_epochs": 50, "adv_epochs": 50}
_DESK = {"pretrain_epochs": 5, "disc_epochs": 5, "adv_epochs": 5, "n_samples": 200}
PRESETS = {
    "pld": dict(_FULL),
    "sql-a": dict(_FULL),
    "sql-b": dict(_FULL),
}
for _name in list(PRESETS):
    PRESETS[f"{_name}-desk"] = {**PRESETS[_name], **_DESK}


def _field_types() -> dict[str, str]:
    return {f.name: str(f.type) for f in fields(RunConfig)}


def _convert(key: str, raw: str):
    kind = _field_types()[key]
    text = raw.strip()
    if "None" in kind and text.lower() in ("none", "null", ""):
        return None
    try:
        if kind.startswith("int"):
            return int(text)
        if kind.startswith("float"):
            return float(text)
        if kind.startswith("bool"):
            if text.lower() in ("1", "true", "yes", "on"):
                return True
            if text.lower() in ("0", "false", "no", "off"):
                return False
            raise ValueError(text)
    except ValueError:
        raise ConfigError(f"bad value for {key}: {raw!r}") from None
    return text


def parse_config_text(text: str) -> dict:
    """Parse ``key = value`` lines; ``#`` starts a comment; unknown keys are rejected."""
    known = _field_types()
    out = {}
    for lineno, line in enumerate(text.splitlines(), start=1):
        line = line.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigError(f"line {lineno}: expected 'key = value'")
        key, value = (s.strip() for s in line.split("=", 1))
        key = key.replace("-", "_")
        if key not in known:
            raise ConfigError(f"line {lineno}: unknown key {key!r}")
        out[key] = _convert(key, value)
    return out


def resolve(preset: str | None = None, config_path=None, overrides: dict | None = None) -> RunConfig:
    """Merge preset defaults, then the config file, then explicit overrides."""
    values: dict = {}
    file_values = parse_config_text(Path(config_path).read_text(encoding="utf-8")) if config_path else {}
    preset = overrides.get("preset") if overrides and overrides.get("preset") else (file_values.get("preset") or preset)
    if preset is not None:
        if preset not in PRESETS:
            raise ConfigError(f"unknown preset {preset!r}; choose from {sorted(PRESETS)}")
        values.update(PRESETS[preset])
        values["preset"] = preset
    values.update(file_values)
    for k, v in (overrides or {}).items():
        if v is None:
            continue
        if k not in _field_types():
            raise ConfigError(f"unknown key {k!r}")
        values[k] = v
    return RunConfig(**values)


def render_config(cfg: RunConfig) -> str:
    return "".join(f"{k} = {'none' if v is None else v}\n" for k, v in dataclasses.asdict(cfg).items())
