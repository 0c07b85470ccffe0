"""``key = value`` experiment configuration files.

Blank lines and lines starting with ``#`` are ignored. List values are
comma-separated. Every key is optional; see ``KEYS`` for the full set and
``ExperimentConfig`` for the defaults.
"""
from __future__ import annotations

import dataclasses
from dataclasses import dataclass, field
from pathlib import Path

from .core import VARIANTS, TrainConfig
from .errors import ConfigError

# per-run keys that the experiment config replaces with lists
_RUN_KEYS = ("seed", "variant")


@dataclass(frozen=True)
class ExperimentConfig:
    train: TrainConfig = field(default_factory=TrainConfig)
    # synthetic dataset
    num_classes: int = 4
    per_class: int = 500
    test_per_class: int = 200
    dim: int = 8
    separation: float = 6.0
    generator: str = "uniform"
    oracle_epochs: int = 50
    # or CSV files (candidates taken from the file; q and generator ignored)
    train_csv: str | None = None
    test_csv: str | None = None
    seeds: tuple[int, ...] = (1, 2, 3)
    q: tuple[float, ...] = (0.5,)
    variants: tuple[str, ...] = ("full",)
    out_dir: str = "runs"

    def train_config(self, seed: int, variant: str | None = None) -> TrainConfig:
        return self.train.replace(seed=seed, variant=variant or self.variants[0])

    def replace(self, **changes) -> "ExperimentConfig":
        train_changes = {k: changes.pop(k) for k in list(changes) if k in _train_fields()}
        cfg = dataclasses.replace(self, **changes)
        if train_changes:
            cfg = dataclasses.replace(cfg, train=cfg.train.replace(**train_changes))
        return cfg


def _train_fields() -> dict[str, object]:
    return {f.name: f.default for f in dataclasses.fields(TrainConfig) if f.name not in _RUN_KEYS}


def _experiment_fields() -> dict[str, object]:
    return {f.name: f.default for f in dataclasses.fields(ExperimentConfig) if f.name != "train"}


def _defaults() -> dict[str, object]:
    return {**_train_fields(), **_experiment_fields()}


KEYS: tuple[str, ...] = tuple(_defaults())
_OPTIONAL_STR = ("train_csv", "test_csv")
_ELEMENT_TYPE = {"encoder_hidden": int, "seeds": int, "q": float, "variants": str}


def _parse_scalar(kind: type, text: str, key: str, line: int | None):
    try:
        if kind is int:
            return int(text)
        if kind is float:
            return float(text)
    except ValueError:
        raise ConfigError(f"expected {kind.__name__}, got {text!r}", key, line) from None
    return text


def _parse_value(key: str, text: str, line: int | None):
    default = _defaults()[key]
    if key in _OPTIONAL_STR:
        return None if text in ("", "none", "None") else text
    if isinstance(default, tuple):
        items = [t.strip() for t in text.split(",") if t.strip()]
        if not items:
            raise ConfigError("list must not be empty", key, line)
        return tuple(_parse_scalar(_ELEMENT_TYPE[key], t, key, line) for t in items)
    return _parse_scalar(type(default), text, key, line)


def _format_value(value) -> str:
    if value is None:
        return "none"
    if isinstance(value, tuple):
        return ",".join(_format_value(v) for v in value)
    if isinstance(value, float):
        return repr(value)
    return str(value)


def _validate(values: dict[str, object], lines: dict[str, int]) -> ExperimentConfig:
    def fail(key, msg):
        raise ConfigError(msg, key, lines.get(key))

    if any(not 0.0 <= q <= 1.0 for q in values["q"]):
        fail("q", f"values must lie in [0, 1], got {values['q']}")
    if any(s < 0 for s in values["seeds"]):
        fail("seeds", "seeds must be non-negative")
    bad = [v for v in values["variants"] if v not in VARIANTS]
    if bad:
        fail("variants", f"unknown variant(s) {bad}; choose from {VARIANTS}")
    if values["generator"] not in ("uniform", "instance_dependent"):
        fail("generator", "must be uniform or instance_dependent")
    for key in ("num_classes",):
        if values[key] < 2:
            fail(key, "must be >= 2")
    for key in ("per_class", "test_per_class", "dim"):
        if values[key] < 1:
            fail(key, "must be >= 1")
    if not values["separation"] > 0:
        fail("separation", "must be > 0")
    if values["oracle_epochs"] < 0:
        fail("oracle_epochs", "must be >= 0")

    train_values = {k: values[k] for k in _train_fields()}
    try:
        train = TrainConfig(**train_values)
    except ValueError as exc:
        key = str(exc).split()[0]
        raise ConfigError(str(exc), key if key in KEYS else None, lines.get(key)) from None
    return ExperimentConfig(train=train, **{k: values[k] for k in _experiment_fields()})


def parse_config_text(text: str, source: str = "<config>") -> ExperimentConfig:
    values = dict(_defaults())
    lines: dict[str, int] = {}
    for lineno, raw in enumerate(text.splitlines(), start=1):
        stripped = raw.strip()
        if not stripped or stripped.startswith("#"):
            continue
        if "=" not in stripped:
            raise ConfigError(f"{source}: expected 'key = value'", None, lineno)
        key, _, value = (s.strip() for s in stripped.partition("="))
        if key not in values:
            raise ConfigError(f"{source}: unknown key", key, lineno)
        if key in lines:
            raise ConfigError(f"{source}: duplicate key (first on line {lines[key]})", key, lineno)
        values[key] = _parse_value(key, value, lineno)
        lines[key] = lineno
    return _validate(values, lines)


def parse_config(path) -> ExperimentConfig:
    try:
        text = Path(path).read_text(encoding="utf-8")
    except OSError as exc:
        raise ConfigError(f"cannot read config file {path}: {exc.strerror or exc}") from None
    return parse_config_text(text, str(path))


def serialize_config(cfg: ExperimentConfig) -> str:
    values = {**{k: getattr(cfg.train, k) for k in _train_fields()},
              **{k: getattr(cfg, k) for k in _experiment_fields()}}
    return "".join(f"{k} = {_format_value(values[k])}\n" for k in KEYS)
