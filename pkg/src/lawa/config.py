"""Run configuration: defaults, validation, and the flat key=value file.

A run is fully determined by its RunConfig (including the seed), and the
``config.resolved`` file a run writes can be fed back through ``--config``
to replay it exactly.
"""

from __future__ import annotations

from dataclasses import dataclass, fields

from .errors import ConfigError

DATASETS = ("spirals", "csv")
OPTIMIZERS = ("sgd", "adam", "lookahead")
SCHEDULES = ("constant", "cosine", "poly_warmup")
SCHEMES = ("none", "uniform", "ema", "polyak")
BN_MODES = ("auto", "recompute", "copy", "off")
DTYPES = ("f32", "f64")


@dataclass
class RunConfig:
    # dataset
    dataset: str = "spirals"
    n_per_class: int = 1000
    classes: int = 2
    noise: float = 0.2
    csv: str = ""
    label_column: str = "label"
    # model
    hidden: tuple[int, ...] = (64, 64)
    use_bn: bool = False
    dtype: str = "f64"
    # optimizer
    optimizer: str = "sgd"
    lr: float = 0.1
    momentum: float = 0.9
    beta1: float = 0.9
    beta2: float = 0.999
    adam_eps: float = 1e-8
    lookahead_alpha: float = 0.8
    lookahead_k: int = 5
    lookahead_inner: str = "sgd"
    # schedule
    schedule: str = "cosine"
    warmup_steps: int = 0
    end_lr: float = 0.0
    power: float = 1.0
    # run shape
    epochs: int = 50
    batch_size: int = 64
    seed: int = 0
    # averaging
    scheme: str = "uniform"
    k: int = 6
    alpha: float = 0.9
    # batch-norm statistics handling for the averaged model
    bn_mode: str = "auto"
    # checkpointing
    save_every_steps: int = 0  # 0 = save once per epoch
    save_averaged: bool = False
    # output
    out: str = "run"

    def validate(self) -> None:
        def choice(name, value, allowed):
            if value not in allowed:
                raise ConfigError(f"{name} must be one of {allowed}, got {value!r}")

        choice("dataset", self.dataset, DATASETS)
        choice("optimizer", self.optimizer, OPTIMIZERS)
        choice("schedule", self.schedule, SCHEDULES)
        choice("scheme", self.scheme, SCHEMES)
        choice("bn_mode", self.bn_mode, BN_MODES)
        choice("dtype", self.dtype, DTYPES)
        choice("lookahead_inner", self.lookahead_inner, ("sgd", "adam"))
        if self.dataset == "csv" and not self.csv:
            raise ConfigError("dataset=csv requires a csv path")
        if not self.hidden or any(h < 1 for h in self.hidden):
            raise ConfigError(f"hidden widths must be positive, got {self.hidden}")
        if self.epochs < 1:
            raise ConfigError(f"epochs must be >= 1, got {self.epochs}")
        if self.batch_size < 1:
            raise ConfigError(f"batch_size must be >= 1, got {self.batch_size}")
        if self.k < 1:
            raise ConfigError(f"averaging window k must be >= 1, got {self.k}")
        if not 0.0 <= self.alpha <= 1.0:
            raise ConfigError(f"ema alpha must lie in [0, 1], got {self.alpha}")
        if self.lr < 0.0:
            raise ConfigError(f"lr must be >= 0, got {self.lr}")
        if self.momentum < 0.0:
            raise ConfigError(f"momentum must be >= 0, got {self.momentum}")
        if self.save_every_steps < 0:
            raise ConfigError("save_every_steps must be >= 0")
        if self.warmup_steps < 0:
            raise ConfigError("warmup_steps must be >= 0")
        if self.seed < 0:
            raise ConfigError("seed must be >= 0")
        if not self.out:
            raise ConfigError("output directory must be set")


_BOOL_KEYS = {"use_bn", "save_averaged"}
_INT_KEYS = {
    "n_per_class",
    "classes",
    "lookahead_k",
    "warmup_steps",
    "epochs",
    "batch_size",
    "seed",
    "k",
    "save_every_steps",
}
_FLOAT_KEYS = {
    "noise",
    "lr",
    "momentum",
    "beta1",
    "beta2",
    "adam_eps",
    "lookahead_alpha",
    "end_lr",
    "power",
    "alpha",
}


def _parse_value(key: str, text: str):
    try:
        if key == "hidden":
            return tuple(int(part) for part in str(text).split(","))
        if key in _BOOL_KEYS:
            if isinstance(text, bool):
                return text
            lowered = str(text).strip().lower()
            if lowered in ("true", "1", "yes"):
                return True
            if lowered in ("false", "0", "no"):
                return False
            raise ValueError(text)
        if key in _INT_KEYS:
            return int(text)
        if key in _FLOAT_KEYS:
            return float(text)
        return str(text)
    except (TypeError, ValueError):
        raise ConfigError(f"cannot parse config value {key}={text!r}") from None


def config_from_mapping(mapping: dict) -> RunConfig:
    """Build a validated RunConfig from string or typed values."""
    known = {f.name for f in fields(RunConfig)}
    unknown = set(mapping) - known
    if unknown:
        raise ConfigError(f"unknown config keys: {sorted(unknown)}")
    kwargs = {}
    for key, value in mapping.items():
        if isinstance(value, str):
            kwargs[key] = _parse_value(key, value)
        elif key == "hidden":
            kwargs[key] = tuple(int(v) for v in value)
        else:
            kwargs[key] = value
    cfg = RunConfig(**kwargs)
    cfg.validate()
    return cfg


def _format_value(value) -> str:
    if isinstance(value, bool):
        return "true" if value else "false"
    if isinstance(value, tuple):
        return ",".join(str(v) for v in value)
    if isinstance(value, float):
        return repr(value)
    return str(value)


def resolved_text(cfg: RunConfig) -> str:
    """Flat key=value dump of every effective parameter, sorted by key."""
    lines = [
        f"{f.name}={_format_value(getattr(cfg, f.name))}"
        for f in sorted(fields(RunConfig), key=lambda f: f.name)
    ]
    return "\n".join(lines) + "\n"


def parse_config_file(path) -> dict[str, str]:
    """Read a flat key=value file; blank lines and #-comments are skipped."""
    out: dict[str, str] = {}
    try:
        with open(path, encoding="utf-8") as fh:
            for line_no, line in enumerate(fh, start=1):
                stripped = line.strip()
                if not stripped or stripped.startswith("#"):
                    continue
                if "=" not in stripped:
                    raise ConfigError(
                        f"{path}:{line_no}: expected key=value, got {stripped!r}"
                    )
                key, _, value = stripped.partition("=")
                out[key.strip()] = value.strip()
    except OSError as exc:
        raise ConfigError(f"cannot read config file {path}: {exc}") from exc
    return out
