"""Flat ``key = value`` run configuration."""
from __future__ import annotations

from dataclasses import dataclass, field
from pathlib import Path

from .errors import ConfigError
from .training import OptimizerConfig, RegularizerConfig


def _widths(text) -> tuple[int, ...]:
    if isinstance(text, (tuple, list)):
        return tuple(int(v) for v in text)
    text = str(text).strip()
    if not text:
        return ()
    return tuple(int(v) for v in text.replace("x", ",").split(","))


# key -> (parser, default); defaults follow the public-dataset protocol
SCHEMA: dict[str, tuple] = {
    "model.kind": (str, "din"),
    "embedding.dim": (int, 12),
    "mlp.widths": (_widths, (200, 80)),
    "activation.kind": (str, "prelu"),
    "unit.hidden_width": (int, 36),
    "optimizer.kind": (str, "sgd"),
    "optimizer.lr": (float, 1.0),
    "optimizer.decay": (float, 0.1),
    "optimizer.batch_size": (int, 32),
    "optimizer.epochs": (int, 2),
    "optimizer.beta1": (float, 0.9),
    "optimizer.beta2": (float, 0.999),
    "optimizer.eps": (float, 1e-8),
    "reg.kind": (str, "none"),
    "reg.lambda": (float, None),
    "reg.dropout_rate": (float, 0.5),
    "reg.filter_top_n": (int, None),
    "data.dir": (str, None),
    "data.reviews": (str, None),
    "data.meta": (str, None),
    "data.ratings": (str, None),
    "data.movies": (str, None),
    "seed": (int, 0),
}

CHOICES = {
    "model.kind": ("lr", "base", "din"),
    "activation.kind": ("prelu", "dice"),
    "optimizer.kind": ("sgd", "adam"),
    "reg.kind": ("none", "dropout", "filter", "mba"),
}


@dataclass
class RunConfig:
    values: dict = field(default_factory=dict)

    @classmethod
    def from_mapping(cls, mapping: dict) -> "RunConfig":
        values = {k: default for k, (_, default) in SCHEMA.items()}
        for key, raw in mapping.items():
            if key not in SCHEMA:
                raise ConfigError(key, "unknown key")
            parser = SCHEMA[key][0]
            try:
                values[key] = parser(raw) if raw is not None else None
            except (TypeError, ValueError) as exc:
                raise ConfigError(key, f"cannot parse {raw!r}: {exc}") from exc
        cfg = cls(values)
        cfg.validate(set(mapping))
        return cfg

    @classmethod
    def from_text(cls, text: str) -> "RunConfig":
        mapping = {}
        for lineno, line in enumerate(text.splitlines(), 1):
            line = line.split("#", 1)[0].strip()
            if not line:
                continue
            if "=" not in line:
                raise ConfigError(f"line {lineno}", f"expected key = value, got {line!r}")
            key, value = (s.strip() for s in line.split("=", 1))
            if key in mapping:
                raise ConfigError(key, "duplicate key")
            mapping[key] = value
        return cls.from_mapping(mapping)

    @classmethod
    def from_file(cls, path) -> "RunConfig":
        return cls.from_text(Path(path).read_text(encoding="utf-8"))

    def validate(self, given: set[str]) -> None:
        v = self.values
        for key, allowed in CHOICES.items():
            if v[key] not in allowed:
                raise ConfigError(key, f"must be one of {allowed}, got {v[key]!r}")
        for key in ("embedding.dim", "unit.hidden_width", "optimizer.batch_size"):
            if v[key] < 1:
                raise ConfigError(key, "must be >= 1")
        if v["optimizer.epochs"] < 0:
            raise ConfigError("optimizer.epochs", "must be >= 0")
        if not v["optimizer.lr"] > 0:
            raise ConfigError("optimizer.lr", "must be positive")
        if not 0 < v["optimizer.decay"] <= 1:
            raise ConfigError("optimizer.decay", "must lie in (0, 1]")
        if v["reg.kind"] == "mba":
            if "reg.lambda" not in given or v["reg.lambda"] is None:
                raise ConfigError("reg.lambda", "required when reg.kind = mba")
            if v["reg.lambda"] < 0:
                raise ConfigError("reg.lambda", "must be non-negative")
        if v["reg.kind"] == "filter" and not v["reg.filter_top_n"]:
            raise ConfigError("reg.filter_top_n", "required when reg.kind = filter")
        if not 0 <= v["reg.dropout_rate"] <= 1:
            raise ConfigError("reg.dropout_rate", "must lie in [0, 1]")

    def __getitem__(self, key):
        return self.values[key]

    def optimizer(self) -> OptimizerConfig:
        v = self.values
        return OptimizerConfig(v["optimizer.kind"], v["optimizer.lr"], v["optimizer.decay"],
                               v["optimizer.batch_size"], v["optimizer.beta1"], v["optimizer.beta2"],
                               v["optimizer.eps"])

    def regularizer(self) -> RegularizerConfig:
        v = self.values
        return RegularizerConfig(v["reg.kind"], v["reg.lambda"] or 0.0, v["reg.dropout_rate"],
                                 v["reg.filter_top_n"])

    def snapshot(self) -> dict:
        """JSON-friendly copy without data paths."""
        return {k: (list(val) if isinstance(val, tuple) else val)
                for k, val in sorted(self.values.items()) if not k.startswith("data.")}
