"""Model artifact files and the structured run configuration."""

from __future__ import annotations

import hashlib
import json
from dataclasses import dataclass, field, fields
from pathlib import Path

import numpy as np
import yaml

from .encoding import DEFAULT_BINS, EncoderState
from .model import ModelConfig, NAMformer
from .simulation import SimConfig
from .training import TrainConfig

SCHEMA_VERSION = 1


class ConfigError(ValueError):
    """Malformed configuration or artifact (usage error)."""


# -- model artifact ---------------------------------------------------------


def _canonical(obj) -> bytes:
    return json.dumps(obj, sort_keys=True, separators=(",", ":")).encode("utf-8")


def checksum(payload: dict) -> str:
    return hashlib.sha256(_canonical(payload)).hexdigest()


@dataclass
class ModelArtifact:
    model: NAMformer
    encoders: EncoderState
    seed: int = 0
    feature_ranges: dict = field(default_factory=dict)  # numeric name -> [min, max] of training data
    target: str = "y"

    def payload(self) -> dict:
        params = {k: {"shape": list(v.shape), "data": [float(t) for t in v.ravel()]}
                  for k, v in self.model.params.items()}
        return {
            "schema_version": SCHEMA_VERSION,
            "model_config": self.model.config.to_dict(),
            "encoders": self.encoders.to_dict(),
            "params": params,
            "seed": int(self.seed),
            "feature_ranges": {k: [float(a), float(b)] for k, (a, b) in self.feature_ranges.items()},
            "target": self.target,
        }

    def save(self, path) -> str:
        payload = self.payload()
        digest = checksum(payload)
        doc = {"checksum": digest, **payload}
        Path(path).write_text(json.dumps(doc, sort_keys=True, indent=1))
        return digest

    @classmethod
    def load(cls, path) -> "ModelArtifact":
        try:
            doc = json.loads(Path(path).read_text())
        except json.JSONDecodeError as exc:
            raise ConfigError(f"{path}: not a model artifact ({exc})") from None
        stored = doc.pop("checksum", None)
        if doc.get("schema_version") != SCHEMA_VERSION:
            raise ConfigError(f"{path}: unsupported schema_version {doc.get('schema_version')!r}")
        if stored != checksum(doc):
            raise ConfigError(f"{path}: checksum mismatch")
        params = {}
        for k, rec in doc["params"].items():
            data = np.array(rec["data"], dtype=np.float64)
            shape = tuple(rec["shape"])
            if data.size != int(np.prod(shape)):
                raise ConfigError(f"{path}: parameter {k!r} has {data.size} values for shape {shape}")
            params[k] = data.reshape(shape)
        encoders = EncoderState.from_dict(doc["encoders"])
        model = NAMformer(ModelConfig(**doc["model_config"]), encoders.slots(), params)
        ranges = {k: tuple(v) for k, v in doc.get("feature_ranges", {}).items()}
        return cls(model, encoders, doc["seed"], ranges, doc.get("target", "y"))


# -- run configuration ------------------------------------------------------


def _build(cls, section: dict, where: str):
    allowed = {f.name for f in fields(cls)}
    for key in section:
        if key not in allowed:
            raise ConfigError(f"unknown config key {where}.{key}")
    try:
        return cls(**section)
    except (TypeError, ValueError) as exc:
        raise ConfigError(f"invalid {where} section: {exc}") from None


@dataclass
class RunConfig:
    simulation: SimConfig = field(default_factory=SimConfig)
    model: ModelConfig = field(default_factory=ModelConfig)
    train: TrainConfig = field(default_factory=TrainConfig)
    features: list | None = None  # list of {name, kind, encoding}; None infers from the CSV
    default_encoding: str = "ple"
    bins: dict = field(default_factory=lambda: dict(DEFAULT_BINS))
    target: str = "y"
    schema_version: int = SCHEMA_VERSION

    SECTIONS = {"simulation": SimConfig, "model": ModelConfig, "train": TrainConfig}
    SCALARS = ("features", "default_encoding", "bins", "target", "schema_version")

    @classmethod
    def from_dict(cls, doc: dict | None) -> "RunConfig":
        doc = dict(doc or {})
        version = doc.get("schema_version", SCHEMA_VERSION)
        if version != SCHEMA_VERSION:
            raise ConfigError(f"unsupported schema_version {version!r} (expected {SCHEMA_VERSION})")
        kwargs = {}
        for key, value in doc.items():
            if key in cls.SECTIONS:
                if not isinstance(value, dict):
                    raise ConfigError(f"config key {key} must be a mapping")
                kwargs[key] = _build(cls.SECTIONS[key], value, key)
            elif key in cls.SCALARS:
                kwargs[key] = value
            else:
                raise ConfigError(f"unknown config key {key}")
        cfg = cls(**kwargs)
        bad = set(cfg.bins) - set(DEFAULT_BINS)
        if bad:
            raise ConfigError(f"unknown config key bins.{sorted(bad)[0]}")
        cfg.bins = {**DEFAULT_BINS, **cfg.bins}
        if cfg.features is not None:
            for i, spec in enumerate(cfg.features):
                extra = set(spec) - {"name", "kind", "encoding"}
                if extra:
                    raise ConfigError(f"unknown config key features[{i}].{sorted(extra)[0]}")
        return cfg

    @classmethod
    def load(cls, path) -> "RunConfig":
        if path is None:
            return cls()
        try:
            text = Path(path).read_text()
        except OSError as exc:
            raise ConfigError(f"cannot read config {path}: {exc}") from None
        try:
            doc = json.loads(text) if str(path).endswith(".json") else yaml.safe_load(text)
        except (json.JSONDecodeError, yaml.YAMLError) as exc:
            raise ConfigError(f"cannot parse config {path}: {exc}") from None
        if doc is not None and not isinstance(doc, dict):
            raise ConfigError("config file must hold a mapping")
        return cls.from_dict(doc)
