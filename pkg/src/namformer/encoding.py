"""Target-aware numeric encodings, standardization and categorical tokens."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
import pandas as pd

from .model import FeatureSlot
from .tree import extract_boundaries

NUMERIC_ENCODINGS = ("thermometer", "ple", "standardize")
UNKNOWN = 0


@dataclass(frozen=True)
class FeatureSpec:
    name: str
    kind: str
    encoding: str | None = None

    def __post_init__(self):
        if self.kind == "numeric":
            if self.encoding not in NUMERIC_ENCODINGS:
                raise ValueError(f"feature {self.name!r}: numeric encoding must be one of {NUMERIC_ENCODINGS}")
        elif self.kind == "categorical":
            if self.encoding is not None:
                raise ValueError(f"feature {self.name!r}: categorical features take no encoding")
        else:
            raise ValueError(f"feature {self.name!r}: unknown kind {self.kind!r}")


def encode_thermometer(x, boundaries) -> np.ndarray:
    """z_t = 1[x >= b_t].  Scalar x gives shape (T,), arrays give (n, T)."""
    b = np.asarray(boundaries, dtype=np.float64)
    x = np.asarray(x, dtype=np.float64)
    return (x[..., None] >= b).astype(np.float64)


def encode_ple(x, edges) -> np.ndarray:
    """Piecewise linear encoding over edges b_0 < ... < b_T.

    z_t = 0 if x < b_{t-1}; 1 if x >= b_t; else (x - b_{t-1}) / (b_t - b_{t-1}).
    """
    e = np.asarray(edges, dtype=np.float64)
    lo, hi = e[:-1], e[1:]
    x = np.asarray(x, dtype=np.float64)[..., None]
    z = (x - lo) / (hi - lo)
    z = np.where(x < lo, 0.0, z)
    return np.where(x >= hi, 1.0, z)


def encode_standardize(x, mean: float, std: float) -> np.ndarray:
    if not std > 0:
        raise ValueError("standardization needs std > 0")
    return (np.asarray(x, dtype=np.float64) - mean) / std


def tokenize_categorical(value, vocabulary: dict) -> int:
    return vocabulary.get(str(value), UNKNOWN)


@dataclass
class FeatureEncoder:
    """Fitted state for one feature.

    numeric thermometer: ``boundaries`` (interior b_1..b_T)
    numeric ple: ``boundaries`` are the full edges b_0..b_T
    numeric standardize: ``mean``, ``std``
    categorical: ``vocabulary`` (level -> index >= 1; 0 is unknown)
    """

    spec: FeatureSpec
    boundaries: np.ndarray | None = None
    mean: float | None = None
    std: float | None = None
    vocabulary: dict = field(default_factory=dict)
    degenerate: bool = False

    @property
    def dim(self) -> int:
        if self.spec.kind == "categorical":
            return len(self.vocabulary) + 1
        if self.spec.encoding == "standardize":
            return 1
        if self.spec.encoding == "ple":
            return len(self.boundaries) - 1
        return len(self.boundaries)

    def transform(self, values) -> np.ndarray:
        if self.spec.kind == "categorical":
            return np.array([tokenize_categorical(v, self.vocabulary) for v in values], dtype=np.int64)
        x = np.asarray(values, dtype=np.float64)
        if self.spec.encoding == "thermometer":
            return encode_thermometer(x, self.boundaries)
        if self.spec.encoding == "ple":
            return encode_ple(x, self.boundaries)
        return encode_standardize(x, self.mean, self.std)[:, None]

    def to_dict(self) -> dict:
        d = {"name": self.spec.name, "kind": self.spec.kind, "encoding": self.spec.encoding,
             "degenerate": self.degenerate}
        if self.boundaries is not None:
            d["boundaries"] = [float(b) for b in self.boundaries]
        if self.mean is not None:
            d["mean"], d["std"] = float(self.mean), float(self.std)
        if self.spec.kind == "categorical":
            d["vocabulary"] = dict(self.vocabulary)
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "FeatureEncoder":
        spec = FeatureSpec(d["name"], d["kind"], d.get("encoding"))
        b = d.get("boundaries")
        return cls(spec, boundaries=None if b is None else np.array(b, dtype=np.float64),
                   mean=d.get("mean"), std=d.get("std"),
                   vocabulary={str(k): int(v) for k, v in d.get("vocabulary", {}).items()},
                   degenerate=bool(d.get("degenerate", False)))


@dataclass
class EncoderState:
    features: list

    @property
    def names(self) -> list:
        return [f.spec.name for f in self.features]

    def slots(self) -> list:
        return [FeatureSlot(f.spec.name, f.spec.kind, f.dim) for f in self.features]

    def transform(self, frame: pd.DataFrame) -> list:
        missing = [n for n in self.names if n not in frame.columns]
        if missing:
            raise KeyError(f"missing feature columns: {missing}")
        return [f.transform(frame[f.spec.name].to_numpy()) for f in self.features]

    def to_dict(self) -> dict:
        return {"features": [f.to_dict() for f in self.features]}

    @classmethod
    def from_dict(cls, d: dict) -> "EncoderState":
        return cls([FeatureEncoder.from_dict(f) for f in d["features"]])


DEFAULT_BINS = {"thermometer": 150, "ple": 25}


def _ple_edges(x: np.ndarray, interior: np.ndarray) -> np.ndarray:
    lo, hi = float(x.min()), float(x.max())
    if lo == hi:
        lo, hi = lo - 0.5, hi + 0.5
    inner = interior[(interior > lo) & (interior < hi)]
    return np.concatenate([[lo], inner, [hi]])


def fit_encoders(frame: pd.DataFrame, specs, target, bins: dict | None = None) -> EncoderState:
    """Fit every feature's encoder on a training split.

    ``target`` is the column name or the target array itself.  Boundaries
    come from a 1-d tree of the feature against the target with as many
    leaves as the encoding's bin count.
    """
    if len(frame) == 0:
        raise ValueError("fit_encoders: empty training split")
    bins = {**DEFAULT_BINS, **(bins or {})}
    y = frame[target].to_numpy(dtype=np.float64) if isinstance(target, str) else np.asarray(target, dtype=np.float64)
    out = []
    for spec in specs:
        col = frame[spec.name].to_numpy()
        if spec.kind == "categorical":
            levels = sorted({str(v) for v in col})
            out.append(FeatureEncoder(spec, vocabulary={lv: i + 1 for i, lv in enumerate(levels)}))
            continue
        x = col.astype(np.float64)
        if spec.encoding == "standardize":
            std = float(x.std())
            if not std > 0:
                raise ValueError(f"feature {spec.name!r} is constant; cannot standardize")
            out.append(FeatureEncoder(spec, mean=float(x.mean()), std=std))
            continue
        b = extract_boundaries(x, y, bins[spec.encoding]) if len(x) >= 2 else None
        thr = b.thresholds if b is not None else np.array([float(x[0])])
        degenerate = b is None or b.degenerate
        if spec.encoding == "ple":
            out.append(FeatureEncoder(spec, boundaries=_ple_edges(x, thr), degenerate=degenerate))
        else:
            out.append(FeatureEncoder(spec, boundaries=thr, degenerate=degenerate))
    return EncoderState(out)
