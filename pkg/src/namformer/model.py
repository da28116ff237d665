"""NAMformer network.

Every feature is embedded once.  The uncontextualized embeddings feed two
paths: a bias-free linear shape net per feature, and (with a prepended
[cls] token) a pre-norm transformer stack whose contextualized [cls]
token drives an MLP head.  The prediction is

    eta = beta0 + sum_j w_j * f_j(eps_j) + w_{J+1} * G(Xi_cls)

with ``w`` all ones at inference and a random dropout mask in training.
"""

from __future__ import annotations

import math
from dataclasses import asdict, dataclass, field
from typing import Sequence

import numpy as np
import pandas as pd

from . import numeric as nm
from .numeric import Tape, Tensor

ACTIVATIONS = {"gelu": nm.gelu, "relu": nm.relu}
TASKS = ("regression", "binary")


@dataclass
class ModelConfig:
    embedding_dim: int = 32
    n_layers: int = 4
    n_heads: int = 2
    ffn_dim: int = 64
    attention_dropout: float = 0.3
    ffn_dropout: float = 0.3
    head_layers: tuple = ()
    head_dropout: float = 0.0
    activation: str = "gelu"
    feature_dropout: float = 0.1
    task: str = "regression"
    shape_nets: bool = True

    def __post_init__(self):
        self.head_layers = tuple(int(h) for h in self.head_layers)
        if self.embedding_dim < 1 or self.n_heads < 1:
            raise ValueError("embedding_dim and n_heads must be positive")
        if self.embedding_dim % self.n_heads:
            raise ValueError(
                f"embedding_dim {self.embedding_dim} not divisible by n_heads {self.n_heads}"
            )
        for name in ("attention_dropout", "ffn_dropout", "head_dropout"):
            rate = getattr(self, name)
            if not 0.0 <= rate < 1.0:
                raise ValueError(f"{name} must lie in [0, 1), got {rate}")
        # p = 1 is allowed: it is the degenerate "everything masked" limit.
        if not 0.0 <= self.feature_dropout <= 1.0:
            raise ValueError(f"feature_dropout must lie in [0, 1], got {self.feature_dropout}")
        if self.activation not in ACTIVATIONS:
            raise ValueError(f"unknown activation {self.activation!r}")
        if self.task not in TASKS:
            raise ValueError(f"unknown task {self.task!r}")

    def to_dict(self) -> dict:
        d = asdict(self)
        d["head_layers"] = list(self.head_layers)
        return d


@dataclass(frozen=True)
class FeatureSlot:
    """What the network needs to know about one input feature.

    ``dim`` is the encoded width T_j for numeric features and the
    vocabulary size (unknown slot included) for categorical ones.
    """

    name: str
    kind: str
    dim: int


@dataclass
class Breakdown:
    beta0: float
    shape: np.ndarray  # (B, J)
    head: np.ndarray  # (B,)

    def components(self) -> np.ndarray:
        return np.concatenate([self.shape, self.head[:, None]], axis=1)


def sample_mask(p: float, n_components: int, rng: np.random.Generator, size: int | None = None):
    """Independent Bernoulli keep/drop bits; each bit is 0 with probability p.

    Returns shape ``(n_components,)`` or ``(size, n_components)``.
    """
    if not 0.0 <= p <= 1.0:
        raise ValueError(f"dropout rate must lie in [0, 1], got {p}")
    shape = (n_components,) if size is None else (size, n_components)
    if p == 0.0:
        return np.ones(shape)
    return (rng.random(shape) >= p).astype(np.float64)


def mask_probability(mask, p: float) -> float:
    """P(w = mask) under independent Bernoulli dropout with rate p."""
    mask = np.asarray(mask)
    kept = int(mask.sum())
    return (1.0 - p) ** kept * p ** (mask.size - kept)


def single_component_mask(k: int, n_components: int) -> np.ndarray:
    w = np.zeros(n_components)
    w[k] = 1.0
    return w


class NAMformer:
    """Parameters plus the forward computation.

    ``params`` is a flat ``name -> ndarray`` dict; everything else is
    derived from ``config`` and ``slots``.
    """

    def __init__(self, config: ModelConfig, slots: Sequence[FeatureSlot], params: dict | None = None,
                 rng: np.random.Generator | None = None, beta0: float = 0.0):
        self.config = config
        self.slots = list(slots)
        if params is None:
            params = init_params(config, self.slots, rng or np.random.default_rng(0), beta0)
        self.params = params

    @property
    def n_features(self) -> int:
        return len(self.slots)

    @property
    def n_components(self) -> int:
        return self.n_features + 1

    def n_parameters(self) -> int:
        return int(sum(v.size for v in self.params.values()))

    def copy(self) -> "NAMformer":
        return NAMformer(self.config, self.slots, {k: v.copy() for k, v in self.params.items()})

    # -- taped building blocks ------------------------------------------

    def leaves(self, tape: Tape) -> dict:
        return {k: tape.leaf(v, name=k) for k, v in self.params.items()}

    def check_inputs(self, inputs: Sequence[np.ndarray]) -> int:
        if len(inputs) != self.n_features:
            raise ValueError(f"expected {self.n_features} encoded features, got {len(inputs)}")
        n = None
        for slot, arr in zip(self.slots, inputs):
            arr = np.asarray(arr)
            if slot.kind == "numeric":
                if arr.ndim != 2 or arr.shape[1] != slot.dim:
                    raise ValueError(
                        f"feature {slot.name!r}: encoded width {arr.shape[1:] } does not match {slot.dim}"
                    )
            elif arr.ndim != 1:
                raise ValueError(f"feature {slot.name!r}: categorical index must be 1-d")
            if n is None:
                n = arr.shape[0]
            elif arr.shape[0] != n:
                raise ValueError("encoded features disagree on the number of rows")
        return n

    def embed(self, P: dict, inputs: Sequence[np.ndarray]) -> tuple:
        """Uncontextualized embeddings, each (B, 1, e), plus the [cls] token."""
        n = self.check_inputs(inputs)
        eps = []
        for j, (slot, arr) in enumerate(zip(self.slots, inputs)):
            if slot.kind == "numeric":
                z = Tensor(np.asarray(arr, dtype=np.float64)[:, None, :])
                eps.append(nm.add(nm.matmul(z, P[f"embed.{j}.weight"]), P[f"embed.{j}.bias"]))
            else:
                idx = np.asarray(arr, dtype=np.int64)[:, None]
                eps.append(nm.embedding(P[f"embed.{j}.table"], idx))
        e = self.config.embedding_dim
        cls = nm.add(Tensor(np.zeros((n, 1, e))), P["cls"])
        return eps, cls

    def _affine_norm(self, P, x, prefix):
        return nm.add(nm.multiply(nm.layer_norm(x), P[f"{prefix}.scale"]), P[f"{prefix}.shift"])

    def contextualize(self, P: dict, tokens: Tensor, training: bool = False,
                      rng: np.random.Generator | None = None) -> Tensor:
        """Pre-norm transformer blocks without positional information."""
        cfg = self.config
        e, h = cfg.embedding_dim, cfg.n_heads
        d = e // h
        act = ACTIVATIONS[cfg.activation]
        att_rate = cfg.attention_dropout if training else 0.0
        ffn_rate = cfg.ffn_dropout if training else 0.0
        x = tokens
        for layer in range(cfg.n_layers):
            pre = f"layers.{layer}"
            a = self._affine_norm(P, x, f"{pre}.norm1")
            # keys carry no bias: it would shift every logit of a row equally
            bias = nm.concat([P[f"{pre}.attn.q.bias"], Tensor(np.zeros(e)), P[f"{pre}.attn.v.bias"]], axis=0)
            qkv = nm.add(nm.matmul(a, P[f"{pre}.attn.qkv.weight"]), bias)
            heads = []
            for i in range(h):
                q = qkv[..., i * d:(i + 1) * d]
                k = qkv[..., e + i * d:e + (i + 1) * d]
                v = qkv[..., 2 * e + i * d:2 * e + (i + 1) * d]
                att = nm.softmax(nm.scale(nm.matmul(q, k, transpose_b=True), 1.0 / math.sqrt(d)))
                att = nm.dropout(att, att_rate, rng)
                heads.append(nm.matmul(att, v))
            mixed = heads[0] if h == 1 else nm.concat(heads, axis=-1)
            out = nm.add(nm.matmul(mixed, P[f"{pre}.attn.out.weight"]), P[f"{pre}.attn.out.bias"])
            x = nm.add(x, out)
            f = self._affine_norm(P, x, f"{pre}.norm2")
            f = act(nm.add(nm.matmul(f, P[f"{pre}.ffn.in.weight"]), P[f"{pre}.ffn.in.bias"]))
            f = nm.dropout(f, ffn_rate, rng)
            f = nm.add(nm.matmul(f, P[f"{pre}.ffn.out.weight"]), P[f"{pre}.ffn.out.bias"])
            x = nm.add(x, f)
        return self._affine_norm(P, x, "final_norm")

    def shape_outputs(self, P: dict, eps: Sequence[Tensor]) -> Tensor:
        """f_j = u_j . eps_j for every feature, shape (B, J)."""
        outs = [nm.matmul(ej, P[f"shape.{j}"]) for j, ej in enumerate(eps)]
        stacked = outs[0] if len(outs) == 1 else nm.concat(outs, axis=1)
        return stacked[:, :, 0]

    def head(self, P: dict, cls_token: Tensor, training: bool = False,
             rng: np.random.Generator | None = None) -> Tensor:
        """MLP over the contextualized [cls] embedding; returns (B, 1)."""
        act = ACTIVATIONS[self.config.activation]
        rate = self.config.head_dropout if training else 0.0
        x = cls_token
        for i in range(len(self.config.head_layers)):
            x = act(nm.add(nm.matmul(x, P[f"head.{i}.weight"]), P[f"head.{i}.bias"]))
            x = nm.dropout(x, rate, rng)
        i = len(self.config.head_layers)
        return nm.add(nm.matmul(x, P[f"head.{i}.weight"]), P[f"head.{i}.bias"])

    def forward(self, P: dict, inputs: Sequence[np.ndarray], mask=None, training: bool = False,
                rng: np.random.Generator | None = None) -> tuple:
        """Taped forward.  Returns (eta (B,), components (B, J+1), extras).

        ``mask`` is None (all ones), a (J+1,) vector or a per-row
        (B, J+1) matrix.  ``extras`` holds the uncontextualized and
        contextualized token tensors.
        """
        if training and rng is None:
            raise ValueError("training mode needs an rng")
        eps, cls = self.embed(P, inputs)
        tokens = nm.concat([cls] + eps, axis=1)
        xi = self.contextualize(P, tokens, training, rng)
        g = self.head(P, xi[:, 0, :], training, rng)
        if self.config.shape_nets:
            comps = nm.concat([self.shape_outputs(P, eps), g], axis=1)
        else:
            comps = g
        n_comp = comps.shape[1]
        if mask is not None:
            mask = np.asarray(mask, dtype=np.float64)
            if mask.shape[-1] != n_comp:
                raise ValueError(f"mask length {mask.shape[-1]} does not match {n_comp} components")
            comps_used = nm.multiply(comps, Tensor(mask))
        else:
            comps_used = comps
        eta = nm.add(nm.sum_(comps_used, axis=1), P["beta0"])
        return eta, comps, {"tokens": tokens, "contextual": xi}

    # -- numpy-facing inference -----------------------------------------

    def predict(self, inputs: Sequence[np.ndarray], mask=None, batch_size: int = 2048) -> tuple:
        """Inference with dropouts off.  Returns (eta, Breakdown)."""
        if not self.config.shape_nets:
            raise ValueError("breakdown needs shape nets")
        n = self.check_inputs(inputs)
        mask = np.ones(self.n_components) if mask is None else np.asarray(mask, dtype=np.float64)
        if mask.shape[-1] != self.n_components:
            raise ValueError(f"mask length {mask.shape[-1]} does not match {self.n_components} components")
        comps = np.empty((n, self.n_components))
        for s in range(0, n, batch_size):
            part = [np.asarray(a)[s:s + batch_size] for a in inputs]
            tape = Tape(record=False)
            _, c, _ = self.forward(self.leaves(tape), part)
            comps[s:s + batch_size] = c.data
        beta0 = float(self.params["beta0"][0])
        eta = combine(beta0, comps, mask)
        return eta, Breakdown(beta0, comps[:, :-1].copy(), comps[:, -1].copy())

    def embeddings(self, inputs: Sequence[np.ndarray], stage: str, batch_size: int = 2048) -> np.ndarray:
        """Token embeddings (B, J, e) of the feature tokens at a stage."""
        if stage not in ("uncontextualized", "contextualized"):
            raise ValueError(f"unknown stage {stage!r}")
        n = self.check_inputs(inputs)
        out = np.empty((n, self.n_features, self.config.embedding_dim))
        for s in range(0, n, batch_size):
            part = [np.asarray(a)[s:s + batch_size] for a in inputs]
            tape = Tape(record=False)
            P = self.leaves(tape)
            eps, cls = self.embed(P, part)
            tokens = nm.concat([cls] + eps, axis=1)
            if stage == "uncontextualized":
                out[s:s + batch_size] = tokens.data[:, 1:]
            else:
                out[s:s + batch_size] = self.contextualize(P, tokens).data[:, 1:]
        return out

    def shape_curve(self, j: int, encoded: np.ndarray) -> np.ndarray:
        """f_j on already-encoded inputs of feature j (no transformer pass)."""
        slot = self.slots[j]
        if slot.kind == "numeric":
            z = np.asarray(encoded, dtype=np.float64)
            eps = z @ self.params[f"embed.{j}.weight"] + self.params[f"embed.{j}.bias"]
        else:
            eps = self.params[f"embed.{j}.table"][np.asarray(encoded, dtype=np.int64)]
        return eps @ self.params[f"shape.{j}"][:, 0]


def extract_shape_function(model: NAMformer, encoder, j: int, grid) -> pd.DataFrame:
    """Evaluate f_j on a grid of raw values (levels for categoricals).

    ``encoder`` is the fitted encoder of feature j.  Returns columns x,
    f_raw and f_centered (f_raw minus its grid mean).
    """
    if not model.config.shape_nets:
        raise ValueError("model has no shape nets")
    grid = np.asarray(grid)
    raw = model.shape_curve(j, encoder.transform(grid))
    return pd.DataFrame({"x": grid, "f_raw": raw, "f_centered": raw - raw.mean()})


def combine(beta0: float, components: np.ndarray, mask) -> np.ndarray:
    """beta0 + sum_j w_j c_j, in the same operation order as the taped forward."""
    return np.sum(components * np.asarray(mask, dtype=np.float64), axis=1) + np.array([beta0])


def init_params(config: ModelConfig, slots: Sequence[FeatureSlot], rng: np.random.Generator,
                beta0: float = 0.0) -> dict:
    e = config.embedding_dim

    def uniform(fan_in, shape):
        bound = 1.0 / math.sqrt(fan_in)
        return rng.uniform(-bound, bound, size=shape)

    p = {"beta0": np.array([float(beta0)]), "cls": uniform(e, (1, e))}
    for j, slot in enumerate(slots):
        if slot.kind == "numeric":
            p[f"embed.{j}.weight"] = uniform(slot.dim, (slot.dim, e))
            p[f"embed.{j}.bias"] = uniform(slot.dim, (e,))
        elif slot.kind == "categorical":
            p[f"embed.{j}.table"] = uniform(e, (slot.dim, e))
        else:
            raise ValueError(f"unknown feature kind {slot.kind!r}")
    for layer in range(config.n_layers):
        pre = f"layers.{layer}"
        for norm in ("norm1", "norm2"):
            p[f"{pre}.{norm}.scale"] = np.ones(e)
            p[f"{pre}.{norm}.shift"] = np.zeros(e)
        p[f"{pre}.attn.qkv.weight"] = uniform(e, (e, 3 * e))
        p[f"{pre}.attn.q.bias"] = np.zeros(e)
        p[f"{pre}.attn.v.bias"] = np.zeros(e)
        p[f"{pre}.attn.out.weight"] = uniform(e, (e, e))
        p[f"{pre}.attn.out.bias"] = np.zeros(e)
        p[f"{pre}.ffn.in.weight"] = uniform(e, (e, config.ffn_dim))
        p[f"{pre}.ffn.in.bias"] = uniform(e, (config.ffn_dim,))
        p[f"{pre}.ffn.out.weight"] = uniform(config.ffn_dim, (config.ffn_dim, e))
        p[f"{pre}.ffn.out.bias"] = uniform(config.ffn_dim, (e,))
    p["final_norm.scale"] = np.ones(e)
    p["final_norm.shift"] = np.zeros(e)
    sizes = [e, *config.head_layers, 1]
    for i in range(len(sizes) - 1):
        p[f"head.{i}.weight"] = uniform(sizes[i], (sizes[i], sizes[i + 1]))
        p[f"head.{i}.bias"] = uniform(sizes[i], (sizes[i + 1],))
    if config.shape_nets:
        for j in range(len(slots)):
            p[f"shape.{j}"] = uniform(e, (e, 1))
    return p
