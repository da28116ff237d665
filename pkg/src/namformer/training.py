"""Losses, AdamW and the end-to-end training loop with feature dropout."""

from __future__ import annotations

import logging
import math
import time
from dataclasses import asdict, dataclass, field

import numpy as np
import pandas as pd

from . import numeric as nm
from .encoding import EncoderState
from .model import ModelConfig, NAMformer, sample_mask
from .numeric import Tape, Tensor

log = logging.getLogger(__name__)

LOSSES = ("mse", "logloss")


class TrainingDiverged(RuntimeError):
    pass


def _prep(eta, y):
    taped = isinstance(eta, Tensor)
    eta = eta if taped else Tensor(eta)
    y = np.asarray(y, dtype=np.float64).reshape(-1)
    if eta.data.size == 0:
        raise ValueError("loss of an empty batch")
    if eta.shape != y.shape:
        raise ValueError(f"prediction shape {eta.shape} does not match target shape {y.shape}")
    return taped, eta, y


def loss_mse(eta, y):
    """Mean squared residual.  Tensors in, Tensor out; arrays in, float out."""
    taped, eta, y = _prep(eta, y)
    r = nm.add(eta, Tensor(-y))
    out = nm.mean(nm.multiply(r, r))
    return out if taped else float(out.data)


def loss_logloss(eta, y):
    """Mean log(1 + exp(-m)) with margin m = (2y - 1) * eta, y in {0, 1}."""
    taped, eta, y = _prep(eta, y)
    if not np.isin(y, (0.0, 1.0)).all():
        raise ValueError("logloss labels must be 0/1")
    out = nm.mean(nm.softplus(nm.multiply(eta, Tensor(1.0 - 2.0 * y))))
    return out if taped else float(out.data)


LOSS_FUNCTIONS = {"mse": loss_mse, "logloss": loss_logloss}


@dataclass
class TrainConfig:
    learning_rate: float = 1e-4
    weight_decay: float = 1e-5
    batch_size: int = 128
    max_epochs: int = 200
    patience: int = 15
    lr_decay: float = 0.1
    lr_patience: int = 10
    feature_dropout: float | None = None  # None: take the model config's rate
    seed: int = 0
    validation_fraction: float = 0.3
    loss: str = "mse"
    clip_norm: float | None = 1.0

    def __post_init__(self):
        if self.patience < 1 or self.lr_patience < 1:
            raise ValueError("patience values must be positive")
        if not 0.0 < self.validation_fraction < 1.0:
            raise ValueError("validation_fraction must lie in (0, 1)")
        if self.loss not in LOSSES:
            raise ValueError(f"unknown loss {self.loss!r}")
        if self.batch_size < 1 or self.max_epochs < 1:
            raise ValueError("batch_size and max_epochs must be positive")


@dataclass
class TrainHistory:
    train_loss: list = field(default_factory=list)
    val_loss: list = field(default_factory=list)
    learning_rate: list = field(default_factory=list)
    wall_time: list = field(default_factory=list)
    best_epoch: int = -1
    stopped_early: bool = False

    def to_frame(self) -> pd.DataFrame:
        return pd.DataFrame({
            "epoch": np.arange(1, len(self.train_loss) + 1),
            "train_loss": self.train_loss,
            "val_loss": self.val_loss,
            "learning_rate": self.learning_rate,
            "wall_time": self.wall_time,
        })

    def losses(self) -> tuple:
        """Everything except wall time: the part a fixed seed reproduces."""
        return tuple(self.train_loss), tuple(self.val_loss), tuple(self.learning_rate), self.best_epoch


class AdamW:
    """Adam with decoupled weight decay over a ``name -> ndarray`` dict."""

    def __init__(self, params: dict, lr: float = 1e-3, betas=(0.9, 0.999), eps: float = 1e-8,
                 weight_decay: float = 0.0):
        self.params = params
        self.lr = lr
        self.beta1, self.beta2 = betas
        self.eps = eps
        self.weight_decay = weight_decay
        self.t = 0
        self.m = {k: np.zeros_like(v) for k, v in params.items()}
        self.v = {k: np.zeros_like(v) for k, v in params.items()}

    def step(self, grads: dict):
        self.t += 1
        b1, b2 = self.beta1, self.beta2
        c1 = 1.0 - b1**self.t
        c2 = 1.0 - b2**self.t
        for k, p in self.params.items():
            g = grads[k]
            m, v = self.m[k], self.v[k]
            m *= b1
            m += (1.0 - b1) * g
            v *= b2
            v += (1.0 - b2) * g * g
            if self.weight_decay:
                p *= 1.0 - self.lr * self.weight_decay
            p -= self.lr * (m / c1) / (np.sqrt(v / c2) + self.eps)


def clip_gradients(grads: dict, max_norm: float) -> float:
    """Scale all gradients in place so their global L2 norm is <= max_norm."""
    total = math.sqrt(sum(float(np.sum(g * g)) for g in grads.values()))
    if total > max_norm:
        f = max_norm / (total + 1e-12)
        for g in grads.values():
            g *= f
    return total


def _rows(inputs, idx):
    return [np.asarray(a)[idx] for a in inputs]


def initial_bias(y: np.ndarray, loss: str) -> float:
    if loss == "logloss":
        p = float(np.clip(y.mean(), 1e-6, 1 - 1e-6))
        return math.log(p / (1 - p))
    return float(y.mean())


def train_step(model: NAMformer, opt: AdamW, inputs, y, loss: str, feature_dropout: float,
               rng: np.random.Generator, training: bool = True, clip_norm: float | None = 1.0) -> float:
    """One forward/backward/update; returns the batch loss before the update."""
    tape = Tape()
    P = model.leaves(tape)
    mask = None
    if model.config.shape_nets and training:
        mask = sample_mask(feature_dropout, model.n_components, rng, size=len(y))
    eta, _, _ = model.forward(P, inputs, mask, training=training, rng=rng)
    value = LOSS_FUNCTIONS[loss](eta, y)
    grads = tape.named_gradients(tape.backward(value))
    if clip_norm is not None:
        clip_gradients(grads, clip_norm)
    opt.step(grads)
    return float(value.data)


def evaluate_loss(model: NAMformer, inputs, y, loss: str) -> float:
    if model.config.shape_nets:
        eta, _ = model.predict(inputs)
    else:
        tape = Tape(record=False)
        eta = model.forward(model.leaves(tape), inputs)[0].data
    return LOSS_FUNCTIONS[loss](eta, y)


def split_indices(n: int, validation_fraction: float, rng: np.random.Generator) -> tuple:
    perm = rng.permutation(n)
    n_val = max(1, int(round(n * validation_fraction)))
    if n_val >= n:
        raise ValueError("validation split leaves no training rows")
    return np.sort(perm[n_val:]), np.sort(perm[:n_val])


def _streams(seed: int) -> tuple:
    seq = np.random.SeedSequence(seed)
    return tuple(np.random.default_rng(s) for s in seq.spawn(3))


def validation_split(n: int, config: TrainConfig) -> tuple:
    """The (train, validation) row indices ``train`` will use for n rows."""
    return split_indices(n, config.validation_fraction, _streams(config.seed)[0])


def train(frame: pd.DataFrame, target, encoders: EncoderState, config: TrainConfig,
          model_config: ModelConfig) -> tuple:
    """Fit a NAMformer; returns (best-validation model, TrainHistory).

    ``frame`` is the training split; ``config.validation_fraction`` of it is
    held out (seeded shuffle) for early stopping and LR decay.
    """
    y = frame[target].to_numpy(dtype=np.float64) if isinstance(target, str) else np.asarray(target, dtype=np.float64)
    inputs = encoders.transform(frame)
    return train_encoded(inputs, y, encoders.slots(), config, model_config)


def train_encoded(inputs, y, slots, config: TrainConfig, model_config: ModelConfig,
                  model: NAMformer | None = None) -> tuple:
    y = np.asarray(y, dtype=np.float64)
    if config.loss == "logloss" and model_config.task != "binary":
        raise ValueError("logloss needs a binary model")
    split_rng, init_rng, loop_rng = _streams(config.seed)
    tr, va = split_indices(len(y), config.validation_fraction, split_rng)
    tr_in, va_in = _rows(inputs, tr), _rows(inputs, va)
    y_tr, y_va = y[tr], y[va]
    if model is None:
        model = NAMformer(model_config, slots, rng=init_rng, beta0=initial_bias(y_tr, config.loss))
    p = model_config.feature_dropout if config.feature_dropout is None else config.feature_dropout
    opt = AdamW(model.params, lr=config.learning_rate, weight_decay=config.weight_decay)
    hist = TrainHistory()
    best_val, best_params = math.inf, None
    since_best = since_lr = 0
    t0 = time.perf_counter()
    for epoch in range(1, config.max_epochs + 1):
        order = loop_rng.permutation(len(y_tr))
        total, seen = 0.0, 0
        for s in range(0, len(order), config.batch_size):
            idx = order[s:s + config.batch_size]
            bl = train_step(model, opt, _rows(tr_in, idx), y_tr[idx], config.loss, p, loop_rng,
                            clip_norm=config.clip_norm)
            if not math.isfinite(bl):
                raise TrainingDiverged(f"non-finite training loss in epoch {epoch}")
            total += bl * len(idx)
            seen += len(idx)
        val = evaluate_loss(model, va_in, y_va, config.loss)
        if not math.isfinite(val):
            raise TrainingDiverged(f"non-finite validation loss in epoch {epoch}")
        hist.train_loss.append(total / seen)
        hist.val_loss.append(val)
        hist.learning_rate.append(opt.lr)
        hist.wall_time.append(time.perf_counter() - t0)
        log.info("epoch %d train %.5f val %.5f lr %.2e", epoch, total / seen, val, opt.lr)
        if val < best_val:
            best_val = val
            best_params = {k: v.copy() for k, v in model.params.items()}
            hist.best_epoch = epoch
            since_best = since_lr = 0
        else:
            since_best += 1
            since_lr += 1
            if since_best >= config.patience:
                hist.stopped_early = True
                break
            if since_lr >= config.lr_patience:
                opt.lr *= config.lr_decay
                since_lr = 0
    best = NAMformer(model.config, model.slots, best_params)
    return best, hist


def config_dict(config) -> dict:
    return asdict(config)


def toy_problem(seed: int = 0, n_rows: int = 5, embedding_dim: int = 8, task: str = "regression") -> tuple:
    """Small J=3 model (two numeric, one categorical feature) with random
    encoded inputs and targets, for gradient checks."""
    from .model import FeatureSlot

    rng = np.random.default_rng(seed)
    slots = [FeatureSlot("a", "numeric", 4), FeatureSlot("b", "numeric", 3), FeatureSlot("c", "categorical", 4)]
    cfg = ModelConfig(embedding_dim=embedding_dim, n_layers=1, n_heads=1, ffn_dim=2 * embedding_dim,
                      head_layers=(4,), task=task)
    model = NAMformer(cfg, slots, rng=rng)
    for v in model.params.values():
        v += rng.normal(0.0, 0.1, size=v.shape)  # move LN and zero biases off their init values
    inputs = [rng.uniform(size=(n_rows, 4)), rng.uniform(size=(n_rows, 3)), rng.integers(0, 4, size=n_rows)]
    if task == "binary":
        y = rng.integers(0, 2, size=n_rows).astype(np.float64)
    else:
        y = rng.normal(size=n_rows)
    return model, inputs, y


def gradient_check(model: NAMformer, inputs, y, loss: str = "mse", mask=None, h: float = 1e-5) -> dict:
    """Max relative error between taped and central-difference gradients,
    per parameter array.  Dropouts are off so the loss is deterministic."""
    if mask is None:
        mask = np.ones(model.n_components)
    mask = np.broadcast_to(np.asarray(mask, dtype=np.float64), (len(y), model.n_components))
    loss_fn = LOSS_FUNCTIONS[loss]

    tape = Tape()
    P = model.leaves(tape)
    value = loss_fn(model.forward(P, inputs, mask)[0], y)
    analytic = tape.named_gradients(tape.backward(value))

    def value_at(name):
        def f(candidate):
            model.params[name] = candidate
            t = Tape(record=False)
            return loss_fn(model.forward(model.leaves(t), inputs, mask)[0].data, y)
        return f

    errors = {}
    for name in list(model.params):
        original = model.params[name]
        try:
            numeric = nm.finite_difference_gradient(value_at(name), original, h)
        finally:
            model.params[name] = original
        errors[name] = nm.relative_error(analytic[name], numeric)
    return errors
