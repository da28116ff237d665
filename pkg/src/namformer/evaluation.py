"""Metrics and the identifiability experiments."""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable

import numpy as np
import pandas as pd
from scipy.stats import rankdata

from .encoding import EncoderState
from .model import NAMformer, extract_shape_function, sample_mask
from .numeric import sigmoid
from .simulation import SimDataset, conditional_mean, true_centered_marginal
from .tree import PROBE_DEFAULTS, fit_tree

STAGES = ("uncontextualized", "contextualized")


def r2(predicted, actual) -> float:
    p = np.asarray(predicted, dtype=np.float64)
    a = np.asarray(actual, dtype=np.float64)
    if p.shape != a.shape or a.size < 2:
        raise ValueError("r2 needs two equal-length vectors of length >= 2")
    ss_tot = np.sum((a - a.mean()) ** 2)
    if ss_tot == 0:
        raise ValueError("r2 undefined for a constant target")
    return float(1.0 - np.sum((a - p) ** 2) / ss_tot)


def auc(scores, labels) -> float:
    """P(score_pos > score_neg) + 0.5 P(tie), via average ranks."""
    s = np.asarray(scores, dtype=np.float64)
    lab = np.asarray(labels)
    pos = lab == 1
    n_pos, n_neg = int(pos.sum()), int((~pos).sum())
    if n_pos == 0 or n_neg == 0:
        raise ValueError("auc needs both classes")
    ranks = rankdata(s)
    return float((ranks[pos].sum() - n_pos * (n_pos + 1) / 2.0) / (n_pos * n_neg))


def mse(predicted, actual) -> float:
    return float(np.mean((np.asarray(predicted) - np.asarray(actual)) ** 2))


def accuracy(probabilities, labels, threshold: float = 0.5) -> float:
    return float(np.mean((np.asarray(probabilities) >= threshold) == (np.asarray(labels) == 1)))


# -- marginal effects -------------------------------------------------------


@dataclass
class MarginalRecoveryReport:
    r2: dict

    @property
    def mean(self) -> float:
        return float(np.mean(list(self.r2.values())))

    @property
    def std(self) -> float:
        return float(np.std(list(self.r2.values())))

    def to_frame(self) -> pd.DataFrame:
        return pd.DataFrame({"feature": list(self.r2), "r2": list(self.r2.values())})


def marginal_recovery(model: NAMformer, encoders: EncoderState, sim: SimDataset, grid_size: int = 200,
                      train_frame: pd.DataFrame | None = None) -> MarginalRecoveryReport:
    """R^2 of centered learned shape curves against centered true shapes.

    Grids span the observed range of each feature in ``train_frame``
    (default: the whole simulated frame).
    """
    ref = sim.frame if train_frame is None else train_frame
    scores = {}
    for k, name in enumerate(sim.numeric_names, start=1):
        j = encoders.names.index(name)
        x = ref[name].to_numpy()
        grid = np.linspace(x.min(), x.max(), grid_size)
        curve = extract_shape_function(model, encoders.features[j], j, grid)
        _, truth = true_centered_marginal(k, grid)
        scores[name] = r2(curve["f_centered"].to_numpy(), truth)
    return MarginalRecoveryReport(scores)


# -- embedding probe --------------------------------------------------------


@dataclass
class ProbeReport:
    stage: str
    embedding_dim: int
    r2: dict = field(default_factory=dict)

    @property
    def mean(self) -> float:
        return float(np.mean(list(self.r2.values())))

    def to_frame(self) -> pd.DataFrame:
        return pd.DataFrame({"feature": list(self.r2), "r2": list(self.r2.values()),
                             "stage": self.stage, "embedding_dim": self.embedding_dim})


def probe_targets(encoders: EncoderState, frame: pd.DataFrame, j: int) -> np.ndarray:
    enc = encoders.features[j]
    col = frame[enc.spec.name].to_numpy()
    if enc.spec.kind == "categorical":
        return enc.transform(col).astype(np.float64)
    return col.astype(np.float64)


def identifiability_probe(model: NAMformer, encoders: EncoderState, frame: pd.DataFrame, stage: str,
                          test_fraction: float = 0.3, seed: int = 0, features=None) -> ProbeReport:
    """Fit a default CART tree per feature mapping its token embedding to the
    raw feature value (category index for categoricals); report test R^2."""
    if stage not in STAGES:
        raise ValueError(f"stage must be one of {STAGES}, got {stage!r}")
    inputs = encoders.transform(frame)
    emb = model.embeddings(inputs, stage)
    perm = np.random.default_rng(seed).permutation(len(frame))
    n_test = int(round(len(frame) * test_fraction))
    te, tr = perm[:n_test], perm[n_test:]
    names = encoders.names if features is None else list(features)
    report = ProbeReport(stage, model.config.embedding_dim)
    for name in names:
        j = encoders.names.index(name)
        target = probe_targets(encoders, frame, j)
        tree = fit_tree(emb[tr, j, :], target[tr], PROBE_DEFAULTS)
        report.r2[name] = r2(tree.predict(emb[te, j, :]), target[te])
    return report


# -- dropout identifiability bound -----------------------------------------


def dropout_bound(risk: float, risk_rest: float, p_single: float) -> float:
    """(R - R_rest (1 - p)) / p for the single-shape mask probability p."""
    if not 0.0 < p_single <= 1.0:
        raise ValueError("single-mask probability must lie in (0, 1]")
    return (risk - risk_rest * (1.0 - p_single)) / p_single


def uniform_dropout_bound(risk: float, p_single: float) -> float:
    """Bound when risk is spread uniformly over masks: R (2 - p) <= 2R."""
    return dropout_bound(risk, risk * (1.0 - p_single), p_single)


@dataclass
class BoundReport:
    risk: float
    risk_se: float
    lhs: dict
    lhs_se: dict
    single_mask_risk: dict
    slack: float = 3.0

    @property
    def two_risk(self) -> float:
        return 2.0 * self.risk

    def holds(self, name: str) -> bool:
        se = np.hypot(2.0 * self.risk_se, self.lhs_se[name])
        return bool(self.lhs[name] <= self.two_risk + self.slack * se)

    @property
    def verdict(self) -> bool:
        return all(self.holds(n) for n in self.lhs)

    def to_frame(self) -> pd.DataFrame:
        names = list(self.lhs)
        return pd.DataFrame({
            "feature": names,
            "lhs": [self.lhs[n] for n in names],
            "lhs_se": [self.lhs_se[n] for n in names],
            "single_mask_risk": [self.single_mask_risk[n] for n in names],
            "R_hat": self.risk,
            "R_se": self.risk_se,
            "two_R_hat": self.two_risk,
            "holds": [self.holds(n) for n in names],
        })


def dropout_risk(beta0: float, components: np.ndarray, y: np.ndarray, p: float, n_samples: int,
                 rng: np.random.Generator) -> tuple:
    """Monte-Carlo estimate of E_{x,y} E_w L(beta0 + sum_j w_j c_j, y) for MSE.

    Draws ``n_samples`` (row, mask) pairs; returns (estimate, standard error).
    """
    rows = rng.integers(0, len(y), size=n_samples)
    masks = sample_mask(p, components.shape[1], rng, size=n_samples)
    resid = beta0 + np.sum(components[rows] * masks, axis=1) - y[rows]
    losses = resid * resid
    return float(losses.mean()), float(losses.std(ddof=1) / np.sqrt(n_samples))


def bound_check(model: NAMformer, encoders: EncoderState, frame: pd.DataFrame,
                cond_mean: Callable[[str, np.ndarray], np.ndarray], p: float,
                n_mask_samples: int = 10_000, seed: int = 0, target: str = "y",
                features=None) -> BoundReport:
    """Compare E_x[(beta0 + f_k - E[y|x_k])^2] with twice the dropout risk."""
    if model.config.task != "regression":
        raise ValueError("the bound check is implemented for regression (MSE) models only")
    if not 0.0 < p <= 1.0:
        raise ValueError("p must lie in (0, 1]")
    inputs = encoders.transform(frame)
    y = frame[target].to_numpy(dtype=np.float64)
    _, bd = model.predict(inputs)
    comps = bd.components()
    risk, risk_se = dropout_risk(bd.beta0, comps, y, p, n_mask_samples, np.random.default_rng(seed))
    lhs, lhs_se, single = {}, {}, {}
    names = encoders.names if features is None else list(features)
    for name in names:
        j = encoders.names.index(name)
        pred = bd.beta0 + comps[:, j]
        m = cond_mean(name, frame[name].to_numpy())
        d = (pred - m) ** 2
        lhs[name] = float(d.mean())
        lhs_se[name] = float(d.std(ddof=1) / np.sqrt(len(d)))
        single[name] = float(np.mean((pred - y) ** 2))
    return BoundReport(risk, risk_se, lhs, lhs_se, single)


def sim_conditional_mean(sim_config) -> Callable:
    return lambda name, values: conditional_mean(sim_config, name, values)


# -- Jensen / MSE decomposition -------------------------------------------


@dataclass
class JensenReport:
    loss: str
    expected_loss: np.ndarray  # E_{x,y} L(c(x), y) per predictor
    loss_at_mean: np.ndarray  # E_x L(c(x), E[y|x]) per predictor
    gap_se: np.ndarray
    irreducible: float | None = None  # E_x V[y|x] (mse only)
    slack: float = 3.0

    @property
    def inequality_holds(self) -> bool:
        return bool(np.all(self.expected_loss - self.loss_at_mean >= -self.slack * self.gap_se - 1e-12))

    @property
    def decomposition_holds(self) -> bool:
        if self.irreducible is None:
            return True
        gap = self.expected_loss - self.loss_at_mean
        return bool(np.all(np.abs(gap - self.irreducible) <= self.slack * self.gap_se + 1e-12))

    @property
    def verdict(self) -> bool:
        return self.inequality_holds and self.decomposition_holds


def _soft_logloss(score, target):
    """h((2t - 1) s) with h(m) = log(1 + exp(-m)), for soft targets t in [0, 1]."""
    m = (2.0 * target - 1.0) * score
    return np.maximum(-m, 0.0) + np.log1p(np.exp(-np.abs(m)))


def jensen_loss_property(loss: str, n: int = 20_000, n_predictors: int = 100, noise_std: float = 1.0,
                         seed: int = 0) -> JensenReport:
    """Check E L(c(x), y) >= E L(c(x), E[y|x]) on a synthetic conditional law.

    mse: y | x ~ N(sin(2 pi x), noise_std^2), and the gap must equal
    E V[y|x] = noise_std^2.  logloss: y | x ~ Bernoulli(sigmoid(3 sin(2 pi x))).
    Predictors are random smooth functions c(x) = a + b x + d sin(2 pi w x).
    """
    rng = np.random.default_rng(seed)
    x = rng.uniform(size=n)
    if loss == "mse":
        m = np.sin(2 * np.pi * x)
        y = m + noise_std * rng.normal(size=n)
        irreducible = noise_std**2
    elif loss == "logloss":
        m = sigmoid(3.0 * np.sin(2 * np.pi * x))
        y = (rng.uniform(size=n) < m).astype(np.float64)
        irreducible = None
    else:
        raise ValueError(f"unknown loss {loss!r}")
    exp_loss, at_mean, se = [], [], []
    for _ in range(n_predictors):
        a, b, d = rng.normal(size=3)
        w = rng.uniform(0.5, 3.0)
        c = a + b * x + d * np.sin(2 * np.pi * w * x)
        if loss == "mse":
            full, cond = (c - y) ** 2, (c - m) ** 2
        else:
            full, cond = _soft_logloss(c, y), _soft_logloss(c, m)
        gap = full - cond
        exp_loss.append(full.mean())
        at_mean.append(cond.mean())
        se.append(gap.std(ddof=1) / np.sqrt(n))
    return JensenReport(loss, np.array(exp_loss), np.array(at_mean), np.array(se), irreducible)


# -- cross-validation -------------------------------------------------------


def kfold_indices(n: int, k: int, seed: int = 0) -> list:
    """Seeded k-fold partition; returns a list of (train_idx, test_idx)."""
    if k < 2:
        raise ValueError("need at least 2 folds")
    if n // k < 2:
        raise ValueError(f"{n} rows give folds smaller than 2 rows for k={k}")
    perm = np.random.default_rng(seed).permutation(n)
    folds = np.array_split(perm, k)
    out = []
    for i in range(k):
        test = np.sort(folds[i])
        train = np.sort(np.concatenate([folds[j] for j in range(k) if j != i]))
        out.append((train, test))
    return out


def crossvalidate(n: int, k: int, fit_eval: Callable[[np.ndarray, np.ndarray], dict], seed: int = 0) -> dict:
    """Run ``fit_eval(train_idx, test_idx) -> {metric: value}`` per fold.

    Returns {metric: (mean, sample std)}.
    """
    results = [fit_eval(tr, te) for tr, te in kfold_indices(n, k, seed)]
    out = {}
    for key in results[0]:
        vals = np.array([r[key] for r in results], dtype=np.float64)
        out[key] = (float(vals.mean()), float(vals.std(ddof=1)))
    return out
