"""Additive-plus-interaction data generating process with known marginals.

    y = sum_j s_j(x_j) + sum_c effect_c(level_c) + prod_j x_j + noise

with x_j ~ U(0, 1) iid, categorical levels uniform, noise ~ N(0, sigma^2).
"""

from __future__ import annotations

from dataclasses import asdict, dataclass
from functools import lru_cache

import numpy as np
import pandas as pd
from scipy import integrate

SHAPES = {
    1: lambda x: 3.0 * x,
    2: lambda x: (x - 1.0) ** 2,
    3: lambda x: np.sin(5.0 * x),
    4: lambda x: np.sqrt(np.exp(x)),
    5: lambda x: np.abs(x - 1.0),
    6: lambda x: np.abs(x - np.sin(5.0 * x)),
    7: lambda x: np.sign(x) * np.sqrt(np.abs(x)),
    8: lambda x: 2.0**x - x**2,
    9: lambda x: x**3 - 3.0 * x,
    10: lambda x: np.exp(x + 1e-6),
}

CATEGORICAL_EFFECTS = {
    1: {"A": 0.5, "B": -0.5, "C": 0.0},
    2: {"D": 1.0, "E": -1.0},
    3: {"F": 0.2, "G": -0.2, "H": 0.1, "I": -0.1},
}


def shape_function(k: int, x):
    if k not in SHAPES:
        raise ValueError(f"shape index must be in 1..10, got {k}")
    out = SHAPES[k](np.asarray(x, dtype=np.float64))
    return float(out) if np.ndim(out) == 0 else out


def categorical_effect(feature: int, level: str) -> float:
    try:
        return CATEGORICAL_EFFECTS[feature][level]
    except KeyError:
        raise ValueError(f"unknown categorical feature/level ({feature}, {level!r})") from None


@lru_cache(maxsize=None)
def shape_mean(k: int) -> float:
    """E[s_k(U)] for U ~ U(0, 1), by adaptive quadrature."""
    val, _ = integrate.quad(lambda t: SHAPES[k](t), 0.0, 1.0, limit=200, epsabs=1e-13, epsrel=1e-13)
    return float(val)


def categorical_mean(feature: int) -> float:
    eff = CATEGORICAL_EFFECTS[feature]
    return sum(eff.values()) / len(eff)


@dataclass(frozen=True)
class SimConfig:
    n: int = 25_000
    n_features: int = 3
    categoricals: bool = True
    noise_std: float = 0.1
    interaction: bool = True
    seed: int = 0

    def __post_init__(self):
        if not 1 <= self.n_features <= 10:
            raise ValueError(f"n_features must lie in 1..10, got {self.n_features}")
        if self.noise_std < 0:
            raise ValueError("noise_std must be >= 0")
        if self.n < 1:
            raise ValueError("n must be >= 1")


@dataclass
class SimDataset:
    config: SimConfig
    frame: pd.DataFrame
    shapes: np.ndarray  # (n, J) s_j(x_j)
    cat_effects: np.ndarray  # (n, C)
    interaction: np.ndarray  # (n,)
    noise: np.ndarray  # (n,)

    @property
    def numeric_names(self) -> list:
        return [f"x{j}" for j in range(1, self.config.n_features + 1)]

    @property
    def categorical_names(self) -> list:
        return [f"cat{c}" for c in CATEGORICAL_EFFECTS] if self.config.categoricals else []

    @property
    def y(self) -> np.ndarray:
        return self.frame["y"].to_numpy()

    def reconstruct(self) -> np.ndarray:
        return self.shapes.sum(axis=1) + self.cat_effects.sum(axis=1) + self.interaction + self.noise

    def truth(self) -> pd.DataFrame:
        """Long table of ground-truth records (feature, x, s(x))."""
        parts = []
        for j, name in enumerate(self.numeric_names):
            parts.append(pd.DataFrame({"feature": name, "x": self.frame[name].to_numpy(), "s": self.shapes[:, j]}))
        return pd.concat(parts, ignore_index=True)

    def subset(self, rows) -> "SimDataset":
        rows = np.asarray(rows)
        return SimDataset(self.config, self.frame.iloc[rows].reset_index(drop=True), self.shapes[rows],
                          self.cat_effects[rows], self.interaction[rows], self.noise[rows])


def generate(config: SimConfig) -> SimDataset:
    rng = np.random.default_rng(config.seed)
    n, J = config.n, config.n_features
    X = rng.uniform(0.0, 1.0, size=(n, J))
    cols = {f"x{j + 1}": X[:, j] for j in range(J)}
    shapes = np.column_stack([SHAPES[j + 1](X[:, j]) for j in range(J)])
    effects = []
    if config.categoricals:
        for c, eff in CATEGORICAL_EFFECTS.items():
            levels = np.array(list(eff))
            drawn = levels[rng.integers(0, len(levels), size=n)]
            cols[f"cat{c}"] = drawn
            effects.append(np.array([eff[v] for v in drawn]))
    cat = np.column_stack(effects) if effects else np.zeros((n, 0))
    inter = np.prod(X, axis=1) if config.interaction else np.zeros(n)
    noise = rng.normal(0.0, config.noise_std, size=n) if config.noise_std > 0 else np.zeros(n)
    y = shapes.sum(axis=1) + cat.sum(axis=1) + inter + noise
    frame = pd.DataFrame(cols)
    frame["y"] = y
    return SimDataset(config, frame, shapes, cat, inter, noise)


def expected_y(config: SimConfig) -> float:
    J = config.n_features
    total = sum(shape_mean(j) for j in range(1, J + 1))
    if config.categoricals:
        total += sum(categorical_mean(c) for c in CATEGORICAL_EFFECTS)
    if config.interaction:
        total += 0.5**J
    return total


def conditional_mean(config: SimConfig, feature: str, values) -> np.ndarray:
    """Analytic E[y | feature = value] under the DGP.

    Independence of all inputs gives E[y | x_k] = E[y] + c_k(x_k) - E[c_k]
    where c_k collects every term of y that depends on x_k.
    """
    J = config.n_features
    base = expected_y(config)
    if feature.startswith("x"):
        k = int(feature[1:])
        if not 1 <= k <= J:
            raise ValueError(f"unknown feature {feature!r}")
        x = np.asarray(values, dtype=np.float64)
        own = SHAPES[k](x) - shape_mean(k)
        if config.interaction:
            own = own + (x - 0.5) * 0.5 ** (J - 1)
        return base + own
    if feature.startswith("cat") and config.categoricals:
        c = int(feature[3:])
        eff = np.array([categorical_effect(c, str(v)) for v in values])
        return base + eff - categorical_mean(c)
    raise ValueError(f"unknown feature {feature!r}")


def true_centered_marginal(k: int, grid) -> tuple:
    """(grid, s_k(grid) - mean over grid of s_k)."""
    grid = np.asarray(grid, dtype=np.float64)
    s = np.asarray(SHAPES[k](grid), dtype=np.float64)
    return grid, s - s.mean()


def train_test_split(n: int, test_fraction: float, seed: int) -> tuple:
    if not 0.0 < test_fraction < 1.0:
        raise ValueError("test_fraction must lie in (0, 1)")
    perm = np.random.default_rng(seed).permutation(n)
    n_test = int(round(n * test_fraction))
    return np.sort(perm[n_test:]), np.sort(perm[:n_test])


def config_dict(config: SimConfig) -> dict:
    return asdict(config)
