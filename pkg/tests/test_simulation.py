import math

import mpmath
import numpy as np
import pytest

from namformer.simulation import (
    CATEGORICAL_EFFECTS,
    SimConfig,
    categorical_effect,
    conditional_mean,
    expected_y,
    generate,
    shape_function,
    shape_mean,
    train_test_split,
    true_centered_marginal,
)

# independent high-precision transcriptions of s_1..s_10
MP_SHAPES = {
    1: lambda x: 3 * x,
    2: lambda x: (x - 1) ** 2,
    3: lambda x: mpmath.sin(5 * x),
    4: lambda x: mpmath.sqrt(mpmath.exp(x)),
    5: lambda x: abs(x - 1),
    6: lambda x: abs(x - mpmath.sin(5 * x)),
    7: lambda x: mpmath.sign(x) * mpmath.sqrt(abs(x)),
    8: lambda x: mpmath.power(2, x) - x**2,
    9: lambda x: x**3 - 3 * x,
    10: lambda x: mpmath.exp(x + mpmath.mpf("1e-6")),
}


class TestShapes:
    def test_examples(self):
        assert shape_function(1, 0.5) == 1.5
        assert shape_function(2, 1.0) == 0.0
        assert shape_function(9, 0.0) == 0.0
        assert shape_function(9, 1.0) == -2.0

    @pytest.mark.parametrize("k", range(1, 11))
    def test_against_high_precision(self, k):
        mpmath.mp.dps = 40
        xs = np.random.default_rng(k).uniform(size=100)
        ref = np.array([float(MP_SHAPES[k](mpmath.mpf(float(x)))) for x in xs])
        np.testing.assert_allclose(shape_function(k, xs), ref, rtol=1e-12, atol=1e-12)

    @pytest.mark.parametrize("k", range(1, 11))
    def test_means_against_high_precision(self, k):
        mpmath.mp.dps = 30
        points = [0, 0.5, 1]
        if k == 6:  # integrate across the kink where x = sin(5x)
            points = [0, mpmath.findroot(lambda x: x - mpmath.sin(5 * x), 0.55), 1]
        ref = float(mpmath.quad(MP_SHAPES[k], points))
        assert shape_mean(k) == pytest.approx(ref, abs=1e-10)

    def test_bad_index(self):
        with pytest.raises(ValueError):
            shape_function(11, 0.5)


class TestCategorical:
    def test_examples(self):
        assert categorical_effect(1, "A") == 0.5
        assert categorical_effect(2, "D") == 1.0
        assert sum(CATEGORICAL_EFFECTS[3].values()) == pytest.approx(0.0, abs=1e-15)

    def test_unknown_level(self):
        with pytest.raises(ValueError):
            categorical_effect(1, "Z")


class TestGenerate:
    def test_degenerate_identity(self):
        sim = generate(SimConfig(n=500, n_features=1, categoricals=False, noise_std=0.0, interaction=False))
        np.testing.assert_array_equal(sim.y, shape_function(1, sim.frame["x1"].to_numpy()))

    def test_reconstruction(self):
        sim = generate(SimConfig(n=2000, seed=4))
        np.testing.assert_allclose(sim.reconstruct(), sim.y, atol=1e-12)

    def test_columns(self):
        sim = generate(SimConfig(n=100, n_features=3, seed=7))
        assert list(sim.frame.columns) == ["x1", "x2", "x3", "cat1", "cat2", "cat3", "y"]
        assert len(sim.frame) == 100

    def test_deterministic(self):
        a = generate(SimConfig(n=300, seed=9)).frame
        b = generate(SimConfig(n=300, seed=9)).frame
        assert a.to_csv().encode() == b.to_csv().encode()

    def test_mean_of_y(self):
        cfg = SimConfig(n=100_000, n_features=3, categoricals=False, noise_std=0.0, seed=1)
        y = generate(cfg).y
        # sum of integrals plus E[prod U] = (1/2)^3
        expected = sum(shape_mean(k) for k in (1, 2, 3)) + 0.125
        assert expected == pytest.approx(expected_y(cfg), abs=1e-12)
        se = y.std(ddof=1) / math.sqrt(len(y))
        assert abs(y.mean() - expected) < 3 * se

    def test_config_invariants(self):
        for bad in (dict(n_features=0), dict(n_features=11), dict(noise_std=-1.0), dict(n=0)):
            with pytest.raises(ValueError):
                SimConfig(**bad)

    def test_levels_uniform(self):
        sim = generate(SimConfig(n=30_000, seed=2))
        freq = sim.frame["cat3"].value_counts(normalize=True)
        assert np.all(np.abs(freq - 0.25) < 0.015)


class TestMarginals:
    def test_linear_grid(self):
        _, c = true_centered_marginal(1, [0.0, 0.5, 1.0])
        np.testing.assert_allclose(c, [-1.5, 0.0, 1.5])

    def test_constant_shape_centers_to_zero(self):
        # s_1 on a one-point grid is constant
        _, c = true_centered_marginal(1, [0.3, 0.3, 0.3])
        np.testing.assert_array_equal(c, 0.0)

    def test_dense_grid_mean(self):
        _, c = true_centered_marginal(2, np.linspace(0, 1, 10_001))
        assert abs(c.mean()) < 1e-10

    def test_binned_conditional_mean_no_interaction(self):
        cfg = SimConfig(n=200_000, n_features=3, categoricals=False, noise_std=0.0, interaction=False, seed=3)
        sim = generate(cfg)
        for k in (1, 2, 3):
            x = sim.frame[f"x{k}"].to_numpy()
            idx = np.minimum((x * 50).astype(int), 49)
            means = np.bincount(idx, weights=sim.y) / np.bincount(idx)
            centers = (np.arange(50) + 0.5) / 50
            # bin averages of s_k deviate from s_k(center) by O(width^2)
            within = np.array([shape_function(k, np.linspace(c - 0.01, c + 0.01, 201)).mean() for c in centers])
            resid = means - within
            resid -= resid.mean()
            counts = np.bincount(idx)
            others = np.var(sim.y - shape_function(k, x))
            assert np.all(np.abs(resid) < 4 * np.sqrt(others / counts))

    def test_conditional_mean_with_interaction(self):
        cfg = SimConfig(n=400_000, n_features=3, noise_std=0.1, seed=5)
        sim = generate(cfg)
        x = sim.frame["x2"].to_numpy()
        sel = np.abs(x - 0.7) < 0.005
        est = sim.y[sel].mean()
        se = sim.y[sel].std(ddof=1) / math.sqrt(sel.sum())
        truth = conditional_mean(cfg, "x2", np.array([0.7]))[0]
        assert abs(est - truth) < 4 * se + 0.01  # the 0.01 allows for the bin width

    def test_conditional_mean_categorical(self):
        cfg = SimConfig()
        vals = conditional_mean(cfg, "cat2", ["D", "E"])
        assert vals[0] - vals[1] == pytest.approx(2.0)
        with pytest.raises(ValueError):
            conditional_mean(cfg, "x9", [0.5])

    def test_split(self):
        tr, te = train_test_split(100, 0.3, 0)
        assert len(te) == 30 and len(tr) == 70
        assert set(tr).isdisjoint(te)
        assert sorted(np.concatenate([tr, te])) == list(range(100))
