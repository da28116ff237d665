import itertools

import numpy as np
import pandas as pd
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from namformer.encoding import (
    UNKNOWN,
    EncoderState,
    FeatureSpec,
    encode_ple,
    encode_standardize,
    encode_thermometer,
    fit_encoders,
    tokenize_categorical,
)


def ple_loop(x, edges):
    """Scalar reference: component-by-component case analysis."""
    out = []
    for t in range(1, len(edges)):
        lo, hi = edges[t - 1], edges[t]
        if x < lo:
            out.append(0.0)
        elif x >= hi:
            out.append(1.0)
        else:
            out.append((x - lo) / (hi - lo))
    return np.array(out)


def thermometer_loop(x, bounds):
    return np.array([1.0 if x >= b else 0.0 for b in bounds])


class TestThermometer:
    def test_example(self):
        np.testing.assert_array_equal(encode_thermometer(0.6, [0.2, 0.5, 0.8]), [1, 1, 0])

    def test_out_of_range(self):
        np.testing.assert_array_equal(encode_thermometer(0.1, [0.2, 0.5]), [0, 0])
        np.testing.assert_array_equal(encode_thermometer(0.9, [0.2, 0.5]), [1, 1])

    def test_boundary_inclusive(self):
        np.testing.assert_array_equal(encode_thermometer(0.5, [0.2, 0.5, 0.8]), [1, 1, 0])

    def test_exhaustive_small_grid(self):
        for bounds in itertools.combinations([0.1, 0.25, 0.5, 0.75, 0.9], 3):
            for x in np.linspace(-0.1, 1.1, 49):
                np.testing.assert_array_equal(encode_thermometer(x, bounds), thermometer_loop(x, bounds))

    def test_vectorized_matches_scalar(self):
        x = np.linspace(0, 1, 11)
        b = [0.3, 0.6]
        np.testing.assert_array_equal(encode_thermometer(x, b), np.stack([thermometer_loop(v, b) for v in x]))

    def test_piecewise_constant(self):
        b = np.array([0.2, 0.5, 0.8])
        x = np.linspace(0, 1, 1001)
        z = encode_thermometer(x, b)
        changes = x[1:][np.any(z[1:] != z[:-1], axis=1)]
        # each jump lands on the first grid point at or past a boundary
        assert len(changes) == 3
        for c, bt in zip(changes, b):
            assert bt <= c < bt + 1e-3 + 1e-12


class TestPLE:
    def test_examples(self):
        np.testing.assert_allclose(encode_ple(0.25, [0, 0.5, 1]), [0.5, 0.0])
        np.testing.assert_allclose(encode_ple(0.75, [0, 0.5, 1]), [1.0, 0.5])

    def test_lower_edge(self):
        np.testing.assert_array_equal(encode_ple(0.0, [0, 0.5, 1]), [0.0, 0.0])
        np.testing.assert_array_equal(encode_ple(1.0, [0, 0.5, 1]), [1.0, 1.0])

    def test_outside_clamps(self):
        np.testing.assert_array_equal(encode_ple(-3.0, [0, 0.5, 1]), [0.0, 0.0])
        np.testing.assert_array_equal(encode_ple(3.0, [0, 0.5, 1]), [1.0, 1.0])

    def test_exhaustive_small_grid(self):
        grid = [0.0, 0.1, 0.3, 0.45, 0.7, 1.0]
        for k in (2, 3, 4):
            for edges in itertools.combinations(grid, k):
                for x in np.linspace(-0.2, 1.2, 57):
                    np.testing.assert_allclose(encode_ple(x, edges), ple_loop(x, edges), rtol=0, atol=1e-15)

    def test_continuous(self):
        edges = np.array([0.0, 0.2, 0.55, 0.6, 1.0])
        x = np.linspace(-0.1, 1.1, 20001)
        z = encode_ple(x, edges)
        step = x[1] - x[0]
        slope = 1.0 / np.min(np.diff(edges))
        assert np.max(np.abs(np.diff(z, axis=0))) <= slope * step + 1e-12

    @settings(max_examples=60, deadline=None)
    @given(st.lists(st.floats(-5, 5), min_size=2, max_size=8, unique=True), st.floats(-6, 6))
    def test_monotone_and_single_partial(self, pts, x):
        edges = np.sort(pts)
        if np.min(np.diff(edges)) < 1e-6:
            return
        z = encode_ple(x, edges)
        assert np.all((z >= 0) & (z <= 1))
        assert np.all(np.diff(z) <= 0)
        partial = np.sum((z > 0) & (z < 1))
        assert partial <= 1
        # strictly inside a bin, away from rounding at the edges
        inside = any(lo + 1e-9 < x < hi - 1e-9 for lo, hi in zip(edges[:-1], edges[1:]))
        if inside:
            assert partial == 1

    @settings(max_examples=40, deadline=None)
    @given(st.floats(-1, 2), st.floats(0, 0.5))
    def test_components_non_decreasing_in_x(self, x, dx):
        edges = [0.0, 0.3, 0.6, 1.0]
        assert np.all(encode_ple(x + dx, edges) >= encode_ple(x, edges))


class TestStandardizeAndTokens:
    def test_standardize(self):
        assert encode_standardize(2.0, 2.0, 1.0) == 0.0
        assert encode_standardize(3.0, 2.0, 1.0) == 1.0
        assert encode_standardize(3.0, 2.0, 0.5) == 2.0
        with pytest.raises(ValueError):
            encode_standardize(1.0, 0.0, 0.0)

    def test_tokens(self):
        vocab = {"A": 1, "B": 2, "C": 3}
        assert tokenize_categorical("A", vocab) == 1
        assert tokenize_categorical("Z", vocab) == UNKNOWN == 0


class TestFitEncoders:
    def frame(self, n=400, seed=0):
        rng = np.random.default_rng(seed)
        x = rng.uniform(size=n)
        return pd.DataFrame({
            "x": x,
            "const": np.full(n, 2.0),
            "c": rng.choice(["A", "B", "C"], size=n),
            "y": (x >= 0.5).astype(float),
        })

    def test_vocabulary_with_unknown(self):
        st_ = fit_encoders(self.frame(), [FeatureSpec("c", "categorical")], "y")
        enc = st_.features[0]
        assert enc.dim == 4
        assert sorted(enc.vocabulary.values()) == [1, 2, 3]
        np.testing.assert_array_equal(enc.transform(["B", "Q"]), [enc.vocabulary["B"], 0])

    def test_step_boundary(self):
        f = self.frame()
        enc = fit_encoders(f, [FeatureSpec("x", "numeric", "thermometer")], "y", {"thermometer": 4}).features[0]
        xs = np.sort(f["x"].to_numpy())
        gap = np.max(np.diff(xs[(xs > 0.4) & (xs < 0.6)]))
        assert np.min(np.abs(enc.boundaries - 0.5)) <= gap

    def test_constant_feature_degenerate(self):
        enc = fit_encoders(self.frame(), [FeatureSpec("const", "numeric", "thermometer")], "y").features[0]
        assert enc.degenerate
        ple = fit_encoders(self.frame(), [FeatureSpec("const", "numeric", "ple")], "y").features[0]
        assert ple.degenerate and np.all(np.diff(ple.boundaries) > 0)
        with pytest.raises(ValueError, match="constant"):
            fit_encoders(self.frame(), [FeatureSpec("const", "numeric", "standardize")], "y")

    def test_ple_edges_span_training_range(self):
        f = self.frame()
        enc = fit_encoders(f, [FeatureSpec("x", "numeric", "ple")], "y", {"ple": 6}).features[0]
        assert enc.boundaries[0] == f["x"].min()
        assert enc.boundaries[-1] == f["x"].max()
        assert np.all(np.diff(enc.boundaries) > 0)

    def test_empty_split(self):
        with pytest.raises(ValueError, match="empty"):
            fit_encoders(self.frame().iloc[:0], [FeatureSpec("x", "numeric", "ple")], "y")

    def test_spec_validation(self):
        with pytest.raises(ValueError):
            FeatureSpec("x", "numeric")
        with pytest.raises(ValueError):
            FeatureSpec("c", "categorical", "ple")

    def test_bin_membership_recovered(self):
        rng = np.random.default_rng(3)
        f = pd.DataFrame({"x": rng.uniform(size=300)})
        f["y"] = np.sin(6 * f["x"]) + 0.1 * rng.normal(size=300)
        enc = fit_encoders(f, [FeatureSpec("x", "numeric", "thermometer")], "y", {"thermometer": 10}).features[0]
        z = enc.transform(f["x"].to_numpy())
        np.testing.assert_array_equal(z.sum(axis=1), np.searchsorted(enc.boundaries, f["x"], side="right"))

    def test_state_round_trip(self):
        f = self.frame()
        specs = [FeatureSpec("x", "numeric", "ple"), FeatureSpec("c", "categorical"),
                 FeatureSpec("x", "numeric", "standardize")]
        state = fit_encoders(f, specs, "y")
        back = EncoderState.from_dict(state.to_dict())
        for a, b in zip(state.transform(f), back.transform(f)):
            np.testing.assert_array_equal(a, b)

    def test_missing_column(self):
        state = fit_encoders(self.frame(), [FeatureSpec("x", "numeric", "ple")], "y")
        with pytest.raises(KeyError, match="x"):
            state.transform(pd.DataFrame({"z": [1.0]}))
