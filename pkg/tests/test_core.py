import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

from reroute.core import (
    InvalidInputError,
    Label,
    ModelInput,
    ReferenceEntry,
    RoutingWeights,
    TaskEmbedding,
    interpolate,
    rng_stream,
    simplex_project,
)

from conftest import AlwaysRight, kkt_projection

finite = st.floats(-50, 50, allow_nan=False, allow_infinity=False)


class TestRoutingWeights:
    def test_accepts_simplex_point(self):
        r = RoutingWeights([0.2, 0.3, 0.5])
        assert len(r) == 3
        assert r.top1 == 2

    @pytest.mark.parametrize("w", [[1.0], [0.6, 0.6], [-0.1, 1.1], [np.nan, 1.0], [0.5, 0.5 + 2e-9]])
    def test_rejects_invalid(self, w):
        with pytest.raises(InvalidInputError):
            RoutingWeights(w)

    def test_sum_tolerance(self):
        RoutingWeights([0.5, 0.5 + 5e-10])

    def test_read_only(self):
        r = RoutingWeights([0.5, 0.5])
        with pytest.raises(ValueError):
            r.weights[0] = 1.0

    def test_equality_by_value(self):
        assert RoutingWeights([0.25, 0.75]) == RoutingWeights(np.array([0.25, 0.75]))
        assert RoutingWeights([0.25, 0.75]) != RoutingWeights([0.75, 0.25])

    def test_top1_ties_go_to_lower_index(self):
        assert RoutingWeights([0.4, 0.4, 0.2]).top1 == 0


class TestDomainTypes:
    def test_label_rejects_negative(self):
        with pytest.raises(InvalidInputError):
            Label(-1)

    def test_model_input_rejects_inf(self):
        with pytest.raises(InvalidInputError):
            ModelInput([1.0, np.inf])

    def test_embedding_frozen(self):
        e = TaskEmbedding([1.0, 2.0])
        with pytest.raises(ValueError):
            e.values[0] = 0.0

    def test_reference_entry_requires_verification(self):
        with pytest.raises(InvalidInputError):
            ReferenceEntry(ModelInput([0.0]), TaskEmbedding([0.0]), RoutingWeights([0.5, 0.5]), Label(0))

    def test_verified_rejects_wrong_prediction(self):
        m = AlwaysRight()
        m.target = Label(1)
        with pytest.raises(InvalidInputError, match="predicts 1"):
            ReferenceEntry.verified(m, ModelInput([0.0]), TaskEmbedding([0.0]),
                                    RoutingWeights([0.5, 0.5]), Label(0))

    def test_verified_accepts_right_prediction(self):
        m = AlwaysRight()
        m.target = Label(0)
        e = ReferenceEntry.verified(m, ModelInput([0.0]), TaskEmbedding([0.0]),
                                    RoutingWeights([0.5, 0.5]), Label(0), sample_id=7)
        assert e.sample_id == 7


class TestSimplexProject:
    def test_known_values(self):
        np.testing.assert_allclose(simplex_project([0.5, 0.5, 0.5]).weights, [1 / 3] * 3)
        np.testing.assert_allclose(simplex_project([2.0, 0.0]).weights, [1.0, 0.0])
        np.testing.assert_allclose(simplex_project([0.8, 0.6, -1.0]).weights, [0.6, 0.4, 0.0])

    def test_point_on_simplex_is_fixed(self):
        w = np.array([0.1, 0.2, 0.7])
        assert np.array_equal(simplex_project(w).weights, w)

    @pytest.mark.parametrize("v", [[1.0], [np.nan, 0.0], [np.inf, 1.0]])
    def test_rejects(self, v):
        with pytest.raises(InvalidInputError):
            simplex_project(v)

    def test_matches_support_enumeration(self, rng):
        for _ in range(300):
            E = int(rng.integers(2, 7))
            v = rng.standard_normal(E) * rng.choice([0.1, 1.0, 10.0])
            np.testing.assert_allclose(simplex_project(v).weights, kkt_projection(v), atol=1e-12)

    @settings(max_examples=200, deadline=None)
    @given(arrays(np.float64, st.integers(2, 8), elements=finite))
    def test_properties(self, v):
        w = simplex_project(v).weights
        assert np.all(w >= 0) and abs(w.sum() - 1.0) <= 1e-9
        # idempotent
        np.testing.assert_allclose(simplex_project(w).weights, w, atol=1e-12)
        # variational inequality against every vertex
        for j in range(v.size):
            u = np.zeros_like(w)
            u[j] = 1.0
            assert np.dot(v - w, u - w) <= 1e-8 * (1 + np.abs(v).max())

    @settings(max_examples=100, deadline=None)
    @given(arrays(np.float64, 5, elements=finite), st.floats(-20, 20))
    def test_shift_invariance(self, v, c):
        np.testing.assert_allclose(simplex_project(v).weights, simplex_project(v + c).weights, atol=1e-9)


class TestInterpolate:
    def test_endpoints_exact(self):
        a, b = RoutingWeights([0.3, 0.7]), RoutingWeights([0.9, 0.1])
        assert interpolate(a, b, 1.0) is a
        assert interpolate(a, b, 0.0) is b

    def test_midpoint(self):
        a, b = RoutingWeights([0.0, 1.0]), RoutingWeights([1.0, 0.0])
        np.testing.assert_allclose(interpolate(a, b, 0.25).weights, [0.75, 0.25])

    @pytest.mark.parametrize("alpha", [-0.1, 1.5])
    def test_alpha_range(self, alpha):
        a = RoutingWeights([0.5, 0.5])
        with pytest.raises(InvalidInputError):
            interpolate(a, a, alpha)

    def test_dimension_mismatch(self):
        with pytest.raises(InvalidInputError):
            interpolate(RoutingWeights([0.5, 0.5]), RoutingWeights([1 / 3] * 3), 0.5)


class TestRngStream:
    def test_reproducible(self):
        assert np.array_equal(rng_stream(3, 1).random(5), rng_stream(3, 1).random(5))

    def test_streams_differ(self):
        assert not np.array_equal(rng_stream(3, 1).random(5), rng_stream(3, 2).random(5))
        assert not np.array_equal(rng_stream(3, 1).random(5), rng_stream(4, 1).random(5))

    def test_frozen_values(self):
        # guards against silent changes to the seeding scheme
        ss = np.random.SeedSequence(entropy=0, spawn_key=(0,))
        expected = np.random.Generator(np.random.PCG64(ss)).integers(0, 2**31, 3)
        assert np.array_equal(rng_stream(0, 0).integers(0, 2**31, 3), expected)

    @pytest.mark.parametrize("seed", [-1, 2**64])
    def test_seed_range(self, seed):
        with pytest.raises(InvalidInputError):
            rng_stream(seed, 0)
