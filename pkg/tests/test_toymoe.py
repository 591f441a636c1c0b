import numpy as np
import pytest

from reroute.core import InvalidInputError, Label, ModelInput, RoutingWeights
from reroute.toymoe import ExpertBank, FixedRouter, Router, mixture_loss_grads, mixture_losses, softmax

from conftest import random_bank, random_simplex


def central_difference(f, r, h=1e-6):
    g = np.zeros_like(r)
    for j in range(r.size):
        e = np.zeros_like(r)
        e[j] = h
        g[j] = (f(r + e) - f(r - e)) / (2 * h)
    return g


class TestSoftmax:
    def test_stable_for_large_logits(self):
        p = softmax(np.array([1000.0, 1000.0, -1000.0]))
        np.testing.assert_allclose(p, [0.5, 0.5, 0.0])

    def test_rows(self):
        p = softmax(np.array([[0.0, 0.0], [0.0, np.log(3.0)]]))
        np.testing.assert_allclose(p, [[0.5, 0.5], [0.25, 0.75]])


class TestExpertBank:
    def test_shapes(self, rng):
        bank = random_bank(rng, E=3, C=4, D=2)
        assert (bank.expert_count, bank.class_count, bank.feature_dim) == (3, 4, 2)
        assert bank.expert_logits(ModelInput([1.0, 2.0])).shape == (3, 4)

    def test_inconsistent_shapes(self):
        with pytest.raises(InvalidInputError):
            ExpertBank(np.zeros((2, 3, 4)), np.zeros((2, 4)))

    def test_feature_dimension_checked(self, rng):
        with pytest.raises(InvalidInputError):
            random_bank(rng, D=5).expert_logits(ModelInput([1.0]))

    def test_routing_dimension_checked(self, rng):
        with pytest.raises(InvalidInputError):
            random_bank(rng, E=4, D=2).forward(ModelInput([1.0, 0.0]), RoutingWeights([0.5, 0.5]))

    def test_forward_is_mixed_logit_softmax(self):
        W = np.zeros((2, 2, 1))
        b = np.array([[0.0, 2.0], [2.0, 0.0]])
        bank = ExpertBank(W, b)
        x = ModelInput([0.0])
        np.testing.assert_allclose(bank.forward(x, RoutingWeights([0.5, 0.5])), [0.5, 0.5])
        assert bank.predict(x, RoutingWeights([0.5, 0.5])) == Label(0)  # tie -> lower class
        assert bank.predict(x, RoutingWeights([0.9, 0.1])) == Label(1)

    def test_loss_value(self):
        bank = ExpertBank(np.zeros((2, 2, 1)), np.zeros((2, 2)))
        assert bank.loss(ModelInput([0.0]), RoutingWeights([0.5, 0.5]), Label(1)) == pytest.approx(np.log(2))

    def test_loss_floor_keeps_it_finite(self):
        bank = ExpertBank(np.zeros((2, 2, 1)), np.array([[0.0, 1e5], [0.0, 1e5]]))
        assert np.isfinite(bank.loss(ModelInput([0.0]), RoutingWeights([0.5, 0.5]), Label(0)))

    def test_gradient_matches_finite_differences(self, rng):
        for _ in range(50):
            bank = random_bank(rng)
            x = ModelInput(rng.standard_normal(5))
            r = random_simplex(rng, 4)
            y = Label(int(rng.integers(3)))
            f = lambda v: float(-np.log(softmax(v @ bank.expert_logits(x))[y.class_id]))  # noqa: E731
            np.testing.assert_allclose(bank.loss_grad_r(x, r, y), central_difference(f, r.weights),
                                       rtol=1e-6, atol=1e-8)

    def test_loss_convex_in_routing(self, rng):
        bank = random_bank(rng, scale=3.0)
        x = ModelInput(rng.standard_normal(5))
        for _ in range(100):
            a, b = random_simplex(rng, 4), random_simplex(rng, 4)
            mid = RoutingWeights(0.5 * (a.weights + b.weights))
            y = Label(int(rng.integers(3)))
            assert bank.loss(x, mid, y) <= 0.5 * (bank.loss(x, a, y) + bank.loss(x, b, y)) + 1e-12


class TestBatched:
    def test_batch_matches_single(self, rng):
        bank = random_bank(rng)
        X = rng.standard_normal((7, 5))
        y = rng.integers(0, 3, 7)
        r = random_simplex(rng, 4)
        logits = bank.batch_logits(X)
        losses, grads = mixture_loss_grads(logits, y, r.weights)
        np.testing.assert_allclose(losses, mixture_losses(logits, y, r.weights))
        for i in range(7):
            x = ModelInput(X[i])
            np.testing.assert_allclose(logits[i], bank.expert_logits(x))
            assert losses[i] == pytest.approx(bank.loss(x, r, Label(int(y[i]))), rel=1e-12)
            np.testing.assert_allclose(grads[i], bank.loss_grad_r(x, r, Label(int(y[i]))), rtol=1e-12, atol=1e-14)


class TestRouter:
    def test_route_on_simplex(self, rng):
        router = Router(rng.standard_normal((4, 3)) * 10, rng.standard_normal(4))
        for _ in range(20):
            r = router.route(ModelInput(rng.standard_normal(3)))
            assert np.all(r.weights >= 0) and abs(r.weights.sum() - 1) <= 1e-12

    def test_batch_matches_single(self, rng):
        router = Router(rng.standard_normal((4, 3)), rng.standard_normal(4))
        X = rng.standard_normal((5, 3))
        B = router.route_batch(X)
        for i in range(5):
            np.testing.assert_allclose(B[i], router.route(ModelInput(X[i])).weights, rtol=1e-12)

    def test_shape_checks(self):
        with pytest.raises(InvalidInputError):
            Router(np.zeros((3, 2)), np.zeros(2))

    def test_fixed_router_reads_task_type(self):
        mix = (RoutingWeights([1.0, 0.0]), RoutingWeights([0.0, 1.0]))
        assert FixedRouter(mix).route(ModelInput([0.0], task_type=1)) is mix[1]
