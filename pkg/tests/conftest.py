import itertools

import numpy as np
import pytest

from reroute.core import Label, ModelInput, ReferenceEntry, RoutingWeights, TaskEmbedding
from reroute.refindex import seal
from reroute.toymoe import ExpertBank


def kkt_projection(v):
    """Simplex projection by enumerating every support set.

    For a fixed support S the projection onto the face is
    w_S = v_S - (sum(v_S) - 1) / |S|; the answer is the nearest feasible one.
    """
    v = np.asarray(v, dtype=float)
    best, best_d = None, np.inf
    for size in range(1, v.size + 1):
        for S in itertools.combinations(range(v.size), size):
            S = list(S)
            w = np.zeros_like(v)
            w[S] = v[S] - (v[S].sum() - 1.0) / size
            if np.all(w >= -1e-12):
                d = np.sum((w - v) ** 2)
                if d < best_d:
                    best, best_d = np.maximum(w, 0.0), d
    return best


class AlwaysRight:
    """Stand-in model whose prediction is whatever label it is asked about."""

    def __init__(self):
        self.target = None

    def predict(self, x, r):
        return self.target


def make_refset(embeddings, routings, labels=None, features=None):
    """Reference set from raw arrays via a permissive stand-in model."""
    model = AlwaysRight()
    n = len(embeddings)
    labels = [0] * n if labels is None else labels
    features = np.zeros((n, 1)) if features is None else features
    entries = []
    for i in range(n):
        model.target = Label(int(labels[i]))
        entries.append(ReferenceEntry.verified(
            model, ModelInput(features[i]), TaskEmbedding(embeddings[i]),
            RoutingWeights(routings[i]), Label(int(labels[i])), i))
    return seal(entries)


def random_bank(rng, E=4, C=3, D=5, scale=1.0):
    return ExpertBank(rng.standard_normal((E, C, D)) * scale, rng.standard_normal((E, C)) * scale)


def random_simplex(rng, E):
    return RoutingWeights(rng.dirichlet(np.ones(E)))


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


ACCEPTANCE_LINES = []


def record_criterion(number, ok, detail):
    line = f"criterion {number:>2}: {'PASS' if ok else 'FAIL'}  {detail}"
    ACCEPTANCE_LINES.append(line)
    print(line)
    return ok


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in sorted(ACCEPTANCE_LINES, key=lambda s: int(s.split()[1].rstrip(":"))):
            terminalreporter.write_line(line)
