"""Toy objective for comparing the optimizer with random search."""
import math

import numpy as np

from deformseq.autograd import RngStream
from deformseq.hpo import Dimension, SearchSpace, TrialRecord, suggest

BRANIN_SPACE = SearchSpace((Dimension("x1", "float", -5, 10), Dimension("x2", "float", 0, 15)))
BRANIN_MIN = 0.397887357729738


def branin(x1, x2):
    b, c, t = 5.1 / (4 * math.pi ** 2), 5 / math.pi, 1 / (8 * math.pi)
    return (x2 - b * x1 ** 2 + c * x1 - 6) ** 2 + 10 * (1 - t) * math.cos(x1) + 10


def bo_best(rep, n_trials=20):
    hist = []
    for i in range(n_trials):
        c = suggest(BRANIN_SPACE, hist, RngStream(rep))
        assert BRANIN_SPACE.contains(c)
        hist.append(TrialRecord(i, c, None, branin(c["x1"], c["x2"])))
    return min(h.test_mse for h in hist)


def random_best(rep, n_trials=20):
    u = np.random.default_rng(10_000 + rep).random((n_trials, 2))
    return min(branin(-5 + 15 * a, 15 * b) for a, b in u)


def compare(reps):
    bo = [bo_best(r) for r in range(reps)]
    rs = [random_best(r) for r in range(reps)]
    return float(np.median(bo)), float(np.median(rs))
