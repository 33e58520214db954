"""Linear black-box targets small enough to search exhaustively."""
import itertools

import numpy as np
import scipy.sparse as sp

from sentinel.attack import ManipulationSpace


class LinearOracle:
    def __init__(self, w, b):
        self.w, self.b = np.asarray(w, dtype=float), float(b)
        self.threshold = 0.5

    def malware_score(self, X):
        z = np.asarray(sp.csr_matrix(X) @ self.w).ravel() + self.b
        return 1.0 / (1.0 + np.exp(-z))


def brute_force_min(oracle, active, d, space, budget):
    """Lowest score reachable with at most ``budget`` distinct manipulations."""
    genes = space.genes.tolist()
    best = np.inf
    for k in range(budget + 1):
        for combo in itertools.combinations(genes, k):
            row = set(active.tolist())
            row |= {g for g in combo if g >= 0}
            row -= {~g for g in combo if g < 0}
            x = np.zeros((1, d))
            x[0, sorted(row)] = 1.0
            best = min(best, float(oracle.malware_score(x)[0]))
    return best


def linear_case(seed, d=16):
    """A detected sample, a small manipulation space and a budget of 1 or 2."""
    rng = np.random.default_rng(seed)
    w = rng.normal(0, 1.5, d)
    active = np.sort(rng.choice(d, size=int(rng.integers(3, 7)), replace=False))
    addable = np.setdiff1d(np.arange(d), active)[: int(rng.integers(4, 11))]
    removable = active[: int(rng.integers(1, active.size + 1))]
    x = np.zeros((1, d))
    x[0, active] = 1.0
    b = 0.5 - float(x[0] @ w) + rng.uniform(0.05, 0.6)
    space = ManipulationSpace(addable.astype(np.int64), removable.astype(np.int64))
    return LinearOracle(w, b), active, space, int(rng.integers(1, 3))
