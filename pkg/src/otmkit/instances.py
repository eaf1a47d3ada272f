"""Random chain / cost generators shared by tests, scripts and the CLI."""

from __future__ import annotations

import numpy as np

from .chains import CostSpec, MarkovChain, cost_matrix, stationary_distribution, validate_chain


def make_rng(seed) -> np.random.Generator:
    return np.random.Generator(np.random.Philox(seed))


def random_kernel(rng, n: int, degree: int | None = None, floor: float = 0.0) -> np.ndarray:
    """Row-stochastic matrix; ``degree`` limits the out-support of every row."""
    K = rng.random((n, n)) + floor
    if degree is not None and degree < n:
        mask = np.zeros((n, n), dtype=bool)
        for i in range(n):
            mask[i, rng.choice(n, size=degree, replace=False)] = True
        K = np.where(mask, K, 0.0)
    return K / K.sum(axis=1, keepdims=True)


def random_chain(rng, n: int, labels=None, degree: int | None = None, stationary: bool = False,
                 floor: float = 0.0) -> MarkovChain:
    K = random_kernel(rng, n, degree, floor)
    if stationary:
        nu = stationary_distribution(validate_chain(K, np.full(n, 1.0 / n)))
    else:
        nu = rng.dirichlet(np.ones(n))
    return validate_chain(K, nu, labels)


def random_labels(rng, n: int, dim: int = 2) -> np.ndarray:
    return rng.random((n, dim))


def random_pair(rng, n: int, m: int, dim: int = 2, metric: str = "euclidean", **kw):
    """Two labeled chains and their label cost."""
    X = random_chain(rng, n, labels=random_labels(rng, n, dim), **kw)
    Y = random_chain(rng, m, labels=random_labels(rng, m, dim), **kw)
    return X, Y, cost_matrix(X, Y, CostSpec(metric))


def permuted(chain: MarkovChain, perm) -> MarkovChain:
    """Relabel states: new state ``a`` is old state ``perm[a]``."""
    perm = np.asarray(perm)
    K = chain.kernel[np.ix_(perm, perm)]
    labels = None if chain.labels is None else chain.labels[perm]
    return validate_chain(K, chain.initial[perm], labels)
