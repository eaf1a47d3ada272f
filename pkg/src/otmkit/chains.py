"""Finite Markov chains, labeled graphs, label costs and structural diagnostics.

A chain is a row-stochastic kernel plus an initial distribution, optionally
carrying one real label vector per state. Graphs are converted to chains by a
(weighted, optionally lazy) random walk.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field
from functools import reduce
from pathlib import Path
from typing import Sequence

import numpy as np
from scipy.sparse import csr_matrix
from scipy.sparse.csgraph import breadth_first_order, connected_components

from .errors import (
    DimensionMismatch,
    InputError,
    LabelDimensionMismatch,
    MissingLabels,
    NegativeEntry,
    NonUniqueStationary,
    RowSumViolation,
    StationaryUnavailable,
)

# rows whose sum deviates by at most this much are silently renormalized
ROW_SUM_TOL = 1e-9
STATIONARY_RESIDUAL_TOL = 1e-10

METRICS = ("euclidean", "manhattan", "hamming", "discrete")


def _frozen(a: np.ndarray) -> np.ndarray:
    a = np.array(a, dtype=float)
    a.setflags(write=False)
    return a


@dataclass(frozen=True, eq=False)
class MarkovChain:
    """Validated finite Markov chain; build it with :func:`validate_chain`."""

    kernel: np.ndarray
    initial: np.ndarray
    labels: np.ndarray | None = None
    renormalized_rows: tuple[int, ...] = ()

    @property
    def n(self) -> int:
        return self.kernel.shape[0]

    def with_initial(self, initial) -> "MarkovChain":
        return validate_chain(self.kernel, initial, self.labels)

    def supports(self) -> list[np.ndarray]:
        """Index set of each kernel row's support (entries > 0)."""
        return [np.flatnonzero(row > 0) for row in self.kernel]

    def to_json(self) -> dict:
        out = {"kernel": self.kernel.tolist(), "initial": self.initial.tolist()}
        if self.labels is not None:
            out["labels"] = self.labels.tolist()
        return out


@dataclass(frozen=True)
class LabeledGraph:
    """Directed graph; ``edges`` holds ``(src, dst)`` or ``(src, dst, weight)``."""

    node_count: int
    edges: tuple[tuple, ...]
    labels: tuple[tuple[float, ...], ...] | None = None

    def __post_init__(self):
        if self.node_count < 1:
            raise InputError("graph needs at least one node")
        for e in self.edges:
            if len(e) not in (2, 3):
                raise InputError(f"bad edge {e!r}")
            s, d = e[0], e[1]
            if not (0 <= s < self.node_count and 0 <= d < self.node_count):
                raise InputError(f"edge endpoint out of range: {e!r}")
            if len(e) == 3 and not e[2] > 0:
                raise InputError(f"edge weight must be positive: {e!r}")
        if self.labels is not None and len(self.labels) != self.node_count:
            raise DimensionMismatch("one label per node required")

    @classmethod
    def undirected(cls, node_count: int, edges: Sequence[tuple], labels=None) -> "LabeledGraph":
        both = []
        for e in edges:
            both.append(tuple(e))
            both.append((e[1], e[0], *e[2:]))
        return cls(node_count, tuple(both), labels)


@dataclass(frozen=True)
class CostSpec:
    metric: str = "euclidean"
    scale: float = 1.0

    def __post_init__(self):
        if self.metric not in METRICS:
            raise InputError(f"unknown metric {self.metric!r}; expected one of {METRICS}")
        if not self.scale > 0:
            raise InputError("cost scale must be positive")


@dataclass(frozen=True)
class StructureReport:
    irreducible: bool
    aperiodic: bool
    max_out_degree: int
    support_sizes: tuple[int, ...]
    dangling: tuple[int, ...]
    period: int | None = None
    n_components: int = 1

    def to_json(self) -> dict:
        return {
            "irreducible": self.irreducible,
            "aperiodic": self.aperiodic,
            "period": self.period,
            "max_out_degree": self.max_out_degree,
            "support_sizes": list(self.support_sizes),
            "dangling": list(self.dangling),
            "n_components": self.n_components,
        }


def _check_distribution(v: np.ndarray, name: str) -> tuple[np.ndarray, bool]:
    if np.any(~np.isfinite(v)):
        raise InputError(f"{name} has non-finite entries")
    if np.any(v < 0):
        raise NegativeEntry(f"{name} has negative entries")
    s = v.sum()
    if abs(s - 1.0) > ROW_SUM_TOL:
        raise RowSumViolation(f"{name} sums to {s!r}")
    if s != 1.0:
        return v / s, True
    return v, False


def validate_chain(kernel, initial, labels=None) -> MarkovChain:
    K = np.array(kernel, dtype=float)
    nu = np.array(initial, dtype=float).ravel()
    if K.ndim != 2 or K.shape[0] != K.shape[1] or K.shape[0] == 0:
        raise DimensionMismatch(f"kernel must be a non-empty square matrix, got shape {K.shape}")
    n = K.shape[0]
    if nu.shape != (n,):
        raise DimensionMismatch(f"initial has length {nu.size}, kernel has {n} states")
    if np.any(~np.isfinite(K)):
        raise InputError("kernel has non-finite entries")
    if np.any(K < 0):
        raise NegativeEntry("kernel has negative entries")
    sums = K.sum(axis=1)
    dev = np.abs(sums - 1.0)
    if np.any(dev > ROW_SUM_TOL):
        bad = int(np.argmax(dev))
        raise RowSumViolation(f"kernel row {bad} sums to {sums[bad]!r}")
    fix = np.flatnonzero(sums != 1.0)
    if fix.size:
        K[fix] /= sums[fix, None]
    nu, _ = _check_distribution(nu, "initial")
    lab = None
    if labels is not None:
        lab = np.array(labels, dtype=float)
        if lab.ndim == 1:
            lab = lab[:, None]
        if lab.ndim != 2 or lab.shape[0] != n:
            raise LabelDimensionMismatch("labels must be one equal-length vector per state")
        lab = _frozen(lab)
    return MarkovChain(_frozen(K), _frozen(nu), lab, tuple(int(i) for i in fix))


def graph_to_chain(
    graph: LabeledGraph,
    dangling_policy: str = "self_loop",
    lazy_prob: float = 0.0,
    initial_policy="uniform",
) -> MarkovChain:
    """Random walk on ``graph``: weight-proportional steps, self-loop mass ``lazy_prob``.

    ``initial_policy`` is ``"uniform"``, ``"stationary"`` or an explicit vector.
    """
    if not 0.0 <= lazy_prob < 1.0:
        raise InputError("lazy_prob must lie in [0, 1)")
    if dangling_policy not in ("self_loop", "uniform_jump"):
        raise InputError(f"unknown dangling policy {dangling_policy!r}")
    n = graph.node_count
    W = np.zeros((n, n))
    for e in graph.edges:
        W[e[0], e[1]] += e[2] if len(e) == 3 else 1.0
    out = W.sum(axis=1)
    K = np.zeros((n, n))
    eye = np.eye(n)
    for i in range(n):
        if out[i] > 0:
            K[i] = (1.0 - lazy_prob) * W[i] / out[i] + lazy_prob * eye[i]
        elif dangling_policy == "self_loop":
            K[i] = eye[i]
        else:
            K[i] = (1.0 - lazy_prob) / n + lazy_prob * eye[i]
    if isinstance(initial_policy, str):
        if initial_policy == "uniform":
            nu = np.full(n, 1.0 / n)
        elif initial_policy == "stationary":
            try:
                nu = stationary_distribution(validate_chain(K, np.full(n, 1.0 / n)))
            except NonUniqueStationary as exc:
                raise StationaryUnavailable(str(exc)) from exc
        else:
            raise InputError(f"unknown initial policy {initial_policy!r}")
    else:
        nu = np.asarray(initial_policy, dtype=float)
    return validate_chain(K, nu, graph.labels)


def cost_matrix(chain_x: MarkovChain, chain_y: MarkovChain, spec: CostSpec = CostSpec()) -> np.ndarray:
    """Label cost ``C[i, j] = scale * metric(label_x[i], label_y[j])``."""
    lx, ly = chain_x.labels, chain_y.labels
    if lx is None or ly is None:
        if spec.metric == "discrete" and lx is None and ly is None and chain_x.n == chain_y.n:
            # shared state space: cost is state identity
            return spec.scale * (1.0 - np.eye(chain_x.n))
        raise MissingLabels("both chains need labels for a label cost")
    if lx.shape[1] != ly.shape[1]:
        raise LabelDimensionMismatch(f"label dims {lx.shape[1]} and {ly.shape[1]} differ")
    diff = lx[:, None, :] - ly[None, :, :]
    if spec.metric == "euclidean":
        C = np.sqrt(np.sum(diff * diff, axis=-1))
    elif spec.metric == "manhattan":
        C = np.sum(np.abs(diff), axis=-1)
    elif spec.metric == "hamming":
        C = np.sum(diff != 0, axis=-1).astype(float)
    else:
        C = np.any(diff != 0, axis=-1).astype(float)
    return spec.scale * C


def stationary_distribution(chain: MarkovChain) -> np.ndarray:
    """Solve the balance equations ``mu K = mu``, ``sum(mu) = 1`` directly."""
    K = chain.kernel
    n = chain.n
    A = K.T - np.eye(n)
    rank = np.linalg.matrix_rank(A, tol=1e-10 * max(1.0, n))
    if rank < n - 1:
        raise NonUniqueStationary(
            f"kernel has {n - rank} closed classes; supply an initial distribution explicitly"
        )
    M = np.vstack([A, np.ones((1, n))])
    rhs = np.zeros(n + 1)
    rhs[-1] = 1.0
    mu, *_ = np.linalg.lstsq(M, rhs, rcond=None)
    mu = np.clip(mu, 0.0, None)
    mu /= mu.sum()
    res = np.abs(mu @ K - mu).sum()
    if res > STATIONARY_RESIDUAL_TOL:
        raise NonUniqueStationary(f"stationary solve residual {res:.3e} too large")
    return mu


def stationarity_residual(chain: MarkovChain) -> float:
    """L1 balance residual of the chain's own initial distribution."""
    nu = chain.initial
    return float(np.abs(nu @ chain.kernel - nu).sum())


def _period(K: np.ndarray, members: np.ndarray) -> int | None:
    """Period of the strongly connected class ``members`` (None if it has no cycle)."""
    sub = K[np.ix_(members, members)] > 0
    if not sub.any():
        return None
    order, _ = breadth_first_order(csr_matrix(sub), 0, directed=True, return_predecessors=True)
    level = np.full(len(members), -1)
    level[0] = 0
    for u in order:
        for v in np.flatnonzero(sub[u]):
            if level[v] < 0:
                level[v] = level[u] + 1
    g = 0
    for u, v in zip(*np.nonzero(sub)):
        g = math.gcd(g, int(level[u] + 1 - level[v]))
    return g


def structure_check(chain: MarkovChain) -> StructureReport:
    K = chain.kernel
    support = (K > 0).sum(axis=1)
    n_comp, comp = connected_components(csr_matrix(K > 0), directed=True, connection="strong")
    periods = []
    for c in range(n_comp):
        p = _period(K, np.flatnonzero(comp == c))
        if p is not None:
            periods.append(p)
    period = reduce(math.gcd, periods) if n_comp == 1 and periods else None
    dangling = tuple(int(i) for i in range(chain.n) if support[i] == 1 and K[i, i] == 1.0)
    return StructureReport(
        irreducible=n_comp == 1,
        aperiodic=bool(periods) and all(p == 1 for p in periods),
        max_out_degree=int(support.max()),
        support_sizes=tuple(int(s) for s in support),
        dangling=dangling,
        period=period,
        n_components=int(n_comp),
    )


# -- file formats ----------------------------------------------------------


def load_chain_json(path) -> MarkovChain:
    data = json.loads(Path(path).read_text())
    if "kernel" not in data or "initial" not in data:
        raise InputError(f"{path}: chain file needs 'kernel' and 'initial'")
    return validate_chain(data["kernel"], data["initial"], data.get("labels"))


def save_chain_json(chain: MarkovChain, path) -> None:
    Path(path).write_text(json.dumps(chain.to_json()))


def load_graph_tsv(path, labels_path=None) -> LabeledGraph:
    """Read ``src<TAB>dst<TAB>weight?`` lines; '#' starts a comment."""
    edges = []
    max_node = -1
    for lineno, line in enumerate(Path(path).read_text().splitlines(), 1):
        line = line.split("#", 1)[0].strip()
        if not line:
            continue
        parts = line.split("\t")
        try:
            e = (int(parts[0]), int(parts[1]), *(float(w) for w in parts[2:3]))
        except (ValueError, IndexError) as exc:
            raise InputError(f"{path}:{lineno}: bad edge line {line!r}") from exc
        edges.append(e)
        max_node = max(max_node, e[0], e[1])
    labels = None
    if labels_path is not None:
        labels = json.loads(Path(labels_path).read_text())["labels"]
        labels = tuple(tuple(float(x) for x in (v if isinstance(v, list) else [v])) for v in labels)
    n = len(labels) if labels is not None else max_node + 1
    return LabeledGraph(n, tuple(edges), labels)
