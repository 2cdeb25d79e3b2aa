"""Frequency-assortative, fixed-degree Kuramoto oscillator networks.

Networks are built by stub matching: repeatedly pick an unsaturated node
``i`` at random, pick a random unsaturated partner ``j`` that is not yet
linked to ``i``, and accept the link with probability

    p_ij = delta**gamma / (delta**gamma + |omega_i - omega_j|**gamma)

until every node reaches the target degree.
"""

from __future__ import annotations

import json
import logging
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .errors import InvalidArgumentError, NumericalFailureError

logger = logging.getLogger(__name__)

MAX_RESTARTS = 100


@dataclass(frozen=True)
class AssortativityParams:
    delta: float = 0.8
    gamma: float = 5.0
    degree: int = 3

    def __post_init__(self):
        if self.delta <= 0:
            raise InvalidArgumentError(f"delta must be positive, got {self.delta}")
        if self.gamma < 0:
            raise InvalidArgumentError(f"gamma must be nonnegative, got {self.gamma}")
        if self.degree < 1:
            raise InvalidArgumentError(f"degree must be positive, got {self.degree}")


@dataclass
class OscillatorNetwork:
    """An undirected network of Kuramoto oscillators.

    Attributes:
        frequencies: Natural frequencies, shape ``(n_nodes,)``.
        edges: Undirected links as an ``(n_edges, 2)`` integer array with
            ``i < j`` in every row, sorted lexicographically.
        coupling: Global coupling constant ``K``.
        degree: Target degree for regular networks, ``None`` otherwise.
        source: ``"generated"``, ``"true-adjacency"`` or ``"inferred"``.
        threshold: Link-inference threshold for inferred networks.
    """

    frequencies: np.ndarray
    edges: np.ndarray
    coupling: float = 0.5
    degree: int | None = None
    source: str = "generated"
    threshold: float | None = None
    _adjacency: np.ndarray | None = field(default=None, init=False, repr=False, compare=False)

    def __post_init__(self):
        self.frequencies = np.asarray(self.frequencies, dtype=float)
        edges = np.asarray(self.edges, dtype=np.int64).reshape(-1, 2)
        if edges.size:
            edges = np.sort(edges, axis=1)
            if np.any(edges[:, 0] == edges[:, 1]):
                raise InvalidArgumentError("self-loops are not allowed")
            if edges.min() < 0 or edges.max() >= self.n_nodes:
                raise InvalidArgumentError("edge endpoint out of range")
            edges = np.unique(edges, axis=0)
        self.edges = edges

    @property
    def n_nodes(self) -> int:
        return int(self.frequencies.shape[0])

    @property
    def adjacency(self) -> np.ndarray:
        """Dense symmetric 0/1 adjacency matrix (cached)."""
        if self._adjacency is None:
            a = np.zeros((self.n_nodes, self.n_nodes), dtype=np.int8)
            if self.edges.size:
                a[self.edges[:, 0], self.edges[:, 1]] = 1
                a[self.edges[:, 1], self.edges[:, 0]] = 1
            self._adjacency = a
        return self._adjacency

    def degrees(self) -> np.ndarray:
        return self.adjacency.sum(axis=1).astype(int)

    def neighbors(self, i: int) -> np.ndarray:
        """Neighbors of node ``i`` in ascending index order."""
        return np.flatnonzero(self.adjacency[i])

    def with_coupling(self, coupling: float) -> OscillatorNetwork:
        return OscillatorNetwork(self.frequencies.copy(), self.edges.copy(), coupling,
                                 self.degree, self.source, self.threshold)

    def to_dict(self) -> dict:
        d = {
            "n_nodes": self.n_nodes,
            "degree": self.degree,
            "coupling": float(self.coupling),
            "frequencies": [float(w) for w in self.frequencies],
            "edges": [[int(i), int(j)] for i, j in self.edges],
            "source": self.source,
        }
        if self.threshold is not None:
            d["threshold"] = float(self.threshold)
        return d

    @classmethod
    def from_dict(cls, d: dict) -> OscillatorNetwork:
        freqs = np.asarray(d["frequencies"], dtype=float)
        if len(freqs) != d["n_nodes"]:
            raise InvalidArgumentError("frequencies length does not match n_nodes")
        return cls(freqs, np.asarray(d["edges"], dtype=np.int64).reshape(-1, 2),
                   float(d.get("coupling", 0.5)), d.get("degree"),
                   d.get("source", "generated"), d.get("threshold"))

    def save(self, path: str | Path) -> None:
        Path(path).write_text(json.dumps(self.to_dict(), indent=1))

    @classmethod
    def load(cls, path: str | Path) -> OscillatorNetwork:
        return cls.from_dict(json.loads(Path(path).read_text()))


def network_from_adjacency(adjacency, frequencies, coupling=0.5, source="inferred",
                           threshold=None) -> OscillatorNetwork:
    a = np.asarray(adjacency)
    if a.ndim != 2 or a.shape[0] != a.shape[1]:
        raise InvalidArgumentError("adjacency must be square")
    if not np.array_equal(a, a.T):
        raise InvalidArgumentError("adjacency must be symmetric")
    if np.any(np.diag(a) != 0):
        raise InvalidArgumentError("adjacency must have a zero diagonal")
    i, j = np.nonzero(np.triu(a, 1))
    return OscillatorNetwork(frequencies, np.column_stack([i, j]), coupling, None, source, threshold)


def sample_frequencies(n: int, seed: int | np.random.SeedSequence | None = None) -> np.ndarray:
    """Natural frequencies drawn uniformly from [-pi/2, pi/2]."""
    if n < 1:
        raise InvalidArgumentError(f"need at least one oscillator, got n={n}")
    return np.random.default_rng(seed).uniform(-np.pi / 2, np.pi / 2, size=n)


def link_log_probability(frequencies: np.ndarray, delta: float, gamma: float) -> np.ndarray:
    """Log acceptance probability ``log p_ij`` for every ordered pair.

    Evaluated as ``-log(1 + (|dw| / delta)**gamma)`` in log space so that
    large ``gamma`` cannot underflow to an all-zero weight matrix.
    """
    dw = np.abs(frequencies[:, None] - frequencies[None, :])
    if gamma == 0:
        return np.full(dw.shape, -np.log(2.0))
    with np.errstate(divide="ignore"):
        log_ratio = gamma * (np.log(dw) - np.log(delta))
    return -np.logaddexp(0.0, log_ratio)


def _try_build(logp: np.ndarray, degree: int, rng: np.random.Generator) -> np.ndarray | None:
    n = logp.shape[0]
    remaining = np.full(n, degree)
    adj = np.zeros((n, n), dtype=bool)
    edges = []
    while remaining.any():
        unsat = np.flatnonzero(remaining > 0)
        sub_adj = adj[np.ix_(unsat, unsat)]
        legal = ~sub_adj
        np.fill_diagonal(legal, False)
        n_cand = legal.sum(axis=1)
        if np.any(n_cand == 0):
            return None
        # The first accepted (i, j) of the rejection loop has probability
        # proportional to p_ij / |candidates(i)|; sample it directly.
        logw = np.where(legal, logp[np.ix_(unsat, unsat)] - np.log(n_cand)[:, None], -np.inf)
        w = np.exp(logw - logw.max()).ravel()
        k = rng.choice(w.size, p=w / w.sum())
        i, j = unsat[k // unsat.size], unsat[k % unsat.size]
        adj[i, j] = adj[j, i] = True
        remaining[i] -= 1
        remaining[j] -= 1
        edges.append((min(i, j), max(i, j)))
    return np.array(edges, dtype=np.int64).reshape(-1, 2)


def build_assortative_network(frequencies, params: AssortativityParams = AssortativityParams(),
                              coupling: float = 0.5, seed=None) -> OscillatorNetwork:
    """Build a regular frequency-assortative network.

    A construction that deadlocks (remaining stubs cannot be legally paired)
    is discarded and restarted from the next derived seed, up to
    ``MAX_RESTARTS`` times.
    """
    frequencies = np.asarray(frequencies, dtype=float)
    n = frequencies.shape[0]
    if params.degree >= n:
        raise InvalidArgumentError(f"degree {params.degree} must be below n_nodes {n}")
    if (n * params.degree) % 2:
        raise InvalidArgumentError(f"n_nodes * degree = {n * params.degree} must be even")
    logp = link_log_probability(frequencies, params.delta, params.gamma)
    ss = seed if isinstance(seed, np.random.SeedSequence) else np.random.SeedSequence(seed)
    for attempt, child in enumerate(ss.spawn(MAX_RESTARTS + 1)):
        edges = _try_build(logp, params.degree, np.random.default_rng(child))
        if edges is not None:
            if attempt:
                logger.debug("network construction succeeded after %d restarts", attempt)
            return OscillatorNetwork(frequencies, edges, coupling, params.degree, "generated")
    raise NumericalFailureError(f"stub matching deadlocked {MAX_RESTARTS + 1} times")


def assortativity_score(net: OscillatorNetwork) -> float:
    """Mean ``|omega_i - omega_j|`` over linked pairs."""
    if net.edges.shape[0] == 0:
        raise InvalidArgumentError("assortativity is undefined for an edgeless network")
    w = net.frequencies
    return float(np.mean(np.abs(w[net.edges[:, 0]] - w[net.edges[:, 1]])))


def standard_network(n_nodes: int = 50, seed=None, params: AssortativityParams = AssortativityParams(),
                     coupling: float = 0.5) -> OscillatorNetwork:
    """Frequencies and links from one master seed (independent child streams)."""
    ss = seed if isinstance(seed, np.random.SeedSequence) else np.random.SeedSequence(seed)
    freq_ss, link_ss = ss.spawn(2)
    return build_assortative_network(sample_frequencies(n_nodes, freq_ss), params, coupling, link_ss)
