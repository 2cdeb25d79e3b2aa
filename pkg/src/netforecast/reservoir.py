"""A single reservoir computer.

State update (open loop)::

    r(t + dt) = alpha * r(t) + (1 - alpha) * tanh(B r(t) + W_in u(t))

Readout ``u~(t) = W_out r(t)`` is fit by ridge regression. In closed loop the
readout replaces ``u``.
"""

from __future__ import annotations

import json
from dataclasses import asdict, dataclass, field, replace
from pathlib import Path
from typing import Literal

import numpy as np
import scipy.linalg
import scipy.sparse as sp
import scipy.sparse.linalg as spla

from .errors import InvalidArgumentError, NumericalFailureError

FORMAT_TAG = "netforecast-reservoir/1"
MAX_MATRIX_RETRIES = 20


@dataclass(frozen=True)
class ReservoirConfig:
    """Reservoir hyperparameters shared by every reservoir of a forecaster.

    ``closed_loop`` selects the autonomous update: ``"leaky"`` reuses the
    open-loop update with the readout as input; ``"literal"`` drops the leak
    term, ``r <- tanh(B r + W_in W_out r)``.
    """

    n_reservoir: int = 200
    spectral_radius: float = 0.9
    input_scaling: float = 0.6
    leak_rate: float = 0.1
    ridge_param: float = 1e-9
    avg_in_degree: float = 3.0
    washout: int = 100
    sync_length: int = 100
    closed_loop: Literal["leaky", "literal"] = "leaky"
    input_noise: float = 0.0

    def __post_init__(self):
        if self.n_reservoir < 1:
            raise InvalidArgumentError("n_reservoir must be positive")
        if not 0.0 <= self.leak_rate <= 1.0:
            raise InvalidArgumentError(f"leak_rate must lie in [0, 1], got {self.leak_rate}")
        if self.ridge_param < 0:
            raise InvalidArgumentError("ridge_param must be nonnegative")
        if self.spectral_radius <= 0:
            raise InvalidArgumentError("spectral_radius must be positive")
        if self.input_scaling <= 0:
            raise InvalidArgumentError("input_scaling must be positive")
        if self.avg_in_degree <= 0:
            raise InvalidArgumentError("avg_in_degree must be positive")
        if self.washout < 0 or self.sync_length < 0:
            raise InvalidArgumentError("washout and sync_length must be nonnegative")
        if self.closed_loop not in ("leaky", "literal"):
            raise InvalidArgumentError(f"unknown closed_loop form {self.closed_loop!r}")

    def replace(self, **changes) -> ReservoirConfig:
        return replace(self, **changes)


@dataclass(frozen=True)
class InputPartition:
    """How reservoir nodes are split among the input components.

    known-equal: every input drives the same number of nodes.
    unknown-reserved: the assigned oscillator's two inputs get
    ``n_assign / 2`` nodes each, the rest split the remainder equally.
    all-to-all: every node sees every input.
    """

    mode: Literal["known-equal", "unknown-reserved", "all-to-all"] = "known-equal"
    n_assign: int = 50

    def __post_init__(self):
        if self.mode not in ("known-equal", "unknown-reserved", "all-to-all"):
            raise InvalidArgumentError(f"unknown partition mode {self.mode!r}")
        if self.mode == "unknown-reserved" and (self.n_assign < 2 or self.n_assign % 2):
            raise InvalidArgumentError(f"n_assign must be a positive even integer, got {self.n_assign}")


def spectral_radius(b) -> float:
    n = b.shape[0]
    if n <= 64:
        dense = b.toarray() if sp.issparse(b) else np.asarray(b)
        return float(np.max(np.abs(np.linalg.eigvals(dense))))
    try:
        vals = spla.eigs(b.astype(float), k=1, which="LM", tol=1e-12, maxiter=50 * n,
                         return_eigenvectors=False, v0=np.ones(n))
        return float(np.abs(vals[0]))
    except spla.ArpackNoConvergence:
        return float(np.max(np.abs(np.linalg.eigvals(b.toarray()))))


def build_reservoir_matrix(n_reservoir: int, avg_in_degree: float = 3.0, spectral_radius_target: float = 0.9,
                           seed=None) -> sp.csr_matrix:
    """Sparse random directed reservoir matrix with zero diagonal.

    Row ``k`` lists the inputs of reservoir node ``k``; each off-diagonal
    entry is present with probability ``avg_in_degree / (n - 1)`` and drawn
    from U[-1, 1] before the whole matrix is rescaled to the requested
    spectral radius.
    """
    if n_reservoir < 2:
        raise InvalidArgumentError("n_reservoir must be at least 2")
    if spectral_radius_target <= 0:
        raise InvalidArgumentError("spectral radius must be positive")
    ss = seed if isinstance(seed, np.random.SeedSequence) else np.random.SeedSequence(seed)
    p = min(1.0, avg_in_degree / (n_reservoir - 1))
    for child in ss.spawn(MAX_MATRIX_RETRIES):
        rng = np.random.default_rng(child)
        counts = rng.binomial(n_reservoir - 1, p, size=n_reservoir)
        rows = np.repeat(np.arange(n_reservoir), counts)
        cols = np.concatenate([rng.choice(n_reservoir - 1, size=c, replace=False) for c in counts]) \
            if counts.sum() else np.empty(0, dtype=np.int64)
        cols = cols + (cols >= rows)  # skip the diagonal
        vals = rng.uniform(-1.0, 1.0, size=rows.size)
        b = sp.csr_matrix((vals, (rows, cols)), shape=(n_reservoir, n_reservoir))
        b.sort_indices()
        rho = spectral_radius(b) if b.nnz else 0.0
        if rho > 1e-10:
            return (b * (spectral_radius_target / rho)).tocsr()
    raise NumericalFailureError(f"reservoir matrix was degenerate after {MAX_MATRIX_RETRIES} draws")


def effective_size(n_reservoir: int, n_in_tot: int, partition: InputPartition) -> int:
    """Reservoir size actually used for the given partition."""
    if n_in_tot < 1:
        raise InvalidArgumentError("need at least one input")
    if partition.mode == "unknown-reserved" and n_in_tot > 2:
        per = max(1, int(round((n_reservoir - partition.n_assign) / (n_in_tot - 2))))
        return partition.n_assign + per * (n_in_tot - 2)
    return n_reservoir


def _rows_per_input(n_eff: int, n_in_tot: int, partition: InputPartition) -> np.ndarray:
    if partition.mode == "unknown-reserved" and n_in_tot > 2:
        if n_in_tot % 2:
            raise InvalidArgumentError("unknown-reserved needs sin/cos input pairs")
        per = (n_eff - partition.n_assign) // (n_in_tot - 2)
        counts = np.full(n_in_tot, per)
        counts[0] = counts[n_in_tot // 2] = partition.n_assign // 2
    else:
        if n_eff % n_in_tot:
            raise InvalidArgumentError(
                f"n_reservoir={n_eff} is not a multiple of the {n_in_tot} inputs")
        counts = np.full(n_in_tot, n_eff // n_in_tot)
    if counts.sum() != n_eff:
        raise InvalidArgumentError("input partition does not cover the reservoir")
    return counts


def build_input_matrix(n_reservoir: int, n_in_tot: int, input_scaling: float,
                       partition: InputPartition = InputPartition(), seed=None) -> sp.csr_matrix:
    """Input matrix ``W_in`` with shape ``(effective_size, n_in_tot)``.

    The number of rows may differ from ``n_reservoir`` in unknown-reserved
    mode; see :func:`effective_size`.
    """
    rng = np.random.default_rng(seed)
    n_eff = effective_size(n_reservoir, n_in_tot, partition)
    if partition.mode == "all-to-all":
        return sp.csr_matrix(rng.uniform(-input_scaling, input_scaling, size=(n_eff, n_in_tot)))
    counts = _rows_per_input(n_eff, n_in_tot, partition)
    rows = rng.permutation(n_eff)
    cols = np.repeat(np.arange(n_in_tot), counts)
    vals = rng.uniform(-input_scaling, input_scaling, size=n_eff)
    w = sp.csr_matrix((vals, (rows, cols)), shape=(n_eff, n_in_tot))
    w.sort_indices()
    return w


def encode_oscillator_state(phases) -> np.ndarray:
    """``[sin theta_0, ..., sin theta_{n-1}, cos theta_0, ..., cos theta_{n-1}]``.

    Works on the last axis, so a ``(T, n)`` series maps to ``(T, 2n)``.
    """
    theta = np.asarray(phases, dtype=float)
    return np.concatenate([np.sin(theta), np.cos(theta)], axis=-1)


def decode_oscillator_state(u) -> np.ndarray:
    u = np.asarray(u, dtype=float)
    if u.shape[-1] % 2:
        raise InvalidArgumentError("encoded state must have an even length")
    n = u.shape[-1] // 2
    return np.arctan2(u[..., :n], u[..., n:])


def evolve_state(b, w_in, r, u, leak_rate: float) -> np.ndarray:
    return leak_rate * r + (1.0 - leak_rate) * np.tanh(b @ r + w_in @ u)


def ridge_solve(gram: np.ndarray, cross: np.ndarray, ridge_param: float) -> np.ndarray:
    """``W_out`` from ``(G + beta I) W_out^T = C`` via Cholesky.

    ``gram`` is ``sum r r^T`` and ``cross`` is ``sum r y^T``.
    """
    if not np.isfinite(ridge_param) or ridge_param < 0:
        raise InvalidArgumentError(f"ridge_param must be >= 0, got {ridge_param}")
    a = gram + ridge_param * np.eye(gram.shape[0])
    try:
        factor = scipy.linalg.cho_factor(a, lower=True, check_finite=True)
    except (np.linalg.LinAlgError, ValueError) as exc:
        hint = " (use ridge_param > 0)" if ridge_param == 0 else ""
        raise NumericalFailureError(f"normal matrix is not positive definite{hint}: {exc}") from exc
    return scipy.linalg.cho_solve(factor, cross).T


def train(states, targets, ridge_param: float) -> np.ndarray:
    """Ridge readout for row-stacked ``states (T, N_r)`` and ``targets (T, n_out)``.

    Returns ``W_out`` of shape ``(n_out, N_r)`` minimising
    ``sum ||W_out r - u||^2 + ridge_param * tr(W_out W_out^T)``.
    """
    states = np.asarray(states, dtype=float)
    targets = np.asarray(targets, dtype=float)
    if targets.ndim == 1:
        targets = targets[:, None]
    if states.shape[0] != targets.shape[0] or states.shape[0] < 1:
        raise InvalidArgumentError("states and targets need the same, nonzero, number of samples")
    return ridge_solve(states.T @ states, states.T @ targets, ridge_param)


@dataclass
class Reservoir:
    """One realized reservoir computer."""

    config: ReservoirConfig
    b_matrix: sp.csr_matrix
    w_in: sp.csr_matrix
    w_out: np.ndarray | None = None
    state: np.ndarray | None = None
    seed_lineage: list = field(default_factory=list)

    def __post_init__(self):
        n = self.b_matrix.shape[0]
        if self.w_in.shape[0] != n:
            raise InvalidArgumentError("W_in rows must match the reservoir size")
        if self.state is None:
            self.state = np.zeros(n)

    @classmethod
    def create(cls, config: ReservoirConfig, n_inputs: int, partition: InputPartition = InputPartition(),
               seed=None) -> Reservoir:
        ss = seed if isinstance(seed, np.random.SeedSequence) else np.random.SeedSequence(seed)
        b_ss, in_ss = ss.spawn(2)
        n_eff = effective_size(config.n_reservoir, n_inputs, partition)
        w_in = build_input_matrix(config.n_reservoir, n_inputs, config.input_scaling, partition, in_ss)
        b = build_reservoir_matrix(n_eff, config.avg_in_degree, config.spectral_radius, b_ss)
        lineage = [ss.entropy, *ss.spawn_key]
        return cls(config, b, w_in, seed_lineage=[int(x) for x in lineage])

    @property
    def size(self) -> int:
        return self.b_matrix.shape[0]

    @property
    def n_inputs(self) -> int:
        return self.w_in.shape[1]

    def reset(self) -> None:
        self.state = np.zeros(self.size)

    def evolve(self, u) -> np.ndarray:
        u = np.asarray(u, dtype=float)
        if u.shape != (self.n_inputs,):
            raise InvalidArgumentError(f"input must have length {self.n_inputs}")
        if not np.all(np.isfinite(u)):
            raise NumericalFailureError("non-finite reservoir input")
        self.state = evolve_state(self.b_matrix, self.w_in, self.state, u, self.config.leak_rate)
        return self.state

    def drive(self, inputs) -> np.ndarray:
        """Open-loop drive; returns the state after each input, shape ``(T, N_r)``."""
        inputs = np.asarray(inputs, dtype=float)
        out = np.empty((inputs.shape[0], self.size))
        for k, u in enumerate(inputs):
            out[k] = self.evolve(u)
        return out

    def synchronize(self, inputs) -> None:
        """Reset to zero and drive with true inputs ending just before the forecast."""
        self.reset()
        self.drive(inputs)

    def output(self) -> np.ndarray:
        if self.w_out is None:
            raise InvalidArgumentError("reservoir has not been trained")
        return self.w_out @ self.state

    def fit(self, inputs, targets=None, washout: int | None = None, chunk: int = 1000) -> np.ndarray:
        """Drive from zero with ``inputs[:-1]`` and regress ``targets[1:]``.

        ``targets`` defaults to ``inputs`` (next-step self prediction). The
        first ``washout`` states are discarded. Normal equations are
        accumulated in chunks so the state history is never held in full.
        """
        inputs = np.asarray(inputs, dtype=float)
        targets = inputs if targets is None else np.asarray(targets, dtype=float)
        washout = self.config.washout if washout is None else washout
        if inputs.shape[0] != targets.shape[0]:
            raise InvalidArgumentError("inputs and targets need the same length")
        if inputs.shape[0] <= washout + 1:
            raise InvalidArgumentError(
                f"need more than washout + 1 = {washout + 1} samples, got {inputs.shape[0]}")
        self.reset()
        gram = np.zeros((self.size, self.size))
        cross = np.zeros((self.size, targets.shape[1]))
        n = inputs.shape[0] - 1
        for start in range(0, n, chunk):
            stop = min(n, start + chunk)
            states = self.drive(inputs[start:stop])
            keep = slice(max(0, washout - start), None)
            s = states[keep]
            gram += s.T @ s
            cross += s.T @ targets[start + 1:stop + 1][keep]
        self.w_out = ridge_solve(gram, cross, self.config.ridge_param)
        return self.w_out

    def closed_loop_step(self) -> np.ndarray:
        """Emit ``W_out r`` and advance using it as the next input."""
        y = self.output()
        if self.config.closed_loop == "literal":
            self.state = np.tanh(self.b_matrix @ self.state + self.w_in @ y)
        else:
            self.state = evolve_state(self.b_matrix, self.w_in, self.state, y, self.config.leak_rate)
        return y

    def predict_closed_loop(self, n_steps: int) -> np.ndarray:
        """Autonomous forecast of ``n_steps`` outputs starting from the current state."""
        if self.w_out is None:
            raise InvalidArgumentError("reservoir has not been trained")
        if self.w_out.shape[0] != self.n_inputs:
            raise InvalidArgumentError("closed loop needs as many outputs as inputs")
        out = np.empty((n_steps, self.w_out.shape[0]))
        for k in range(n_steps):
            out[k] = self.closed_loop_step()
            if not np.all(np.isfinite(self.state)):
                raise NumericalFailureError(f"non-finite reservoir state at step {k}")
        return out

    def to_dict(self) -> dict:
        def triplets(m):
            c = m.tocoo()
            return {"shape": list(m.shape), "rows": c.row.tolist(), "cols": c.col.tolist(),
                    "vals": c.data.tolist()}

        return {
            "format": FORMAT_TAG,
            "config": asdict(self.config),
            "b_matrix": triplets(self.b_matrix),
            "w_in": triplets(self.w_in),
            "w_out": None if self.w_out is None else self.w_out.tolist(),
            "state": self.state.tolist(),
            "seed_lineage": self.seed_lineage,
        }

    @classmethod
    def from_dict(cls, d: dict) -> Reservoir:
        if d.get("format") != FORMAT_TAG:
            raise InvalidArgumentError(f"unsupported model format {d.get('format')!r}")

        def sparse(t):
            m = sp.csr_matrix((t["vals"], (t["rows"], t["cols"])), shape=tuple(t["shape"]))
            m.sort_indices()
            return m

        w_out = None if d["w_out"] is None else np.asarray(d["w_out"], dtype=float)
        return cls(ReservoirConfig(**d["config"]), sparse(d["b_matrix"]), sparse(d["w_in"]), w_out,
                   np.asarray(d["state"], dtype=float), list(d.get("seed_lineage", [])))

    def save(self, path: str | Path) -> None:
        Path(path).write_text(json.dumps(self.to_dict()))

    @classmethod
    def load(cls, path: str | Path) -> Reservoir:
        return cls.from_dict(json.loads(Path(path).read_text()))
