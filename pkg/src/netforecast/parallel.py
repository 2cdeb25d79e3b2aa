"""One reservoir per network node, wired like the network itself.

Reservoir ``i`` reads the encoded states of node ``i`` and its neighbors and
is trained to output node ``i``'s own ``(sin, cos)`` pair. Prediction runs
in lockstep: every reservoir emits, outputs are exchanged along the wiring,
then every reservoir advances.

Internally the per-node operators are stacked into block-diagonal sparse
matrices acting on all reservoirs at once; each row still touches only its
own reservoir and its wired inputs, so the result is the same as stepping
the reservoirs one by one.
"""

from __future__ import annotations

import json
import logging
from concurrent.futures import ThreadPoolExecutor
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np
import scipy.sparse as sp

from .dynamics import Trajectory
from .errors import InvalidArgumentError, NumericalFailureError
from .network import OscillatorNetwork
from .reservoir import (InputPartition, Reservoir, ReservoirConfig, decode_oscillator_state,
                        encode_oscillator_state, ridge_solve)

logger = logging.getLogger(__name__)


@dataclass
class WiringGraph:
    """``neighbor_lists[i]`` is ``[i, *sorted neighbors of i]``."""

    neighbor_lists: list
    source: str = "true-adjacency"

    def __post_init__(self):
        n = len(self.neighbor_lists)
        lists = []
        for i, nbrs in enumerate(self.neighbor_lists):
            nbrs = np.asarray(nbrs, dtype=np.int64)
            if nbrs.size == 0 or nbrs[0] != i:
                raise InvalidArgumentError(f"node {i} must come first in its own neighbor list")
            if np.unique(nbrs).size != nbrs.size or nbrs.min() < 0 or nbrs.max() >= n:
                raise InvalidArgumentError(f"invalid neighbor list for node {i}")
            lists.append(nbrs)
        self.neighbor_lists = lists

    @classmethod
    def from_adjacency(cls, adjacency, source: str = "true-adjacency") -> WiringGraph:
        a = np.asarray(adjacency)
        if a.ndim != 2 or a.shape[0] != a.shape[1]:
            raise InvalidArgumentError("adjacency must be square")
        if not np.array_equal(a, a.T) or np.any(np.diag(a)):
            raise InvalidArgumentError("adjacency must be symmetric with zero diagonal")
        lists = [np.concatenate([[i], np.flatnonzero(a[i])]) for i in range(a.shape[0])]
        return cls(lists, source)

    @classmethod
    def from_network(cls, net: OscillatorNetwork) -> WiringGraph:
        source = "inferred" if net.source == "inferred" else "true-adjacency"
        return cls.from_adjacency(net.adjacency, source)

    @property
    def n_nodes(self) -> int:
        return len(self.neighbor_lists)

    def global_columns(self, i: int) -> np.ndarray:
        """Positions of reservoir ``i``'s inputs in the global encoded state."""
        nbrs = self.neighbor_lists[i]
        return np.concatenate([nbrs, nbrs + self.n_nodes])

    def to_dict(self) -> dict:
        return {"source": self.source, "neighbor_lists": [x.tolist() for x in self.neighbor_lists]}


@dataclass
class ParallelForecaster:
    reservoirs: list
    wiring: WiringGraph
    shared_config: ReservoirConfig
    partition: InputPartition
    _ops: dict = field(default_factory=dict, init=False, repr=False, compare=False)

    @property
    def n_nodes(self) -> int:
        return self.wiring.n_nodes

    @property
    def trained(self) -> bool:
        return all(r.w_out is not None for r in self.reservoirs)

    def _offsets(self) -> np.ndarray:
        return np.concatenate([[0], np.cumsum([r.size for r in self.reservoirs])])

    def operators(self):
        """Block-diagonal ``B``, globally indexed ``W_in`` and (if trained) ``W_out``."""
        if "b" not in self._ops:
            n = self.n_nodes
            self._ops["b"] = sp.block_diag([r.b_matrix for r in self.reservoirs], format="csr")
            blocks = []
            for i, r in enumerate(self.reservoirs):
                c = r.w_in.tocoo()
                cols = self.wiring.global_columns(i)[c.col]
                blocks.append(sp.csr_matrix((c.data, (c.row, cols)), shape=(r.size, 2 * n)))
            self._ops["w_in"] = sp.vstack(blocks, format="csr")
            self._ops["w_in"].sort_indices()
            self._ops["b"].sort_indices()
        if self.trained and "w_out" not in self._ops:
            n = self.n_nodes
            off = self._offsets()
            rows, cols, vals = [], [], []
            for i, r in enumerate(self.reservoirs):
                for k, g in enumerate((i, n + i)):
                    rows.append(np.full(r.size, g))
                    cols.append(np.arange(off[i], off[i + 1]))
                    vals.append(r.w_out[k])
            self._ops["w_out"] = sp.csr_matrix(
                (np.concatenate(vals), (np.concatenate(rows), np.concatenate(cols))),
                shape=(2 * n, off[-1]))
        return self._ops["b"], self._ops["w_in"], self._ops.get("w_out")

    def _stacked_state(self) -> np.ndarray:
        return np.concatenate([r.state for r in self.reservoirs])

    def _scatter_state(self, r: np.ndarray) -> None:
        off = self._offsets()
        for i, res in enumerate(self.reservoirs):
            res.state = r[off[i]:off[i + 1]].copy()

    def save(self, directory: str | Path) -> None:
        d = Path(directory)
        d.mkdir(parents=True, exist_ok=True)
        meta = {"wiring": self.wiring.to_dict(), "config": asdict(self.shared_config),
                "partition": asdict(self.partition)}
        (d / "wiring.json").write_text(json.dumps(meta, indent=1))
        for i, r in enumerate(self.reservoirs):
            r.save(d / f"node_{i:04d}.json")

    @classmethod
    def load(cls, directory: str | Path) -> ParallelForecaster:
        d = Path(directory)
        meta = json.loads((d / "wiring.json").read_text())
        wiring = WiringGraph(meta["wiring"]["neighbor_lists"], meta["wiring"]["source"])
        reservoirs = [Reservoir.load(d / f"node_{i:04d}.json") for i in range(wiring.n_nodes)]
        return cls(reservoirs, wiring, ReservoirConfig(**meta["config"]), InputPartition(**meta["partition"]))


def assemble(net_or_adjacency, config: ReservoirConfig, partition: InputPartition | None = None,
             seed=None) -> ParallelForecaster:
    """Create one untrained reservoir per node.

    ``partition`` defaults to known-equal for a true adjacency and
    unknown-reserved for an inferred one. Per-node seeds are children of the
    master seed, indexed by node.
    """
    if isinstance(net_or_adjacency, WiringGraph):
        wiring = net_or_adjacency
    elif isinstance(net_or_adjacency, OscillatorNetwork):
        wiring = WiringGraph.from_network(net_or_adjacency)
    else:
        wiring = WiringGraph.from_adjacency(net_or_adjacency)
    if partition is None:
        partition = InputPartition("unknown-reserved" if wiring.source == "inferred" else "known-equal")
    ss = seed if isinstance(seed, np.random.SeedSequence) else np.random.SeedSequence(seed)
    reservoirs = []
    for i, child in enumerate(ss.spawn(wiring.n_nodes)):
        nbrs = wiring.neighbor_lists[i]
        if nbrs.size == 1:
            logger.info("node %d has no neighbors; its reservoir sees only itself", i)
        reservoirs.append(Reservoir.create(config, 2 * nbrs.size, partition, child))
    return ParallelForecaster(reservoirs, wiring, config, partition)


def _drive_block(b, drive_terms, r0, leak):
    """Open-loop states for precomputed input terms ``W_in u`` (one row per step)."""
    out = np.empty_like(drive_terms)
    r = r0
    for k in range(drive_terms.shape[0]):
        r = leak * r + (1.0 - leak) * np.tanh(b @ r + drive_terms[k])
        out[k] = r
    return out, r


def train_parallel(pf: ParallelForecaster, traj: Trajectory, workers: int = 1,
                   chunk: int = 500, noise_seed=None) -> ParallelForecaster:
    """Fit every node's readout on ``traj``.

    Reservoir ``i`` is driven from zero by the encoded states of its wired
    nodes at step ``k`` and regressed onto node ``i``'s encoded state at step
    ``k + 1``. The per-node regressions are independent; ``workers > 1``
    runs them on a thread pool without changing the result.
    """
    cfg = pf.shared_config
    phases = traj.phases if isinstance(traj, Trajectory) else np.asarray(traj)
    if phases.shape[1] != pf.n_nodes:
        raise InvalidArgumentError("trajectory width does not match the forecaster")
    if phases.shape[0] <= cfg.washout + 1:
        raise InvalidArgumentError(
            f"need more than washout + 1 = {cfg.washout + 1} samples, got {phases.shape[0]}")
    u = encode_oscillator_state(phases)
    noise_rng = np.random.default_rng(noise_seed)
    n = pf.n_nodes
    b, w_in, _ = pf.operators()
    off = pf._offsets()
    grams = [np.zeros((r.size, r.size)) for r in pf.reservoirs]
    crosses = [np.zeros((r.size, 2)) for r in pf.reservoirs]

    def accumulate(i, states, targets):
        s = states[:, off[i]:off[i + 1]]
        grams[i] += s.T @ s
        crosses[i] += s.T @ targets[:, [i, n + i]]

    r = np.zeros(off[-1])
    n_pairs = u.shape[0] - 1
    with ThreadPoolExecutor(max_workers=max(1, workers)) as pool:
        for start in range(0, n_pairs, chunk):
            stop = min(n_pairs, start + chunk)
            u_in = u[start:stop]
            if cfg.input_noise > 0:
                u_in = u_in + cfg.input_noise * noise_rng.standard_normal(u_in.shape)
            drive = (w_in @ u_in.T).T
            states, r = _drive_block(b, drive, r, cfg.leak_rate)
            keep = max(0, cfg.washout - start)
            s, y = states[keep:], u[start + 1 + keep:stop + 1]
            if s.shape[0] == 0:
                continue
            if workers > 1:
                list(pool.map(lambda i: accumulate(i, s, y), range(n)))
            else:
                for i in range(n):
                    accumulate(i, s, y)

        def solve(i):
            return ridge_solve(grams[i], crosses[i], cfg.ridge_param)

        w_outs = list(pool.map(solve, range(n))) if workers > 1 else [solve(i) for i in range(n)]
    for res, w in zip(pf.reservoirs, w_outs):
        res.w_out = w
    pf._scatter_state(r)
    pf._ops.pop("w_out", None)
    return pf


def synchronize(pf: ParallelForecaster, phases) -> None:
    """Reset every reservoir and drive it open loop with true phases."""
    b, w_in, _ = pf.operators()
    phases = np.asarray(phases, dtype=float)
    r = np.zeros(pf._offsets()[-1])
    if phases.shape[0]:
        drive = (w_in @ encode_oscillator_state(phases).T).T
        _, r = _drive_block(b, drive, r, pf.shared_config.leak_rate)
    pf._scatter_state(r)


def lockstep_step(pf: ParallelForecaster) -> np.ndarray:
    """One emit / exchange / advance cycle on the individual reservoirs.

    Returns the emitted global encoded state ``(2 * n_nodes,)``.
    """
    n = pf.n_nodes
    emitted = np.empty(2 * n)
    for i, res in enumerate(pf.reservoirs):
        emitted[[i, n + i]] = res.output()
    for i, res in enumerate(pf.reservoirs):
        u = emitted[pf.wiring.global_columns(i)]
        if res.config.closed_loop == "literal":
            res.state = np.tanh(res.b_matrix @ res.state + res.w_in @ u)
        else:
            res.evolve(u)
    return emitted


def predict_parallel(pf: ParallelForecaster, n_steps: int, return_encoded: bool = False):
    """Closed-loop lockstep forecast from the current reservoir states.

    Returns predicted phases ``(n_steps, n_nodes)``, plus the raw encoded
    outputs ``(n_steps, 2 * n_nodes)`` when ``return_encoded`` is set.
    """
    if not pf.trained:
        raise InvalidArgumentError("forecaster has not been trained")
    b, w_in, w_out = pf.operators()
    cfg = pf.shared_config
    leak = 0.0 if cfg.closed_loop == "literal" else cfg.leak_rate
    r = pf._stacked_state()
    out = np.empty((n_steps, 2 * pf.n_nodes))
    for k in range(n_steps):
        g = w_out @ r
        if not np.all(np.isfinite(g)):
            bad = int(np.flatnonzero(~np.isfinite(g))[0]) % pf.n_nodes
            raise NumericalFailureError(f"non-finite output at node {bad}, step {k}")
        out[k] = g
        r = leak * r + (1.0 - leak) * np.tanh(b @ r + w_in @ g)
    pf._scatter_state(r)
    phases = decode_oscillator_state(out)
    return (phases, out) if return_encoded else phases
