"""Link inference from nodal time series via transfer entropy.

``T_{X->Y} = I(Y_t ; X_past | Y_past)`` is estimated with plug-in
histograms over discretized symbols, in bits. Pairs whose symmetric score
``max(T_{i->j}, T_{j->i})`` exceeds a threshold are linked; the threshold
itself is tuned for forecast quality.
"""

from __future__ import annotations

import csv
import logging
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable, Literal, Sequence

import numpy as np

from .dynamics import TWO_PI, Trajectory
from .errors import InvalidArgumentError
from .metrics import nrmse_series, valid_time
from .reservoir import encode_oscillator_state

logger = logging.getLogger(__name__)


@dataclass(frozen=True)
class TEConfig:
    """Transfer-entropy estimator settings.

    ``delay`` is the spacing, in samples, between the present value and
    each history element. ``series_transform="symbols"`` takes the inputs
    as nonnegative integer symbols already.
    """

    history_len: int = 1
    n_bins: int = 8
    series_transform: Literal["phase-bins", "sin-bins", "symbols"] = "phase-bins"
    delay: int = 1

    def __post_init__(self):
        if self.history_len < 1:
            raise InvalidArgumentError("history_len must be at least 1")
        if self.n_bins < 2:
            raise InvalidArgumentError("n_bins must be at least 2")
        if self.delay < 1:
            raise InvalidArgumentError("delay must be at least 1")
        if self.series_transform not in ("phase-bins", "sin-bins", "symbols"):
            raise InvalidArgumentError(f"unknown series transform {self.series_transform!r}")


@dataclass
class TEMatrix:
    """``directed[s, t]`` is the transfer entropy from node ``s`` to node ``t``."""

    directed: np.ndarray

    @property
    def symmetric(self) -> np.ndarray:
        return np.maximum(self.directed, self.directed.T)

    @property
    def n_nodes(self) -> int:
        return self.directed.shape[0]

    def save_csv(self, path: str | Path, symmetric: bool = False) -> None:
        m = self.symmetric if symmetric else self.directed
        with Path(path).open("w", newline="") as fh:
            w = csv.writer(fh)
            for row in m:
                w.writerow([repr(float(v)) for v in row])

    @classmethod
    def load_csv(cls, path: str | Path) -> TEMatrix:
        return cls(np.loadtxt(path, delimiter=",", ndmin=2))


@dataclass
class LinkScore:
    true_positive_rate: float
    false_discovery_rate: float
    threshold: float | None = None


def discretize(series, cfg: TEConfig) -> np.ndarray:
    """Map a series (or a ``(T, N)`` array of series) to integer symbols."""
    x = np.asarray(series)
    if cfg.series_transform == "symbols":
        if x.size and (x.min() < 0 or not np.issubdtype(x.dtype, np.integer)):
            raise InvalidArgumentError("symbol series must hold nonnegative integers")
        return x.astype(np.int64)
    x = x.astype(float)
    if cfg.series_transform == "phase-bins":
        frac = np.mod(x, TWO_PI) / TWO_PI
    else:
        frac = (np.sin(x) + 1.0) / 2.0
    return np.minimum((frac * cfg.n_bins).astype(np.int64), cfg.n_bins - 1)


def _n_symbols(sym: np.ndarray, cfg: TEConfig) -> int:
    if cfg.series_transform == "symbols":
        return int(sym.max()) + 1 if sym.size else 1
    return cfg.n_bins


def _entropy(codes: np.ndarray) -> float:
    counts = np.bincount(codes)
    p = counts[counts > 0] / codes.size
    return float(-(p * np.log2(p)).sum())


def _past_code(sym: np.ndarray, n: int, cfg: TEConfig) -> np.ndarray:
    """Integer code of the history tuple aligned with the present values."""
    span = cfg.history_len * cfg.delay
    t = sym.shape[0]
    code = np.zeros((t - span,) + sym.shape[1:], dtype=np.int64)
    for lag in range(1, cfg.history_len + 1):
        code = code * n + sym[span - lag * cfg.delay:t - lag * cfg.delay]
    return code


def _check_length(t: int, cfg: TEConfig) -> None:
    if t < cfg.history_len * cfg.delay + 1:
        raise InvalidArgumentError(
            f"series of length {t} is too short for history {cfg.history_len} at delay {cfg.delay}")


def transfer_entropy(x, y, cfg: TEConfig = TEConfig()) -> float:
    """Plug-in estimate of ``I(Y_t ; X_past | Y_past)`` in bits."""
    x = np.asarray(x)
    y = np.asarray(y)
    if x.shape != y.shape or x.ndim != 1:
        raise InvalidArgumentError("x and y must be 1-D series of equal length")
    _check_length(x.shape[0], cfg)
    xs, ys = discretize(x, cfg), discretize(y, cfg)
    n = max(_n_symbols(xs, cfg), _n_symbols(ys, cfg))
    span = cfg.history_len * cfg.delay
    nl = n ** cfg.history_len
    y_now = ys[span:]
    y_past = _past_code(ys, n, cfg)
    x_past = _past_code(xs, n, cfg)
    yy = y_past * n + y_now
    te = (_entropy(yy) + _entropy(y_past * nl + x_past)
          - _entropy(y_past) - _entropy(yy * nl + x_past))
    return max(te, 0.0)


def te_matrix(traj, cfg: TEConfig = TEConfig()) -> TEMatrix:
    """Transfer entropy for every ordered pair of nodes."""
    phases = traj.phases if isinstance(traj, Trajectory) else np.asarray(traj)
    _check_length(phases.shape[0], cfg)
    sym = discretize(phases, cfg)
    n = _n_symbols(sym, cfg)
    span = cfg.history_len * cfg.delay
    nl = n ** cfg.history_len
    past = _past_code(sym, n, cfg)
    now = sym[span:]
    n_nodes = phases.shape[1]
    out = np.zeros((n_nodes, n_nodes))
    for tgt in range(n_nodes):
        yy = past[:, tgt] * n + now[:, tgt]
        h_yy = _entropy(yy)
        h_y = _entropy(past[:, tgt])
        for src in range(n_nodes):
            if src == tgt:
                continue
            xp = past[:, src]
            te = h_yy + _entropy(past[:, tgt] * nl + xp) - h_y - _entropy(yy * nl + xp)
            out[src, tgt] = max(te, 0.0)
    return TEMatrix(out)


def surrogate_floor(x, y, cfg: TEConfig = TEConfig(), n_surrogates: int = 20, q: float = 95.0,
                    seed=None) -> float:
    """Percentile ``q`` of TE with the source series randomly permuted in time."""
    rng = np.random.default_rng(seed)
    x = np.asarray(x)
    vals = [transfer_entropy(rng.permutation(x), y, cfg) for _ in range(n_surrogates)]
    return float(np.percentile(vals, q))


def surrogate_matrix_floor(traj, cfg: TEConfig = TEConfig(), n_surrogates: int = 20, q: float = 95.0,
                           seed=None, method: str = "shift") -> float:
    """Family-wise null level for a whole TE matrix.

    Each round scrambles every source series (independently per node) and
    records the largest symmetric score over all pairs; the ``q``-th
    percentile of those maxima is returned. ``method="shuffle"`` permutes
    samples, which also destroys each series' own autocorrelation and so
    understates the null for smooth quasi-periodic signals; ``"shift"``
    rotates each series by a random lag, keeping its own dynamics intact.
    """
    if method not in ("shift", "shuffle"):
        raise InvalidArgumentError(f"unknown surrogate method {method!r}")
    phases = traj.phases if isinstance(traj, Trajectory) else np.asarray(traj)
    rng = np.random.default_rng(seed)
    sym = discretize(phases, cfg)
    if cfg.series_transform != "symbols":
        cfg = TEConfig(cfg.history_len, cfg.n_bins, "symbols", cfg.delay)
    t = sym.shape[0]
    maxima = []
    for _ in range(n_surrogates):
        if method == "shuffle":
            cols = [rng.permutation(sym[:, j]) for j in range(sym.shape[1])]
        else:
            lags = rng.integers(t // 10, t - t // 10 + 1, sym.shape[1])
            cols = [np.roll(sym[:, j], lag) for j, lag in enumerate(lags)]
        maxima.append(_cross_matrix(sym, np.column_stack(cols), cfg).max())
    return float(np.percentile(maxima, q))


def _cross_matrix(targets: np.ndarray, sources: np.ndarray, cfg: TEConfig) -> np.ndarray:
    """Symmetric max of TE from ``sources[:, s]`` into ``targets[:, t]``."""
    n = max(_n_symbols(targets, cfg), _n_symbols(sources, cfg))
    span = cfg.history_len * cfg.delay
    nl = n ** cfg.history_len
    past_t = _past_code(targets, n, cfg)
    past_s = _past_code(sources, n, cfg)
    now = targets[span:]
    m = targets.shape[1]
    out = np.zeros((m, m))
    for tgt in range(m):
        yy = past_t[:, tgt] * n + now[:, tgt]
        h_yy, h_y = _entropy(yy), _entropy(past_t[:, tgt])
        for src in range(m):
            if src != tgt:
                xp = past_s[:, src]
                out[src, tgt] = max(h_yy + _entropy(past_t[:, tgt] * nl + xp) - h_y - _entropy(yy * nl + xp), 0.0)
    return np.maximum(out, out.T)


def infer_links(tem, threshold: float) -> np.ndarray:
    """Symmetric 0/1 adjacency linking pairs whose symmetric score exceeds ``threshold``."""
    if not np.isfinite(threshold):
        raise InvalidArgumentError("threshold must be finite")
    s = tem.symmetric if isinstance(tem, TEMatrix) else np.maximum(tem, np.asarray(tem).T)
    a = (s > threshold).astype(np.int8)
    np.fill_diagonal(a, 0)
    return a


def thresholds_for_degrees(tem, mean_degrees: Sequence[float]) -> list:
    """Thresholds that keep ``round(n * d / 2)`` undirected links for each ``d``.

    Each threshold sits midway between consecutive sorted scores.
    """
    s = tem.symmetric if isinstance(tem, TEMatrix) else np.asarray(tem)
    n = s.shape[0]
    vals = np.sort(s[np.triu_indices(n, 1)])[::-1]
    out = []
    for d in mean_degrees:
        k = int(round(n * d / 2))
        k = min(max(k, 0), vals.size)
        if k == 0:
            out.append(float(vals[0]) + 1.0)
        elif k == vals.size:
            out.append(float(vals[-1]) - 1.0)
        else:
            out.append(float(0.5 * (vals[k - 1] + vals[k])))
    return out


def _edges(adjacency) -> set:
    a = np.asarray(adjacency)
    i, j = np.nonzero(np.triu(a, 1))
    return set(zip(i.tolist(), j.tolist()))


def score_links(inferred, truth, threshold: float | None = None) -> LinkScore:
    """TPR = |inferred & true| / |true|, FDR = |inferred - true| / |inferred| (0 if empty)."""
    inferred, truth = np.asarray(inferred), np.asarray(truth)
    if inferred.shape != truth.shape:
        raise InvalidArgumentError("inferred and true adjacency differ in size")
    e_inf, e_true = _edges(inferred), _edges(truth)
    tpr = len(e_inf & e_true) / len(e_true) if e_true else 1.0
    fdr = len(e_inf - e_true) / len(e_inf) if e_inf else 0.0
    return LinkScore(tpr, fdr, threshold)


@dataclass
class ThresholdTuning:
    threshold: float
    valid_times: dict = field(default_factory=dict)
    first_errors: dict = field(default_factory=dict)


def tune_threshold(traj, tem, candidate_thresholds: Sequence[float],
                   forecaster_builder: Callable, validation_fraction: float = 0.2,
                   f: float = 0.1, sync_length: int = 100) -> ThresholdTuning:
    """Pick the link threshold that maximizes validation valid time.

    For each candidate the inferred adjacency is handed to
    ``forecaster_builder(adjacency)``, which returns an untrained
    :class:`~netforecast.parallel.ParallelForecaster`. It is trained on the
    leading part of ``traj``, synchronized on the ``sync_length`` samples
    preceding the held-out tail, and scored on the full node state there.
    Ties go to the larger threshold (fewer links).
    """
    from .parallel import predict_parallel, synchronize, train_parallel

    phases = traj.phases if isinstance(traj, Trajectory) else np.asarray(traj)
    dt = traj.dt_sample if isinstance(traj, Trajectory) else 1.0
    candidates = sorted({float(c) for c in candidate_thresholds}, reverse=True)
    if not candidates:
        raise InvalidArgumentError("need at least one candidate threshold")
    if len(candidates) == 1:
        return ThresholdTuning(candidates[0])
    n_val = int(round(validation_fraction * phases.shape[0]))
    split = phases.shape[0] - n_val
    if n_val < 1 or split <= sync_length:
        raise InvalidArgumentError("trajectory too short for the validation split")
    train, val = phases[:split], phases[split:]
    truth = encode_oscillator_state(val)
    result = ThresholdTuning(candidates[0])
    for c in candidates:
        pf = forecaster_builder(infer_links(tem, c))
        train_parallel(pf, train)
        synchronize(pf, train[-sync_length:])
        pred = predict_parallel(pf, n_val)
        e = nrmse_series(truth, encode_oscillator_state(pred))
        result.valid_times[c] = valid_time(e, f, dt, 1.0).lyapunov_times
        result.first_errors[c] = float(e[0])
    best = max(candidates, key=lambda c: (result.valid_times[c], c))
    if result.valid_times[best] == 0:
        best = min(candidates, key=lambda c: (result.first_errors[c], -c))
        logger.warning("every candidate threshold has zero valid time; using lowest first-step error")
    result.threshold = best
    return result
