"""Reproducible experiment drivers.

Every experiment is a pure function of an :class:`ExperimentSpec`: all random
streams derive from ``(master_seed, seed)``, so re-running a spec rewrites
bitwise-identical CSV files. The regimes compared are

* ``single``: one large reservoir fed the whole network state,
* ``parallel-known``: one small reservoir per node, wired by the true links,
* ``parallel-inferred``: the same, wired by thresholded transfer entropy with
  the threshold tuned on a validation split.
"""

from __future__ import annotations

import csv
import dataclasses
import datetime as _dt
import itertools
import json
import logging
import math
import platform
import subprocess
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable, Sequence

import numpy as np

from . import __version__
from .config import format_config
from .dynamics import LyapunovSettings, Trajectory, largest_lyapunov, order_parameter_series, \
    save_order_parameter_csv, simulate
from .errors import InvalidArgumentError, NumericalFailureError
from .inference import TEConfig, score_links, te_matrix, thresholds_for_degrees, infer_links, \
    tune_threshold
from .metrics import ForecastResult
from .network import AssortativityParams, OscillatorNetwork, network_from_adjacency, standard_network
from .parallel import WiringGraph, assemble, predict_parallel, synchronize, train_parallel
from .reservoir import InputPartition, Reservoir, ReservoirConfig, decode_oscillator_state, \
    encode_oscillator_state

logger = logging.getLogger(__name__)

REGIMES = ("single", "parallel-known", "parallel-inferred")
PARTITION_MODES = ("disjoint", "all-to-all")
GRID_AXES = ("n_reservoir", "spectral_radius", "input_scaling", "leak_rate", "ridge_param")

SINGLE_DEFAULT = ReservoirConfig(n_reservoir=2000, spectral_radius=0.9, input_scaling=0.1,
                                 leak_rate=0.0, ridge_param=1e-7)
PARALLEL_DEFAULT = ReservoirConfig(n_reservoir=200, spectral_radius=0.7, input_scaling=2.0,
                                   leak_rate=0.3, ridge_param=1e-2)

_RC_GROUPS = ("single", "parallel", "inferred")
_TUPLE_FIELDS = {"seeds": int, "regimes": str, "candidate_degrees": float, "sizes": int}


@dataclass
class ExperimentSpec:
    """Everything needed to rerun an experiment.

    ``single``, ``parallel`` and ``inferred`` hold the reservoir settings of
    each regime. ``grid`` maps reservoir field names to the values swept by
    :func:`grid_search`. ``lambda_max``, when set, replaces the per-network
    Lyapunov estimate used to convert valid times to Lyapunov units.
    """

    experiment_id: str = "experiment"
    n_nodes: int = 50
    degree: int = 3
    delta: float = 0.8
    gamma: float = 5.0
    coupling: float = 0.5
    dt_sample: float = 0.05
    dt_step: float = 0.01
    transient: float = 200.0
    n_t: int = 20000
    prediction_length: int = 2000
    sync_length: int = 100
    f_threshold: float = 0.1
    master_seed: int = 0
    seeds: tuple = tuple(range(10))
    regimes: tuple = REGIMES
    single: ReservoirConfig = SINGLE_DEFAULT
    parallel: ReservoirConfig = PARALLEL_DEFAULT
    inferred: ReservoirConfig = PARALLEL_DEFAULT
    n_assign: int = 50
    all_to_all_input_scaling: float = 0.3
    history_len: int = 1
    n_bins: int = 8
    series_transform: str = "phase-bins"
    delay: int = 1
    candidate_degrees: tuple = (2.0, 3.0, 4.0, 6.0)
    validation_fraction: float = 0.2
    lyapunov_time: float = 5000.0
    lambda_max: float | None = None
    lyapunov_clock: str = "auto"
    benchmark_n_nodes: int = 50
    sizes: tuple = (10, 20, 50, 100)
    grid: dict = field(default_factory=dict)
    grid_regime: str = "parallel-known"
    workers: int = 1
    export_series: bool = True

    def __post_init__(self):
        for name, kind in _TUPLE_FIELDS.items():
            v = getattr(self, name)
            v = (v,) if isinstance(v, (int, float, str)) else v
            setattr(self, name, tuple(kind(x) for x in v))
        if not self.seeds:
            raise InvalidArgumentError("at least one seed is required")
        if len(set(self.seeds)) != len(self.seeds):
            raise InvalidArgumentError("seeds must be distinct")
        bad = set(self.regimes) - set(REGIMES)
        if bad or not self.regimes:
            raise InvalidArgumentError(f"regimes must be a nonempty subset of {REGIMES}, got {self.regimes}")
        if self.grid_regime not in REGIMES:
            raise InvalidArgumentError(f"unknown grid_regime {self.grid_regime!r}")
        grid = {}
        for axis, values in dict(self.grid).items():
            if axis not in GRID_AXES:
                raise InvalidArgumentError(f"grid axis {axis!r} not one of {GRID_AXES}")
            values = [values] if not isinstance(values, (list, tuple)) else list(values)
            if not values:
                raise InvalidArgumentError(f"grid axis {axis!r} is empty")
            grid[axis] = tuple(values)
        self.grid = grid
        for name in ("n_t", "prediction_length", "sync_length", "n_nodes", "degree", "workers",
                     "benchmark_n_nodes"):
            if getattr(self, name) < 1:
                raise InvalidArgumentError(f"{name} must be positive")
        if self.sync_length > self.n_t:
            raise InvalidArgumentError("sync_length exceeds the training length")
        if not 0 < self.f_threshold < 1:
            raise InvalidArgumentError("f_threshold must lie in (0, 1)")
        if not 0 < self.validation_fraction < 1:
            raise InvalidArgumentError("validation_fraction must lie in (0, 1)")
        if self.lambda_max is not None and not self.lambda_max > 0:
            raise InvalidArgumentError("lambda_max override must be positive")
        if self.lyapunov_clock not in ("auto", "network", "benchmark"):
            raise InvalidArgumentError(f"unknown lyapunov_clock {self.lyapunov_clock!r}")
        if any(s <= self.degree for s in self.sizes):
            raise InvalidArgumentError("every size must exceed the degree")
        self.te_config  # validates the estimator fields
        AssortativityParams(self.delta, self.gamma, self.degree)

    @property
    def te_config(self) -> TEConfig:
        return TEConfig(self.history_len, self.n_bins, self.series_transform, self.delay)

    @property
    def assortativity(self) -> AssortativityParams:
        return AssortativityParams(self.delta, self.gamma, self.degree)

    def replace(self, **changes) -> ExperimentSpec:
        return dataclasses.replace(self, **changes)

    def to_dict(self) -> dict:
        d = {}
        for f in dataclasses.fields(self):
            v = getattr(self, f.name)
            if isinstance(v, ReservoirConfig):
                v = dataclasses.asdict(v)
            elif isinstance(v, tuple):
                v = list(v)
            elif isinstance(v, dict):
                v = {k: list(x) for k, x in v.items()}
            d[f.name] = v
        return d

    @classmethod
    def from_dict(cls, d: dict) -> ExperimentSpec:
        known = {f.name for f in dataclasses.fields(cls)}
        unknown = set(d) - known
        if unknown:
            raise InvalidArgumentError(f"unknown setting(s): {', '.join(sorted(unknown))}")
        kw = dict(d)
        for group in _RC_GROUPS:
            if group in kw:
                sub = kw[group]
                if not isinstance(sub, dict):
                    raise InvalidArgumentError(f"{group} must be a group of reservoir settings")
                base = SINGLE_DEFAULT if group == "single" else PARALLEL_DEFAULT
                try:
                    kw[group] = base.replace(**sub)
                except TypeError as exc:
                    raise InvalidArgumentError(f"bad {group} settings: {exc}") from None
        if "grid" in kw and not isinstance(kw["grid"], dict):
            raise InvalidArgumentError("grid must be a group of axis = values lines")
        try:
            return cls(**kw)
        except TypeError as exc:
            raise InvalidArgumentError(str(exc)) from None

    def to_text(self) -> str:
        return format_config(self.to_dict())


# ---------------------------------------------------------------- data -----

@dataclass
class SeedData:
    """Network, trajectory split and Lyapunov rate shared by all regimes of a seed."""

    seed: int
    network: OscillatorNetwork
    train: np.ndarray
    test: np.ndarray
    lambda_max: float
    lambda_stderr: float
    role_seeds: dict
    clock: str = "network"


_ROLES = ("network", "trajectory", "lyapunov", "single", "parallel", "inferred")


def role_seeds(master_seed: int, seed: int) -> dict:
    """Independent integer seeds for each random role of one experiment seed."""
    state = np.random.SeedSequence([int(master_seed), int(seed)]).generate_state(len(_ROLES), np.uint64)
    return {r: int(s) for r, s in zip(_ROLES, state)}


def _lyapunov(spec: ExperimentSpec, net: OscillatorNetwork, seed: int):
    est = largest_lyapunov(net, LyapunovSettings(total_time=spec.lyapunov_time, dt_step=spec.dt_step, seed=seed))
    return est.lambda_max, est.stderr


_benchmark_cache: dict = {}


def benchmark_clock(spec: ExperimentSpec, seed: int) -> tuple:
    """Lyapunov rate of the ``benchmark_n_nodes`` network drawn for ``seed`` (cached)."""
    rs = role_seeds(spec.master_seed, seed)
    key = (spec.master_seed, seed, spec.benchmark_n_nodes, spec.degree, spec.delta, spec.gamma, spec.coupling,
           spec.lyapunov_time, spec.dt_step)
    if key not in _benchmark_cache:
        net = standard_network(spec.benchmark_n_nodes, rs["network"], spec.assortativity, spec.coupling)
        _benchmark_cache[key] = _lyapunov(spec, net, rs["lyapunov"])
    return _benchmark_cache[key]


def _chaotic(lam: float, se: float) -> bool:
    return lam - 2.0 * se > 0


def prepare_seed(spec: ExperimentSpec, seed: int, n_nodes: int | None = None) -> SeedData:
    """Draw the network and trajectory of one seed and fix its Lyapunov clock.

    ``lyapunov_clock`` is ``"network"`` (the network's own rate, which must
    be positive by two standard errors), ``"benchmark"`` (the rate of the
    ``benchmark_n_nodes`` network of the same seed) or ``"auto"`` (own rate
    when chaotic, benchmark otherwise).
    """
    n = spec.n_nodes if n_nodes is None else n_nodes
    rs = role_seeds(spec.master_seed, seed)
    net = standard_network(n, rs["network"], spec.assortativity, spec.coupling)
    if spec.lambda_max is not None:
        lam, lam_se, clock = float(spec.lambda_max), 0.0, "fixed"
    elif spec.lyapunov_clock == "benchmark":
        (lam, lam_se), clock = benchmark_clock(spec, seed), "benchmark"
    else:
        lam, lam_se = _lyapunov(spec, net, rs["lyapunov"])
        clock = "network"
        if not _chaotic(lam, lam_se):
            if spec.lyapunov_clock == "network":
                raise NumericalFailureError(
                    f"seed {seed} (N={n}): network is not chaotic (lambda_max={lam:.3g} +- {lam_se:.2g})")
            logger.info("seed %d (N=%d) not chaotic (lambda_max=%.3g); using the benchmark clock", seed, n, lam)
            (lam, lam_se), clock = benchmark_clock(spec, seed), "benchmark"
            if not lam > 0:
                raise NumericalFailureError(f"seed {seed}: benchmark network is not chaotic either")
    traj = simulate(net, spec.n_t + spec.prediction_length, seed=rs["trajectory"], transient=spec.transient,
                    dt_step=spec.dt_step, dt_sample=spec.dt_sample)
    return SeedData(seed, net, traj.phases[:spec.n_t], traj.phases[spec.n_t:], lam, lam_se, rs, clock)


@dataclass
class RegimeOutcome:
    regime: str
    result: ForecastResult
    phases: np.ndarray
    extra: dict = field(default_factory=dict)


def _evaluate(spec: ExperimentSpec, data: SeedData, regime: str, phases, extra=None) -> RegimeOutcome:
    truth = np.abs(order_parameter_series(data.test, data.network))
    pred = np.abs(order_parameter_series(phases, data.network))
    res = ForecastResult.evaluate(truth, pred, spec.dt_sample, data.lambda_max, spec.f_threshold)
    return RegimeOutcome(regime, res, phases, extra or {})


def run_single(spec: ExperimentSpec, data: SeedData, cfg: ReservoirConfig | None = None) -> RegimeOutcome:
    cfg = spec.single if cfg is None else cfg
    n = data.network.n_nodes
    res = Reservoir.create(cfg, 2 * n, InputPartition("known-equal"), seed=data.role_seeds["single"])
    u = encode_oscillator_state(data.train)
    res.fit(u)
    res.synchronize(u[-spec.sync_length:])
    phases = decode_oscillator_state(res.predict_closed_loop(spec.prediction_length))
    return _evaluate(spec, data, "single", phases)


def _forecast_parallel(spec, data, wiring, cfg, partition, seed):
    pf = assemble(wiring, cfg, partition, seed=seed)
    train_parallel(pf, data.train, workers=spec.workers)
    synchronize(pf, data.train[-spec.sync_length:])
    return predict_parallel(pf, spec.prediction_length)


def run_parallel_known(spec: ExperimentSpec, data: SeedData, cfg: ReservoirConfig | None = None,
                       partition: InputPartition | None = None, regime: str = "parallel-known") -> RegimeOutcome:
    cfg = spec.parallel if cfg is None else cfg
    partition = InputPartition("known-equal") if partition is None else partition
    phases = _forecast_parallel(spec, data, WiringGraph.from_network(data.network), cfg, partition,
                                data.role_seeds["parallel"])
    return _evaluate(spec, data, regime, phases)


def run_parallel_inferred(spec: ExperimentSpec, data: SeedData,
                          cfg: ReservoirConfig | None = None) -> RegimeOutcome:
    """Infer links by transfer entropy, tune the threshold, then forecast."""
    cfg = spec.inferred if cfg is None else cfg
    seed = data.role_seeds["inferred"]
    partition = InputPartition("unknown-reserved", spec.n_assign)
    tem = te_matrix(data.train, spec.te_config)
    candidates = thresholds_for_degrees(tem, spec.candidate_degrees)

    def builder(adjacency):
        return assemble(WiringGraph.from_adjacency(adjacency, source="inferred"), cfg, partition, seed=seed)

    traj = Trajectory(data.train, spec.dt_sample)
    tuning = tune_threshold(traj, tem, candidates, builder, spec.validation_fraction, spec.f_threshold,
                            spec.sync_length)
    adjacency = infer_links(tem, tuning.threshold)
    phases = _forecast_parallel(spec, data, WiringGraph.from_adjacency(adjacency, source="inferred"), cfg,
                                partition, seed)
    score = score_links(adjacency, data.network.adjacency, tuning.threshold)
    extra = {"threshold": tuning.threshold, "tpr": score.true_positive_rate,
             "fdr": score.false_discovery_rate, "n_links": int(adjacency.sum() // 2),
             "te_matrix": tem, "adjacency": adjacency, "tuning": tuning}
    return _evaluate(spec, data, "parallel-inferred", phases, extra)


_RUNNERS: dict[str, Callable] = {"single": run_single, "parallel-known": run_parallel_known,
                                 "parallel-inferred": run_parallel_inferred}

ROW_FIELDS = ("n_nodes", "seed", "regime", "status", "valid_time_lyap", "censored", "lambda_max",
              "lambda_stderr", "clock", "threshold", "tpr", "fdr")


def _row(n_nodes, seed, regime, outcome=None, data=None, error=None) -> dict:
    row = dict.fromkeys(ROW_FIELDS, math.nan)
    row.update(n_nodes=n_nodes, seed=seed, regime=regime, censored=False, clock="")
    if data is not None:
        row.update(lambda_max=data.lambda_max, lambda_stderr=data.lambda_stderr, clock=data.clock)
    if error is not None:
        row["status"] = f"failed: {type(error).__name__}: {error}".replace("\n", " ")
        return row
    row["status"] = "ok"
    row["valid_time_lyap"] = outcome.result.valid_time_lyap
    row["censored"] = outcome.result.censored
    for k in ("threshold", "tpr", "fdr"):
        if k in outcome.extra:
            row[k] = float(outcome.extra[k])
    return row


def _pool_map(fn, items, workers: int) -> list:
    items = list(items)
    if workers <= 1 or len(items) <= 1:
        return [fn(x) for x in items]
    with ThreadPoolExecutor(max_workers=workers) as pool:
        return list(pool.map(fn, items))


# ------------------------------------------------------------ exports -----

def version_string() -> str:
    """``git describe`` of the source tree when available, else the package version."""
    try:
        out = subprocess.run(["git", "describe", "--tags", "--always", "--dirty"], cwd=Path(__file__).parent,
                             capture_output=True, text=True, timeout=10)
        if out.returncode == 0 and out.stdout.strip():
            return f"{__version__}+g{out.stdout.strip()}"
    except (OSError, subprocess.SubprocessError):
        pass
    return __version__


def _fmt(v) -> str:
    if isinstance(v, (bool, np.bool_)):
        return str(int(v))
    if isinstance(v, (float, np.floating)):
        return repr(float(v))
    return str(v)


def write_rows(path: Path, rows: Sequence[dict], fields: Sequence[str]) -> None:
    with Path(path).open("w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(fields)
        for r in rows:
            w.writerow([_fmt(r[f]) for f in fields])


def read_rows(path: str | Path) -> list[dict]:
    """Read a per-seed CSV back, converting numeric columns."""
    out = []
    with Path(path).open(newline="") as fh:
        for r in csv.DictReader(fh):
            row = {}
            for k, v in r.items():
                if k in ("regime", "status", "clock"):
                    row[k] = v
                elif k in ("n_nodes", "seed", "censored"):
                    row[k] = int(v)
                else:
                    row[k] = float(v)
            out.append(row)
    return out


SUMMARY_FIELDS = ("n_nodes", "regime", "n_ok", "n_failed", "mean_valid_time", "stderr_valid_time",
                  "mean_tpr", "mean_fdr")


def aggregate(rows: Sequence[dict]) -> list[dict]:
    """Mean and standard error of valid time per ``(n_nodes, regime)`` over successful seeds."""
    groups: dict = {}
    for r in rows:
        groups.setdefault((int(r["n_nodes"]), r["regime"]), []).append(r)
    out = []
    for (n, regime), rs in groups.items():
        ok = [r for r in rs if r["status"] == "ok"]
        v = np.array([r["valid_time_lyap"] for r in ok], dtype=float)
        tpr = np.array([r["tpr"] for r in ok], dtype=float)
        fdr = np.array([r["fdr"] for r in ok], dtype=float)
        out.append({
            "n_nodes": n, "regime": regime, "n_ok": len(ok), "n_failed": len(rs) - len(ok),
            "mean_valid_time": float(v.mean()) if v.size else math.nan,
            "stderr_valid_time": float(v.std(ddof=1) / math.sqrt(v.size)) if v.size > 1 else 0.0 if v.size else math.nan,
            "mean_tpr": float(tpr.mean()) if tpr.size and np.all(np.isfinite(tpr)) else math.nan,
            "mean_fdr": float(fdr.mean()) if fdr.size and np.all(np.isfinite(fdr)) else math.nan,
        })
    return out


class ExperimentDir:
    """Output directory with a manifest written on :meth:`close`."""

    def __init__(self, root: str | Path | None, spec: ExperimentSpec, kind: str):
        self.spec, self.kind = spec, kind
        self.path = None if root is None else Path(root) / spec.experiment_id
        self.started = _dt.datetime.now(_dt.timezone.utc).isoformat()
        if self.path is not None:
            self.path.mkdir(parents=True, exist_ok=True)
            (self.path / "spec.cfg").write_text(spec.to_text())

    def __bool__(self):
        return self.path is not None

    def sub(self, name: str) -> Path:
        p = self.path / name
        p.mkdir(parents=True, exist_ok=True)
        return p

    def close(self, extra: dict | None = None) -> None:
        if self.path is None:
            return
        manifest = {
            "experiment_id": self.spec.experiment_id, "kind": self.kind, "version": version_string(),
            "started": self.started, "finished": _dt.datetime.now(_dt.timezone.utc).isoformat(),
            "python": platform.python_version(), "numpy": np.__version__, "spec": self.spec.to_dict(),
        }
        manifest.update(extra or {})
        (self.path / "manifest.json").write_text(json.dumps(manifest, indent=1))


def _export_seed(folder: Path, spec: ExperimentSpec, data: SeedData, outcomes: Sequence[RegimeOutcome]) -> None:
    data.network.save(folder / "network.json")
    t0 = spec.n_t * spec.dt_sample
    times = t0 + spec.dt_sample * np.arange(spec.prediction_length)
    ref = f"seed_{data.seed:04d}/network.json"
    save_order_parameter_csv(folder / "truth_order_parameter.csv", times,
                             order_parameter_series(data.test, data.network))
    Trajectory(data.test, spec.dt_sample, t0, ref).save_csv(folder / "truth_phases.csv")
    (folder / "lyapunov.json").write_text(json.dumps(
        {"lambda_max": data.lambda_max, "stderr": data.lambda_stderr, "clock": data.clock}, indent=1))
    for oc in outcomes:
        name = oc.regime
        save_order_parameter_csv(folder / f"{name}_order_parameter.csv", times,
                                 order_parameter_series(oc.phases, data.network))
        Trajectory(oc.phases, spec.dt_sample, t0, ref).save_csv(folder / f"{name}_phases.csv")
        oc.result.save(folder / f"{name}_result.csv", folder / f"{name}_summary.json")
        if "te_matrix" in oc.extra:
            oc.extra["te_matrix"].save_csv(folder / "te_matrix.csv")
            network_from_adjacency(oc.extra["adjacency"], data.network.frequencies, data.network.coupling,
                                   threshold=oc.extra["threshold"]).save(folder / "inferred_network.json")
            tuning = oc.extra["tuning"]
            write_rows(folder / "threshold_tuning.csv",
                       [{"threshold": c, "valid_time": v, "first_error": tuning.first_errors.get(c, math.nan)}
                        for c, v in sorted(tuning.valid_times.items())],
                       ("threshold", "valid_time", "first_error"))


def _finish(out: ExperimentDir, rows: list[dict], kind: str, fields=ROW_FIELDS) -> list[dict]:
    summary = aggregate(rows)
    if out:
        write_rows(out.path / "per_seed.csv", rows, fields)
        write_rows(out.path / "summary.csv", summary, SUMMARY_FIELDS)
        out.close()
    return summary


# -------------------------------------------------------- experiments -----

@dataclass
class ComparisonResult:
    rows: list
    summary: list
    outcomes: dict = field(default_factory=dict, repr=False)

    def summary_for(self, regime: str, n_nodes: int | None = None) -> dict:
        for s in self.summary:
            if s["regime"] == regime and (n_nodes is None or s["n_nodes"] == n_nodes):
                return s
        raise KeyError(regime)

    def values(self, regime: str, n_nodes: int | None = None) -> np.ndarray:
        return np.array([r["valid_time_lyap"] for r in self.rows if r["regime"] == regime and r["status"] == "ok"
                         and (n_nodes is None or r["n_nodes"] == n_nodes)])


def _compare_one(spec: ExperimentSpec, seed: int, n_nodes: int, regimes, out: ExperimentDir | None,
                 folder_name: str):
    try:
        data = prepare_seed(spec, seed, n_nodes)
    except Exception as exc:  # noqa: BLE001 - isolate the failing seed
        logger.warning("seed %d (N=%d) failed during setup: %s", seed, n_nodes, exc)
        return [_row(n_nodes, seed, r, error=exc) for r in regimes], {}
    rows, outcomes = [], {}
    for regime in regimes:
        try:
            oc = _RUNNERS[regime](spec, data)
            outcomes[regime] = oc
            rows.append(_row(n_nodes, seed, regime, oc, data))
        except Exception as exc:  # noqa: BLE001 - per-regime isolation
            logger.warning("seed %d regime %s failed: %s", seed, regime, exc)
            rows.append(_row(n_nodes, seed, regime, data=data, error=exc))
    if out and spec.export_series:
        _export_seed(out.sub(folder_name), spec, data, list(outcomes.values()))
    return rows, outcomes


def run_regime_comparison(spec: ExperimentSpec, out_root: str | Path | None = None) -> ComparisonResult:
    """Run every regime in ``spec.regimes`` on identical data for each seed."""
    out = ExperimentDir(out_root, spec, "regime-comparison")
    jobs = _pool_map(lambda s: _compare_one(spec, s, spec.n_nodes, spec.regimes, out, f"seed_{s:04d}"),
                     spec.seeds, spec.workers)
    rows = [r for rs, _ in jobs for r in rs]
    outcomes = {s: oc for s, (_, oc) in zip(spec.seeds, jobs)}
    return ComparisonResult(rows, _finish(out, rows, "regime-comparison"), outcomes)


def run_scaling_study(spec: ExperimentSpec, sizes: Sequence[int] | None = None,
                      out_root: str | Path | None = None) -> ComparisonResult:
    """Regime comparison repeated for each network size."""
    sizes = tuple(spec.sizes if sizes is None else sizes)
    if not sizes:
        raise InvalidArgumentError("need at least one size")
    spec = spec.replace(sizes=sizes)
    out = ExperimentDir(out_root, spec, "scaling-study")
    cells = list(itertools.product(sizes, spec.seeds))
    jobs = _pool_map(lambda c: _compare_one(spec, c[1], c[0], spec.regimes, out,
                                            f"n{c[0]:04d}_seed_{c[1]:04d}"), cells, spec.workers)
    rows = [r for rs, _ in jobs for r in rs]
    outcomes = {c: oc for c, (_, oc) in zip(cells, jobs)}
    return ComparisonResult(rows, _finish(out, rows, "scaling-study"), outcomes)


def run_partition_comparison(spec: ExperimentSpec, out_root: str | Path | None = None) -> ComparisonResult:
    """Known-links parallel forecasts with disjoint versus all-to-all input matrices.

    The all-to-all mode uses ``spec.all_to_all_input_scaling``; everything
    else, including reservoir seeds, is shared.
    """
    out = ExperimentDir(out_root, spec, "partition-comparison")
    a2a_cfg = spec.parallel.replace(input_scaling=spec.all_to_all_input_scaling)
    modes = {"disjoint": (spec.parallel, InputPartition("known-equal")),
             "all-to-all": (a2a_cfg, InputPartition("all-to-all"))}

    def one(seed):
        try:
            data = prepare_seed(spec, seed)
        except Exception as exc:  # noqa: BLE001
            return [_row(spec.n_nodes, seed, m, error=exc) for m in modes], {}
        rows, outcomes = [], {}
        for mode, (cfg, part) in modes.items():
            try:
                oc = run_parallel_known(spec, data, cfg, part, regime=mode)
                outcomes[mode] = oc
                rows.append(_row(spec.n_nodes, seed, mode, oc, data))
            except Exception as exc:  # noqa: BLE001
                rows.append(_row(spec.n_nodes, seed, mode, data=data, error=exc))
        if out and spec.export_series:
            _export_seed(out.sub(f"seed_{seed:04d}"), spec, data, list(outcomes.values()))
        return rows, outcomes

    jobs = _pool_map(one, spec.seeds, spec.workers)
    rows = [r for rs, _ in jobs for r in rs]
    return ComparisonResult(rows, _finish(out, rows, "partition-comparison"),
                            {s: oc for s, (_, oc) in zip(spec.seeds, jobs)})


@dataclass
class GridResult:
    """``points`` holds one dict per grid point: params, mean, stderr, n_ok, failed, error."""

    regime: str
    points: list
    best: dict | None

    @property
    def best_params(self) -> dict:
        if self.best is None:
            raise NumericalFailureError("every grid point failed")
        return self.best["params"]


def _best_point(points: list) -> dict | None:
    ok = [p for p in points if not p["failed"] and np.isfinite(p["mean"])]
    if not ok:
        return None
    return max(ok, key=lambda p: (p["mean"], -p["params"]["n_reservoir"], p["params"]["ridge_param"]))


GRID_FIELDS = GRID_AXES + ("mean_valid_time", "stderr_valid_time", "n_ok", "failed", "error")


def grid_search(spec: ExperimentSpec, regime: str | None = None, grid: dict | None = None,
                out_root: str | Path | None = None) -> GridResult:
    """Evaluate every point of the reservoir grid over all seeds.

    Axes missing from the grid keep the regime's configured value. A point
    fails (and is recorded, not raised) if any seed errors. The best point
    has the largest mean valid time; ties prefer smaller ``n_reservoir``,
    then larger ``ridge_param``.
    """
    regime = spec.grid_regime if regime is None else regime
    if regime not in REGIMES:
        raise InvalidArgumentError(f"unknown regime {regime!r}")
    grid = spec.grid if grid is None else grid
    spec = spec.replace(grid=dict(grid), grid_regime=regime)
    base = {"single": spec.single, "parallel-known": spec.parallel, "parallel-inferred": spec.inferred}[regime]
    axes = list(spec.grid)
    combos = list(itertools.product(*(spec.grid[a] for a in axes))) or [()]
    out = ExperimentDir(out_root, spec, "grid-search")
    datas = _pool_map(lambda s: _safe(prepare_seed, spec, s), spec.seeds, spec.workers)

    def evaluate(combo):
        params = {a: getattr(base, a) for a in GRID_AXES}
        params.update(zip(axes, combo))
        point = {"params": params, "mean": math.nan, "stderr": math.nan, "n_ok": 0, "failed": False,
                 "error": "", "values": []}
        try:
            cfg = base.replace(**params)
            for d in datas:
                if isinstance(d, Exception):
                    raise d
                point["values"].append(_RUNNERS[regime](spec, d, cfg).result.valid_time_lyap)
        except Exception as exc:  # noqa: BLE001 - grid points fail in isolation
            point["failed"] = True
            point["error"] = f"{type(exc).__name__}: {exc}".replace("\n", " ")
            return point
        v = np.array(point["values"])
        point.update(mean=float(v.mean()), n_ok=v.size,
                     stderr=float(v.std(ddof=1) / math.sqrt(v.size)) if v.size > 1 else 0.0)
        return point

    points = _pool_map(evaluate, combos, spec.workers)
    result = GridResult(regime, points, _best_point(points))
    if out:
        rows = [{**p["params"], "mean_valid_time": p["mean"], "stderr_valid_time": p["stderr"],
                 "n_ok": p["n_ok"], "failed": p["failed"], "error": p["error"]} for p in points]
        write_rows(out.path / "grid.csv", rows, GRID_FIELDS)
        out.close({"best": None if result.best is None else result.best["params"]})
    return result


def _safe(fn, *args):
    try:
        return fn(*args)
    except Exception as exc:  # noqa: BLE001
        return exc


def full_scale(spec: ExperimentSpec) -> ExperimentSpec:
    """Same experiment with the large single-reservoir baseline."""
    return spec.replace(single=spec.single.replace(n_reservoir=10000))
