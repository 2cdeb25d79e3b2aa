"""Kuramoto dynamics: right-hand side, RK4 integration, order parameter and
largest Lyapunov exponent.

The integration loops run in numba-compiled kernels over the edge list;
:func:`kuramoto_rhs` is the plain numpy reference used for checks.
"""

from __future__ import annotations

import csv
import json
import math
from dataclasses import dataclass, field
from pathlib import Path

import numba
import numpy as np

from .errors import InvalidArgumentError, NumericalFailureError
from .network import OscillatorNetwork

TWO_PI = 2.0 * np.pi


@dataclass
class PhaseState:
    phases: np.ndarray
    time: float = 0.0

    def __post_init__(self):
        self.phases = np.asarray(self.phases, dtype=float)


@dataclass
class Trajectory:
    """Phases sampled at a uniform interval.

    ``phases`` has shape ``(n_samples, n_nodes)`` and is stored unwrapped.
    """

    phases: np.ndarray
    dt_sample: float
    t0: float = 0.0
    network_ref: str | None = None
    meta: dict = field(default_factory=dict)

    def __post_init__(self):
        self.phases = np.asarray(self.phases, dtype=float)
        if self.phases.ndim != 2:
            raise InvalidArgumentError("phases must be a (n_samples, n_nodes) array")
        if self.dt_sample <= 0:
            raise InvalidArgumentError("dt_sample must be positive")

    @property
    def times(self) -> np.ndarray:
        return self.t0 + self.dt_sample * np.arange(self.n_samples)

    @property
    def n_samples(self) -> int:
        return self.phases.shape[0]

    @property
    def n_nodes(self) -> int:
        return self.phases.shape[1]

    def __len__(self):
        return self.n_samples

    def slice(self, start: int, stop: int | None = None) -> Trajectory:
        start = start if start >= 0 else self.n_samples + start
        return Trajectory(self.phases[start:stop], self.dt_sample,
                          self.t0 + start * self.dt_sample, self.network_ref, dict(self.meta))

    def state(self, k: int) -> PhaseState:
        return PhaseState(self.phases[k], float(self.times[k]))

    def save_csv(self, path: str | Path, meta_path: str | Path | None = None) -> None:
        """Write ``t,theta_0,...`` CSV (phases reduced mod 2 pi) plus metadata JSON."""
        path = Path(path)
        header = ["t"] + [f"theta_{i}" for i in range(self.n_nodes)]
        table = np.column_stack([self.times, np.mod(self.phases, TWO_PI)])
        with path.open("w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(header)
            for row in table:
                w.writerow([repr(float(x)) for x in row])
        meta = {"dt_sample": self.dt_sample, "t0": self.t0, "network": self.network_ref, **self.meta}
        meta_path = Path(meta_path) if meta_path else path.with_suffix(".json")
        meta_path.write_text(json.dumps(meta, indent=1))

    @classmethod
    def load_csv(cls, path: str | Path, meta_path: str | Path | None = None) -> Trajectory:
        path = Path(path)
        data = np.loadtxt(path, delimiter=",", skiprows=1, ndmin=2)
        meta_path = Path(meta_path) if meta_path else path.with_suffix(".json")
        meta = json.loads(meta_path.read_text()) if meta_path.exists() else {}
        t = data[:, 0]
        dt = meta.pop("dt_sample", float(t[1] - t[0]) if len(t) > 1 else 1.0)
        meta.pop("t0", None)
        ref = meta.pop("network", None)
        return cls(np.unwrap(data[:, 1:], axis=0), dt, float(t[0]), ref, meta)


def _check_dims(phases, net: OscillatorNetwork):
    if phases.shape[0] != net.n_nodes:
        raise InvalidArgumentError(
            f"state has {phases.shape[0]} phases but network has {net.n_nodes} nodes")


def kuramoto_rhs(state, net: OscillatorNetwork) -> np.ndarray:
    """Phase velocities ``omega_i + K * sum_j A_ij sin(theta_j - theta_i)``."""
    theta = np.asarray(state.phases if isinstance(state, PhaseState) else state, dtype=float)
    _check_dims(theta, net)
    diff = np.sin(theta[None, :] - theta[:, None])
    return net.frequencies + net.coupling * (net.adjacency * diff).sum(axis=1)


@numba.njit(cache=True)
def _rhs(theta, omega, coupling, ea, eb, out):
    for i in range(theta.shape[0]):
        out[i] = omega[i]
    for e in range(ea.shape[0]):
        a = ea[e]
        b = eb[e]
        s = coupling * math.sin(theta[b] - theta[a])
        out[a] += s
        out[b] -= s


@numba.njit(cache=True)
def _rk4_steps(theta, omega, coupling, ea, eb, h, n_steps, k1, k2, k3, k4, tmp):
    n = theta.shape[0]
    for _ in range(n_steps):
        _rhs(theta, omega, coupling, ea, eb, k1)
        for i in range(n):
            tmp[i] = theta[i] + 0.5 * h * k1[i]
        _rhs(tmp, omega, coupling, ea, eb, k2)
        for i in range(n):
            tmp[i] = theta[i] + 0.5 * h * k2[i]
        _rhs(tmp, omega, coupling, ea, eb, k3)
        for i in range(n):
            tmp[i] = theta[i] + h * k3[i]
        _rhs(tmp, omega, coupling, ea, eb, k4)
        for i in range(n):
            theta[i] += h / 6.0 * (k1[i] + 2.0 * k2[i] + 2.0 * k3[i] + k4[i])


@numba.njit(cache=True)
def _integrate_kernel(theta0, omega, coupling, ea, eb, h, steps_per_sample, n_samples):
    n = theta0.shape[0]
    out = np.empty((n_samples, n))
    theta = theta0.copy()
    k1 = np.empty(n)
    k2 = np.empty(n)
    k3 = np.empty(n)
    k4 = np.empty(n)
    tmp = np.empty(n)
    out[0] = theta
    for s in range(1, n_samples):
        _rk4_steps(theta, omega, coupling, ea, eb, h, steps_per_sample, k1, k2, k3, k4, tmp)
        for i in range(n):
            if not math.isfinite(theta[i]):
                out[s:] = np.nan
                return out, s
        out[s] = theta
    return out, -1


def _steps_per(interval: float, dt_step: float, what: str) -> int:
    ratio = interval / dt_step
    k = int(round(ratio))
    if k < 1 or abs(ratio - k) > 1e-9 * max(1.0, ratio):
        raise InvalidArgumentError(f"{what}={interval} is not an integer multiple of dt_step={dt_step}")
    return k


def _edge_arrays(net: OscillatorNetwork):
    e = net.edges
    return np.ascontiguousarray(e[:, 0]), np.ascontiguousarray(e[:, 1])


def integrate(net: OscillatorNetwork, initial, dt_step: float = 0.01, dt_sample: float = 0.05,
              duration: float = 100.0) -> Trajectory:
    """Classical RK4 at ``dt_step``; samples every ``dt_sample`` including t=0.

    Returns ``round(duration / dt_sample) + 1`` samples.
    """
    if duration <= 0:
        raise InvalidArgumentError("duration must be positive")
    if dt_step <= 0:
        raise InvalidArgumentError("dt_step must be positive")
    state = initial if isinstance(initial, PhaseState) else PhaseState(initial, 0.0)
    _check_dims(state.phases, net)
    per = _steps_per(dt_sample, dt_step, "dt_sample")
    n_samples = _steps_per(duration, dt_sample, "duration") + 1
    ea, eb = _edge_arrays(net)
    out, bad = _integrate_kernel(state.phases.copy(), net.frequencies, float(net.coupling), ea, eb,
                                 float(dt_step), per, n_samples)
    if bad >= 0:
        raise NumericalFailureError(f"non-finite phase at sample {bad}")
    return Trajectory(out, dt_sample, state.time)


def random_phases(n: int, seed=None) -> np.ndarray:
    return np.random.default_rng(seed).uniform(0.0, TWO_PI, size=n)


def simulate(net: OscillatorNetwork, n_samples: int, seed=None, transient: float = 200.0,
             dt_step: float = 0.01, dt_sample: float = 0.05) -> Trajectory:
    """Random initial phases, discard ``transient`` time units, keep ``n_samples``."""
    theta = random_phases(net.n_nodes, seed)
    if transient > 0:
        theta = integrate(net, theta, dt_step, dt_sample, transient).phases[-1]
    traj = integrate(net, PhaseState(theta, 0.0), dt_step, dt_sample, (n_samples - 1) * dt_sample)
    traj.meta["seed"] = None if isinstance(seed, np.random.SeedSequence) else seed
    traj.meta["transient"] = transient
    return traj


def order_parameter(state, net: OscillatorNetwork) -> complex:
    """``R = sum_i sum_j A_ij exp(1j * theta_j)``."""
    theta = np.asarray(state.phases if isinstance(state, PhaseState) else state, dtype=float)
    _check_dims(theta, net)
    return complex(net.degrees() @ np.exp(1j * theta))


def order_parameter_series(phases: np.ndarray, net: OscillatorNetwork) -> np.ndarray:
    phases = np.asarray(phases, dtype=float)
    if phases.shape[-1] != net.n_nodes:
        raise InvalidArgumentError("phase series width does not match network size")
    return np.exp(1j * phases) @ net.degrees().astype(float)


def save_order_parameter_csv(path: str | Path, times: np.ndarray, r: np.ndarray) -> None:
    with Path(path).open("w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["t", "re_R", "im_R", "abs_R"])
        for t, z in zip(times, r):
            w.writerow([repr(float(t)), repr(float(z.real)), repr(float(z.imag)), repr(float(abs(z)))])


@dataclass(frozen=True)
class LyapunovSettings:
    epsilon: float = 1e-8
    renorm_interval: float = 1.0
    transient: float = 200.0
    total_time: float = 5000.0
    dt_step: float = 0.01
    n_blocks: int = 10
    seed: int | None = 0


@dataclass
class LyapunovEstimate:
    lambda_max: float
    stderr: float
    settings: LyapunovSettings
    block_means: np.ndarray = field(repr=False, default=None)


@numba.njit(cache=True)
def _benettin_kernel(theta, omega, coupling, ea, eb, h, steps_per_renorm, n_renorm, eps, direction):
    n = theta.shape[0]
    k1 = np.empty(n)
    k2 = np.empty(n)
    k3 = np.empty(n)
    k4 = np.empty(n)
    tmp = np.empty(n)
    pert = theta + eps * direction
    logs = np.empty(n_renorm)
    for k in range(n_renorm):
        _rk4_steps(theta, omega, coupling, ea, eb, h, steps_per_renorm, k1, k2, k3, k4, tmp)
        _rk4_steps(pert, omega, coupling, ea, eb, h, steps_per_renorm, k1, k2, k3, k4, tmp)
        d2 = 0.0
        for i in range(n):
            d2 += (pert[i] - theta[i]) ** 2
        d = math.sqrt(d2)
        if not (d > 0.0) or not math.isfinite(d):
            logs[k:] = np.nan
            return logs
        logs[k] = math.log(d / eps)
        for i in range(n):
            pert[i] = theta[i] + (pert[i] - theta[i]) * (eps / d)
    return logs


def largest_lyapunov(net: OscillatorNetwork, settings: LyapunovSettings = LyapunovSettings(),
                     initial=None) -> LyapunovEstimate:
    """Benettin two-trajectory estimate of the largest Lyapunov exponent.

    The separation is renormalized to ``epsilon`` every ``renorm_interval``;
    the standard error comes from ``n_blocks`` contiguous block averages.
    """
    s = settings
    if s.total_time <= 0 or s.renorm_interval <= 0 or s.epsilon <= 0:
        raise InvalidArgumentError("total_time, renorm_interval and epsilon must be positive")
    per = _steps_per(s.renorm_interval, s.dt_step, "renorm_interval")
    n_renorm = int(round(s.total_time / s.renorm_interval))
    n_blocks = max(1, min(s.n_blocks, n_renorm))
    rng = np.random.default_rng(s.seed)
    theta = random_phases(net.n_nodes, rng) if initial is None else np.array(initial, dtype=float)
    _check_dims(theta, net)
    if s.transient > 0:
        theta = integrate(net, theta, s.dt_step, s.renorm_interval, s.transient).phases[-1].copy()
    direction = rng.standard_normal(net.n_nodes)
    direction /= np.linalg.norm(direction)
    ea, eb = _edge_arrays(net)
    logs = _benettin_kernel(theta, net.frequencies, float(net.coupling), ea, eb, float(s.dt_step),
                            per, n_renorm, float(s.epsilon), direction)
    if not np.all(np.isfinite(logs)):
        raise NumericalFailureError("perturbation separation underflowed or overflowed")
    rates = logs / s.renorm_interval
    blocks = np.array([b.mean() for b in np.array_split(rates, n_blocks)])
    stderr = float(blocks.std(ddof=1) / np.sqrt(n_blocks)) if n_blocks > 1 else 0.0
    return LyapunovEstimate(float(rates.mean()), stderr, s, blocks)
