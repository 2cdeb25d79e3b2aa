"""Command line interface.

Exit status: 0 on success, 1 for invalid input or settings, 2 when a
computation fails.
"""

from __future__ import annotations

import argparse
import json
import logging
import sys
from pathlib import Path

import numpy as np

from .config import load_config
from .dynamics import LyapunovSettings, Trajectory, largest_lyapunov, order_parameter_series, \
    save_order_parameter_csv, simulate
from .errors import InvalidArgumentError, NumericalFailureError
from .experiments import ExperimentSpec, grid_search, run_partition_comparison, run_regime_comparison, \
    run_scaling_study
from .inference import TEMatrix, infer_links, score_links, te_matrix, thresholds_for_degrees
from .metrics import ForecastResult, nrmse_series, valid_time
from .network import OscillatorNetwork, network_from_adjacency, standard_network
from .parallel import ParallelForecaster, WiringGraph, assemble, predict_parallel, synchronize, \
    train_parallel
from .reservoir import InputPartition, Reservoir, decode_oscillator_state, encode_oscillator_state

log = logging.getLogger("netforecast")

EXIT_OK, EXIT_INVALID, EXIT_FAILURE = 0, 1, 2


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise InvalidArgumentError(message)


def _spec(args) -> ExperimentSpec:
    d = load_config(args.config) if args.config else {}
    if args.seed is not None:
        d["master_seed"] = args.seed
    return ExperimentSpec.from_dict(d)


def _out(args) -> Path:
    p = Path(args.out)
    p.mkdir(parents=True, exist_ok=True)
    return p


def _load_traj(path: str) -> Trajectory:
    p = Path(path)
    if not p.is_file():
        raise InvalidArgumentError(f"trajectory {p} not found")
    return Trajectory.load_csv(p)


def _load_net(path: str) -> OscillatorNetwork:
    p = Path(path)
    if not p.is_file():
        raise InvalidArgumentError(f"network {p} not found")
    return OscillatorNetwork.load(p)


def cmd_generate(args, spec):
    n = args.n_nodes or spec.n_nodes
    net = standard_network(n, spec.master_seed, spec.assortativity, spec.coupling)
    path = _out(args) / "network.json"
    net.save(path)
    print(path)


def cmd_simulate(args, spec):
    net = _load_net(args.network)
    n = args.n_samples or spec.n_t + spec.prediction_length
    traj = simulate(net, n, seed=spec.master_seed, transient=spec.transient, dt_step=spec.dt_step,
                    dt_sample=spec.dt_sample)
    traj.network_ref = str(args.network)
    traj.meta["seed"] = spec.master_seed
    out = _out(args)
    traj.save_csv(out / "trajectory.csv", out / "trajectory.json")
    save_order_parameter_csv(out / "order_parameter.csv", traj.times, order_parameter_series(traj.phases, net))
    print(out / "trajectory.csv")


def cmd_lyapunov(args, spec):
    net = _load_net(args.network)
    est = largest_lyapunov(net, LyapunovSettings(total_time=args.total_time or spec.lyapunov_time,
                                                 dt_step=spec.dt_step, seed=spec.master_seed))
    doc = {"lambda_max": est.lambda_max, "stderr": est.stderr, "total_time": est.settings.total_time,
           "network": str(args.network), "seed": spec.master_seed}
    (_out(args) / "lyapunov.json").write_text(json.dumps(doc, indent=1))
    print(json.dumps(doc))


def _training_slice(traj: Trajectory, spec: ExperimentSpec, n_train):
    n = n_train or min(spec.n_t, traj.n_samples)
    if n > traj.n_samples:
        raise InvalidArgumentError(f"trajectory has only {traj.n_samples} samples")
    return traj.phases[:n]


def cmd_train(args, spec):
    traj = _load_traj(args.trajectory)
    phases = _training_slice(traj, spec, args.n_train)
    out = _out(args)
    if args.regime == "single":
        res = Reservoir.create(spec.single, 2 * phases.shape[1], InputPartition("known-equal"),
                               seed=spec.master_seed)
        res.fit(encode_oscillator_state(phases))
        res.save(out / "model.json")
        print(out / "model.json")
        return
    net = _load_net(args.network)
    if net.n_nodes != phases.shape[1]:
        raise InvalidArgumentError("network and trajectory disagree on the node count")
    inferred = net.source == "inferred"
    cfg = spec.inferred if inferred else spec.parallel
    partition = InputPartition("unknown-reserved", spec.n_assign) if inferred else InputPartition("known-equal")
    pf = assemble(WiringGraph.from_adjacency(net.adjacency, source="inferred" if inferred else "true-adjacency"),
                  cfg, partition, seed=spec.master_seed)
    train_parallel(pf, phases, workers=spec.workers)
    pf.save(out / "forecaster")
    print(out / "forecaster")


def cmd_predict(args, spec):
    traj = _load_traj(args.trajectory)
    start = args.start if args.start is not None else min(spec.n_t, traj.n_samples)
    sync = spec.sync_length
    if start < sync:
        raise InvalidArgumentError(f"need {sync} samples before the forecast start, got {start}")
    steps = args.steps or spec.prediction_length
    model = Path(args.model)
    if model.is_dir():
        pf = ParallelForecaster.load(model)
        synchronize(pf, traj.phases[start - sync:start])
        pred = predict_parallel(pf, steps)
    elif model.is_file():
        res = Reservoir.load(model)
        res.synchronize(encode_oscillator_state(traj.phases[start - sync:start]))
        pred = decode_oscillator_state(res.predict_closed_loop(steps))
    else:
        raise InvalidArgumentError(f"model {model} not found")
    out = _out(args)
    t0 = traj.t0 + start * traj.dt_sample
    Trajectory(pred, traj.dt_sample, t0, traj.network_ref).save_csv(out / "prediction.csv")
    truth = traj.phases[start:start + steps]
    if truth.shape[0] == steps:
        lam = args.lambda_max or 1.0
        if args.network:
            net = _load_net(args.network)
            res = ForecastResult.evaluate(np.abs(order_parameter_series(truth, net)),
                                          np.abs(order_parameter_series(pred, net)), traj.dt_sample, lam,
                                          spec.f_threshold)
            save_order_parameter_csv(out / "prediction_order_parameter.csv",
                                     t0 + traj.dt_sample * np.arange(steps), order_parameter_series(pred, net))
        else:
            res = ForecastResult.evaluate(encode_oscillator_state(truth), encode_oscillator_state(pred),
                                          traj.dt_sample, lam, spec.f_threshold)
        res.save(out / "result.csv", out / "summary.json")
        _node_nrmse(out / "node_nrmse.csv", truth, pred, traj.dt_sample, lam, spec.f_threshold)
        print(json.dumps(res.summary()))
    else:
        log.warning("trajectory ends before the forecast horizon; no error metrics written")
    print(out / "prediction.csv")


def _node_nrmse(path: Path, truth, pred, dt, lam, f):
    """Per-node NRMSE on the (sin, cos) encoding, one column per node."""
    n = truth.shape[1]
    cols = [nrmse_series(np.c_[np.sin(truth[:, i]), np.cos(truth[:, i])],
                         np.c_[np.sin(pred[:, i]), np.cos(pred[:, i])]) for i in range(n)]
    with path.open("w") as fh:
        fh.write("t," + ",".join(f"E_{i}" for i in range(n)) + "\n")
        for k in range(truth.shape[0]):
            fh.write(",".join([repr(k * dt)] + [repr(float(c[k])) for c in cols]) + "\n")
    vts = [valid_time(c, f, dt, lam).lyapunov_times for c in cols]
    path.with_name("node_valid_times.json").write_text(json.dumps(vts))


def cmd_infer_links(args, spec):
    traj = _load_traj(args.trajectory)
    phases = _training_slice(traj, spec, args.n_train)
    tem = te_matrix(phases, spec.te_config)
    if args.threshold is not None:
        thr = args.threshold
    else:
        thr = thresholds_for_degrees(tem, [args.mean_degree or float(spec.degree)])[0]
    adj = infer_links(tem, thr)
    out = _out(args)
    tem.save_csv(out / "te_matrix.csv")
    if args.network:
        net = _load_net(args.network)
        freqs, coupling = net.frequencies, net.coupling
        score = score_links(adj, net.adjacency, thr)
        (out / "link_score.json").write_text(json.dumps(
            {"threshold": thr, "tpr": score.true_positive_rate, "fdr": score.false_discovery_rate}, indent=1))
    else:
        freqs, coupling = np.zeros(phases.shape[1]), spec.coupling
    network_from_adjacency(adj, freqs, coupling, threshold=thr).save(out / "inferred_network.json")
    print(out / "inferred_network.json")


def cmd_grid_search(args, spec):
    res = grid_search(spec, regime=args.regime, out_root=args.out)
    if res.best is None:
        raise NumericalFailureError("every grid point failed")
    print(json.dumps({"best": res.best["params"], "mean": res.best["mean"], "stderr": res.best["stderr"]}))


def cmd_experiment(args, spec):
    if args.name == "fig3":
        res = run_regime_comparison(spec, args.out)
    elif args.name == "fig4":
        res = run_scaling_study(spec, out_root=args.out)
    else:
        res = run_partition_comparison(spec, args.out)
    for s in res.summary:
        print(f"N={s['n_nodes']:<4d} {s['regime']:<18s} valid={s['mean_valid_time']:.3f} "
              f"+- {s['stderr_valid_time']:.3f} (ok {s['n_ok']}, failed {s['n_failed']})")
    if all(s["n_ok"] == 0 for s in res.summary):
        raise NumericalFailureError("every run failed")


def build_parser() -> argparse.ArgumentParser:
    p = _Parser(prog="netforecast", description="Parallel reservoir forecasting of oscillator networks.")
    p.add_argument("--seed", type=int, default=None, help="master seed (overrides master_seed)")
    p.add_argument("--config", default=None, help="key = value settings file")
    p.add_argument("--out", default=".", help="output directory")
    p.add_argument("-v", "--verbose", action="store_true")
    sub = p.add_subparsers(dest="command", required=True, parser_class=_Parser)

    g = sub.add_parser("generate", help="build a frequency-assortative network")
    g.add_argument("--n-nodes", type=int, default=None)
    g.set_defaults(fn=cmd_generate)

    s = sub.add_parser("simulate", help="integrate a network and save its trajectory")
    s.add_argument("--network", required=True)
    s.add_argument("--n-samples", type=int, default=None)
    s.set_defaults(fn=cmd_simulate)

    ly = sub.add_parser("lyapunov", help="estimate the largest Lyapunov exponent")
    ly.add_argument("--network", required=True)
    ly.add_argument("--total-time", type=float, default=None)
    ly.set_defaults(fn=cmd_lyapunov)

    t = sub.add_parser("train", help="train a single or parallel forecaster")
    t.add_argument("--trajectory", required=True)
    t.add_argument("--network", help="wiring for the parallel forecaster (true or inferred)")
    t.add_argument("--regime", choices=("single", "parallel"), default="parallel")
    t.add_argument("--n-train", type=int, default=None)
    t.set_defaults(fn=cmd_train)

    pr = sub.add_parser("predict", help="closed-loop forecast from a trained model")
    pr.add_argument("--model", required=True, help="model JSON file or forecaster directory")
    pr.add_argument("--trajectory", required=True, help="true trajectory used to synchronize (and score)")
    pr.add_argument("--start", type=int, default=None, help="index of the first forecast sample")
    pr.add_argument("--steps", type=int, default=None)
    pr.add_argument("--network", default=None, help="score the order parameter using this network")
    pr.add_argument("--lambda-max", type=float, default=None)
    pr.set_defaults(fn=cmd_predict)

    il = sub.add_parser("infer-links", help="transfer-entropy link inference")
    il.add_argument("--trajectory", required=True)
    il.add_argument("--network", default=None, help="true network, for frequencies and TPR/FDR")
    il.add_argument("--threshold", type=float, default=None)
    il.add_argument("--mean-degree", type=float, default=None)
    il.add_argument("--n-train", type=int, default=None)
    il.set_defaults(fn=cmd_infer_links)

    gs = sub.add_parser("grid-search", help="hyperparameter grid search")
    gs.add_argument("--regime", choices=("single", "parallel-known", "parallel-inferred"), default=None)
    gs.set_defaults(fn=cmd_grid_search)

    ex = sub.add_parser("experiment", help="run a predefined experiment")
    ex.add_argument("name", choices=("fig3", "fig4", "partition"))
    ex.set_defaults(fn=cmd_experiment)
    return p


def main(argv=None) -> int:
    try:
        args = build_parser().parse_args(argv)
    except InvalidArgumentError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_INVALID
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        spec = _spec(args)
        args.fn(args, spec)
    except (InvalidArgumentError, FileNotFoundError, json.JSONDecodeError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_INVALID
    except Exception as exc:  # noqa: BLE001 - any computational failure
        print(f"failed: {type(exc).__name__}: {exc}", file=sys.stderr)
        return EXIT_FAILURE
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
