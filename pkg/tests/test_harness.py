import csv
import json
import math
from pathlib import Path

import numpy as np
import pytest

from netforecast.cli import main
from netforecast.config import parse_config_text
from netforecast.errors import InvalidArgumentError
from netforecast.experiments import (SINGLE_DEFAULT, ExperimentSpec, _best_point, aggregate, grid_search,
                                     full_scale, prepare_seed, read_rows, role_seeds,
                                     run_partition_comparison, run_regime_comparison, run_scaling_study)


def tiny(**kw):
    base = dict(experiment_id="tiny", n_nodes=10, n_t=2000, prediction_length=200, seeds=(0, 1),
                single=SINGLE_DEFAULT.replace(n_reservoir=200), lambda_max=0.05, candidate_degrees=(2, 3))
    base.update(kw)
    return ExperimentSpec(**base)


def csv_files(root: Path) -> dict:
    return {p.relative_to(root): p.read_bytes() for p in sorted(root.rglob("*.csv"))}


# ---- spec handling

def test_spec_validation():
    for bad in ({"seeds": ()}, {"seeds": (1, 1)}, {"regimes": ("bogus",)}, {"grid": {"degree": [1]}},
                {"grid": {"ridge_param": []}}, {"f_threshold": 1.5}, {"sizes": (3,)},
                {"lyapunov_clock": "wall"}, {"series_transform": "fft"}, {"sync_length": 10 ** 6}):
        with pytest.raises(InvalidArgumentError):
            tiny(**bad)


def test_spec_text_round_trip():
    spec = tiny(grid={"ridge_param": [1e-4, 1e-3]}, seeds=(4,))
    back = ExperimentSpec.from_dict(parse_config_text(spec.to_text()))
    assert back == spec


def test_spec_from_dict_groups_and_unknown_keys():
    spec = ExperimentSpec.from_dict({"parallel": {"ridge_param": 0.5}, "single": {"n_reservoir": 300}})
    assert spec.parallel.ridge_param == 0.5 and spec.parallel.n_reservoir == 200
    assert spec.single.n_reservoir == 300 and spec.single.input_scaling == 0.1
    with pytest.raises(InvalidArgumentError):
        ExperimentSpec.from_dict({"n_nodez": 3})
    with pytest.raises(InvalidArgumentError):
        ExperimentSpec.from_dict({"parallel": {"bogus": 1}})
    with pytest.raises(InvalidArgumentError):
        ExperimentSpec.from_dict({"parallel": 3})


def test_defaults_follow_documented_settings():
    spec = ExperimentSpec()
    assert spec.n_t == 20000 and spec.prediction_length == 2000 and spec.dt_sample == 0.05
    assert spec.single.n_reservoir == 2000 and spec.single.spectral_radius == 0.9
    assert spec.single.input_scaling == 0.1 and spec.single.leak_rate == 0.0 and spec.single.ridge_param == 1e-7
    assert spec.parallel.n_reservoir == 200 and spec.all_to_all_input_scaling == 0.3
    assert len(spec.seeds) >= 10
    assert full_scale(spec).single.n_reservoir == 10000


def test_role_seeds_deterministic_and_distinct():
    a = role_seeds(0, 3)
    assert a == role_seeds(0, 3)
    assert len(set(a.values())) == len(a)
    assert a != role_seeds(0, 4) and a != role_seeds(1, 3)


def test_clock_selection():
    spec = tiny(lambda_max=None, lyapunov_time=300.0, benchmark_n_nodes=50)
    d = prepare_seed(spec, 0)
    assert d.clock in ("network", "benchmark") and d.lambda_max > 0
    fixed = prepare_seed(tiny(), 0)
    assert fixed.clock == "fixed" and fixed.lambda_max == 0.05
    np.testing.assert_array_equal(fixed.train, d.train)


# ---- experiments

@pytest.fixture(scope="module")
def comparison(tmp_path_factory):
    root = tmp_path_factory.mktemp("cmp")
    return root, run_regime_comparison(tiny(), root)


def test_comparison_outputs(comparison):
    root, res = comparison
    d = root / "tiny"
    manifest = json.loads((d / "manifest.json").read_text())
    assert {"spec", "version", "started", "finished"} <= set(manifest)
    assert manifest["spec"]["n_nodes"] == 10
    assert len(res.rows) == 6 and all(r["status"] == "ok" for r in res.rows)
    seed_dir = d / "seed_0000"
    for regime in ("single", "parallel-known", "parallel-inferred"):
        assert (seed_dir / f"{regime}_result.csv").exists()
        assert (seed_dir / f"{regime}_order_parameter.csv").exists()
        assert json.loads((seed_dir / f"{regime}_summary.json").read_text())["f"] == 0.1
    net = json.loads((seed_dir / "inferred_network.json").read_text())
    assert net["source"] == "inferred" and "threshold" in net
    assert np.loadtxt(seed_dir / "te_matrix.csv", delimiter=",").shape == (10, 10)
    inferred = [r for r in res.rows if r["regime"] == "parallel-inferred"]
    assert all(0 <= r["tpr"] <= 1 and 0 <= r["fdr"] <= 1 for r in inferred)


def test_regimes_share_truth(comparison):
    _, res = comparison
    for seed, outcomes in res.outcomes.items():
        truths = [oc.result.truth for oc in outcomes.values()]
        for t in truths[1:]:
            assert np.array_equal(t, truths[0])


def test_rerun_is_bitwise_identical(comparison, tmp_path):
    root, _ = comparison
    run_regime_comparison(tiny(), tmp_path)
    assert csv_files(root / "tiny") == csv_files(tmp_path / "tiny")


def test_summary_recomputes_from_raw_rows(comparison):
    root, _ = comparison
    d = root / "tiny"
    groups = {}
    with (d / "per_seed.csv").open() as fh:
        for r in csv.DictReader(fh):
            if r["status"] == "ok":
                groups.setdefault(r["regime"], []).append(float(r["valid_time_lyap"]))
    with (d / "summary.csv").open() as fh:
        summary = {r["regime"]: r for r in csv.DictReader(fh)}
    for regime, vals in groups.items():
        n = len(vals)
        mean = sum(vals) / n
        se = math.sqrt(sum((v - mean) ** 2 for v in vals) / (n - 1) / n)
        assert float(summary[regime]["mean_valid_time"]) == pytest.approx(mean, rel=1e-12)
        assert float(summary[regime]["stderr_valid_time"]) == pytest.approx(se, rel=1e-12, abs=1e-15)
    assert aggregate(read_rows(d / "per_seed.csv")) == aggregate(comparison[1].rows)


def test_failing_regime_is_isolated():
    bad_single = SINGLE_DEFAULT.replace(n_reservoir=201)  # not divisible by 20 inputs
    res = run_regime_comparison(tiny(seeds=(0,), single=bad_single, regimes=("single", "parallel-known")))
    status = {r["regime"]: r["status"] for r in res.rows}
    assert status["single"].startswith("failed") and status["parallel-known"] == "ok"


def test_scaling_study_rows():
    res = run_scaling_study(tiny(seeds=(0,), regimes=("parallel-known",)), sizes=(8, 12))
    assert sorted(s["n_nodes"] for s in res.summary) == [8, 12]


def test_partition_comparison_repeatable():
    spec = tiny(seeds=(0,))
    a = run_partition_comparison(spec)
    b = run_partition_comparison(spec)
    assert [r["regime"] for r in a.rows] == ["disjoint", "all-to-all"]
    assert [r["valid_time_lyap"] for r in a.rows] == [r["valid_time_lyap"] for r in b.rows]
    assert all(r["status"] == "ok" for r in a.rows)


def test_grid_search_isolation_and_single_point(tmp_path):
    spec = tiny(seeds=(0,), experiment_id="g")
    res = grid_search(spec, "parallel-known", {"spectral_radius": [0.0, 0.5]}, tmp_path)
    assert res.points[0]["failed"] and "spectral_radius" in res.points[0]["error"]
    assert not res.points[1]["failed"]
    assert res.best["params"]["spectral_radius"] == 0.5
    rows = list(csv.DictReader((tmp_path / "g" / "grid.csv").open()))
    assert len(rows) == 2 and rows[0]["failed"] == "1"
    one = grid_search(spec, "single", {"ridge_param": [1e-6]})
    assert len(one.points) == 1 and one.best is one.points[0]


def test_grid_tie_breaking():
    def p(nr, beta, mean):
        return {"params": {"n_reservoir": nr, "ridge_param": beta}, "mean": mean, "failed": False}
    pts = [p(400, 1e-3, 1.0), p(200, 1e-4, 1.0), p(200, 1e-2, 1.0), p(100, 1e-2, 0.5)]
    assert _best_point(pts) is pts[2]
    assert _best_point([{**pts[0], "failed": True}]) is None


# ---- command line

def run(args):
    return main([str(a) for a in args])


def test_cli_pipeline(tmp_path):
    out = tmp_path
    cfg = tmp_path / "run.cfg"
    cfg.write_text("n_nodes = 8\nn_t = 1500\nprediction_length = 100\nlyapunov_time = 100\n"
                   "single.n_reservoir = 160\n")
    base = ["--seed", 3, "--config", cfg, "--out", out]
    assert run(base + ["generate"]) == 0
    net = json.loads((out / "network.json").read_text())
    assert net["n_nodes"] == 8 and all(i < j for i, j in net["edges"])
    assert run(base + ["simulate", "--network", out / "network.json"]) == 0
    meta = json.loads((out / "trajectory.json").read_text())
    assert meta["seed"] == 3 and meta["dt_sample"] == 0.05
    assert (out / "order_parameter.csv").read_text().startswith("t,re_R,im_R,abs_R")
    assert run(base + ["lyapunov", "--network", out / "network.json"]) == 0
    assert "lambda_max" in json.loads((out / "lyapunov.json").read_text())
    assert run(base + ["train", "--trajectory", out / "trajectory.csv", "--network", out / "network.json"]) == 0
    assert (out / "forecaster" / "wiring.json").exists()
    assert run(base + ["predict", "--model", out / "forecaster", "--trajectory", out / "trajectory.csv",
                       "--network", out / "network.json", "--lambda-max", 0.05]) == 0
    assert (out / "result.csv").read_text().startswith("t,E,valid_flag")
    assert (out / "node_nrmse.csv").exists()
    assert run(base + ["train", "--regime", "single", "--trajectory", out / "trajectory.csv"]) == 0
    assert json.loads((out / "model.json").read_text())["format"].startswith("netforecast-reservoir")
    assert run(base + ["predict", "--model", out / "model.json", "--trajectory", out / "trajectory.csv"]) == 0
    assert run(base + ["infer-links", "--trajectory", out / "trajectory.csv", "--network",
                       out / "network.json"]) == 0
    inferred = json.loads((out / "inferred_network.json").read_text())
    assert inferred["source"] == "inferred"
    assert "tpr" in json.loads((out / "link_score.json").read_text())
    assert run(base + ["train", "--trajectory", out / "trajectory.csv", "--network",
                       out / "inferred_network.json"]) == 0


def test_cli_experiment_and_grid(tmp_path):
    cfg = tmp_path / "exp.cfg"
    cfg.write_text("experiment_id = e\nn_nodes = 8\nn_t = 1500\nprediction_length = 100\nlambda_max = 0.05\n"
                   "seeds = 0,\nregimes = parallel-known,\nexport_series = false\ngrid.ridge_param = 1e-3, 1e-2\n")
    assert run(["--config", cfg, "--out", tmp_path, "experiment", "partition"]) == 0
    assert (tmp_path / "e" / "per_seed.csv").exists()
    assert run(["--config", cfg, "--out", tmp_path, "grid-search"]) == 0
    assert (tmp_path / "e" / "grid.csv").exists()


def test_cli_exit_codes(tmp_path):
    bad = tmp_path / "bad.cfg"
    bad.write_text("no_such_key = 1\n")
    assert run(["--config", bad, "experiment", "fig3"]) == 1
    assert run(["--config", tmp_path / "missing.cfg", "generate"]) == 1
    assert run(["bogus-command"]) == 1
    assert run(["--out", tmp_path, "simulate", "--network", tmp_path / "none.json"]) == 1
    fail = tmp_path / "fail.cfg"
    fail.write_text("n_nodes = 8\nn_t = 1500\nprediction_length = 100\nlambda_max = 0.05\nseeds = 0,\n"
                    "grid.spectral_radius = 0.0,\n")
    assert run(["--config", fail, "--out", tmp_path, "grid-search"]) == 2
