import json

import numpy as np
import pytest

from netforecast.dynamics import LyapunovSettings, largest_lyapunov, simulate
from netforecast.errors import InvalidArgumentError, NumericalFailureError
from netforecast.metrics import nrmse_series, valid_time
from netforecast.network import OscillatorNetwork, standard_network
from netforecast.parallel import (ParallelForecaster, WiringGraph, assemble, lockstep_step,
                                  predict_parallel, synchronize, train_parallel)
from netforecast.reservoir import InputPartition, ReservoirConfig, encode_oscillator_state

CFG = ReservoirConfig(200, 0.7, 2.0, 0.3, 1e-2)


@pytest.fixture(scope="module")
def net():
    return standard_network(50, seed=0)


@pytest.fixture(scope="module")
def data(net):
    return simulate(net, 6200, seed=3).phases


@pytest.fixture(scope="module")
def trained(net, data):
    pf = assemble(net, CFG, seed=11)
    train_parallel(pf, data[:6000])
    return pf


def teacher_forced(pf, phases):
    """One-step predictions while driving every reservoir with the truth."""
    b, w_in, w_out = pf.operators()
    u = encode_oscillator_state(phases)
    r = np.zeros(b.shape[0])
    out = np.empty_like(u)
    a = pf.shared_config.leak_rate
    for k in range(u.shape[0]):
        r = a * r + (1 - a) * np.tanh(b @ r + w_in @ u[k])
        out[k] = w_out @ r
    return out[:-1], u[1:]


def test_wiring_graph_invariants():
    a = np.array([[0, 1, 1], [1, 0, 0], [1, 0, 0]])
    w = WiringGraph.from_adjacency(a)
    assert [x.tolist() for x in w.neighbor_lists] == [[0, 1, 2], [1, 0], [2, 0]]
    np.testing.assert_array_equal(w.global_columns(1), [1, 0, 4, 3])
    with pytest.raises(InvalidArgumentError):
        WiringGraph([[1, 0], [1]])
    with pytest.raises(InvalidArgumentError):
        WiringGraph([[0, 0]])
    with pytest.raises(InvalidArgumentError):
        WiringGraph.from_adjacency(np.array([[0, 1], [0, 0]]))


def test_assemble_known_links(net):
    pf = assemble(net, ReservoirConfig(200), seed=0)
    assert len(pf.reservoirs) == 50
    assert all(r.n_inputs == 8 and r.size == 200 for r in pf.reservoirs)
    assert pf.partition.mode == "known-equal"


def test_assemble_inferred_with_seven_neighbors():
    a = np.zeros((10, 10), dtype=int)
    a[0, 1:8] = a[1:8, 0] = 1
    a[8, 9] = a[9, 8] = 1
    pf = assemble(WiringGraph.from_adjacency(a, source="inferred"), ReservoirConfig(200), seed=0)
    assert pf.partition == InputPartition("unknown-reserved", 50)
    assert pf.reservoirs[0].n_inputs == 16 and pf.reservoirs[0].size == 204
    assert pf.reservoirs[8].n_inputs == 4
    # node with only node 0 as neighbor: 2 assigned inputs (25 each) + 2 others (75 each)
    assert pf.reservoirs[1].size == 200


def test_isolated_and_single_node_networks():
    one = OscillatorNetwork([0.3], np.empty((0, 2)), coupling=0.0)
    pf = assemble(one, ReservoirConfig(40, 0.5, 1.0, 0.3, 1e-6), seed=0)
    assert len(pf.reservoirs) == 1 and pf.reservoirs[0].n_inputs == 2
    traj = simulate(one, 2000, seed=0)
    train_parallel(pf, traj.phases[:1500])
    synchronize(pf, traj.phases[1400:1500])
    pred = predict_parallel(pf, 300)
    e = nrmse_series(encode_oscillator_state(traj.phases[1500:1800]), encode_oscillator_state(pred))
    assert e.max() < 0.1


def test_training_reconstruction_below_five_percent(trained, data):
    pred, truth = teacher_forced(trained, data[:6000])
    keep = slice(200, None)
    for i in range(50):
        cols = [i, 50 + i]
        assert nrmse_series(truth[keep][:, cols], pred[keep][:, cols]).mean() < 0.05


def test_serial_and_threaded_training_identical(net, data):
    a = assemble(net, CFG, seed=5)
    b = assemble(net, CFG, seed=5)
    train_parallel(a, data[:2000], workers=1)
    train_parallel(b, data[:2000], workers=4)
    for ra, rb in zip(a.reservoirs, b.reservoirs):
        np.testing.assert_array_equal(ra.w_out, rb.w_out)


def test_batched_matches_per_reservoir_training(net, data):
    """Stacked training equals driving each reservoir on its own."""
    pf = assemble(net, CFG, seed=6)
    train_parallel(pf, data[:800])
    u = encode_oscillator_state(data[:800])
    for i in (0, 17, 49):
        res = assemble(net, CFG, seed=6).reservoirs[i]
        cols = pf.wiring.global_columns(i)
        res.fit(u[:, cols], u[:, [i, 50 + i]])
        np.testing.assert_allclose(res.w_out, pf.reservoirs[i].w_out, rtol=1e-7, atol=1e-9)


def test_too_short_training_rejected(net, data):
    with pytest.raises(InvalidArgumentError):
        train_parallel(assemble(net, CFG, seed=0), data[:50])
    with pytest.raises(InvalidArgumentError):
        train_parallel(assemble(net, CFG, seed=0), data[:500, :10])


def test_lockstep_matches_batched_prediction(trained, data):
    synchronize(trained, data[5900:6000])
    states = [r.state.copy() for r in trained.reservoirs]
    _, batched = predict_parallel(trained, 5, return_encoded=True)
    for r, s in zip(trained.reservoirs, states):
        r.state = s.copy()
    stepped = np.array([lockstep_step(trained) for _ in range(5)])
    np.testing.assert_allclose(stepped, batched, atol=1e-12, rtol=0)


def test_prediction_is_deterministic(trained, data):
    synchronize(trained, data[5900:6000])
    a = predict_parallel(trained, 50)
    synchronize(trained, data[5900:6000])
    b = predict_parallel(trained, 50)
    np.testing.assert_array_equal(a, b)
    assert predict_parallel(trained, 0).shape == (0, 50)


def test_locality_of_one_step(trained, data, net):
    synchronize(trained, data[5900:6000])
    saved = [r.state.copy() for r in trained.reservoirs]
    i = 0
    far = next(j for j in range(50) if j not in trained.wiring.neighbor_lists[i])
    lockstep_step(trained)
    base = trained.reservoirs[i].output()
    for r, s in zip(trained.reservoirs, saved):
        r.state = s.copy()
    trained.reservoirs[far].state = trained.reservoirs[far].state + 0.3
    lockstep_step(trained)
    np.testing.assert_array_equal(trained.reservoirs[i].output(), base)
    for r, s in zip(trained.reservoirs, saved):
        r.state = s.copy()
    nb = trained.wiring.neighbor_lists[i][1]
    trained.reservoirs[nb].state = trained.reservoirs[nb].state + 0.3
    lockstep_step(trained)
    assert np.any(trained.reservoirs[i].output() != base)


def test_non_finite_output_names_node(net, data):
    pf = assemble(net, CFG, seed=1)
    train_parallel(pf, data[:500])
    pf.reservoirs[7].w_out = pf.reservoirs[7].w_out.copy()
    pf.reservoirs[7].w_out[0, 0] = np.inf
    pf._ops.pop("w_out", None)
    synchronize(pf, data[400:500])
    pf.reservoirs[7].state[0] = 0.5
    with pytest.raises(NumericalFailureError, match="node 7"):
        predict_parallel(pf, 3)


def test_zero_steps_gives_empty_prediction(trained, data):
    synchronize(trained, data[5900:6000])
    assert predict_parallel(trained, 0).shape == (0, 50)


def test_untrained_prediction_rejected(net):
    with pytest.raises(InvalidArgumentError):
        predict_parallel(assemble(net, CFG, seed=0), 3)


def test_save_load_round_trip(tmp_path, trained, data):
    trained.save(tmp_path / "fc")
    wiring = json.loads((tmp_path / "fc" / "wiring.json").read_text())
    assert wiring["wiring"]["neighbor_lists"][0][0] == 0
    assert len(list((tmp_path / "fc").glob("node_*.json"))) == 50
    back = ParallelForecaster.load(tmp_path / "fc")
    synchronize(trained, data[5900:6000])
    synchronize(back, data[5900:6000])
    np.testing.assert_array_equal(predict_parallel(back, 30), predict_parallel(trained, 30))


def test_decoupled_network_long_valid_time(net):
    """Pure rotations, measured on the clock of the coupled network."""
    lam = largest_lyapunov(net, LyapunovSettings(total_time=2000.0)).lambda_max
    free = net.with_coupling(0.0)
    traj = simulate(free, 20000 + 8000, seed=1).phases
    pf = assemble(free, CFG, seed=0)
    train_parallel(pf, traj[:20000])
    synchronize(pf, traj[19900:20000])
    pred = predict_parallel(pf, 8000)
    e = nrmse_series(encode_oscillator_state(traj[20000:]), encode_oscillator_state(pred))
    assert valid_time(e, 0.1, 0.05, lam).lyapunov_times > 10
