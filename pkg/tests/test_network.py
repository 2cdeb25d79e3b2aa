import itertools
import json

import networkx as nx
import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from netforecast.errors import InvalidArgumentError
from netforecast.network import (AssortativityParams, OscillatorNetwork, assortativity_score,
                                 build_assortative_network, network_from_adjacency,
                                 sample_frequencies, standard_network)


def exact_matching_distribution(freqs, degree, delta, gamma):
    """Enumerate the rejection-sampling chain exactly.

    State = (frozenset of edges, remaining-degree tuple). From each state the
    next accepted link (i, j) has probability proportional to
    (1 / n_unsat) (1 / |cand(i)|) p_ij. Deadlocked states trigger a restart,
    so the final distribution is conditioned on success.
    """
    n = len(freqs)

    def p(i, j):
        d = abs(freqs[i] - freqs[j])
        return delta ** gamma / (delta ** gamma + d ** gamma)

    final = {}
    deadlock = [0.0]

    def walk(edges, remaining, prob):
        unsat = [i for i in range(n) if remaining[i] > 0]
        if not unsat:
            final[edges] = final.get(edges, 0.0) + prob
            return
        cand = {i: [j for j in unsat if j != i and frozenset((i, j)) not in edges] for i in unsat}
        if any(not c for c in cand.values()):
            deadlock[0] += prob
            return
        weights = {}
        for i in unsat:
            for j in cand[i]:
                key = frozenset((i, j))
                weights[key] = weights.get(key, 0.0) + p(i, j) / (len(unsat) * len(cand[i]))
        total = sum(weights.values())
        for key, w in weights.items():
            i, j = tuple(key)
            rem = list(remaining)
            rem[i] -= 1
            rem[j] -= 1
            walk(edges | {key}, tuple(rem), prob * w / total)

    walk(frozenset(), tuple([degree] * n), 1.0)
    ok = 1.0 - deadlock[0]
    return {e: v / ok for e, v in final.items()}


def as_key(net):
    return frozenset(frozenset(map(int, e)) for e in net.edges)


def test_sample_frequencies_range_and_determinism():
    w = sample_frequencies(50, seed=3)
    assert w.shape == (50,)
    assert np.all(w >= -np.pi / 2) and np.all(w <= np.pi / 2)
    np.testing.assert_array_equal(w, sample_frequencies(50, seed=3))
    assert sample_frequencies(1, seed=0).shape == (1,)
    with pytest.raises(InvalidArgumentError):
        sample_frequencies(0)


def test_standard_network_is_regular_and_assortative():
    net = standard_network(50, seed=1)
    a = net.adjacency
    assert np.array_equal(a, a.T)
    assert np.all(np.diag(a) == 0)
    assert set(np.unique(a)) <= {0, 1}
    assert np.all(a.sum(axis=1) == 3)
    w = net.frequencies
    all_pairs = np.abs(w[:, None] - w[None, :])[np.triu_indices(50, 1)].mean()
    assert assortativity_score(net) < all_pairs


def test_four_node_matching_probability_matches_enumeration():
    freqs = (-1.0, -0.9, 0.9, 1.0)
    exact = exact_matching_distribution(freqs, 1, 0.8, 20.0)
    target = frozenset({frozenset((0, 1)), frozenset((2, 3))})
    assert exact[target] >= 0.99
    hits = sum(as_key(build_assortative_network(freqs, AssortativityParams(0.8, 20.0, 1), seed=s)) == target
               for s in range(200))
    assert hits >= 195


def test_sampler_frequencies_match_exact_chain():
    # Milder gamma so every matching has visible probability.
    freqs = (-1.0, -0.5, 0.2, 0.4, 0.9, 1.3)
    params = AssortativityParams(0.8, 2.0, 1)
    exact = exact_matching_distribution(freqs, 1, 0.8, 2.0)
    n = 3000
    counts = {}
    for s in range(n):
        k = as_key(build_assortative_network(freqs, params, seed=s))
        counts[k] = counts.get(k, 0) + 1
    for key, pr in exact.items():
        sd = np.sqrt(pr * (1 - pr) / n)
        assert abs(counts.get(key, 0) / n - pr) < 4 * sd + 1e-3


def test_degree_two_chain_with_restarts():
    freqs = (-0.3, 0.0, 0.2, 0.5, 0.6)
    exact = exact_matching_distribution(freqs, 2, 0.8, 5.0)
    params = AssortativityParams(0.8, 5.0, 2)
    n = 2000
    counts = {}
    for s in range(n):
        net = build_assortative_network(freqs, params, seed=s)
        assert np.all(net.degrees() == 2)
        counts[as_key(net)] = counts.get(as_key(net), 0) + 1
    for key, pr in exact.items():
        sd = np.sqrt(pr * (1 - pr) / n)
        assert abs(counts.get(key, 0) / n - pr) < 4 * sd + 1e-3


def test_gamma_zero_looks_like_uniform_regular_graph():
    scores0, scores_rr = [], []
    for s in range(100):
        w = sample_frequencies(50, seed=1000 + s)
        scores0.append(assortativity_score(build_assortative_network(w, AssortativityParams(0.8, 0.0, 3), seed=s)))
        g = nx.random_regular_graph(3, 50, seed=s)
        scores_rr.append(assortativity_score(OscillatorNetwork(w, np.array(g.edges()))))
    diff = np.mean(scores0) - np.mean(scores_rr)
    se = np.sqrt(np.var(scores0, ddof=1) / 100 + np.var(scores_rr, ddof=1) / 100)
    assert abs(diff) < 3 * se


def test_assortativity_decreases_with_gamma():
    means = []
    for gamma in (0.0, 5.0, 20.0):
        vals = []
        for s in range(100):
            w = sample_frequencies(50, seed=5000 + s)
            vals.append(assortativity_score(build_assortative_network(w, AssortativityParams(0.8, gamma, 3), seed=s)))
        means.append(np.mean(vals))
    assert means[0] > means[1] > means[2]


def test_assortativity_score_basics():
    assert assortativity_score(OscillatorNetwork([0.1, 0.4], [[0, 1]])) == pytest.approx(0.3)
    net = OscillatorNetwork(np.full(4, 0.7), [[0, 1], [2, 3]])
    assert assortativity_score(net) == 0.0
    with pytest.raises(InvalidArgumentError):
        assortativity_score(OscillatorNetwork([0.0, 1.0], np.empty((0, 2))))


def test_infeasible_degree_rejected():
    with pytest.raises(InvalidArgumentError):
        build_assortative_network(np.zeros(5), AssortativityParams(degree=3))
    with pytest.raises(InvalidArgumentError):
        build_assortative_network(np.zeros(4), AssortativityParams(degree=4))
    with pytest.raises(InvalidArgumentError):
        AssortativityParams(delta=0.0)


def test_determinism_for_fixed_seed():
    a = standard_network(30, seed=7)
    b = standard_network(30, seed=7)
    np.testing.assert_array_equal(a.edges, b.edges)
    np.testing.assert_array_equal(a.frequencies, b.frequencies)


@settings(max_examples=25, deadline=None)
@given(n=st.integers(4, 40), degree=st.integers(1, 5), seed=st.integers(0, 2 ** 32 - 1),
       gamma=st.floats(0.0, 30.0))
def test_generated_graphs_are_regular(n, degree, seed, gamma):
    if degree >= n or (n * degree) % 2:
        return
    w = sample_frequencies(n, seed=seed)
    net = build_assortative_network(w, AssortativityParams(0.8, gamma, degree), seed=seed)
    a = net.adjacency
    assert np.array_equal(a, a.T)
    assert np.all(np.diag(a) == 0)
    assert np.all(a.sum(axis=1) == degree)


def test_json_round_trip(tmp_path):
    net = standard_network(12, seed=2)
    path = tmp_path / "net.json"
    net.save(path)
    doc = json.loads(path.read_text())
    assert set(doc) >= {"n_nodes", "degree", "coupling", "frequencies", "edges"}
    assert all(i < j for i, j in doc["edges"])
    back = OscillatorNetwork.load(path)
    np.testing.assert_array_equal(back.edges, net.edges)
    np.testing.assert_array_equal(back.frequencies, net.frequencies)
    assert back.degree == 3 and back.coupling == net.coupling


def test_network_from_adjacency_validates():
    a = np.array([[0, 1], [1, 0]])
    net = network_from_adjacency(a, [0.0, 1.0], threshold=0.2)
    assert net.source == "inferred" and net.threshold == 0.2
    assert net.to_dict()["threshold"] == 0.2
    with pytest.raises(InvalidArgumentError):
        network_from_adjacency(np.array([[0, 1], [0, 0]]), [0.0, 1.0])
    with pytest.raises(InvalidArgumentError):
        network_from_adjacency(np.eye(2, dtype=int), [0.0, 1.0])


def test_exact_enumeration_sums_to_one():
    dist = exact_matching_distribution((-1.0, -0.9, 0.9, 1.0), 1, 0.8, 20.0)
    assert sum(dist.values()) == pytest.approx(1.0)
    assert len(dist) == 3
    assert all(len(m) == 2 for m in dist)
    assert set(itertools.chain.from_iterable(itertools.chain.from_iterable(dist))) == {0, 1, 2, 3}
