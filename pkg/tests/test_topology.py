from itertools import combinations

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from conftest import B_PATH3
from icd_sim.topology import (ClientLinkSchedule, ConsensusMatrixError, DisconnectedGraph, KappaTooLarge,
                              ServerGraph, build_doubly_stochastic, check_delta_connectivity, check_scrambling,
                              consensus_from_matrix, scrambling_coefficient, validate_consensus_matrix)

STAR4 = np.array([[.4, .2, .2, .2], [.2, .8, 0, 0], [.2, 0, .8, 0], [.2, 0, 0, .8]])
CYCLE4 = np.array([[.6, .2, 0, .2], [.2, .6, .2, 0], [0, .2, .6, .2], [.2, 0, .2, .6]])
COMPLETE4 = np.full((4, 4), 0.2) + 0.2 * np.eye(4)
PATH4_PRINTED = np.array([[.8, .2, 0, 0], [.2, .6, .2, .2], [0, .2, .6, .2], [0, 0, .2, .8]])
PATH4 = np.array([[.8, .2, 0, 0], [.2, .6, .2, 0], [0, .2, .6, .2], [0, 0, .2, .8]])


def test_path3_matches_printed():
    assert np.allclose(build_doubly_stochastic(ServerGraph.path(3), 0.2).B, B_PATH3, atol=1e-15)


def test_complete3_uniform():
    assert np.allclose(build_doubly_stochastic(ServerGraph.complete(3), 1 / 3).B, 1 / 3, atol=1e-15)


@pytest.mark.parametrize("graph,expected", [
    (ServerGraph.star(4, hub=0), STAR4),
    (ServerGraph.cycle(4), CYCLE4),
    (ServerGraph.complete(4), COMPLETE4),
    (ServerGraph.path(4), PATH4),
])
def test_four_server_matrices(graph, expected):
    assert np.allclose(build_doubly_stochastic(graph, 0.2).B, expected, atol=1e-15)


def test_printed_path4_is_not_stochastic():
    with pytest.raises(ConsensusMatrixError, match="row-stochastic rule violated: row 2 sums to 1.2"):
        validate_consensus_matrix(PATH4_PRINTED)


def test_kappa_too_large():
    with pytest.raises(KappaTooLarge):
        build_doubly_stochastic(ServerGraph.star(4), 0.5)


def test_disconnected_graph():
    with pytest.raises(DisconnectedGraph):
        ServerGraph(4, frozenset({(0, 1), (2, 3)}), "custom")


def test_scrambling_values():
    assert scrambling_coefficient(np.eye(3)) == 1.0
    assert scrambling_coefficient(np.full((3, 3), 1 / 3)) == pytest.approx(0.0, abs=1e-15)
    assert scrambling_coefficient(B_PATH3) == pytest.approx(0.8)
    assert scrambling_coefficient(CYCLE4) == pytest.approx(0.6)
    assert scrambling_coefficient(STAR4) == pytest.approx(0.8)
    assert scrambling_coefficient(COMPLETE4) == pytest.approx(0.2)


def test_scrambling_checks():
    assert check_scrambling(B_PATH3)
    assert not check_scrambling(PATH4)
    assert check_scrambling(COMPLETE4)
    # the four-server cycle also has overlapping rows for every pair
    assert check_scrambling(CYCLE4)


def test_from_matrix_infers_graph():
    cm = consensus_from_matrix(B_PATH3)
    assert cm.graph.edges == frozenset({(0, 1), (1, 2)})


def test_delta_connectivity():
    assert check_delta_connectivity(ClientLinkSchedule.full(2, 3), 5)
    steps = [[(0, 0), (0, 1)], [(0, 0)], [(0, 0)], [(0, 0), (0, 1)]]
    assert not check_delta_connectivity(ClientLinkSchedule.from_pairs(1, 2, steps), 2)
    assert check_delta_connectivity(ClientLinkSchedule.from_pairs(1, 2, steps), 3)
    rr = ClientLinkSchedule.from_pairs(2, 4, [[(t % 2, t)] for t in range(4)])
    assert check_delta_connectivity(rr, 4)
    assert not check_delta_connectivity(rr, 3)


graphs = st.tuples(st.sampled_from(["path", "cycle", "star", "complete"]), st.integers(2, 8))


@settings(max_examples=200)
@given(graphs, st.floats(0.01, 1.0))
def test_builder_properties(g, frac):
    kind, S = g
    graph = ServerGraph.from_kind(kind, S)
    kappa = frac / graph.degrees().max()
    B = build_doubly_stochastic(graph, kappa).B
    assert np.all(np.abs(B.sum(axis=0) - 1) <= 1e-12)
    assert np.all(np.abs(B.sum(axis=1) - 1) <= 1e-12)
    A = graph.adjacency()
    assert np.all(B[A > 0] >= kappa - 1e-15)
    assert np.linalg.svd(B, compute_uv=False).max() <= 1 + 1e-10


@settings(max_examples=200)
@given(graphs, st.floats(0.05, 1.0), st.integers(0, 2**31 - 1))
def test_consensus_nonexpansive_and_contracting(g, frac, seed):
    kind, S = g
    graph = ServerGraph.from_kind(kind, S)
    B = build_doubly_stochastic(graph, frac / graph.degrees().max()).B
    rng = np.random.default_rng(seed)
    z, y = rng.normal(size=(S, 3)), rng.normal(size=3)
    out = B @ z
    assert np.sum((out - y) ** 2) <= np.sum((z - y) ** 2) + 1e-9
    nu = scrambling_coefficient(B)
    pw = lambda x: max(np.linalg.norm(x[i] - x[j]) for i, j in combinations(range(S), 2))
    assert pw(out) <= nu * pw(z) + 1e-12
