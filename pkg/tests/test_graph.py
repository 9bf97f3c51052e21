from collections import Counter

import numpy as np
import pytest

from sevo import graph as G
from sevo.sparse import ValidationError, from_dense, to_dense


def _random_log(rng, n_users=20, n_items=15, max_len=9):
    seqs = {u: rng.integers(n_items, size=int(rng.integers(1, max_len))).tolist() for u in range(n_users)}
    return G.InteractionLog(seqs, n_items)


def test_toy_log_single_edge():
    g = G.build_from_sequences(G.InteractionLog({0: [0, 1]}, 2))
    assert g.nnz == 2
    np.testing.assert_array_equal(to_dense(g.adjacency), [[0, 1], [1, 0]])
    np.testing.assert_allclose(to_dense(g.normalized), [[0, 1], [1, 0]])


def test_adjacent_pair_counts_oracle(rng):
    log = _random_log(rng)
    counts = Counter()
    for seq in log.user_sequences.values():
        for a, b in zip(seq, seq[1:]):
            if a != b:
                counts[a, b] += 1
                counts[b, a] += 1
    expected = np.zeros((log.n_items, log.n_items))
    for (a, b), c in counts.items():
        expected[a, b] = c
    np.testing.assert_array_equal(to_dense(G.build_from_sequences(log).adjacency), expected)


def test_walk_and_distance_weighting():
    log = G.InteractionLog({0: [0, 1, 2]}, 3)
    freq = to_dense(G.build_from_sequences(log, G.SimilarityConfig(max_walk=2)).adjacency)
    dist = to_dense(G.build_from_sequences(log, G.SimilarityConfig(max_walk=2, weighting="distance")).adjacency)
    assert freq[0, 2] == 1.0 and dist[0, 2] == 0.5 and dist[0, 1] == 1.0


def test_window_slices():
    log = G.InteractionLog({0: [0, 1, 2, 3]}, 4)
    first = to_dense(G.build_from_sequences(log, G.SimilarityConfig(window=2, slice="first")).adjacency)
    last = to_dense(G.build_from_sequences(log, G.SimilarityConfig(window=2, slice="last")).adjacency)
    assert first[0, 1] == 1 and first.sum() == 2
    assert last[2, 3] == 1 and last.sum() == 2


def test_item_permutation_equivariance(rng):
    log = _random_log(rng)
    perm = rng.permutation(log.n_items)
    permuted = G.InteractionLog({u: [int(perm[i]) for i in s] for u, s in log.user_sequences.items()}, log.n_items)
    A = to_dense(G.build_from_sequences(log).adjacency)
    B = to_dense(G.build_from_sequences(permuted).adjacency)
    np.testing.assert_array_equal(B[np.ix_(perm, perm)], A)


def test_normalize_properties(rng):
    g = G.random_graph(20, rng)
    A = to_dense(g.adjacency)
    d = A.sum(axis=1)
    np.testing.assert_allclose(to_dense(g.normalized), A / np.sqrt(np.outer(d, d)), atol=1e-14)
    np.testing.assert_allclose(g.degrees, d)
    w = np.linalg.eigvalsh(to_dense(g.normalized))
    assert w[-1] == pytest.approx(1.0, abs=1e-10) and w[0] >= -1 - 1e-12


def test_isolated_nodes_get_self_loop():
    g = G.normalize(from_dense(np.array([[0, 2.0, 0], [2.0, 0, 0], [0, 0, 0]]), keep_zeros=False))
    assert list(g.isolated) == [2]
    assert to_dense(g.normalized)[2, 2] == 1.0


def test_normalize_rejects_bad_input():
    with pytest.raises(ValidationError):
        G.normalize(from_dense(np.array([[0, 1.0], [0.5, 0]])))
    with pytest.raises(ValidationError):
        G.normalize(from_dense(np.array([[0, -1.0], [-1.0, 0]])))


def test_category_graph():
    g = G.build_from_categories({0: {7}, 1: {7, 8}, 2: {8}, 3: {9}}, 5)
    A = to_dense(g.adjacency)
    assert A[0, 1] == A[1, 2] == 1 and A[0, 2] == 0
    assert set(g.isolated.tolist()) == {3, 4}


def test_knn_graph_oracle():
    teacher = np.array([[1.0, 0.0], [0.9, 0.1], [0.0, 1.0], [0.1, 0.9]])
    W = G.knn_weights(teacher, G.KnnGraphConfig(k_neighbors=1, bandwidth=0.5))
    u = teacher / np.linalg.norm(teacher, axis=1, keepdims=True)
    d01 = 2 - 2 * u[0] @ u[1]
    assert W[0, 1] == pytest.approx(2 * np.exp(-d01 / 0.5))
    assert W[0, 2] == 0 and np.allclose(W, W.T)


def test_knn_ties_prefer_lower_index():
    teacher = np.array([[1.0, 0.0], [0.0, 1.0], [0.0, 1.0], [0.0, 1.0]])
    W = G.knn_weights(teacher, G.KnnGraphConfig(k_neighbors=1))
    # node 0 is equidistant from 1, 2, 3
    assert W[0, 1] > 0 and W[0, 2] == 0 and W[0, 3] == 0


def test_graph_io_round_trip(tmp_path, rng):
    g = G.random_graph(15, rng)
    path = tmp_path / "g.txt"
    G.save_graph(path, g)
    loaded = G.load_adjacency(path)
    np.testing.assert_array_equal(to_dense(loaded), to_dense(g.adjacency))
    G.save_graph(tmp_path / "again.txt", loaded)
    assert (tmp_path / "again.txt").read_bytes() == path.read_bytes()


def test_graph_header_mismatch(tmp_path):
    path = tmp_path / "g.txt"
    path.write_text("3 2\n0 1 1.0\n")
    with pytest.raises(ValidationError):
        G.load_adjacency(path)


def test_interaction_parse_error_reports_line(tmp_path):
    path = tmp_path / "log.tsv"
    path.write_text("0\t1\t5\n0\t2\n")
    with pytest.raises(G.ParseError) as exc:
        G.read_interactions(path)
    assert exc.value.line == 2


def test_interactions_sorted_by_timestamp(tmp_path):
    path = tmp_path / "log.tsv"
    path.write_text("0\t3\t20\n0\t1\t10\n0\t2\t10\n1\t0\t1\n")
    log = G.read_interactions(path)
    assert log.user_sequences[0] == [1, 2, 3]
    G.write_interactions(tmp_path / "out.tsv", log)
    assert G.read_interactions(tmp_path / "out.tsv").user_sequences == log.user_sequences


def test_graph_stats():
    g = G.build_from_sequences(G.InteractionLog({0: [0, 1]}, 3))
    stats = G.graph_stats(g)
    assert stats["nodes"] == 3 and stats["nnz"] == 2 and stats["isolated"] == 1
    assert stats["eigen_bounds"]["max"] == pytest.approx(1.0)


def test_estimator_wrappers():
    log = G.InteractionLog({0: [0, 1, 2]}, 3)
    est = G.CooccurrenceGraph(max_walk=2).fit(log)
    assert est.graph_.nnz == 6
    assert est.get_params()["max_walk"] == 2
