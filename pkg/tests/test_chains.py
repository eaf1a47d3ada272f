from __future__ import annotations

import json

import numpy as np
import pytest
from hypothesis import given, strategies as st

from otmkit.chains import (
    CostSpec,
    LabeledGraph,
    cost_matrix,
    graph_to_chain,
    load_chain_json,
    load_graph_tsv,
    save_chain_json,
    stationary_distribution,
    structure_check,
    validate_chain,
)
from otmkit.errors import (
    DimensionMismatch,
    InputError,
    LabelDimensionMismatch,
    MissingLabels,
    NegativeEntry,
    NonUniqueStationary,
    RowSumViolation,
    StationaryUnavailable,
)
from otmkit.instances import make_rng, random_chain, random_kernel


class TestValidate:
    def test_single_state(self):
        c = validate_chain([[1.0]], [1.0])
        assert c.n == 1

    def test_doubly_stochastic(self):
        c = validate_chain([[0.5, 0.5], [0.5, 0.5]], [1, 0])
        assert np.array_equal(c.initial, [1.0, 0.0])

    def test_row_sum_violation(self):
        with pytest.raises(RowSumViolation):
            validate_chain([[0.6, 0.6], [0.5, 0.5]], [0.5, 0.5])

    def test_negative(self):
        with pytest.raises(NegativeEntry):
            validate_chain([[1.5, -0.5], [0.5, 0.5]], [0.5, 0.5])

    def test_dimension(self):
        with pytest.raises(DimensionMismatch):
            validate_chain([[1.0, 0.0], [0.0, 1.0]], [1.0])
        with pytest.raises(DimensionMismatch):
            validate_chain([[1.0, 0.0]], [1.0])

    def test_small_deviation_renormalized_and_recorded(self):
        c = validate_chain([[0.5, 0.5 + 4e-10], [0.3, 0.7]], [0.5, 0.5])
        assert c.renormalized_rows == (0,)
        assert abs(c.kernel[0].sum() - 1.0) <= 1e-12

    def test_immutable(self):
        c = validate_chain([[1.0]], [1.0])
        with pytest.raises(ValueError):
            c.kernel[0, 0] = 0.5

    def test_labels_must_share_dimension(self):
        with pytest.raises(LabelDimensionMismatch):
            validate_chain([[1.0]], [1.0], labels=[[0.0], [1.0]])


class TestGraphs:
    def test_directed_two_cycle(self):
        c = graph_to_chain(LabeledGraph(2, ((0, 1), (1, 0))))
        assert np.array_equal(c.kernel, [[0, 1], [1, 0]])
        assert np.array_equal(c.initial, [0.5, 0.5])

    def test_dangling_self_loop(self):
        c = graph_to_chain(LabeledGraph(3, ((0, 1), (1, 0))))
        assert np.array_equal(c.kernel[2], [0, 0, 1])

    def test_dangling_uniform_jump(self):
        c = graph_to_chain(LabeledGraph(2, ((0, 1),)), dangling_policy="uniform_jump")
        assert np.allclose(c.kernel[1], [0.5, 0.5])

    def test_undirected_triangle(self):
        g = LabeledGraph.undirected(3, [(0, 1), (1, 2), (2, 0)])
        c = graph_to_chain(g)
        assert np.allclose(c.kernel, (1 - np.eye(3)) / 2)

    def test_weights_and_laziness(self):
        c = graph_to_chain(LabeledGraph(2, ((0, 1, 3.0), (0, 0, 1.0), (1, 0))), lazy_prob=0.2)
        assert np.allclose(c.kernel[0], [0.2 + 0.8 * 0.25, 0.8 * 0.75])
        assert np.allclose(c.kernel[1], [0.8, 0.2])

    def test_stationary_initial(self):
        c = graph_to_chain(LabeledGraph(2, ((0, 1), (1, 0))), initial_policy="stationary")
        assert np.allclose(c.initial, [0.5, 0.5])

    def test_stationary_unavailable(self):
        with pytest.raises(StationaryUnavailable):
            graph_to_chain(LabeledGraph(2, ()), initial_policy="stationary")

    def test_bad_edges(self):
        with pytest.raises(InputError):
            LabeledGraph(2, ((0, 2),))
        with pytest.raises(InputError):
            LabeledGraph(2, ((0, 1, 0.0),))

    @given(st.integers(0, 10_000), st.integers(1, 7), st.floats(0, 0.9))
    def test_output_always_valid(self, seed, n, lazy):
        rng = make_rng(seed)
        edges = tuple((int(a), int(b), float(w)) for a, b, w in
                      zip(rng.integers(0, n, 2 * n), rng.integers(0, n, 2 * n), rng.random(2 * n) + 0.1))
        c = graph_to_chain(LabeledGraph(n, edges), lazy_prob=lazy)
        again = validate_chain(c.kernel, c.initial)
        assert np.allclose(again.kernel, c.kernel, atol=1e-15, rtol=0)
        assert np.all(np.abs(c.kernel.sum(axis=1) - 1) <= 1e-12)


class TestCost:
    def test_euclidean_1d(self):
        X = validate_chain(np.eye(2), [0.5, 0.5], [[0], [1]])
        assert np.array_equal(cost_matrix(X, X, CostSpec("euclidean")), [[0, 1], [1, 0]])

    def test_hamming(self):
        X = validate_chain([[1.0]], [1.0], [[0, 1]])
        Y = validate_chain([[1.0]], [1.0], [[1, 1]])
        assert np.array_equal(cost_matrix(X, Y, CostSpec("hamming")), [[1]])

    def test_manhattan_and_scale(self):
        X = validate_chain([[1.0]], [1.0], [[0, 0]])
        Y = validate_chain([[1.0]], [1.0], [[1, 2]])
        assert cost_matrix(X, Y, CostSpec("manhattan", 2.0))[0, 0] == 6.0

    def test_discrete_shared_space_without_labels(self):
        X = validate_chain(np.eye(3), np.ones(3) / 3)
        assert np.array_equal(cost_matrix(X, X, CostSpec("discrete")), 1 - np.eye(3))

    def test_missing_labels(self):
        X = validate_chain(np.eye(2), [0.5, 0.5])
        with pytest.raises(MissingLabels):
            cost_matrix(X, X, CostSpec("euclidean"))

    def test_label_dimension_mismatch(self):
        X = validate_chain([[1.0]], [1.0], [[0, 1]])
        Y = validate_chain([[1.0]], [1.0], [[1]])
        with pytest.raises(LabelDimensionMismatch):
            cost_matrix(X, Y)

    def test_bad_spec(self):
        with pytest.raises(InputError):
            CostSpec("cosine")
        with pytest.raises(InputError):
            CostSpec("euclidean", 0.0)

    @given(st.integers(0, 10_000), st.sampled_from(["euclidean", "manhattan", "hamming", "discrete"]))
    def test_swap_is_transpose(self, seed, metric):
        rng = make_rng(seed)
        X = random_chain(rng, 4, labels=rng.integers(0, 3, (4, 2)).astype(float))
        Y = random_chain(rng, 3, labels=rng.integers(0, 3, (3, 2)).astype(float))
        spec = CostSpec(metric)
        assert np.array_equal(cost_matrix(X, Y, spec), cost_matrix(Y, X, spec).T)

    def test_identical_labels_zero_diagonal(self, rng):
        X = random_chain(rng, 5, labels=rng.random((5, 3)))
        assert np.all(np.diag(cost_matrix(X, X)) == 0)


class TestStationary:
    def test_two_cycle(self):
        assert np.allclose(stationary_distribution(validate_chain([[0, 1], [1, 0]], [1, 0])), [0.5, 0.5])

    def test_doubly_stochastic(self):
        mu = stationary_distribution(validate_chain([[0.5, 0.5], [0.5, 0.5]], [1, 0]))
        assert np.allclose(mu, [0.5, 0.5])

    def test_hand_solved(self):
        # balance: 0.1 mu0 = 0.5 mu1  ->  mu = (5/6, 1/6)
        mu = stationary_distribution(validate_chain([[0.9, 0.1], [0.5, 0.5]], [1, 0]))
        assert np.allclose(mu, [5 / 6, 1 / 6], atol=1e-14)

    def test_reducible_refused(self):
        with pytest.raises(NonUniqueStationary):
            stationary_distribution(validate_chain(np.eye(2), [0.5, 0.5]))

    @given(st.integers(0, 10_000), st.integers(1, 8))
    def test_fixed_point_reproduced(self, seed, n):
        rng = make_rng(seed)
        K = random_kernel(rng, n, floor=0.01)
        mu = stationary_distribution(validate_chain(K, np.ones(n) / n))
        assert np.abs(mu @ K - mu).sum() <= 1e-10
        again = stationary_distribution(validate_chain(K, mu))
        assert np.abs(again - mu).max() <= 1e-10


class TestStructure:
    def test_two_cycle_periodic(self):
        r = structure_check(validate_chain([[0, 1], [1, 0]], [1, 0]))
        assert r.irreducible and not r.aperiodic and r.period == 2

    def test_full_support(self):
        r = structure_check(validate_chain([[0.5, 0.5], [0.5, 0.5]], [1, 0]))
        assert r.irreducible and r.aperiodic and r.max_out_degree == 2

    def test_reducible(self):
        r = structure_check(validate_chain(np.eye(2), [0.5, 0.5]))
        assert not r.irreducible
        assert r.dangling == (0, 1)

    def test_three_cycle_with_chord(self):
        # cycles of length 3 and 2 -> gcd 1
        K = [[0, 0.5, 0.5], [0, 0, 1], [1, 0, 0]]
        r = structure_check(validate_chain(K, [1, 0, 0]))
        assert r.irreducible and r.aperiodic

    @given(st.integers(0, 10_000), st.integers(1, 9), st.integers(1, 4))
    def test_degrees_are_support_counts(self, seed, n, deg):
        rng = make_rng(seed)
        K = random_kernel(rng, n, degree=min(deg, n))
        r = structure_check(validate_chain(K, np.ones(n) / n))
        assert r.support_sizes == tuple(int(s) for s in (K > 0).sum(axis=1))
        assert r.max_out_degree == max(r.support_sizes)
        assert min(r.support_sizes) >= 1


class TestFiles:
    def test_chain_roundtrip(self, tmp_path, rng):
        c = random_chain(rng, 4, labels=rng.random((4, 2)))
        save_chain_json(c, tmp_path / "c.json")
        back = load_chain_json(tmp_path / "c.json")
        assert np.array_equal(back.kernel, c.kernel)
        assert np.array_equal(back.labels, c.labels)

    def test_chain_file_tolerates_rounding(self, tmp_path):
        (tmp_path / "c.json").write_text(json.dumps({"kernel": [[0.3333333333, 0.6666666667]] * 2,
                                                     "initial": [0.5, 0.5]}))
        c = load_chain_json(tmp_path / "c.json")
        assert np.allclose(c.kernel.sum(axis=1), 1, atol=1e-15)

    def test_graph_tsv(self, tmp_path):
        (tmp_path / "g.tsv").write_text("# comment\n0\t1\n1\t2\t2.5\n2\t0\n")
        (tmp_path / "g.labels.json").write_text(json.dumps({"labels": [[0], [1], [2]]}))
        g = load_graph_tsv(tmp_path / "g.tsv", tmp_path / "g.labels.json")
        assert g.node_count == 3 and g.edges[1] == (1, 2, 2.5)
        assert g.labels == ((0.0,), (1.0,), (2.0,))
