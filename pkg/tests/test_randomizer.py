import numpy as np
import pytest
import scipy.stats
from hypothesis import given, settings
from hypothesis import strategies as st

from netexp.errors import ConditionalDrawError, DesignError
from netexp.hashing import hash_uniform
from netexp.netgraph import ClusterAssignment, Graph, generate_disjoint_cliques
from netexp.randomizer import (
    ClusterBernoulli,
    CompleteRandomization,
    EdgeIid,
    GraphCluster,
    IidBernoulli,
    RecipientClustered,
    SenderClustered,
    TwoStageUniform,
    conditional_draw,
    conditional_draw_batch,
    design_description,
    design_from_json,
    design_to_json,
    draw,
    draw_batch,
    parse_design_description,
    replication_salts,
)


def _line_graph(n):
    return Graph(n, [(i, i + 1) for i in range(n - 1)])


def _clusters(labels, k):
    return ClusterAssignment(np.array(labels), k=k)


class TestDesignValidation:
    def test_probability_bounds(self):
        with pytest.raises(DesignError):
            IidBernoulli(1.5)
        with pytest.raises(DesignError):
            EdgeIid(-0.1)

    def test_negative_n1(self):
        with pytest.raises(DesignError):
            CompleteRandomization(-1)

    def test_n1_checked_against_graph(self):
        with pytest.raises(DesignError, match="exceeds"):
            draw(CompleteRandomization(5), _line_graph(3), "s")

    def test_cluster_size_mismatch(self):
        design = ClusterBernoulli(_clusters([0, 1], 2), p=0.5)
        with pytest.raises(DesignError, match="cover"):
            draw(design, _line_graph(3), "s")


class TestDraw:
    def test_iid_p0_all_zero(self):
        tv = draw(IidBernoulli(0.0), _line_graph(10), "s")
        assert tv.z.sum() == 0

    def test_iid_p1_all_one(self):
        tv = draw(IidBernoulli(1.0), _line_graph(10), "s")
        assert tv.z.sum() == 10

    def test_iid_matches_hash_rule(self):
        g = _line_graph(20)
        tv = draw(IidBernoulli(0.3), g, "exp")
        for j in range(20):
            assert tv.z[j] == (hash_uniform("exp", str(j)) < 0.3)

    def test_iid_deterministic(self):
        g = _line_graph(50)
        a = draw(IidBernoulli(0.5), g, "s")
        b = draw(IidBernoulli(0.5), g, "s")
        np.testing.assert_array_equal(a.z, b.z)

    def test_iid_marginal(self):
        g = Graph(100_000, [])
        frac = draw(IidBernoulli(0.5), g, "m").z.mean()
        assert abs(frac - 0.5) <= 4 * np.sqrt(0.25 / 100_000)

    def test_complete_counts(self):
        g = _line_graph(30)
        tv = draw(CompleteRandomization(7), g, "s")
        assert tv.z.sum() == 7

    def test_complete_rank_by_hash(self):
        g = _line_graph(12)
        tv = draw(CompleteRandomization(4), g, "cr")
        h = np.array([hash_uniform("cr", str(j)) for j in range(12)])
        expect = np.zeros(12, dtype=np.uint8)
        expect[np.argsort(h)[:4]] = 1
        np.testing.assert_array_equal(tv.z, expect)

    def test_cluster_all_or_nothing(self):
        g = generate_disjoint_cliques(2, 4)
        design = ClusterBernoulli(_clusters(g.cluster_labels, 2), p=0.5)
        for r in range(20):
            tv = draw(design, g, f"s#{r}")
            for c in range(2):
                block = tv.z[c * 4:(c + 1) * 4]
                assert block.min() == block.max()

    def test_cluster_matches_hash_rule(self):
        g = generate_disjoint_cliques(3, 2)
        design = ClusterBernoulli(_clusters(g.cluster_labels, 3), p=0.4)
        tv = draw(design, g, "cb")
        for c in range(3):
            want = hash_uniform("cb", f"c{c}") < 0.4
            assert tv.z[2 * c] == want and tv.z[2 * c + 1] == want

    def test_two_stage_unit_rule(self):
        g = generate_disjoint_cliques(2, 3)
        design = TwoStageUniform(_clusters(g.cluster_labels, 2))
        tv = draw(design, g, "ts")
        for j in range(6):
            share = hash_uniform("ts", f"c{j // 3}")
            assert tv.z[j] == (hash_uniform("ts.u", str(j)) < share)

    def test_graph_cluster_all_or_nothing_per_cluster(self):
        g = generate_disjoint_cliques(4, 5)
        tv = draw(GraphCluster(k=4, p=0.5, partition_seed=1), g, "gc")
        for c in range(4):
            block = tv.z[c * 5:(c + 1) * 5]
            assert block.min() == block.max()

    def test_batch_rows_match_scalar(self):
        g = generate_disjoint_cliques(3, 4)
        designs = [
            IidBernoulli(0.3),
            CompleteRandomization(5),
            ClusterBernoulli(_clusters(g.cluster_labels, 3), 0.5),
            TwoStageUniform(_clusters(g.cluster_labels, 3)),
            GraphCluster(k=3, p=0.5, partition_seed=2),
        ]
        salts = replication_salts("b", 5)
        for design in designs:
            Z = draw_batch(design, g, salts)
            for r, salt in enumerate(salts):
                np.testing.assert_array_equal(Z[r], draw(design, g, salt).z)


class TestEdgeDraw:
    def test_edge_iid_rule(self):
        g = Graph(4, [(0, 1), (1, 2), (2, 3)], directed=True)
        et = draw(EdgeIid(0.5), g, "e")
        for idx, (s, d, _) in enumerate(g.edges):
            assert et.w[idx] == (hash_uniform("e", f"{s}-{d}") < 0.5)
        assert et[(0, 1)] == int(et.w[0])

    def test_sender_shares_out_edges(self):
        g = Graph(4, [(0, 1), (0, 2), (0, 3), (1, 2)], directed=True)
        et = draw(SenderClustered(0.5), g, "snd")
        assert et.w[0] == et.w[1] == et.w[2]

    def test_recipient_star_all_equal(self):
        g = Graph(5, [(j, 0) for j in range(1, 5)], directed=True)
        et = draw(RecipientClustered(0.5), g, "rcp")
        assert et.w.min() == et.w.max()

    def test_edge_design_requires_edges(self):
        with pytest.raises(DesignError, match="no edges"):
            draw(EdgeIid(0.5), Graph(3, []), "e")

    def test_sender_recipient_invariant_random_graph(self):
        edges = [(i, j) for i in range(8) for j in range(8)
                 if i != j and hash_uniform("topo", f"{i}.{j}") < 0.3]
        g = Graph(8, edges, directed=True)
        snd = draw(SenderClustered(0.5), g, "w1").as_dict()
        rcp = draw(RecipientClustered(0.5), g, "w2").as_dict()
        for i in range(8):
            outs = {w for (s, d), w in snd.items() if s == i}
            ins = {w for (s, d), w in rcp.items() if d == i}
            assert len(outs) <= 1 and len(ins) <= 1


class TestConditionalDraw:
    def test_iid_fixed_respected_and_marginal(self):
        g = _line_graph(6)
        design = IidBernoulli(0.5)
        hits = np.zeros(6)
        R = 4000
        for r in range(R):
            tv = conditional_draw(design, g, f"c#{r}", {3: 1})
            assert tv.z[3] == 1
            hits += tv.z
        for j in (0, 1, 2, 4, 5):
            assert abs(hits[j] / R - 0.5) < 4 * np.sqrt(0.25 / R)

    def test_complete_forced(self):
        g = _line_graph(5)
        for r in range(10):
            tv = conditional_draw(CompleteRandomization(1), g, f"f#{r}", {0: 1})
            assert tv.z[0] == 1 and tv.z.sum() == 1

    def test_complete_infeasible(self):
        g = _line_graph(4)
        with pytest.raises(ConditionalDrawError):
            conditional_draw(CompleteRandomization(1), g, "s", {0: 1, 1: 1})

    def test_complete_counts_preserved(self):
        g = _line_graph(10)
        for r in range(50):
            tv = conditional_draw(CompleteRandomization(4), g, f"cc#{r}", {0: 0, 1: 1})
            assert tv.z.sum() == 4 and tv.z[0] == 0 and tv.z[1] == 1

    def test_cluster_inconsistent_fixed(self):
        g = generate_disjoint_cliques(3, 2)
        design = ClusterBernoulli(_clusters(g.cluster_labels, 3), 0.5)
        with pytest.raises(ConditionalDrawError, match="conflicting"):
            conditional_draw(design, g, "s", {0: 1, 1: 0})

    def test_cluster_rejection_matches_enumeration(self):
        # 3 clusters of 2, p=0.5, cluster 0 fixed treated: the other two
        # clusters are iid fair coins, 4 equally likely patterns
        g = generate_disjoint_cliques(3, 2)
        design = ClusterBernoulli(_clusters(g.cluster_labels, 3), 0.5)
        counts = {pat: 0 for pat in range(4)}
        R = 10_000
        Z = conditional_draw_batch(design, g, replication_salts("enum", R), {0: 1})
        assert (Z[:, 0] == 1).all() and (Z[:, 1] == 1).all()
        pats = 2 * Z[:, 2] + Z[:, 4]
        for pat in range(4):
            counts[pat] = int((pats == pat).sum())
        chi = scipy.stats.chisquare(list(counts.values()))
        assert chi.pvalue > 0.001

    def test_two_stage_rejection_respects_fixed(self):
        g = generate_disjoint_cliques(2, 3)
        design = TwoStageUniform(_clusters(g.cluster_labels, 2))
        for r in range(20):
            tv = conditional_draw(design, g, f"ts#{r}", {0: 1, 5: 0})
            assert tv.z[0] == 1 and tv.z[5] == 0

    def test_budget_exhaustion_reports_rate(self):
        g = generate_disjoint_cliques(1, 2)
        design = ClusterBernoulli(_clusters(g.cluster_labels, 1), p=1.0)
        with pytest.raises(ConditionalDrawError, match="acceptance rate"):
            conditional_draw(design, g, "s", {0: 0}, max_attempts=50)

    def test_batch_matches_scalar(self):
        g = generate_disjoint_cliques(3, 2)
        design = ClusterBernoulli(_clusters(g.cluster_labels, 3), 0.5)
        salts = replication_salts("cb", 6)
        Z = conditional_draw_batch(design, g, salts, {0: 1})
        for r, salt in enumerate(salts):
            np.testing.assert_array_equal(Z[r], conditional_draw(design, g, salt, {0: 1}).z)

    def test_bad_fixed_values(self):
        g = _line_graph(4)
        with pytest.raises(ConditionalDrawError):
            conditional_draw(IidBernoulli(0.5), g, "s", {0: 2})
        with pytest.raises(ConditionalDrawError):
            conditional_draw(IidBernoulli(0.5), g, "s", {9: 1})


def _random_clusters(draw_fn):
    sizes = draw_fn(st.lists(st.integers(1, 4), min_size=1, max_size=5))
    labels = np.repeat(np.arange(len(sizes)), sizes)
    return ClusterAssignment(labels, k=len(sizes))


design_strategy = st.one_of(
    st.floats(0, 1).map(IidBernoulli),
    st.integers(0, 40).map(CompleteRandomization),
    st.builds(
        lambda sizes, p: ClusterBernoulli(
            ClusterAssignment(np.repeat(np.arange(len(sizes)), sizes), k=len(sizes)), p
        ),
        st.lists(st.integers(1, 4), min_size=1, max_size=5),
        st.floats(0, 1),
    ),
    st.builds(
        lambda sizes: TwoStageUniform(
            ClusterAssignment(np.repeat(np.arange(len(sizes)), sizes), k=len(sizes))
        ),
        st.lists(st.integers(1, 4), min_size=1, max_size=5),
    ),
    st.builds(GraphCluster, k=st.integers(1, 10), p=st.floats(0, 1),
              partition_seed=st.integers(0, 99)),
    st.floats(0, 1).map(EdgeIid),
    st.floats(0, 1).map(SenderClustered),
    st.floats(0, 1).map(RecipientClustered),
)


class TestDescriptions:
    def test_iid_text(self):
        assert design_description(IidBernoulli(0.5)) == "iid_bernoulli p=0.5"

    def test_two_stage_mentions_cluster_count(self):
        design = TwoStageUniform(_clusters([0, 0, 1, 2, 3, 4], 5))
        assert "k=5" in design_description(design)

    @settings(max_examples=80, deadline=None)
    @given(design_strategy)
    def test_description_round_trip(self, design):
        assert parse_design_description(design_description(design)) == design

    @settings(max_examples=80, deadline=None)
    @given(design_strategy)
    def test_json_round_trip(self, design):
        assert design_from_json(design_to_json(design)) == design

    def test_parse_rejects_unknown(self):
        with pytest.raises(DesignError):
            parse_design_description("mystery p=0.5")
        with pytest.raises(DesignError):
            design_from_json({"type": "mystery"})

    def test_parse_rejects_bad_params(self):
        with pytest.raises(DesignError):
            parse_design_description("iid_bernoulli")
        with pytest.raises(DesignError):
            design_from_json({"type": "iid_bernoulli"})


class TestReplicationSalts:
    def test_shape_and_content(self):
        assert replication_salts("s", 3) == ["s#0", "s#1", "s#2"]
        assert replication_salts("s", 2, start=5) == ["s#5", "s#6"]

    def test_distinct_replications_differ(self):
        g = _line_graph(40)
        Z = draw_batch(IidBernoulli(0.5), g, replication_salts("r", 2))
        assert not np.array_equal(Z[0], Z[1])
