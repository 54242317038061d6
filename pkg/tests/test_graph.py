"""Graph construction, rule enforcement, typing, export and diff."""

import json

import numpy as np
import pytest

from oracles import brute_deletion_sequence, check_violations
from pipegraph.graph import (
    GraphNode,
    SceneGraph,
    assign_types,
    enforce,
    export,
    graph_diff,
    graph_to_dict,
    initial_graph,
    hydraulic_ruleset,
    parse_graph_dict,
    violating_edges,
)
from pipegraph.model import ObjectClass, WorldObject


def world_object(object_id, cls, position, endpoints):
    position = np.asarray(position, dtype=float)
    cloud = position + np.array([[0.0, 0, 0], [0.01, 0, 0], [0, 0.01, 0]])
    return WorldObject(object_id, cls, cloud,
                       endpoints=[np.asarray(e, dtype=float) for e in endpoints])


def graph_of(nodes, edges):
    """nodes: list of (id, cls, position); edges: {(a, b): weight}"""
    return SceneGraph(
        nodes=[GraphNode(i, cls, np.asarray(pos, dtype=float)) for i, cls, pos in nodes],
        edges={tuple(sorted(k)): float(w) for k, w in edges.items()},
    )


class TestInitialGraph:
    def test_two_pipes_one_edge(self):
        a = world_object(0, ObjectClass.PIPE, (0, 0, 0), [(0, 0, 0), (1, 0, 0)])
        b = world_object(1, ObjectClass.PIPE, (2, 0, 0), [(1.2, 0, 0), (2.2, 0, 0)])
        graph = initial_graph([a, b], max_dist=1.0)
        assert graph.edges == {(0, 1): pytest.approx(0.2)}

    def test_three_collinear(self):
        objs = [
            world_object(0, ObjectClass.PIPE, (0.5, 0, 0), [(0, 0, 0), (1, 0, 0)]),
            world_object(1, ObjectClass.PIPE, (1.6, 0, 0), [(1.1, 0, 0), (2.1, 0, 0)]),
            world_object(2, ObjectClass.PIPE, (2.7, 0, 0), [(2.2, 0, 0), (3.2, 0, 0)]),
        ]
        graph = initial_graph(objs, max_dist=1.0)
        assert set(graph.edges) == {(0, 1), (1, 2)}

    def test_far_objects_isolated(self):
        a = world_object(0, ObjectClass.PIPE, (0, 0, 0), [(0, 0, 0)])
        b = world_object(1, ObjectClass.PIPE, (9, 0, 0), [(9, 0, 0)])
        graph = initial_graph([a, b], max_dist=1.0)
        assert graph.edges == {}
        assert len(graph.nodes) == 2

    def test_nonpipe_endpoint_single_use(self):
        # tank endpoint: only one (nearest) pipe may take it
        tank = world_object(0, ObjectClass.TANK, (0, 0, 0), [(0, 0, 0)])
        near = world_object(1, ObjectClass.PIPE, (0.5, 0, 0), [(0.1, 0, 0)])
        far = world_object(2, ObjectClass.PIPE, (0.5, 0.5, 0), [(0.0, 0.2, 0)])
        graph = initial_graph([tank, near, far], max_dist=1.0)
        assert (0, 1) in graph.edges
        assert (0, 2) not in graph.edges

    def test_pipe_endpoint_reusable_for_distinct_objects(self):
        hub = world_object(0, ObjectClass.PIPE, (0, 0, 0), [(0, 0, 0), (1, 0, 0)])
        spokes = [
            world_object(1, ObjectClass.PIPE, (0, 0.3, 0), [(0, 0.1, 0)]),
            world_object(2, ObjectClass.PIPE, (0.2, 0.3, 0), [(0.05, 0.2, 0)]),
        ]
        graph = initial_graph([hub] + spokes, max_dist=1.0)
        # both spokes attach to hub's first endpoint (reuse allowed: distinct objects)
        assert (0, 1) in graph.edges and (0, 2) in graph.edges

    def test_single_connection_per_pair(self):
        a = world_object(0, ObjectClass.PIPE, (0, 0, 0), [(0, 0, 0), (0, 0.1, 0)])
        b = world_object(1, ObjectClass.PIPE, (0.2, 0, 0), [(0.1, 0, 0), (0.1, 0.1, 0)])
        graph = initial_graph([a, b], max_dist=1.0)
        assert len(graph.edges) == 1


class TestHydraulicRuleset:
    def test_seven_rules_in_order(self):
        rules = hydraulic_ruleset()
        assert [r.rule_id for r in rules] == [f"R{i}" for i in range(1, 8)]
        assert [r.kind for r in rules] == [
            "degree_cap", "degree_cap", "sibling_ban", "no_isolated",
            "no_cycles", "retype", "retype",
        ]

    def test_r1_caps(self):
        caps = dict(hydraulic_ruleset()[0].caps)
        assert caps == {ObjectClass.PUMP: 2, ObjectClass.VALVE: 2, ObjectClass.TANK: 1}

    def test_r2_pipe_cap_three(self):
        assert dict(hydraulic_ruleset()[1].caps) == {ObjectClass.PIPE: 3}

    def test_retypes_never_delete_edges(self):
        graph = graph_of(
            [(0, ObjectClass.PUMP, (0, 0, 0)), (1, ObjectClass.PIPE, (1, 0, 0))],
            {(0, 1): 0.5},
        )
        out = enforce(graph, [r for r in hydraulic_ruleset() if r.kind == "retype"])
        assert out.edges == graph.edges


class TestEnforce:
    def test_pump_degree_capped_largest_deleted(self):
        graph = graph_of(
            [(0, ObjectClass.PUMP, (0, 0, 0))]
            + [(i, ObjectClass.PIPE, (i, 0, 0)) for i in (1, 2, 3)],
            {(0, 1): 0.1, (0, 2): 0.2, (0, 3): 0.3},
        )
        out = enforce(graph, hydraulic_ruleset())
        assert set(out.edges) == {(0, 1), (0, 2)}

    def test_triangle_cycle_broken_at_largest(self):
        graph = graph_of(
            [(i, ObjectClass.PIPE, (i, 0, 0)) for i in range(3)],
            {(0, 1): 0.1, (1, 2): 0.2, (0, 2): 0.3},
        )
        out = enforce(graph, hydraulic_ruleset())
        assert set(out.edges) == {(0, 1), (1, 2)}

    def test_sibling_ban_deletes_exactly_that_edge(self):
        # under R3 alone, the pipe-pipe edge is the whole violating set and
        # dies regardless of being the lightest edge in the graph
        graph = graph_of(
            [
                (0, ObjectClass.VALVE, (0, 0, 0)),
                (1, ObjectClass.PIPE, (1, 0, 0)),
                (2, ObjectClass.PIPE, (0, 1, 0)),
            ],
            {(0, 1): 0.2, (0, 2): 0.3, (1, 2): 0.05},
        )
        rule = hydraulic_ruleset()[2]
        assert violating_edges(graph, rule) == {(1, 2)}
        out = enforce(graph, [rule])
        assert set(out.edges) == {(0, 1), (0, 2)}

    def test_sibling_triangle_full_ruleset_clean(self):
        # with the full ruleset the triangle is also a cycle, so the union of
        # violations is all three edges; whatever survives must be clean
        graph = graph_of(
            [
                (0, ObjectClass.VALVE, (0, 0, 0)),
                (1, ObjectClass.PIPE, (1, 0, 0)),
                (2, ObjectClass.PIPE, (0, 1, 0)),
            ],
            {(0, 1): 0.2, (0, 2): 0.3, (1, 2): 0.05},
        )
        out = enforce(graph, hydraulic_ruleset())
        assert len(out.edges) == 2
        assert check_violations(out, hydraulic_ruleset()[:5]) == []
        # sequential mode applies R3 before R5 and keeps both valve edges
        seq = enforce(graph, hydraulic_ruleset(), mode="sequential")
        assert set(seq.edges) == {(0, 1), (0, 2)}

    def test_isolated_nodes_removed(self):
        graph = graph_of(
            [
                (0, ObjectClass.PIPE, (0, 0, 0)),
                (1, ObjectClass.PIPE, (1, 0, 0)),
                (2, ObjectClass.PIPE, (5, 0, 0)),
            ],
            {(0, 1): 0.1},
        )
        out = enforce(graph, hydraulic_ruleset())
        assert [n.node_id for n in out.nodes] == [0, 1]

    def test_deletion_cascade_isolates_then_removes(self):
        # tank with two edges: cap 1 deletes the larger, isolating node 2
        graph = graph_of(
            [
                (0, ObjectClass.TANK, (0, 0, 0)),
                (1, ObjectClass.PIPE, (1, 0, 0)),
                (2, ObjectClass.PIPE, (0, 1, 0)),
            ],
            {(0, 1): 0.1, (0, 2): 0.4},
        )
        out = enforce(graph, hydraulic_ruleset())
        assert set(out.edges) == {(0, 1)}
        assert [n.node_id for n in out.nodes] == [0, 1]

    def test_monotone_and_deterministic(self, rng):
        for _ in range(10):
            n = int(rng.integers(4, 12))
            nodes = [
                (i, [ObjectClass.PIPE, ObjectClass.PUMP, ObjectClass.TANK,
                     ObjectClass.VALVE][int(rng.integers(4))],
                 rng.uniform(0, 3, 3))
                for i in range(n)
            ]
            edges = {}
            for a in range(n):
                for b in range(a + 1, n):
                    if rng.random() < 0.4:
                        edges[(a, b)] = float(rng.uniform(0.05, 1.0))
            graph = graph_of(nodes, edges)
            out1 = enforce(graph, hydraulic_ruleset())
            out2 = enforce(graph, hydraulic_ruleset())
            assert out1.edges == out2.edges
            assert set(out1.edges) <= set(graph.edges)
            assert check_violations(out1, hydraulic_ruleset()[:5]) == []

    def test_matches_brute_force_deletion_sequence(self, rng):
        for _ in range(10):
            n = 8
            nodes = [(i, ObjectClass.PIPE if i > 1 else ObjectClass.PUMP,
                      rng.uniform(0, 3, 3)) for i in range(n)]
            weights = rng.permutation(np.linspace(0.1, 1.0, n * (n - 1) // 2))
            edges = {}
            k = 0
            for a in range(n):
                for b in range(a + 1, n):
                    if rng.random() < 0.5:
                        edges[(a, b)] = float(weights[k])
                    k += 1
            graph = graph_of(nodes, edges)
            expected = brute_deletion_sequence(graph, hydraulic_ruleset())
            out = enforce(graph, hydraulic_ruleset())
            assert set(out.edges) == set(graph.edges) - set(expected)

    def test_sequential_mode_runs_rules_in_order(self):
        # cycle plus a pump-degree violation; sequential applies R1 first
        graph = graph_of(
            [(0, ObjectClass.PUMP, (0, 0, 0))]
            + [(i, ObjectClass.PIPE, (i, 0, 0)) for i in (1, 2, 3)],
            {(0, 1): 0.1, (0, 2): 0.2, (0, 3): 0.5, (1, 2): 0.3},
        )
        out = enforce(graph, hydraulic_ruleset(), mode="sequential")
        assert check_violations(out, hydraulic_ruleset()[:3] + hydraulic_ruleset()[4:5]) == []


class TestAssignTypes:
    def test_pump_adjacent_becomes_reducer(self):
        graph = graph_of(
            [
                (0, ObjectClass.PUMP, (0, 0, 0)),
                (1, ObjectClass.PIPE, (1, 0, 0)),
                (2, ObjectClass.PIPE, (2, 0, 0)),
            ],
            {(0, 1): 0.1, (1, 2): 0.1},
        )
        out = assign_types(graph)
        classes = {n.node_id: n.cls for n in out.nodes}
        assert classes[1] is ObjectClass.REDUCER_EXPANDER
        assert classes[2] is ObjectClass.PIPE

    def test_degree_three_becomes_crossing(self):
        graph = graph_of(
            [(0, ObjectClass.PIPE, (0, 0, 0))]
            + [(i, ObjectClass.PIPE, (i, 0, 0)) for i in (1, 2, 3)],
            {(0, 1): 0.1, (0, 2): 0.1, (0, 3): 0.1},
        )
        out = assign_types(graph)
        assert out.node_map()[0].cls is ObjectClass.PIPE_CROSSING

    def test_crossing_wins_over_reducer(self):
        graph = graph_of(
            [
                (0, ObjectClass.PIPE, (0, 0, 0)),
                (1, ObjectClass.PUMP, (1, 0, 0)),
                (2, ObjectClass.PIPE, (0, 1, 0)),
                (3, ObjectClass.PIPE, (0, 0, 1)),
            ],
            {(0, 1): 0.1, (0, 2): 0.1, (0, 3): 0.1},
        )
        out = assign_types(graph)
        assert out.node_map()[0].cls is ObjectClass.PIPE_CROSSING


class TestExport:
    def test_empty_graph_json(self):
        data = json.loads(export(SceneGraph(), "json"))
        assert data == {"nodes": [], "edges": []}

    def test_dot_single_edge(self):
        graph = graph_of(
            [(0, ObjectClass.PIPE, (0, 0, 0)), (1, ObjectClass.TANK, (1, 0, 0))],
            {(0, 1): 0.25},
        )
        dot = export(graph, "dot").decode()
        assert dot.count(" -- ") == 1
        assert 'label="Tank@1"' in dot

    def test_export_parse_export_fixed_point(self):
        graph = graph_of(
            [
                (3, ObjectClass.PIPE, (0.5, 1.5, -2.0)),
                (7, ObjectClass.PUMP, (1, 0, 0)),
            ],
            {(3, 7): 0.125},
        )
        first = export(graph, "json")
        second = export(parse_graph_dict(json.loads(first)), "json")
        assert first == second

    def test_dense_renumbering(self):
        graph = graph_of(
            [(5, ObjectClass.PIPE, (0, 0, 0)), (9, ObjectClass.PIPE, (1, 0, 0))],
            {(5, 9): 0.1},
        )
        data = graph_to_dict(graph)
        assert [n["id"] for n in data["nodes"]] == [0, 1]
        assert data["edges"] == [{"a": 0, "b": 1, "weight": 0.1}]


class TestGraphDiff:
    def _simple(self):
        return graph_of(
            [
                (0, ObjectClass.TANK, (0, 0, 0)),
                (1, ObjectClass.PIPE, (1, 0, 0)),
                (2, ObjectClass.PUMP, (2, 0, 0)),
            ],
            {(0, 1): 0.1, (1, 2): 0.1},
        )

    def test_self_diff_perfect(self):
        graph = self._simple()
        report = graph_diff(graph, graph, pos_tol=0.1)
        assert report.node_precision == 1.0
        assert report.node_recall == 1.0
        assert report.edge_precision == 1.0
        assert report.edge_recall == 1.0

    def test_missing_node_lowers_recall(self):
        truth = self._simple()
        predicted = graph_of(
            [(0, ObjectClass.TANK, (0, 0, 0)), (1, ObjectClass.PIPE, (1, 0, 0))],
            {(0, 1): 0.1},
        )
        report = graph_diff(predicted, truth, pos_tol=0.1)
        assert report.node_recall == pytest.approx(2 / 3)
        assert report.unmatched_truth == [2]

    def test_family_matching_with_class_confusion(self):
        truth = graph_of([(0, ObjectClass.PIPE_CROSSING, (0, 0, 0))], {})
        predicted = graph_of([(0, ObjectClass.PIPE, (0.01, 0, 0))], {})
        report = graph_diff(predicted, truth, pos_tol=0.1)
        assert report.node_recall == 1.0
        assert report.class_confusion == {"Pipe->PipeCrossing": 1}

    def test_merged_pipe_fixture(self):
        # two truth pipes merged into one predicted object: 1 match + 1
        # unmatched truth node; edge metrics computed on the matched subgraph
        truth = graph_of(
            [
                (0, ObjectClass.TANK, (0, 0, 0)),
                (1, ObjectClass.PIPE, (0.5, 0, 0)),
                (2, ObjectClass.PIPE, (1.0, 0, 0)),
                (3, ObjectClass.PUMP, (1.5, 0, 0)),
            ],
            {(0, 1): 0.1, (1, 2): 0.1, (2, 3): 0.1},
        )
        predicted = graph_of(
            [
                (0, ObjectClass.TANK, (0, 0, 0)),
                (1, ObjectClass.PIPE, (0.72, 0, 0)),  # the merged pipe
                (2, ObjectClass.PUMP, (1.5, 0, 0)),
            ],
            {(0, 1): 0.1, (1, 2): 0.1},
        )
        report = graph_diff(predicted, truth, pos_tol=0.3)
        assert len(report.matched) == 3
        assert report.node_recall == pytest.approx(3 / 4)
        # merged pipe at 0.72 matches truth pipe 1 (0.22 < 0.28); truth 2 dangles
        assert report.unmatched_truth == [2]
        # matched truth ids {0, 1, 3}: the only truth edge inside is (0, 1),
        # which the prediction has -> recall 1; pred edge (1, 2) maps to the
        # non-edge (1, 3) -> precision 1/2
        assert report.edge_recall == pytest.approx(1.0)
        assert report.edge_precision == pytest.approx(1 / 2)

    def test_position_tolerance_zero(self):
        truth = self._simple()
        jittered = graph_of(
            [
                (0, ObjectClass.TANK, (0.001, 0, 0)),
                (1, ObjectClass.PIPE, (1.001, 0, 0)),
                (2, ObjectClass.PUMP, (2.001, 0, 0)),
            ],
            {(0, 1): 0.1, (1, 2): 0.1},
        )
        report = graph_diff(jittered, truth, pos_tol=0.0)
        assert report.node_recall == 0.0
