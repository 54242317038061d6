"""Scene graph construction, rule enforcement, typing, export and diffing.

The initial graph connects nearest endpoints first; enforcement repeatedly
deletes the largest-weight edge participating in any violated constraint
until none remains, removes isolated nodes, then retypes pipe nodes.
"""

from __future__ import annotations

import json
import logging
from dataclasses import dataclass, field

import numpy as np

from .errors import SchemaViolation
from .model import PIPE_FAMILY, ObjectClass, WorldObject

logger = logging.getLogger(__name__)


@dataclass
class GraphNode:
    node_id: int
    cls: ObjectClass
    position: np.ndarray
    endpoints: list[np.ndarray] = field(default_factory=list)


@dataclass
class SceneGraph:
    """Undirected simple graph; edges keyed (a, b) with a < b, weight in meters."""

    nodes: list[GraphNode] = field(default_factory=list)
    edges: dict[tuple[int, int], float] = field(default_factory=dict)

    def node_map(self) -> dict[int, GraphNode]:
        return {n.node_id: n for n in self.nodes}

    def adjacency(self) -> dict[int, list[int]]:
        adj: dict[int, list[int]] = {n.node_id: [] for n in self.nodes}
        for a, b in self.edges:
            adj[a].append(b)
            adj[b].append(a)
        return adj

    def copy(self) -> "SceneGraph":
        return SceneGraph(
            nodes=[
                GraphNode(n.node_id, n.cls, n.position.copy(), [e.copy() for e in n.endpoints])
                for n in self.nodes
            ],
            edges=dict(self.edges),
        )


@dataclass(frozen=True)
class Rule:
    rule_id: str
    kind: str  # degree_cap | sibling_ban | no_isolated | no_cycles | retype
    caps: tuple[tuple[ObjectClass, int], ...] = ()
    retype_predicate: str = ""
    retype_class: ObjectClass | None = None


CONSTRAINT_KINDS = ("degree_cap", "sibling_ban", "no_cycles")


def hydraulic_ruleset() -> list[Rule]:
    """The seven enforcement rules, in order."""
    return [
        Rule("R1", "degree_cap", caps=(
            (ObjectClass.PUMP, 2), (ObjectClass.VALVE, 2), (ObjectClass.TANK, 1),
        )),
        Rule("R2", "degree_cap", caps=((ObjectClass.PIPE, 3),)),
        Rule("R3", "sibling_ban"),
        Rule("R4", "no_isolated"),
        Rule("R5", "no_cycles"),
        Rule("R6", "retype", retype_predicate="adjacent_to_pump",
             retype_class=ObjectClass.REDUCER_EXPANDER),
        Rule("R7", "retype", retype_predicate="degree_three_pipe",
             retype_class=ObjectClass.PIPE_CROSSING),
    ]


def initial_graph(objects: list[WorldObject], max_dist: float) -> SceneGraph:
    """Connect nearest endpoint pairs first, one edge per object pair.

    Endpoints of non-pipe objects are consumed by their first edge; pipe
    endpoints may serve several edges as long as each targets a different
    object. Pairs beyond max_dist never connect.
    """
    nodes = []
    for obj in objects:
        if not obj.endpoints:
            logger.warning(
                "object %d (%s) has no endpoints; it joins the graph isolated",
                obj.object_id, obj.cls.value,
            )
        nodes.append(
            GraphNode(obj.object_id, obj.cls, obj.centroid(), [e.copy() for e in obj.endpoints])
        )
    graph = SceneGraph(nodes=nodes)

    pairs = []
    for i, na in enumerate(nodes):
        for nb in nodes[i + 1 :]:
            a, b = (na, nb) if na.node_id < nb.node_id else (nb, na)
            for ei, pa in enumerate(a.endpoints):
                for ej, pb in enumerate(b.endpoints):
                    d = float(np.linalg.norm(pa - pb))
                    pairs.append((d, a.node_id, b.node_id, ei, ej))
    pairs.sort()

    consumed: set[tuple[int, int]] = set()
    node_map = graph.node_map()
    for d, a, b, ei, ej in pairs:
        if d > max_dist:
            break
        if (a, b) in graph.edges:
            continue
        usable = True
        for node_id, endpoint in ((a, ei), (b, ej)):
            if (node_id, endpoint) in consumed and node_map[node_id].cls not in PIPE_FAMILY:
                usable = False
                break
        if not usable:
            continue
        graph.edges[(a, b)] = d
        consumed.add((a, ei))
        consumed.add((b, ej))
    return graph


def _degree_cap_violations(graph: SceneGraph, caps) -> set[tuple[int, int]]:
    degrees: dict[int, int] = {n.node_id: 0 for n in graph.nodes}
    for a, b in graph.edges:
        degrees[a] += 1
        degrees[b] += 1
    limits = dict(caps)
    over = {
        n.node_id
        for n in graph.nodes
        if n.cls in limits and degrees[n.node_id] > limits[n.cls]
    }
    return {e for e in graph.edges if e[0] in over or e[1] in over}


def _sibling_ban_violations(graph: SceneGraph) -> set[tuple[int, int]]:
    adj = graph.adjacency()
    bad = set()
    for node in graph.nodes:
        if node.cls in PIPE_FAMILY:
            continue
        neighbors = adj[node.node_id]
        for i, x in enumerate(neighbors):
            for y in neighbors[i + 1 :]:
                key = (x, y) if x < y else (y, x)
                if key in graph.edges:
                    bad.add(key)
    return bad


def _cycle_edges(graph: SceneGraph) -> set[tuple[int, int]]:
    """Edges lying on some cycle: exactly the non-bridge edges."""
    adj: dict[int, list[tuple[int, tuple[int, int]]]] = {n.node_id: [] for n in graph.nodes}
    for edge in graph.edges:
        a, b = edge
        adj[a].append((b, edge))
        adj[b].append((a, edge))
    disc: dict[int, int] = {}
    low: dict[int, int] = {}
    bridges: set[tuple[int, int]] = set()
    counter = 0
    for root in adj:
        if root in disc:
            continue
        stack = [(root, None, iter(adj[root]))]
        disc[root] = low[root] = counter
        counter += 1
        while stack:
            node, in_edge, it = stack[-1]
            advanced = False
            for nbr, edge in it:
                if edge == in_edge:
                    continue
                if nbr not in disc:
                    disc[nbr] = low[nbr] = counter
                    counter += 1
                    stack.append((nbr, edge, iter(adj[nbr])))
                    advanced = True
                    break
                low[node] = min(low[node], disc[nbr])
            if not advanced:
                stack.pop()
                if stack:
                    parent = stack[-1][0]
                    low[parent] = min(low[parent], low[node])
                    if low[node] > disc[parent]:
                        bridges.add(in_edge)
    return set(graph.edges) - bridges


def violating_edges(graph: SceneGraph, rule: Rule) -> set[tuple[int, int]]:
    if rule.kind == "degree_cap":
        return _degree_cap_violations(graph, rule.caps)
    if rule.kind == "sibling_ban":
        return _sibling_ban_violations(graph)
    if rule.kind == "no_cycles":
        return _cycle_edges(graph)
    return set()


def _delete_largest(graph: SceneGraph, candidates: set[tuple[int, int]]) -> tuple[int, int]:
    victim = max(candidates, key=lambda e: (graph.edges[e], e))
    del graph.edges[victim]
    return victim


def _remove_isolated(graph: SceneGraph) -> None:
    connected = {v for edge in graph.edges for v in edge}
    dropped = [n.node_id for n in graph.nodes if n.node_id not in connected]
    if dropped:
        logger.info("removing %d isolated node(s): %s", len(dropped), dropped)
        graph.nodes = [n for n in graph.nodes if n.node_id in connected]


def _apply_retype(graph: SceneGraph, rule: Rule) -> None:
    adj = graph.adjacency()
    node_map = graph.node_map()
    for node in graph.nodes:
        if node.cls not in PIPE_FAMILY:
            continue
        if rule.retype_predicate == "adjacent_to_pump":
            if node.cls is ObjectClass.PIPE and any(
                node_map[m].cls is ObjectClass.PUMP for m in adj[node.node_id]
            ):
                node.cls = rule.retype_class
        elif rule.retype_predicate == "degree_three_pipe":
            if len(adj[node.node_id]) == 3:
                node.cls = rule.retype_class


def enforce(graph: SceneGraph, rules: list[Rule], mode: str = "fixed_point") -> SceneGraph:
    """Delete rule-violating edges (largest first) to a violation-free graph.

    fixed_point: one victim per iteration across all constraint rules until
    clean, then isolated-node removal, then retyping.
    sequential: one pass per rule in listed order (isolated-node removal and
    retypes run at their own rule's turn).
    """
    out = graph.copy()
    constraint_rules = [r for r in rules if r.kind in CONSTRAINT_KINDS]
    retype_rules = [r for r in rules if r.kind == "retype"]
    if mode == "fixed_point":
        while True:
            candidates: set[tuple[int, int]] = set()
            for rule in constraint_rules:
                candidates |= violating_edges(out, rule)
            if not candidates:
                break
            _delete_largest(out, candidates)
        if any(r.kind == "no_isolated" for r in rules):
            _remove_isolated(out)
        for rule in retype_rules:
            _apply_retype(out, rule)
    elif mode == "sequential":
        for rule in rules:
            if rule.kind in CONSTRAINT_KINDS:
                while True:
                    candidates = violating_edges(out, rule)
                    if not candidates:
                        break
                    _delete_largest(out, candidates)
            elif rule.kind == "no_isolated":
                _remove_isolated(out)
            elif rule.kind == "retype":
                _apply_retype(out, rule)
    else:
        raise SchemaViolation(f"unknown enforcement mode '{mode}'")
    return out


def assign_types(graph: SceneGraph) -> SceneGraph:
    """Final node typing: degree-3 pipes become PipeCrossing (which wins),
    pump-adjacent pipes become ReducerExpander, the rest stay Pipe."""
    out = graph.copy()
    adj = out.adjacency()
    node_map = out.node_map()
    for node in out.nodes:
        if node.cls not in PIPE_FAMILY:
            continue
        if len(adj[node.node_id]) == 3:
            node.cls = ObjectClass.PIPE_CROSSING
        elif any(node_map[m].cls is ObjectClass.PUMP for m in adj[node.node_id]):
            node.cls = ObjectClass.REDUCER_EXPANDER
        else:
            node.cls = ObjectClass.PIPE
    return out


# ---------------------------------------------------------------------------
# serialization


def graph_to_dict(graph: SceneGraph) -> dict:
    """JSON-ready dict with dense node ids from 0 and edges with a < b."""
    order = sorted(graph.nodes, key=lambda n: n.node_id)
    remap = {n.node_id: i for i, n in enumerate(order)}
    nodes = [
        {
            "id": remap[n.node_id],
            "class": n.cls.value,
            "position": [float(x) for x in n.position],
            "endpoints": [[float(x) for x in e] for e in n.endpoints],
        }
        for n in order
    ]
    edges = []
    for (a, b), w in graph.edges.items():
        ra, rb = remap[a], remap[b]
        if ra > rb:
            ra, rb = rb, ra
        edges.append({"a": ra, "b": rb, "weight": float(w)})
    edges.sort(key=lambda e: (e["a"], e["b"]))
    return {"nodes": nodes, "edges": edges}


def export(graph: SceneGraph, fmt: str = "json") -> bytes:
    """Serialize to JSON or DOT bytes, deterministically."""
    if fmt.lower() == "json":
        return (json.dumps(graph_to_dict(graph), indent=2) + "\n").encode("utf-8")
    if fmt.lower() == "dot":
        data = graph_to_dict(graph)
        lines = ["graph scene {"]
        for n in data["nodes"]:
            lines.append(f'  n{n["id"]} [label="{n["class"]}@{n["id"]}"];')
        for e in data["edges"]:
            lines.append(f'  n{e["a"]} -- n{e["b"]} [weight={e["weight"]:.6f}];')
        lines.append("}")
        return ("\n".join(lines) + "\n").encode("utf-8")
    raise SchemaViolation(f"unknown export format '{fmt}'")


def parse_graph_dict(data: dict) -> SceneGraph:
    """Inverse of graph_to_dict; extra keys (e.g. metadata) are ignored."""
    if "nodes" not in data or "edges" not in data:
        raise SchemaViolation("graph JSON: missing 'nodes' or 'edges'")
    nodes = []
    for i, n in enumerate(data["nodes"]):
        where = f"nodes[{i}]"
        for key in ("id", "class", "position"):
            if key not in n:
                raise SchemaViolation(f"graph JSON {where}: missing '{key}'")
        try:
            cls = ObjectClass(n["class"])
        except ValueError:
            raise SchemaViolation(f"graph JSON {where}: unknown class '{n['class']}'") from None
        nodes.append(
            GraphNode(
                node_id=int(n["id"]),
                cls=cls,
                position=np.asarray(n["position"], dtype=np.float64).reshape(3),
                endpoints=[
                    np.asarray(e, dtype=np.float64).reshape(3)
                    for e in n.get("endpoints", [])
                ],
            )
        )
    ids = [n.node_id for n in nodes]
    if len(ids) != len(set(ids)):
        raise SchemaViolation("graph JSON: duplicate node ids")
    edges: dict[tuple[int, int], float] = {}
    known = set(ids)
    for i, e in enumerate(data["edges"]):
        for key in ("a", "b", "weight"):
            if key not in e:
                raise SchemaViolation(f"graph JSON edges[{i}]: missing '{key}'")
        a, b = int(e["a"]), int(e["b"])
        if a == b:
            raise SchemaViolation(f"graph JSON edges[{i}]: self-loop")
        if a not in known or b not in known:
            raise SchemaViolation(f"graph JSON edges[{i}]: unknown node id")
        if a > b:
            a, b = b, a
        edges[(a, b)] = float(e["weight"])
    return SceneGraph(nodes=nodes, edges=edges)


def load_graph(path) -> SceneGraph:
    from pathlib import Path

    try:
        data = json.loads(Path(path).read_text(encoding="utf-8"))
    except json.JSONDecodeError as exc:
        raise SchemaViolation(f"{path}: invalid JSON ({exc})") from exc
    return parse_graph_dict(data)


# ---------------------------------------------------------------------------
# diffing


@dataclass
class DiffReport:
    node_precision: float
    node_recall: float
    edge_precision: float
    edge_recall: float
    matched: list[tuple[int, int, float]]
    unmatched_predicted: list[int]
    unmatched_truth: list[int]
    class_confusion: dict[str, int]
    predicted_class_counts: dict[str, int]
    truth_class_counts: dict[str, int]

    def to_dict(self) -> dict:
        return {
            "node_precision": self.node_precision,
            "node_recall": self.node_recall,
            "edge_precision": self.edge_precision,
            "edge_recall": self.edge_recall,
            "matched": [
                {"predicted": p, "truth": t, "distance": d} for p, t, d in self.matched
            ],
            "unmatched_predicted": self.unmatched_predicted,
            "unmatched_truth": self.unmatched_truth,
            "class_confusion": self.class_confusion,
            "predicted_class_counts": self.predicted_class_counts,
            "truth_class_counts": self.truth_class_counts,
        }


def _class_family(cls: ObjectClass) -> str:
    return "pipe-family" if cls in PIPE_FAMILY else cls.value


def _class_counts(graph: SceneGraph) -> dict[str, int]:
    counts: dict[str, int] = {}
    for n in graph.nodes:
        counts[n.cls.value] = counts.get(n.cls.value, 0) + 1
    return dict(sorted(counts.items()))


def graph_diff(predicted: SceneGraph, truth: SceneGraph, pos_tol: float) -> DiffReport:
    """Greedy nearest-first node matching plus edge metrics over matched nodes.

    Candidate pairs need compatible classes (the pipe family counts as one
    class for matching) and distance <= pos_tol. Exact class agreement is
    reported separately in class_confusion.
    """
    candidates = []
    for p in predicted.nodes:
        for t in truth.nodes:
            if _class_family(p.cls) != _class_family(t.cls):
                continue
            d = float(np.linalg.norm(p.position - t.position))
            if d <= pos_tol:
                candidates.append((d, p.node_id, t.node_id))
    candidates.sort()
    used_p: set[int] = set()
    used_t: set[int] = set()
    matched: list[tuple[int, int, float]] = []
    mapping: dict[int, int] = {}
    for d, pid, tid in candidates:
        if pid in used_p or tid in used_t:
            continue
        used_p.add(pid)
        used_t.add(tid)
        matched.append((pid, tid, d))
        mapping[pid] = tid

    n_pred = len(predicted.nodes)
    n_truth = len(truth.nodes)
    node_precision = len(matched) / n_pred if n_pred else 1.0
    node_recall = len(matched) / n_truth if n_truth else 1.0

    pred_edges = [
        e for e in predicted.edges if e[0] in mapping and e[1] in mapping
    ]
    truth_matched_ids = set(mapping.values())
    truth_edges = [
        e for e in truth.edges if e[0] in truth_matched_ids and e[1] in truth_matched_ids
    ]
    true_positive = 0
    for a, b in pred_edges:
        ta, tb = mapping[a], mapping[b]
        if ta > tb:
            ta, tb = tb, ta
        if (ta, tb) in truth.edges:
            true_positive += 1
    edge_precision = true_positive / len(pred_edges) if pred_edges else 1.0
    edge_recall = true_positive / len(truth_edges) if truth_edges else 1.0

    pred_map = predicted.node_map()
    truth_map = truth.node_map()
    confusion: dict[str, int] = {}
    for pid, tid, _ in matched:
        key = f"{pred_map[pid].cls.value}->{truth_map[tid].cls.value}"
        confusion[key] = confusion.get(key, 0) + 1

    return DiffReport(
        node_precision=node_precision,
        node_recall=node_recall,
        edge_precision=edge_precision,
        edge_recall=edge_recall,
        matched=matched,
        unmatched_predicted=sorted(n.node_id for n in predicted.nodes if n.node_id not in used_p),
        unmatched_truth=sorted(n.node_id for n in truth.nodes if n.node_id not in used_t),
        class_confusion=dict(sorted(confusion.items())),
        predicted_class_counts=_class_counts(predicted),
        truth_class_counts=_class_counts(truth),
    )
