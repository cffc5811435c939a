"""Unified FMEA knowledge graph: construction, merging, storage and process order.

Node kinds reuse :class:`ConceptClass`. Worksheet instances are Function
nodes (one per process step) and Failure-kind nodes for failures, causes and
effects; manufacturing concepts from the ontology are shared nodes keyed by
their identifier.

Edges:
    failure  -has_Cause->  cause
    failure  -happens_At-> function       cause -happens_At-> function
    failure  -affects->    effect
    function -precedes->   next function
    Action/Component concept -acts_on-> instance
    State/Parameter concept  -affects-> instance
"""

from __future__ import annotations

import hashlib
import json
import math
from collections import defaultdict
from dataclasses import dataclass
from enum import Enum
from pathlib import Path
from typing import Iterable, NamedTuple

from .errors import MalformedGraphFile, RowMismatch, UnknownConcept
from .extract import ExtractionRow, record_sentences
from .ingest import ProcessFlow, Worksheet
from .ontology import ConceptClass, ConceptId, Ontology

GRAPH_FORMAT = "fmea-kg"
GRAPH_VERSION = 1


class Relation(Enum):
    ACTS_ON = "acts_on"
    AFFECTS = "affects"
    HAS_CAUSE = "has_Cause"
    HAPPENS_AT = "happens_At"
    PRECEDES = "precedes"

    @property
    def index(self) -> int:
        return _REL_INDEX[self]


_REL_INDEX = {r: i for i, r in enumerate(Relation)}
RELATIONS = tuple(Relation)
NUM_RELATIONS = len(RELATIONS)

# concept slot -> edge relation to the instance it describes
_CONCEPT_RELATION = {
    ConceptClass.ACTION: Relation.ACTS_ON,
    ConceptClass.COMPONENT: Relation.ACTS_ON,
    ConceptClass.STATE: Relation.AFFECTS,
    ConceptClass.PARAMETER: Relation.AFFECTS,
}


@dataclass(frozen=True)
class Node:
    node_id: int
    kind: ConceptClass
    label: str
    line_id: str | None = None
    concept: ConceptId | None = None
    order_index: int | None = None

    @property
    def is_concept(self) -> bool:
        return self.concept is not None


class Edge(NamedTuple):
    src: int
    rel: Relation
    dst: int

    def key(self) -> tuple[int, int, int]:
        return (self.src, self.rel.index, self.dst)


class OrderDistance(Enum):
    PRECEDES = "precedes"
    OVERLAP = "overlap"
    DISJOINT = "disjoint"
    UNKNOWN = "unknown"

    def distance(self, k: float = 1.0) -> float | None:
        """Numeric distance: 0, k or infinity; ``None`` when unknown."""
        return {
            OrderDistance.PRECEDES: 0.0,
            OrderDistance.OVERLAP: float(k),
            OrderDistance.DISJOINT: math.inf,
            OrderDistance.UNKNOWN: None,
        }[self]


class KnowledgeGraph:
    """Immutable typed multigraph with dense node ids ``0..n-1``."""

    def __init__(self, nodes: Iterable[Node], edges: Iterable[Edge]):
        self.nodes: tuple[Node, ...] = tuple(nodes)
        for i, n in enumerate(self.nodes):
            if n.node_id != i:
                raise ValueError(f"node ids must be dense; got {n.node_id} at position {i}")
        unique = {}
        for e in edges:
            e = Edge(*e)
            if not (0 <= e.src < len(self.nodes) and 0 <= e.dst < len(self.nodes)):
                raise ValueError(f"dangling edge {e}")
            unique[e.key()] = e
        self.edges: tuple[Edge, ...] = tuple(unique[k] for k in sorted(unique))
        self.out_adj: dict[Relation, dict[int, list[int]]] = {r: defaultdict(list) for r in RELATIONS}
        self.in_adj: dict[Relation, dict[int, list[int]]] = {r: defaultdict(list) for r in RELATIONS}
        for e in self.edges:
            self.out_adj[e.rel][e.src].append(e.dst)
            self.in_adj[e.rel][e.dst].append(e.src)
        self.by_label: dict[str, list[int]] = defaultdict(list)
        self.by_concept: dict[ConceptId, int] = {}
        for n in self.nodes:
            self.by_label[n.label].append(n.node_id)
            if n.concept is not None:
                self.by_concept[n.concept] = n.node_id
        self._positions: dict[int, tuple[str, int]] | None = None

    def __len__(self) -> int:
        return len(self.nodes)

    def __eq__(self, other: object) -> bool:
        if not isinstance(other, KnowledgeGraph):
            return NotImplemented
        return self.nodes == other.nodes and self.edges == other.edges

    def edge_set(self) -> set[tuple[int, Relation, int]]:
        return {(e.src, e.rel, e.dst) for e in self.edges}

    def edges_of(self, rel: Relation) -> list[Edge]:
        return [e for e in self.edges if e.rel is rel]

    def lines(self) -> list[str]:
        return sorted({n.line_id for n in self.nodes if n.line_id is not None})

    def function_nodes(self, line_id: str) -> list[Node]:
        fns = [n for n in self.nodes if n.kind is ConceptClass.FUNCTION and n.line_id == line_id]
        return sorted(fns, key=lambda n: (n.order_index, n.node_id))

    def cause_nodes(self) -> list[int]:
        """Nodes that are the tail of at least one has_Cause edge."""
        return sorted(self.in_adj[Relation.HAS_CAUSE])

    def positions(self) -> dict[int, tuple[str, int]]:
        """Process position ``(line, order_index)`` of every node that has one.

        Function nodes use their own order index; Failure-kind nodes use the
        earliest function they are linked to by happens_At.
        """
        if self._positions is None:
            pos: dict[int, tuple[str, int]] = {}
            for n in self.nodes:
                if n.kind is ConceptClass.FUNCTION and n.line_id is not None and n.order_index is not None:
                    pos[n.node_id] = (n.line_id, n.order_index)
            for n in self.nodes:
                if n.kind is not ConceptClass.FAILURE:
                    continue
                anchors = [pos[f] for f in self.out_adj[Relation.HAPPENS_AT].get(n.node_id, ()) if f in pos]
                if anchors:
                    pos[n.node_id] = min(anchors, key=lambda p: (p[1], p[0]))
            self._positions = pos
        return self._positions

    def fingerprint(self) -> str:
        return hashlib.sha256(dump_graph(self).encode("utf-8")).hexdigest()


# ---------------------------------------------------------------------------
# construction


class _Builder:
    def __init__(self):
        self.instances: list[Node] = []
        self.concepts: dict[ConceptId, Node] = {}
        self.edges: list[tuple[str, Relation, str]] = []
        self._keys: dict[tuple, int] = {}

    def instance(self, key: tuple, kind: ConceptClass, label: str, line: str, order: int | None = None) -> tuple:
        if key not in self._keys:
            self._keys[key] = len(self.instances)
            self.instances.append(Node(len(self.instances), kind, label, line, None, order))
        return ("i", self._keys[key])

    def concept(self, cid: ConceptId, ontology: Ontology) -> tuple:
        entry = ontology.get(cid)
        if entry is None:
            raise UnknownConcept(str(cid))
        if cid not in self.concepts:
            self.concepts[cid] = Node(0, entry.concept_class, entry.label, None, cid, None)
        return ("c", cid)

    def build(self) -> KnowledgeGraph:
        ordered_concepts = sorted(self.concepts)
        remap = {("c", cid): i for i, cid in enumerate(ordered_concepts)}
        offset = len(ordered_concepts)
        nodes = [_renumber(self.concepts[cid], i) for i, cid in enumerate(ordered_concepts)]
        for n in self.instances:
            remap[("i", n.node_id)] = offset + n.node_id
            nodes.append(_renumber(n, offset + n.node_id))
        edges = [Edge(remap[s], r, remap[d]) for s, r, d in self.edges]
        return KnowledgeGraph(nodes, edges)


def _renumber(n: Node, new_id: int) -> Node:
    return Node(new_id, n.kind, n.label, n.line_id, n.concept, n.order_index)


def instantiate_graph(
    ws: Worksheet,
    rows: list[ExtractionRow],
    flow: ProcessFlow,
    ontology: Ontology,
    conceptualize: bool = True,
) -> KnowledgeGraph:
    """Turn one line's worksheet and its extraction rows into a graph.

    With ``conceptualize=False`` only worksheet-level nodes and edges are
    produced (no concept nodes, no acts_on/affects from concepts).
    """
    expected = record_sentences(ws)
    got = [(r.record_index, r.field, r.sentence) for r in rows]
    if got != expected:
        raise RowMismatch(f"{len(rows)} rows do not match the {len(expected)} worksheet sentences")

    line = ws.line_id
    b = _Builder()
    fn_ref = {}
    for pos, fn in enumerate(flow.functions):
        fn_ref[fn] = b.instance(("function", fn), ConceptClass.FUNCTION, fn, line, pos)
    for earlier, later in zip(flow.functions, flow.functions[1:]):
        b.edges.append((fn_ref[earlier], Relation.PRECEDES, fn_ref[later]))

    field_ref: dict[tuple[int, str], tuple] = {}
    for i, rec in enumerate(ws.records):
        fn = fn_ref[rec.function_text]
        failure = b.instance(("failure", rec.failure_text, rec.function_text), ConceptClass.FAILURE,
                             rec.failure_text, line)
        cause = b.instance(("cause", rec.cause_text), ConceptClass.FAILURE, rec.cause_text, line)
        b.edges += [
            (failure, Relation.HAS_CAUSE, cause),
            (failure, Relation.HAPPENS_AT, fn),
            (cause, Relation.HAPPENS_AT, fn),
        ]
        field_ref[(i, "function")] = fn
        field_ref[(i, "failure")] = failure
        field_ref[(i, "cause")] = cause
        if rec.effect_text:
            effect = b.instance(("effect", rec.effect_text), ConceptClass.FAILURE, rec.effect_text, line)
            b.edges.append((failure, Relation.AFFECTS, effect))
            field_ref[(i, "effect")] = effect

    if conceptualize:
        for row in rows:
            target = field_ref[(row.record_index, row.field)]
            for res in row.slots.values():
                ref = b.concept(res.concept, ontology)
                b.edges.append((ref, _CONCEPT_RELATION[res.concept.concept_class], target))
    return b.build()


def concept_edges_for(kind: ConceptClass) -> Relation:
    return _CONCEPT_RELATION[kind]


def strip_concepts(g: KnowledgeGraph) -> KnowledgeGraph:
    """Worksheet-level view: drop concept nodes and their edges."""
    keep = [n for n in g.nodes if not n.is_concept]
    remap = {n.node_id: i for i, n in enumerate(keep)}
    nodes = [_renumber(n, remap[n.node_id]) for n in keep]
    edges = [Edge(remap[e.src], e.rel, remap[e.dst]) for e in g.edges if e.src in remap and e.dst in remap]
    return KnowledgeGraph(nodes, edges)


def merge_graphs(graphs: list[KnowledgeGraph]) -> KnowledgeGraph:
    """Union of graphs; concept nodes with equal ids collapse, instances never do.

    Concept nodes come first in id order, then instance nodes in input order.
    """
    concepts: dict[ConceptId, Node] = {}
    for g in graphs:
        for n in g.nodes:
            if n.concept is not None:
                concepts.setdefault(n.concept, n)
    order = sorted(concepts)
    concept_new = {cid: i for i, cid in enumerate(order)}
    nodes = [_renumber(concepts[cid], i) for i, cid in enumerate(order)]
    edges = []
    for g in graphs:
        local = {}
        for n in g.nodes:
            if n.concept is not None:
                local[n.node_id] = concept_new[n.concept]
            else:
                local[n.node_id] = len(nodes)
                nodes.append(_renumber(n, len(nodes)))
        edges += [Edge(local[e.src], e.rel, local[e.dst]) for e in g.edges]
    return KnowledgeGraph(nodes, edges)


def subgraph_lines(g: KnowledgeGraph, lines: set[str]) -> KnowledgeGraph:
    """Keep instance nodes of ``lines`` plus the concepts they touch."""
    keep_inst = {n.node_id for n in g.nodes if n.line_id in lines}
    touched = {e.src for e in g.edges if e.dst in keep_inst} | {e.dst for e in g.edges if e.src in keep_inst}
    keep = [n for n in g.nodes if n.node_id in keep_inst or (n.is_concept and n.node_id in touched)]
    keep.sort(key=lambda n: (not n.is_concept, n.concept or ConceptId("A", 0), n.node_id))
    remap = {n.node_id: i for i, n in enumerate(keep)}
    nodes = [_renumber(n, remap[n.node_id]) for n in keep]
    edges = [Edge(remap[e.src], e.rel, remap[e.dst]) for e in g.edges if e.src in remap and e.dst in remap]
    return KnowledgeGraph(nodes, edges)


# ---------------------------------------------------------------------------
# process order


def process_distance(
    g: KnowledgeGraph, h: int, t: int, positions: dict[int, tuple[str, int]] | None = None
) -> OrderDistance:
    """Relative process order of ``h`` with respect to ``t``.

    Earlier position -> PRECEDES, same -> OVERLAP, later -> DISJOINT; nodes on
    different lines or without a position -> UNKNOWN.
    """
    pos = g.positions() if positions is None else positions
    ph, pt = pos.get(h), pos.get(t)
    if ph is None or pt is None or ph[0] != pt[0]:
        return OrderDistance.UNKNOWN
    if ph[1] < pt[1]:
        return OrderDistance.PRECEDES
    if ph[1] == pt[1]:
        return OrderDistance.OVERLAP
    return OrderDistance.DISJOINT


# ---------------------------------------------------------------------------
# validation


def edge_violations(g: KnowledgeGraph) -> list[str]:
    """Every broken node/edge typing rule, as human-readable strings."""
    problems = []
    F, X = ConceptClass.FUNCTION, ConceptClass.FAILURE
    for n in g.nodes:
        if n.kind is F and (n.line_id is None or n.order_index is None):
            problems.append(f"function node {n.node_id} lacks line or order")
        if n.concept is not None and (n.line_id is not None or n.kind is not n.concept.concept_class):
            problems.append(f"concept node {n.node_id} is line-scoped or mistyped")
        if n.concept is None and n.kind.is_manufacturing:
            problems.append(f"manufacturing node {n.node_id} has no concept id")
    seen = set()
    for e in g.edges:
        if e.key() in seen:
            problems.append(f"duplicate edge {e}")
        seen.add(e.key())
        s, d = g.nodes[e.src], g.nodes[e.dst]
        ok = True
        if e.rel is Relation.HAS_CAUSE:
            ok = s.kind is X and d.kind is X and not s.is_concept and not d.is_concept
        elif e.rel is Relation.HAPPENS_AT:
            ok = s.kind is X and d.kind is F and s.line_id == d.line_id
        elif e.rel is Relation.PRECEDES:
            ok = (s.kind is F and d.kind is F and s.line_id == d.line_id
                  and s.order_index is not None and d.order_index is not None
                  and s.order_index < d.order_index)
        elif e.rel is Relation.ACTS_ON:
            ok = s.kind in (ConceptClass.ACTION, ConceptClass.COMPONENT) and d.kind in (F, X) and not d.is_concept
        elif e.rel is Relation.AFFECTS:
            if s.kind is X:
                ok = d.kind is X and not s.is_concept and s.line_id == d.line_id
            else:
                ok = s.kind in (ConceptClass.STATE, ConceptClass.PARAMETER) and d.kind in (F, X) and not d.is_concept
        if not ok:
            problems.append(f"edge {s.kind.value}:{e.src} -{e.rel.value}-> {d.kind.value}:{e.dst} breaks typing")
    return problems


# ---------------------------------------------------------------------------
# storage


def _node_record(n: Node) -> dict:
    return {
        "n": n.node_id,
        "kind": n.kind.value,
        "label": n.label,
        "line": n.line_id,
        "concept": None if n.concept is None else str(n.concept),
        "ord": n.order_index,
    }


def _dumps(obj: dict) -> str:
    return json.dumps(obj, ensure_ascii=False, separators=(",", ":"))


def dump_graph(g: KnowledgeGraph) -> str:
    lines = [_dumps({"format": GRAPH_FORMAT, "version": GRAPH_VERSION, "nodes": len(g.nodes),
                     "edges": len(g.edges)})]
    lines += [_dumps(_node_record(n)) for n in g.nodes]
    lines += [_dumps({"s": e.src, "r": e.rel.value, "d": e.dst}) for e in g.edges]
    return "\n".join(lines) + "\n"


def save_graph(g: KnowledgeGraph, path: str | Path) -> None:
    Path(path).write_bytes(dump_graph(g).encode("utf-8"))


def parse_graph(text: str) -> KnowledgeGraph:
    raw_lines = text.split("\n")
    if raw_lines and raw_lines[-1] == "":
        raw_lines.pop()
    else:
        raise MalformedGraphFile(len(raw_lines), "missing final newline (truncated?)")
    records = []
    for lineno, raw in enumerate(raw_lines, start=1):
        try:
            rec = json.loads(raw)
        except ValueError:
            raise MalformedGraphFile(lineno, "invalid JSON") from None
        if not isinstance(rec, dict):
            raise MalformedGraphFile(lineno, "not an object")
        records.append(rec)
    if not records or records[0].get("format") != GRAPH_FORMAT:
        raise MalformedGraphFile(1, "missing fmea-kg header")
    header = records[0]
    if header.get("version") != GRAPH_VERSION:
        raise MalformedGraphFile(1, f"unsupported version {header.get('version')}")
    nodes, edges = [], []
    for lineno, rec in enumerate(records[1:], start=2):
        try:
            if "n" in rec:
                if edges:
                    raise ValueError("node after edges")
                concept = rec.get("concept")
                nodes.append(Node(
                    int(rec["n"]), ConceptClass(rec["kind"]), str(rec["label"]), rec.get("line"),
                    None if concept is None else ConceptId.parse(concept), rec.get("ord"),
                ))
                if nodes[-1].node_id != len(nodes) - 1:
                    raise ValueError("node ids are not dense")
            elif "s" in rec:
                e = Edge(int(rec["s"]), Relation(rec["r"]), int(rec["d"]))
                if not (0 <= e.src < len(nodes) and 0 <= e.dst < len(nodes)):
                    raise ValueError("dangling edge")
                edges.append(e)
            else:
                raise ValueError("unknown record")
        except (KeyError, TypeError, ValueError) as exc:
            raise MalformedGraphFile(lineno, str(exc)) from None
    if header.get("nodes", len(nodes)) != len(nodes) or header.get("edges", len(edges)) != len(edges):
        raise MalformedGraphFile(len(records), "record count differs from header (truncated?)")
    return KnowledgeGraph(nodes, edges)


def load_graph(path: str | Path) -> KnowledgeGraph:
    return parse_graph(Path(path).read_bytes().decode("utf-8"))


# re-rank partition: causes at or before the failure's process first, then
# unknown order, then causes located after it
RERANK_CLASS = {
    OrderDistance.PRECEDES: 0,
    OrderDistance.OVERLAP: 0,
    OrderDistance.UNKNOWN: 1,
    OrderDistance.DISJOINT: 2,
}
