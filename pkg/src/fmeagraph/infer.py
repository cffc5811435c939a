"""Cause prediction for a new failure description.

The query is extracted with the same two-stage pipeline as the worksheets,
attached to the graph as a transient failure node, and candidate causes are
scored over has_Cause and then partitioned by process order.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field

import numpy as np

from .errors import FunctionNotFound, NoEntitiesExtracted
from .extract import DEFAULT_SHORTLIST_K, Existing, Extractor
from .features import assemble_node_features, make_provider
from .kg import RERANK_CLASS, Edge, KnowledgeGraph, Node, OrderDistance, Relation, concept_edges_for
from .llm import LlmClient
from .model import (
    HAS_CAUSE,
    CATEGORY_ORDER,
    Checkpoint,
    OrderTable,
    encode,
    graph_adjacency,
    score_triples,
)
from .ontology import ConceptClass, Ontology, normalize_label


@dataclass(frozen=True)
class Query:
    description: str
    line_id: str
    function: str | int


@dataclass(frozen=True)
class RankedCandidate:
    node_id: int
    label: str
    logit: float
    order: OrderDistance
    rank: int

    def to_json(self) -> dict:
        return {"rank": self.rank, "node": self.node_id, "label": self.label, "logit": self.logit,
                "order": self.order.value}


@dataclass
class QueryNodes:
    """Resolved function, matched concept nodes, and slots that found no node."""

    description: str
    function_node: int
    concepts: list[tuple[str, int]] = field(default_factory=list)
    unmatched: list[tuple[str, str, str]] = field(default_factory=list)


def resolve_function(g: KnowledgeGraph, line_id: str, function: str | int) -> int:
    fns = g.function_nodes(line_id)
    if isinstance(function, int) or (isinstance(function, str) and function.strip().isdigit()):
        pos = int(function)
        for n in fns:
            if n.order_index == pos:
                return n.node_id
        raise FunctionNotFound(line_id, str(function))
    key = normalize_label(function)
    for n in fns:
        if normalize_label(n.label) == key:
            return n.node_id
    raise FunctionNotFound(line_id, function)


def map_query_to_nodes(q: Query, g: KnowledgeGraph, ontology: Ontology, llm: LlmClient,
                       k: int = DEFAULT_SHORTLIST_K) -> QueryNodes:
    """Anchor the query at its function and map extracted concepts to graph nodes.

    The ontology is not modified: a NEW proposal is reported as unmatched.
    """
    fn = resolve_function(g, q.line_id, q.function)
    if not q.description or not q.description.strip():
        raise NoEntitiesExtracted("empty failure description")
    extractor = Extractor(ontology, llm, k)
    slots = extractor.slots(q.description).filled()
    if not slots:
        raise NoEntitiesExtracted(f"no entities in {q.description!r}")
    out = QueryNodes(q.description, fn)
    for slot, text in slots:
        res = extractor.resolve(slot, text, register=False)
        if res is None:
            out.unmatched.append((slot, text, ""))
            continue
        node = g.by_concept.get(res.concept) if isinstance(res.resolved, Existing) else None
        if node is None:
            out.unmatched.append((slot, text, str(res.concept)))
        else:
            out.concepts.append((slot, node))
    return out


def augment_with_anchor(g: KnowledgeGraph, qn: QueryNodes) -> tuple[KnowledgeGraph, int]:
    """Copy of ``g`` with a failure node for the query; returns the graph and the anchor id."""
    anchor = len(g)
    fn = g.nodes[qn.function_node]
    nodes = list(g.nodes) + [Node(anchor, ConceptClass.FAILURE, qn.description, fn.line_id)]
    edges = list(g.edges) + [Edge(anchor, Relation.HAPPENS_AT, fn.node_id)]
    for _, node in qn.concepts:
        edges.append(Edge(node, concept_edges_for(g.nodes[node].kind), anchor))
    return KnowledgeGraph(nodes, edges), anchor


def score_candidates(ckpt: Checkpoint, g: KnowledgeGraph, qn: QueryNodes, topk: int | None = None,
                     order_logit: bool = True) -> list[RankedCandidate]:
    """Every has_Cause tail scored against the query anchor, best first (ties: lower id)."""
    ckpt.check_alignment(g)
    if topk is not None and topk <= 0:
        return []
    aug, anchor = augment_with_anchor(g, qn)
    provider = make_provider(ckpt.provider)
    feats = assemble_node_features(aug, ckpt.pca, provider, ckpt.params.type_table)
    z = encode(graph_adjacency(aug), feats, ckpt.params).z
    cands = np.array(g.cause_nodes(), dtype=np.int64)
    trip = np.column_stack([np.full(len(cands), anchor), np.full(len(cands), HAS_CAUSE), cands])
    table = OrderTable(aug)
    logits = score_triples(z, ckpt.params.rel, trip)
    if order_logit:
        logits = logits + table.offsets(trip, ckpt.config)
    cats = table.categories(trip)
    order = np.lexsort([cands, -logits])
    if topk is not None:
        order = order[:topk]
    return [
        RankedCandidate(int(cands[i]), g.nodes[cands[i]].label, float(logits[i]), CATEGORY_ORDER[cats[i]], r)
        for r, i in enumerate(order, start=1)
    ]


def rerank_by_process(candidates: list[RankedCandidate]) -> list[RankedCandidate]:
    """Stable partition: precedes/overlap, then unknown, then disjoint; ranks renumbered."""
    ordered = sorted(candidates, key=lambda c: RERANK_CLASS[c.order])
    return [RankedCandidate(c.node_id, c.label, c.logit, c.order, r) for r, c in enumerate(ordered, start=1)]


def predict(q: Query, ckpt: Checkpoint, g: KnowledgeGraph, ontology: Ontology, llm: LlmClient,
            topk: int = 20, order_logit: bool = True, k: int = DEFAULT_SHORTLIST_K) -> list[RankedCandidate]:
    """Map, score every candidate, re-rank (when the model is process-aware) and keep ``topk``."""
    if topk <= 0:
        return []
    qn = map_query_to_nodes(q, g, ontology, llm, k)
    ranked = score_candidates(ckpt, g, qn, None, order_logit)
    if ckpt.config.process_rerank:
        ranked = rerank_by_process(ranked)
    return ranked[:topk]


def predictions_to_jsonl(ranked: list[RankedCandidate]) -> str:
    return "".join(json.dumps(c.to_json(), ensure_ascii=False) + "\n" for c in ranked)


def format_predictions(ranked: list[RankedCandidate]) -> str:
    width = max((len(c.label) for c in ranked), default=5)
    lines = [f"{'rank':>4}  {'label':<{width}}  {'logit':>10}  order"]
    lines += [f"{c.rank:>4}  {c.label:<{width}}  {c.logit:>10.4f}  {c.order.value}" for c in ranked]
    return "\n".join(lines) + "\n"
