import math
from dataclasses import replace

import numpy as np
import pytest

from fmeagraph.errors import (
    AlignmentMismatch,
    LengthMismatch,
    MalformedCheckpoint,
    NoTrainableTriples,
    ShapeMismatch,
)
from fmeagraph.features import FeatureMatrix, node_kinds
from fmeagraph.kg import Edge, KnowledgeGraph, Node, OrderDistance, Relation
from fmeagraph.model import (
    AdamW,
    Checkpoint,
    ModelParams,
    OrderTable,
    TrainConfig,
    as_complex,
    bce_with_logits_loss,
    combined_score,
    complex_score,
    dump_checkpoint,
    finite_difference_check,
    graph_triples,
    init_params,
    load_checkpoint,
    loss_and_grads,
    order_score,
    rank_candidates,
    rgcn_forward,
    sample_negatives,
    save_checkpoint,
    score_triples,
    split_sizes,
    split_triples,
    train,
    triple_order,
    write_loss_trace,
)
from fmeagraph.ontology import ConceptClass
from fmeagraph.synth import toy_graph

SMALL = dict(hidden_dim=8, text_dim=6, type_dim=2)


def small_setup(num_nodes=20, seed=0, **cfg_kwargs):
    g = toy_graph(num_nodes, seed)
    cfg = TrainConfig(seed=seed, **{**SMALL, **cfg_kwargs})
    rng = np.random.default_rng(seed)
    p = init_params(cfg, rng)
    feats = FeatureMatrix(rng.normal(size=(len(g), cfg.text_dim)), node_kinds(g), p.type_table)
    return g, cfg, p, feats


def oracle_complex(h, r, t):
    total = 0j
    for a, b, c in zip(h, r, t):
        total += a * b * c.conjugate()
    return total.real


def random_complex(rng, n):
    return rng.normal(size=n) + 1j * rng.normal(size=n)


# ---------------------------------------------------------------------------
# scoring


def test_complex_score_cases():
    assert complex_score(np.zeros(4, complex), np.zeros(4, complex), np.zeros(4, complex)) == 0.0
    assert complex_score(np.array([1 + 0j]), np.array([1 + 0j]), np.array([1 + 0j])) == 1.0
    rng = np.random.default_rng(11)
    h, r, t = (random_complex(rng, 4) for _ in range(3))
    assert complex_score(h, r, t) == pytest.approx(oracle_complex(h, r, t), abs=1e-12)


def test_complex_score_antisymmetry_needs_imaginary_relation():
    rng = np.random.default_rng(5)
    h, t = random_complex(rng, 6), random_complex(rng, 6)
    real_r = rng.normal(size=6) + 0j
    assert complex_score(h, real_r, t) == pytest.approx(complex_score(t, real_r, h), abs=1e-12)
    imag_r = 1j * rng.normal(size=6)
    assert complex_score(h, imag_r, t) == pytest.approx(-complex_score(t, imag_r, h), abs=1e-12)


def test_complex_score_length_mismatch():
    with pytest.raises(LengthMismatch):
        complex_score(np.zeros(3), np.zeros(3), np.zeros(4))


def test_order_score_table():
    assert order_score(OrderDistance.PRECEDES, 0.7, -0.1) == 1.0
    assert order_score(OrderDistance.OVERLAP, 0.7, -0.1, 1) == 0.7
    assert order_score(OrderDistance.OVERLAP, 0.7, -0.1, 2) == pytest.approx(0.49)
    assert order_score(OrderDistance.DISJOINT, 0.7, -0.1) == -1.0
    assert order_score(OrderDistance.UNKNOWN, 0.7, -0.1) == -0.1


def chain_graph():
    """Two functions; failure at the second, one cause upstream and one downstream."""
    nodes = [
        Node(0, ConceptClass.FUNCTION, "a", "L", None, 0),
        Node(1, ConceptClass.FUNCTION, "b", "L", None, 1),
        Node(2, ConceptClass.FAILURE, "failure", "L"),
        Node(3, ConceptClass.FAILURE, "upstream cause", "L"),
        Node(4, ConceptClass.FAILURE, "late cause", "L"),
        Node(5, ConceptClass.FUNCTION, "c", "L", None, 2),
    ]
    edges = [Edge(0, Relation.PRECEDES, 1), Edge(1, Relation.PRECEDES, 5), Edge(2, Relation.HAPPENS_AT, 1),
             Edge(3, Relation.HAPPENS_AT, 0), Edge(4, Relation.HAPPENS_AT, 5), Edge(2, Relation.HAS_CAUSE, 3),
             Edge(2, Relation.HAS_CAUSE, 4)]
    return KnowledgeGraph(nodes, edges)


def test_has_cause_order_uses_causal_direction():
    g = chain_graph()
    assert triple_order(g, 2, Relation.HAS_CAUSE, 3) is OrderDistance.PRECEDES
    assert triple_order(g, 2, Relation.HAS_CAUSE, 4) is OrderDistance.DISJOINT
    assert triple_order(g, 0, Relation.PRECEDES, 1) is OrderDistance.PRECEDES
    table = OrderTable(g)
    trip = np.array([[2, 2, 3], [2, 2, 4], [2, 2, 2], [0, 4, 1]])
    assert table.categories(trip).tolist() == [0, 2, 1, 0]


def test_combined_score_terms():
    g = chain_graph()
    cfg = TrainConfig(**SMALL)
    p = init_params(cfg, np.random.default_rng(0))
    emb = np.random.default_rng(1).normal(size=(len(g), cfg.hidden_dim))
    triple = (2, Relation.HAS_CAUSE, 4)
    expected_complex = oracle_complex(as_complex(emb[2]), as_complex(p.rel[2]), as_complex(emb[4]))
    assert combined_score(g, emb, p, triple, cfg) == pytest.approx(expected_complex + 0.6 * -1.0, abs=1e-12)
    off = TrainConfig(**SMALL, lam=0.0)
    assert combined_score(g, emb, p, triple, off) == complex_score(
        as_complex(emb[2]), as_complex(p.rel[2]), as_complex(emb[4]))
    zero = np.zeros_like(emb)
    assert combined_score(g, zero, p, (2, Relation.HAS_CAUSE, 3), cfg) == pytest.approx(0.6)


def test_batched_scores_match_single():
    g, cfg, p, _ = small_setup()
    z = np.random.default_rng(2).normal(size=(len(g), cfg.hidden_dim))
    trip = graph_triples(g)
    batched = score_triples(z, p.rel, trip)
    single = [complex_score(as_complex(z[h]), as_complex(p.rel[r]), as_complex(z[t])) for h, r, t in trip]
    assert np.allclose(batched, single, atol=1e-12)
    offsets = OrderTable(g).offsets(trip, cfg)
    combined = [combined_score(g, z, p, (h, list(Relation)[r], t), cfg) for h, r, t in trip]
    assert np.allclose(batched + offsets, combined, atol=1e-12)


# ---------------------------------------------------------------------------
# loss, sampling, split


def test_bce_at_zero():
    assert bce_with_logits_loss([0.0], [1.0]) == pytest.approx(math.log(2))
    assert bce_with_logits_loss([0.0], [0.0]) == pytest.approx(math.log(2))


def test_bce_matches_naive_formula():
    rng = np.random.default_rng(4)
    x = rng.uniform(-8, 8, size=200)
    y = rng.integers(0, 2, size=200).astype(float)
    sig = 1 / (1 + np.exp(-x))
    naive = -np.mean(y * np.log(sig) + (1 - y) * np.log(1 - sig))
    assert bce_with_logits_loss(x, y) == pytest.approx(naive, abs=1e-10)


def test_bce_stable_and_checked():
    assert math.isfinite(bce_with_logits_loss([1000.0, -1000.0], [0.0, 1.0]))
    with pytest.raises(LengthMismatch):
        bce_with_logits_loss([0.0, 1.0], [1.0])


def test_negative_count_and_corruption():
    pos = np.array([[i, 2, (i + 1) % 12] for i in range(10)])
    neg = sample_negatives(pos, 5, np.random.default_rng(0), 12)
    assert neg.shape == (50, 3)
    assert np.array_equal(neg[:, :2], np.repeat(pos[:, :2], 5, axis=0))
    assert np.all(neg[:, 2] != np.repeat(pos[:, 2], 5))
    assert np.all((neg[:, 2] >= 0) & (neg[:, 2] < 12))


def test_negatives_two_nodes_forced():
    pos = np.array([[0, 2, 1], [1, 2, 0]])
    neg = sample_negatives(pos, 3, np.random.default_rng(0), 2)
    assert neg[:3, 2].tolist() == [0, 0, 0]
    assert neg[3:, 2].tolist() == [1, 1, 1]


def test_negatives_deterministic():
    pos = np.array([[0, 2, 1]] * 4)
    a = sample_negatives(pos, 5, np.random.default_rng(9), 30)
    b = sample_negatives(pos, 5, np.random.default_rng(9), 30)
    assert np.array_equal(a, b)


def test_split_sizes():
    assert split_sizes(100, (0.81, 0.09, 0.10)) == (81, 9, 10)
    assert split_sizes(1, (0.81, 0.09, 0.10)) == (1, 0, 0)
    assert split_sizes(0, (0.81, 0.09, 0.10)) == (0, 0, 0)
    for n in range(1, 60):
        assert sum(split_sizes(n, (0.81, 0.09, 0.10))) == n


def test_split_triples():
    causes = np.array([[i, 2, 100 + i] for i in range(100)])
    other = np.array([[i, 3, 200] for i in range(7)])
    tr, va, te = split_triples(np.vstack([causes, other]), rng=np.random.default_rng(1))
    assert (len(tr), len(va), len(te)) == (88, 9, 10)
    assert np.all(va[:, 1] == 2) and np.all(te[:, 1] == 2)
    assert {tuple(x) for x in other} <= {tuple(x) for x in tr}
    again = split_triples(np.vstack([causes, other]), rng=np.random.default_rng(1))
    assert all(np.array_equal(a, b) for a, b in zip((tr, va, te), again))
    one = split_triples(np.array([[0, 2, 1]]), rng=np.random.default_rng(0))
    assert [len(x) for x in one] == [1, 0, 0]


# ---------------------------------------------------------------------------
# encoder


def tiny_params(w1, w2, type_dim=0):
    return ModelParams(np.asarray(w1, float), np.asarray(w2, float), np.zeros((5, w2.shape[2])),
                       np.zeros((6, type_dim)))


def test_single_node_self_loop_only():
    g = KnowledgeGraph([Node(0, ConceptClass.FAILURE, "x")], [])
    x = np.array([[1.5, -2.0]])
    w = np.zeros((11, 2, 2))
    w[10] = np.eye(2)
    feats = FeatureMatrix(x, node_kinds(g), np.zeros((6, 0)))
    out = rgcn_forward(g, feats, tiny_params(w, w.copy()))
    assert np.array_equal(out, np.maximum(x, 0))


def test_one_edge_hand_computation():
    g = KnowledgeGraph([Node(0, ConceptClass.ACTION, "a"), Node(1, ConceptClass.FAILURE, "b")],
                       [Edge(0, Relation.ACTS_ON, 1)])
    x = np.array([[1.0, 2.0], [3.0, -1.0]])
    w1 = np.zeros((11, 2, 2))
    w1[0] = [[1.0, 0.5], [0.0, 1.0]]  # acts_on, src -> dst
    w1[5] = [[0.0, 1.0], [1.0, 0.0]]  # acts_on inverse
    w1[10] = [[1.0, 0.0], [0.0, -1.0]]
    w2 = np.zeros((11, 2, 2))
    w2[0] = [[0.0, 0.0], [2.0, 0.0]]
    w2[10] = np.eye(2)
    # layer 1 by hand, then ReLU
    #   node 0: self [1, -2] + inverse msg from node 1 [-1, 3]  -> [0, 1]
    #   node 1: self [3, 1]  + forward msg from node 0 [1, 2.5] -> [4, 3.5]
    # layer 2: node 1 adds h1[0] @ w2[0] = [2, 0]; node 0 has no inverse weight
    expected = np.array([[0.0, 1.0], [6.0, 3.5]])
    feats = FeatureMatrix(x, node_kinds(g), np.zeros((6, 0)))
    out = rgcn_forward(g, feats, tiny_params(w1, w2))
    assert np.allclose(out, expected)


def test_permutation_equivariance():
    g, cfg, p, feats = small_setup()
    perm = np.random.default_rng(3).permutation(len(g))
    inv = np.argsort(perm)  # old id -> new id
    nodes = [Node(i, g.nodes[perm[i]].kind, g.nodes[perm[i]].label, g.nodes[perm[i]].line_id,
                  g.nodes[perm[i]].concept, g.nodes[perm[i]].order_index) for i in range(len(g))]
    edges = [Edge(int(inv[e.src]), e.rel, int(inv[e.dst])) for e in g.edges]
    pg = KnowledgeGraph(nodes, edges)
    pfeats = FeatureMatrix(feats.text[perm], feats.kinds[perm], feats.type_table)
    assert np.allclose(rgcn_forward(pg, pfeats, p), rgcn_forward(g, feats, p)[perm], atol=1e-12)


def test_shape_mismatch():
    g, cfg, p, feats = small_setup()
    bad = FeatureMatrix(feats.text[:-1], feats.kinds[:-1], feats.type_table)
    with pytest.raises(ShapeMismatch):
        rgcn_forward(g, bad, p)
    narrow = FeatureMatrix(feats.text[:, :-1], feats.kinds, feats.type_table)
    with pytest.raises(ShapeMismatch):
        rgcn_forward(g, narrow, p)


# ---------------------------------------------------------------------------
# gradients and optimizer


def test_gradient_check_small():
    g, cfg, p, feats = small_setup()
    report = finite_difference_check(g, feats, p, probes=50, eps=1e-5, seed=1, cfg=cfg)
    assert len(report["probes"]) == 50
    assert report["max_rel_error"] < 1e-4
    assert {r["param"] for r in report["probes"]} == {"W1", "W2", "rel", "type_table"}


def test_gradient_check_without_edges_is_zero():
    g = KnowledgeGraph([Node(i, ConceptClass.FAILURE, str(i)) for i in range(3)], [])
    cfg = TrainConfig(**SMALL)
    p = init_params(cfg, np.random.default_rng(0))
    feats = FeatureMatrix(np.ones((3, cfg.text_dim)), node_kinds(g), p.type_table)
    report = finite_difference_check(g, feats, p, probes=12, cfg=cfg)
    for r in report["probes"]:
        assert abs(r["analytic"]) < 1e-10 and abs(r["numeric"]) < 1e-10


def test_gradient_check_detects_corruption():
    g, cfg, p, feats = small_setup()

    def corrupted(adj, features, params, batch):
        loss, grads = loss_and_grads(adj, features, params, batch)
        grads.W2 = grads.W2 * 1.5
        grads.rel = grads.rel + 1.0
        return loss, grads

    report = finite_difference_check(g, feats, p, probes=40, cfg=cfg, grad_fn=corrupted)
    assert report["max_rel_error"] > 1e-2


def reference_adamw(theta, grads, lr, b1, b2, eps, wd):
    m = np.zeros_like(theta)
    v = np.zeros_like(theta)
    for t, g in enumerate(grads, start=1):
        theta = theta - lr * wd * theta
        m = b1 * m + (1 - b1) * g
        v = b2 * v + (1 - b2) * g * g
        m_hat = m / (1 - b1 ** t)
        v_hat = v / (1 - b2 ** t)
        theta = theta - lr * m_hat / (np.sqrt(v_hat) + eps)
    return theta


def test_adamw_matches_reference():
    rng = np.random.default_rng(0)
    shapes = {"W1": (11, 3, 2), "W2": (11, 2, 2), "rel": (5, 2), "type_table": (6, 1)}
    p = ModelParams(*(rng.normal(size=s) for s in shapes.values()))
    start = p.copy()
    steps = [ModelParams(*(rng.normal(size=s) for s in shapes.values())) for _ in range(3)]
    opt = AdamW(p, lr=0.01, weight_decay=0.1)
    for g in steps:
        opt.step(p, g.copy())
    for name in shapes:
        want = reference_adamw(getattr(start, name), [getattr(g, name) for g in steps], 0.01, 0.9, 0.999, 1e-8, 0.1)
        assert np.allclose(getattr(p, name), want, atol=1e-12)


# ---------------------------------------------------------------------------
# training


def test_zero_epochs_returns_initial_params():
    g, cfg, p, feats = small_setup(epochs=0)
    ckpt = train(g, feats, cfg)
    assert ckpt.loss_trace == []
    fresh = init_params(cfg, np.random.default_rng(np.random.SeedSequence(cfg.seed).spawn(3)[0]))
    assert np.array_equal(ckpt.params.W1, fresh.W1)
    assert np.array_equal(ckpt.params.type_table, feats.type_table)


def test_training_reduces_loss():
    g, cfg, p, feats = small_setup(epochs=60, learning_rate=0.01, eval_every=20)
    ckpt = train(g, feats, cfg)
    assert len(ckpt.loss_trace) == 60
    assert ckpt.loss_trace[-1] < ckpt.loss_trace[0]
    assert [e for e, _ in ckpt.val_trace] == [20, 40, 60] or ckpt.val_trace == []
    assert ckpt.best_epoch > 0


def test_training_is_deterministic():
    g, cfg, p, feats = small_setup(epochs=15)
    assert dump_checkpoint(train(g, feats, cfg)) == dump_checkpoint(train(g, feats, cfg))


def test_no_has_cause_triples():
    g = KnowledgeGraph([Node(0, ConceptClass.FUNCTION, "a", "L", None, 0),
                        Node(1, ConceptClass.FUNCTION, "b", "L", None, 1)], [Edge(0, Relation.PRECEDES, 1)])
    cfg = TrainConfig(**SMALL)
    feats = FeatureMatrix(np.ones((2, 6)), node_kinds(g), np.zeros((6, 2)))
    with pytest.raises(NoTrainableTriples):
        train(g, feats, cfg)


def test_order_term_lowers_disjoint_logits():
    g, cfg, p, feats = small_setup(num_nodes=30, seed=2, epochs=40, learning_rate=0.01, split=(1.0, 0.0, 0.0))
    table = OrderTable(g)
    n = len(g)
    every = np.array([[h, 2, t] for h in range(n) for t in range(n) if h != t])
    disjoint = every[table.categories(every) == 2]
    assert len(disjoint) > 0

    def mean_logit(c):
        ckpt = train(g, feats, c)
        z = rgcn_forward(g, feats, ckpt.params)
        return float(np.mean(score_triples(z, ckpt.params.rel, disjoint) + table.offsets(disjoint, c)))

    assert mean_logit(cfg) < mean_logit(replace(cfg, lam=0.0))


def test_rank_candidates_ties_and_classes():
    cands = np.array([7, 3, 5])
    assert rank_candidates(np.array([1.0, 1.0, 2.0]), cands).tolist() == [5, 3, 7]
    assert rank_candidates(np.array([1.0, 1.0, 2.0]), cands, np.array([0, 0, 2])).tolist() == [3, 7, 5]


# ---------------------------------------------------------------------------
# checkpoints


def test_checkpoint_round_trip(tmp_path):
    g, cfg, p, feats = small_setup(epochs=3, eval_every=1)
    ckpt = train(g, feats, cfg)
    path = tmp_path / "m.ckpt"
    save_checkpoint(ckpt, path)
    again = load_checkpoint(path)
    assert dump_checkpoint(again) == path.read_text(encoding="utf-8")
    again.check_alignment(g)
    other = toy_graph(21, 0)
    with pytest.raises(AlignmentMismatch):
        again.check_alignment(other)
    trace = tmp_path / "loss.csv"
    write_loss_trace(again, trace)
    lines = trace.read_text().splitlines()
    assert lines[0] == "epoch,train_loss,val_f1_at_10" and len(lines) == 4


def test_malformed_checkpoint(tmp_path):
    path = tmp_path / "bad.ckpt"
    path.write_text("{}", encoding="utf-8")
    with pytest.raises(MalformedCheckpoint):
        load_checkpoint(path)
    path.write_text("not json", encoding="utf-8")
    with pytest.raises(MalformedCheckpoint):
        load_checkpoint(path)
    with pytest.raises(MalformedCheckpoint):
        Checkpoint.from_json({"format": "fmea-ckpt", "version": 1})


def test_config_validation():
    with pytest.raises(ValueError):
        TrainConfig(split=(0.5, 0.5, 0.5))
    with pytest.raises(ValueError):
        TrainConfig(hidden_dim=7)
    assert TrainConfig.from_json(TrainConfig().to_json()) == TrainConfig()
