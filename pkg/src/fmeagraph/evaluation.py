"""Scenario evaluation, the heterogeneity/conceptualization/process ablation, and reports."""

from __future__ import annotations

import csv
import io
import json
import logging
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np

from .errors import ConfigError, EmptyTruth
from .extract import extract_worksheet
from .features import OfflineEmbeddings, assemble_node_features, fit_graph_pca, init_type_table, provider_info
from .infer import Query, map_query_to_nodes, rerank_by_process, score_candidates
from .ingest import build_process_flow
from .kg import KnowledgeGraph, instantiate_graph, merge_graphs, strip_concepts
from .llm import LlmClient, MockLLM
from .metrics import canonicalize, dedupe, macro_average, metrics_at_n
from .model import Checkpoint, TrainConfig, train
from .ontology import Ontology
from .synth import ScenarioRecord, SyntheticDataset, load_scenarios

logger = logging.getLogger(__name__)

DEFAULT_N = tuple(range(1, 21))
TABLE_N = (1, 10, 20)


@dataclass(frozen=True)
class Scenario:
    query: Query
    ground_truth: frozenset[str]

    def __post_init__(self):
        if not self.ground_truth:
            raise EmptyTruth(f"scenario {self.query.description!r} has no ground truth")

    @classmethod
    def from_record(cls, rec: ScenarioRecord, aliases: dict[str, str] | None = None) -> "Scenario":
        truth = frozenset(canonicalize(t, aliases) for t in rec.truth)
        return cls(Query(rec.desc, rec.line, rec.function), truth)


def load_scenario_file(path: str | Path, aliases: dict[str, str] | None = None) -> list[Scenario]:
    return [Scenario.from_record(r, aliases) for r in load_scenarios(path)]


@dataclass
class MetricsReport:
    n_values: tuple[int, ...]
    per_scenario: list[dict[int, tuple[float, float, float]]]
    macro: dict[int, tuple[float, float, float]] = field(default_factory=dict)

    @classmethod
    def from_rankings(cls, rankings: Sequence[Sequence[str]], truths: Sequence[Iterable[str]],
                      n_values: Iterable[int] = DEFAULT_N) -> "MetricsReport":
        n_values = tuple(n_values)
        if not rankings:
            raise ValueError("at least one scenario is required")
        per = [{n: metrics_at_n(r, t, n) for n in n_values} for r, t in zip(rankings, truths, strict=True)]
        macro = {n: tuple(macro_average([p[n][i] for p in per]) for i in range(3)) for n in n_values}
        return cls(n_values, per, macro)

    def to_csv(self) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(["scenario", "n", "precision", "recall", "f1"])
        for i, per in enumerate(self.per_scenario):
            for n in self.n_values:
                w.writerow([i, n, *(repr(v) for v in per[n])])
        for n in self.n_values:
            w.writerow(["macro", n, *(repr(v) for v in self.macro[n])])
        return buf.getvalue()


def ranked_labels(ranked, aliases: dict[str, str] | None = None) -> list[str]:
    return dedupe(canonicalize(c.label, aliases) for c in ranked)


def scenario_ranking(ckpt: Checkpoint, g: KnowledgeGraph, scenario: Scenario, ontology: Ontology,
                     llm: LlmClient, aliases=None, k: int = 5, order_logit: bool = True) -> list[str]:
    qn = map_query_to_nodes(scenario.query, g, ontology, llm, k)
    ranked = score_candidates(ckpt, g, qn, None, order_logit)
    if ckpt.config.process_rerank:
        ranked = rerank_by_process(ranked)
    return ranked_labels(ranked, aliases)


def evaluate(ckpt: Checkpoint, g: KnowledgeGraph, scenarios: Sequence[Scenario], ontology: Ontology,
             llm: LlmClient, n_values: Iterable[int] = DEFAULT_N, aliases: dict[str, str] | None = None,
             k: int = 5, order_logit: bool = True) -> MetricsReport:
    """Rank every candidate cause per scenario, canonicalize, dedupe and score at each n."""
    if not scenarios:
        raise ValueError("scenarios must be non-empty")
    rankings = [scenario_ranking(ckpt, g, s, ontology, llm, aliases, k, order_logit) for s in scenarios]
    return MetricsReport.from_rankings(rankings, [s.ground_truth for s in scenarios], n_values)


def evaluate_rankings(rankings: Sequence[Sequence[str]], scenarios: Sequence[Scenario],
                      n_values: Iterable[int] = DEFAULT_N, aliases: dict[str, str] | None = None) -> MetricsReport:
    """Score precomputed rankings (e.g. from an external system)."""
    canon = [dedupe(canonicalize(label, aliases) for label in r) for r in rankings]
    return MetricsReport.from_rankings(canon, [s.ground_truth for s in scenarios], n_values)


def load_rankings(path: str | Path) -> list[list[str]]:
    """JSON Lines, one ``{"ranking": [...]}`` object per scenario, in scenario order."""
    out = []
    for lineno, raw in enumerate(Path(path).read_text(encoding="utf-8").splitlines(), start=1):
        if raw.strip():
            try:
                out.append([str(x) for x in json.loads(raw)["ranking"]])
            except (ValueError, KeyError, TypeError) as exc:
                raise ConfigError(f"{path}:{lineno}: bad ranking record ({exc})") from None
    return out


# ---------------------------------------------------------------------------
# ablation


@dataclass(frozen=True)
class AblationConfig:
    heterogeneous: bool = True
    conceptualization: bool = True
    process_aware: bool = True

    @property
    def name(self) -> str:
        return "".join(f"{k}{'+' if v else '-'}" for k, v in zip("HCP", self.flags))

    @property
    def flags(self) -> tuple[bool, bool, bool]:
        return (self.heterogeneous, self.conceptualization, self.process_aware)

    @classmethod
    def parse(cls, text: str) -> "AblationConfig":
        """``H+C-P+`` style names."""
        t = text.strip().upper()
        if len(t) != 6 or t[0::2] != "HCP" or any(c not in "+-" for c in t[1::2]):
            raise ConfigError(f"bad ablation config {text!r}; expected e.g. H+C+P+")
        return cls(*(c == "+" for c in t[1::2]))


# table rows in the usual order: (H, -, -), (H, C, -), (-, C, P), (H, C, P)
TABLE_CONFIGS = (
    AblationConfig(True, False, False),
    AblationConfig(True, True, False),
    AblationConfig(False, True, True),
    AblationConfig(True, True, True),
)


@dataclass
class PreparedData:
    """Per-line graphs and the ontology after extraction; shared by all runs."""

    line_graphs: dict[str, KnowledgeGraph]
    ontology: Ontology
    llm: LlmClient
    target_line: str
    scenarios: list[Scenario]
    aliases: dict[str, str]
    shortlist_k: int

    def graph_for(self, cfg: AblationConfig) -> KnowledgeGraph:
        lines = list(self.line_graphs) if cfg.heterogeneous else [self.target_line]
        g = merge_graphs([self.line_graphs[line] for line in lines])
        return g if cfg.conceptualization else strip_concepts(g)


def prepare_dataset(ds: SyntheticDataset, llm: LlmClient | None = None) -> PreparedData:
    ontology = Ontology(list(ds.ontology))
    llm = llm or MockLLM(ds.lexicon)
    # shortlist the whole subtree so synonyms reach the selector
    k = max(len(ontology.subtree(c)) for c in ontology.counts())
    graphs = {}
    for line, ws in ds.worksheets.items():
        rows = extract_worksheet(ws, ontology, llm, k=k)
        graphs[line] = instantiate_graph(ws, rows, build_process_flow(ws), ontology)
    scenarios = [Scenario.from_record(r, ds.aliases) for r in ds.scenarios]
    return PreparedData(graphs, ontology, llm, ds.target_line, scenarios, ds.aliases, k)


@dataclass
class AblationRun:
    config: AblationConfig
    seed: int
    report: MetricsReport
    train_triples: int
    checkpoint: Checkpoint


@dataclass
class AblationResult:
    runs: list[AblationRun]
    configs: list[AblationConfig]
    seeds: list[int]

    def runs_for(self, cfg: AblationConfig) -> list[AblationRun]:
        return [r for r in self.runs if r.config == cfg]

    def mean(self, cfg: AblationConfig, n: int) -> tuple[float, float, float]:
        reports = [r.report.macro[n] for r in self.runs_for(cfg)]
        return tuple(float(np.mean([m[i] for m in reports])) for i in range(3))

    def metric(self, cfg: AblationConfig, seed: int, n: int) -> tuple[float, float, float]:
        for r in self.runs:
            if r.config == cfg and r.seed == seed:
                return r.report.macro[n]
        raise KeyError((cfg, seed))

    def to_csv(self, n_values: Sequence[int] = TABLE_N) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(["config", "seed", "H", "C", "P"] + [f"{m}@{n}" for n in n_values for m in ("P", "R", "F1")])
        for cfg in self.configs:
            flags = [int(f) for f in cfg.flags]
            for run in self.runs_for(cfg):
                vals = [f"{v:.6f}" for n in n_values for v in run.report.macro[n]]
                w.writerow([cfg.name, run.seed, *flags, *vals])
            w.writerow([cfg.name, "mean", *flags, *(f"{v:.6f}" for n in n_values for v in self.mean(cfg, n))])
        return buf.getvalue()

    def to_text(self, n_values: Sequence[int] = TABLE_N) -> str:
        mark = {True: "✓", False: "–"}
        head = ["H", "C", "P"] + [f"{m}@{n}" for n in n_values for m in ("P", "R", "F1")]
        rows = []
        for cfg in self.configs:
            vals = [f"{v:.3f}" for n in n_values for v in self.mean(cfg, n)]
            rows.append([mark[f] for f in cfg.flags] + vals)
        widths = [max(len(h), *(len(r[i]) for r in rows)) for i, h in enumerate(head)]
        lines = ["  ".join(h.rjust(wd) for h, wd in zip(head, widths))]
        lines += ["  ".join(c.rjust(wd) for c, wd in zip(r, widths)) for r in rows]
        return "\n".join(lines) + "\n"


def train_config_for(base: TrainConfig, cfg: AblationConfig, seed: int) -> TrainConfig:
    if cfg.process_aware:
        return replace(base, seed=seed, process_rerank=True)
    return replace(base, seed=seed, lam=0.0, process_rerank=False)


def run_single(data: PreparedData, cfg: AblationConfig, seed: int, base: TrainConfig,
               n_values: Iterable[int] = DEFAULT_N) -> AblationRun:
    g = data.graph_for(cfg)
    tcfg = train_config_for(base, cfg, seed)
    provider = OfflineEmbeddings()
    pca = fit_graph_pca(g, provider, tcfg.text_dim)
    type_table = init_type_table(np.random.default_rng(seed), tcfg.type_dim)
    feats = assemble_node_features(g, pca, provider, type_table)
    ckpt = train(g, feats, tcfg, pca=pca, provider=provider_info(provider))
    report = evaluate(ckpt, g, data.scenarios, data.ontology, data.llm, n_values, data.aliases, data.shortlist_k)
    logger.info("%s seed %d: F1@10 %.3f R@10 %.3f (best epoch %d)", cfg.name, seed,
                report.macro[10][2] if 10 in report.macro else float("nan"),
                report.macro[10][1] if 10 in report.macro else float("nan"), ckpt.best_epoch)
    return AblationRun(cfg, seed, report, len(ckpt.split["train"]), ckpt)


def run_ablation(data: PreparedData | SyntheticDataset, configs: Sequence[AblationConfig] = TABLE_CONFIGS,
                 seeds: Sequence[int] = (0, 1, 2, 3, 4), base: TrainConfig | None = None,
                 n_values: Iterable[int] = DEFAULT_N) -> AblationResult:
    """Train and evaluate one model per (config, seed)."""
    if isinstance(data, SyntheticDataset):
        data = prepare_dataset(data)
    base = base or TrainConfig()
    n_values = tuple(n_values)
    runs = [run_single(data, cfg, seed, base, n_values) for cfg in configs for seed in seeds]
    return AblationResult(runs, list(configs), list(seeds))
