"""Command-line entry point: ``fmeagraph <subcommand> ...``.

Exit status is 0 on success, 1 on domain errors and 2 on usage errors.
Diagnostics go to standard error; data goes to standard output or ``--out``.
"""

from __future__ import annotations

import argparse
import json
import logging
import sys
from dataclasses import asdict
from pathlib import Path

import numpy as np

from .config import RunConfig, format_value, parse_overrides, resolve_config
from .errors import ConfigError, FmeaError
from .ontology import Ontology, default_ontology_path, load_ontology, save_ontology

logger = logging.getLogger("fmeagraph")


# ---------------------------------------------------------------------------
# helpers


def _echo(cfg: RunConfig, extra: dict | None = None) -> None:
    print("# resolved configuration", file=sys.stderr)
    for line in cfg.echo().splitlines():
        print(f"#   {line}", file=sys.stderr)
    for k, v in (extra or {}).items():
        print(f"#   {k} = {v}", file=sys.stderr)


def _resolve(args, **flags) -> RunConfig:
    overrides = parse_overrides(getattr(args, "set", None) or [])
    overrides.update({k: v for k, v in flags.items() if v is not None})
    return resolve_config(getattr(args, "config", None), overrides)


def _ontology(path: str | None) -> Ontology:
    return load_ontology(path or default_ontology_path())


def _make_llm(cfg: RunConfig, ontology: Ontology, lexicon: str | None, record: str | None):
    from .llm import HttpLLM, MockLLM, RecordingLLM, ReplayLLM, load_lexicon

    if cfg.llm == "mock":
        extra = load_lexicon(lexicon) if lexicon else []
        llm = MockLLM.from_ontology(ontology, extra)
    elif cfg.llm == "replay":
        if not cfg.transcripts:
            raise ConfigError("the replay backend needs --transcripts")
        llm = ReplayLLM(cfg.transcripts)
    elif cfg.llm == "http":
        llm = HttpLLM(cfg.llm_model)
    else:
        raise ConfigError(f"unknown llm backend {cfg.llm!r}")
    return RecordingLLM(llm, record) if record else llm


def _make_provider(cfg: RunConfig):
    from .features import HttpEmbeddings, OfflineEmbeddings

    if cfg.embedding == "offline":
        return OfflineEmbeddings(cfg.embedding_dim)
    if cfg.embedding == "http":
        return HttpEmbeddings(cfg.embedding_model, cfg.embedding_dim)
    raise ConfigError(f"unknown embedding provider {cfg.embedding!r}")


def _add_config_args(p: argparse.ArgumentParser) -> None:
    p.add_argument("--config", help="key = value configuration file")
    p.add_argument("--set", action="append", metavar="KEY=VALUE", help="override one configuration key")


def _add_llm_args(p: argparse.ArgumentParser) -> None:
    p.add_argument("--llm", choices=["mock", "replay", "http"], help="extraction backend")
    p.add_argument("--transcripts", help="JSON Lines transcript store for the replay backend")
    p.add_argument("--record", metavar="PATH", help="append every exchange to this transcript store")
    p.add_argument("--lexicon", help="extra term/slot/concept TSV for the mock backend")
    p.add_argument("--ontology", help="ontology TSV (default: bundled manufacturing ontology)")
    p.add_argument("--shortlist-k", type=int, help="candidates shown to the identifier selector")


# ---------------------------------------------------------------------------
# subcommands


def cmd_build_kg(args) -> int:
    from .extract import extract_worksheet
    from .ingest import build_process_flow, parse_worksheet
    from .kg import instantiate_graph, merge_graphs, save_graph, strip_concepts

    cfg = _resolve(args, llm=args.llm, transcripts=args.transcripts, shortlist_k=args.shortlist_k)
    _echo(cfg, {"worksheets": " ".join(args.worksheets)})
    ontology = _ontology(args.ontology)
    llm = _make_llm(cfg, ontology, args.lexicon, args.record)
    graphs, all_rows = [], []
    for path in args.worksheets:
        ws = parse_worksheet(path)
        rows = extract_worksheet(ws, ontology, llm, k=cfg.shortlist_k, on_error=args.on_error)
        all_rows += [{"line": ws.line_id, **r.to_json()} for r in rows]
        graphs.append(instantiate_graph(ws, rows, build_process_flow(ws), ontology))
        print(f"{ws.line_id}: {len(ws.records)} records", file=sys.stderr)
    g = merge_graphs(graphs)
    if args.no_concepts:
        g = strip_concepts(g)
    save_graph(g, args.out)
    if args.extractions:
        Path(args.extractions).write_text(
            "".join(json.dumps(r, ensure_ascii=False, sort_keys=True) + "\n" for r in all_rows), encoding="utf-8"
        )
    if args.ontology_out:
        save_ontology(ontology, args.ontology_out)
    print(f"graph: {len(g)} nodes, {len(g.edges)} edges -> {args.out}", file=sys.stderr)
    return 0


def cmd_train(args) -> int:
    from .features import assemble_node_features, fit_graph_pca, init_type_table, provider_info
    from .kg import load_graph
    from .model import save_checkpoint, train, write_loss_trace

    cfg = _resolve(args, seed=args.seed, epochs=args.epochs)
    _echo(cfg, {"kg": args.kg})
    tcfg = cfg.train_config()
    g = load_graph(args.kg)
    provider = _make_provider(cfg)
    pca = fit_graph_pca(g, provider, tcfg.text_dim)
    type_table = init_type_table(np.random.default_rng(tcfg.seed), tcfg.type_dim)
    feats = assemble_node_features(g, pca, provider, type_table)
    ckpt = train(g, feats, tcfg, pca=pca, provider=provider_info(provider))
    ckpt.run_config = {k: format_value(v) for k, v in asdict(cfg).items()}
    save_checkpoint(ckpt, args.out)
    if args.loss_trace:
        write_loss_trace(ckpt, args.loss_trace)
    if args.plot:
        from .plotting import plot_loss_trace

        plot_loss_trace(ckpt, args.plot)
    final = ckpt.loss_trace[-1] if ckpt.loss_trace else float("nan")
    print(f"trained {len(ckpt.loss_trace)} epochs, final loss {final:.6f}, best epoch {ckpt.best_epoch}"
          f" -> {args.out}", file=sys.stderr)
    return 0


def cmd_predict(args) -> int:
    from .infer import Query, format_predictions, predict, predictions_to_jsonl
    from .kg import load_graph
    from .model import load_checkpoint

    cfg = _resolve(args, llm=args.llm, transcripts=args.transcripts, shortlist_k=args.shortlist_k,
                   topk=args.topk, order_logit=False if args.no_order_logit else None)
    _echo(cfg, {"kg": args.kg, "ckpt": args.ckpt, "line": args.line, "function": args.function})
    g = load_graph(args.kg)
    ckpt = load_checkpoint(args.ckpt)
    ontology = _ontology(args.ontology)
    llm = _make_llm(cfg, ontology, args.lexicon, args.record)
    q = Query(args.desc, args.line, args.function)
    ranked = predict(q, ckpt, g, ontology, llm, cfg.topk, cfg.order_logit, cfg.shortlist_k)
    sys.stdout.write(format_predictions(ranked))
    if args.jsonl:
        Path(args.jsonl).write_text(predictions_to_jsonl(ranked), encoding="utf-8")
    return 0


def cmd_evaluate(args) -> int:
    from .evaluation import evaluate, evaluate_rankings, load_rankings, load_scenario_file
    from .synth import load_aliases

    cfg = _resolve(args, llm=args.llm, transcripts=args.transcripts, shortlist_k=args.shortlist_k,
                   order_logit=False if args.no_order_logit else None)
    _echo(cfg, {"scenarios": args.scenarios})
    aliases = load_aliases(args.aliases) if args.aliases else None
    scenarios = load_scenario_file(args.scenarios, aliases)
    n_values = tuple(range(1, args.max_n + 1))
    if args.rankings:
        report = evaluate_rankings(load_rankings(args.rankings), scenarios, n_values, aliases)
    else:
        if not (args.kg and args.ckpt):
            raise ConfigError("evaluate needs --kg and --ckpt unless --rankings is given")
        from .kg import load_graph
        from .model import load_checkpoint

        g = load_graph(args.kg)
        ckpt = load_checkpoint(args.ckpt)
        ckpt.check_alignment(g)
        ontology = _ontology(args.ontology)
        llm = _make_llm(cfg, ontology, args.lexicon, args.record)
        report = evaluate(ckpt, g, scenarios, ontology, llm, n_values, aliases, cfg.shortlist_k, cfg.order_logit)
    if args.out_dir:
        from .plotting import plot_metric_curves

        out = Path(args.out_dir)
        out.mkdir(parents=True, exist_ok=True)
        (out / "metrics.csv").write_text(report.to_csv(), encoding="utf-8")
        (out / "run.cfg").write_text(cfg.echo(), encoding="utf-8")
        plot_metric_curves(report, out / "metrics.png")
    else:
        sys.stdout.write(report.to_csv())
    for n in (1, 10, 20):
        if n in report.macro:
            p, r, f = report.macro[n]
            print(f"macro @{n}: P={p:.3f} R={r:.3f} F1={f:.3f}", file=sys.stderr)
    return 0


def cmd_ablate(args) -> int:
    from .evaluation import TABLE_CONFIGS, AblationConfig, prepare_dataset, run_ablation
    from .synth import load_dataset

    cfg = _resolve(args, seed=args.seed, epochs=args.epochs)
    seeds = list(range(args.seed, args.seed + args.runs))
    _echo(cfg, {"data": args.data, "seeds": ",".join(map(str, seeds))})
    configs = [AblationConfig.parse(c) for c in args.configs.split(",")] if args.configs else list(TABLE_CONFIGS)
    data = prepare_dataset(load_dataset(args.data))
    result = run_ablation(data, configs, seeds, cfg.train_config())
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    (out / "ablation.csv").write_text(result.to_csv(), encoding="utf-8")
    (out / "ablation.txt").write_text(result.to_text(), encoding="utf-8")
    (out / "run.cfg").write_text(cfg.echo() + f"seeds = {','.join(map(str, seeds))}\n", encoding="utf-8")
    from .plotting import plot_ablation

    plot_ablation(result, out / "ablation.png")
    sys.stdout.write(result.to_text())
    return 0


def cmd_gen_synth(args) -> int:
    from .synth import SynthSpec, generate_synthetic, parse_synth_spec, save_dataset

    spec = parse_synth_spec(Path(args.spec).read_text(encoding="utf-8")) if args.spec else SynthSpec()
    print(f"# generator seed = {args.seed}", file=sys.stderr)
    for k, v in vars(spec).items():
        print(f"#   {k} = {v}", file=sys.stderr)
    ds = generate_synthetic(spec, args.seed)
    save_dataset(ds, args.out)
    print(f"{len(ds.worksheets)} lines, {len(ds.scenarios)} scenarios -> {args.out}", file=sys.stderr)
    return 0


def cmd_grad_check(args) -> int:
    from .features import FeatureMatrix, node_kinds
    from .kg import load_graph
    from .model import TrainConfig, finite_difference_check, init_params
    from .synth import toy_graph

    print(f"# seed = {args.seed}, probes = {args.probes}, eps = {args.eps}", file=sys.stderr)
    g = load_graph(args.kg) if args.kg else toy_graph(args.nodes, args.seed)
    rng = np.random.default_rng(args.seed)
    cfg = TrainConfig(seed=args.seed)
    params = init_params(cfg, rng)
    feats = FeatureMatrix(rng.normal(size=(len(g), cfg.text_dim)), node_kinds(g), params.type_table)
    report = finite_difference_check(g, feats, params, args.probes, args.eps, args.seed, cfg)
    ok = report["max_rel_error"] < args.tol
    print(f"probes={len(report['probes'])} max_rel_error={report['max_rel_error']:.3e} "
          f"tolerance={args.tol:.0e} {'PASS' if ok else 'FAIL'}")
    return 0 if ok else 1


# ---------------------------------------------------------------------------
# parser


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="fmeagraph", description="FMEA knowledge-graph cause prediction")
    parser.add_argument("-v", "--verbose", action="store_true", help="debug logging")
    sub = parser.add_subparsers(dest="command", required=True, metavar="COMMAND")

    p = sub.add_parser("build-kg", help="extract worksheets and build the knowledge graph")
    p.add_argument("worksheets", nargs="+", help="worksheet CSV files (line id = file stem)")
    p.add_argument("--out", required=True, help="graph JSON Lines output")
    p.add_argument("--extractions", help="write extraction rows as JSON Lines")
    p.add_argument("--ontology-out", help="write the ontology including NEW entries")
    p.add_argument("--no-concepts", action="store_true", help="worksheet-level graph without concepts")
    p.add_argument("--on-error", choices=["abort", "skip"], default="abort")
    _add_config_args(p)
    _add_llm_args(p)
    p.set_defaults(func=cmd_build_kg)

    p = sub.add_parser("train", help="train the graph encoder and decoder")
    p.add_argument("--kg", required=True)
    p.add_argument("--seed", type=int, required=True)
    p.add_argument("--out", required=True, help="checkpoint output")
    p.add_argument("--epochs", type=int)
    p.add_argument("--loss-trace", help="CSV epoch,train_loss,val_f1_at_10")
    p.add_argument("--plot", help="loss curve image")
    _add_config_args(p)
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("predict", help="rank candidate causes for a failure description")
    p.add_argument("--kg", required=True)
    p.add_argument("--ckpt", required=True)
    p.add_argument("--line", required=True)
    p.add_argument("--function", required=True, help="function label or 0-based position")
    p.add_argument("--desc", required=True)
    p.add_argument("--topk", type=int)
    p.add_argument("--jsonl", help="also write ranked candidates as JSON Lines")
    p.add_argument("--no-order-logit", action="store_true", help="drop the order term from the logits")
    _add_config_args(p)
    _add_llm_args(p)
    p.set_defaults(func=cmd_predict)

    p = sub.add_parser("evaluate", help="macro P/R/F1@n over scenarios")
    p.add_argument("--scenarios", required=True)
    p.add_argument("--kg")
    p.add_argument("--ckpt")
    p.add_argument("--aliases", help="variant<TAB>canonical label map")
    p.add_argument("--rankings", help="precomputed rankings (JSON Lines) instead of a model")
    p.add_argument("--max-n", type=int, default=20)
    p.add_argument("--out-dir", help="write metrics.csv, metrics.png and run.cfg here")
    p.add_argument("--no-order-logit", action="store_true")
    _add_config_args(p)
    _add_llm_args(p)
    p.set_defaults(func=cmd_evaluate)

    p = sub.add_parser("ablate", help="heterogeneity/conceptualization/process ablation on a dataset")
    p.add_argument("--data", required=True, help="dataset directory written by gen-synth")
    p.add_argument("--seed", type=int, required=True, help="first training seed")
    p.add_argument("--runs", type=int, default=5, help="number of consecutive seeds")
    p.add_argument("--configs", help="comma-separated, e.g. H+C-P-,H+C+P+")
    p.add_argument("--epochs", type=int)
    p.add_argument("--out", required=True, help="report directory")
    _add_config_args(p)
    p.set_defaults(func=cmd_ablate)

    p = sub.add_parser("gen-synth", help="generate a seeded synthetic multi-line dataset")
    p.add_argument("--seed", type=int, required=True)
    p.add_argument("--spec", help="generator key = value file")
    p.add_argument("--out", required=True, help="output directory")
    p.set_defaults(func=cmd_gen_synth)

    p = sub.add_parser("grad-check", help="compare analytic and finite-difference gradients")
    p.add_argument("--kg", help="graph file (default: random toy graph)")
    p.add_argument("--nodes", type=int, default=20)
    p.add_argument("--probes", type=int, default=100)
    p.add_argument("--eps", type=float, default=1e-5)
    p.add_argument("--tol", type=float, default=1e-4)
    p.add_argument("--seed", type=int, default=0)
    p.set_defaults(func=cmd_grad_check)
    return parser


def main(argv: list[str] | None = None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return int(exc.code or 0)
    logging.basicConfig(level=logging.DEBUG if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s", stream=sys.stderr)
    try:
        return args.func(args)
    except FmeaError as exc:
        print(f"error: {type(exc).__name__}: {exc}", file=sys.stderr)
        return 1
    except OSError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
