import pytest

from fmeagraph.errors import ConfigError, InfeasibleSpec
from fmeagraph.kg import edge_violations
from fmeagraph.metrics import canonicalize
from fmeagraph.synth import (
    SynthSpec,
    format_synth_spec,
    generate_synthetic,
    load_dataset,
    parse_synth_spec,
    save_dataset,
    toy_graph,
)


def cause_labels(ws):
    return {r.cause_text.lower() for r in ws.records}


def test_default_shape():
    ds = generate_synthetic(SynthSpec(), 0)
    assert list(ds.worksheets) == ["line1", "line2", "line3", "target"]
    assert ds.source_lines == ["line1", "line2", "line3"]
    for ws in ds.worksheets.values():
        assert {r.order_index for r in ws.records} == set(range(5))
    assert len(ds.scenarios) == 4
    assert all(len(s.truth) == 3 + 2 for s in ds.scenarios)


def test_synonyms_differ_but_canonicalize_together():
    ds = generate_synthetic(SynthSpec(), 0)
    raw = [cause_labels(ds.worksheets[line]) for line in ds.source_lines]
    assert raw[0] != raw[1] or raw[1] != raw[2]
    canon = [{canonicalize(c, ds.aliases) for c in labels} for labels in raw]
    assert canon[0] & canon[1] & canon[2]


def test_target_truth_reachable_in_sources():
    ds = generate_synthetic(SynthSpec(), 1)
    source = set()
    for line in ds.source_lines:
        source |= {canonicalize(c, ds.aliases) for c in cause_labels(ds.worksheets[line])}
    for s in ds.scenarios:
        assert set(s.truth) <= source


def test_zero_noise_keeps_canonical_words():
    ds = generate_synthetic(SynthSpec(noise=0.0, coverage=1.0), 0)
    labels = [cause_labels(ds.worksheets[line]) for line in ds.source_lines]
    assert labels[0] == labels[1] == labels[2]
    assert all(canonicalize(c, ds.aliases) == c for c in labels[0])


def test_deterministic():
    a, b = generate_synthetic(SynthSpec(), 7), generate_synthetic(SynthSpec(), 7)
    assert a.worksheets == b.worksheets and a.scenarios == b.scenarios and a.aliases == b.aliases
    assert generate_synthetic(SynthSpec(), 8).worksheets != a.worksheets


@pytest.mark.parametrize("settings", [SynthSpec(lines=1), SynthSpec(functions=2), SynthSpec(noise=1.5),
                                      SynthSpec(causes_per_rule=1), SynthSpec(rules=40)])
def test_infeasible(settings):
    with pytest.raises(InfeasibleSpec):
        generate_synthetic(settings, 0)


def test_generator_settings_round_trip():
    spec = SynthSpec(lines=3, noise=0.1)
    assert parse_synth_spec(format_synth_spec(spec)) == spec
    with pytest.raises(ConfigError):
        parse_synth_spec("colour = blue\n")


def test_dataset_round_trip(tmp_path):
    ds = generate_synthetic(SynthSpec(), 3)
    save_dataset(ds, tmp_path)
    again = load_dataset(tmp_path)
    assert list(again.worksheets) == list(ds.worksheets)
    assert again.target_line == "target" and again.seed == 3 and again.spec == ds.spec
    assert again.aliases == ds.aliases and again.scenarios == ds.scenarios
    assert again.ontology == ds.ontology and again.lexicon == ds.lexicon
    for line, ws in ds.worksheets.items():
        assert [r.cause_text for r in again.worksheets[line].records] == [r.cause_text for r in ws.records]


def test_toy_graph():
    g = toy_graph(20, 0)
    assert len(g) == 20
    assert edge_violations(g) == []
    assert len({e.rel for e in g.edges}) == 5
    with pytest.raises(InfeasibleSpec):
        toy_graph(5)
