from __future__ import annotations

from pathlib import Path

import pytest

from fmeagraph.extract import extract_worksheet
from fmeagraph.ingest import build_process_flow, parse_worksheet
from fmeagraph.kg import instantiate_graph, load_graph, merge_graphs
from fmeagraph.ontology import default_ontology_path, load_ontology

FIXTURES = Path(__file__).parent / "fixtures"
LINE_FILES = [FIXTURES / "lines" / f"{name}.csv" for name in ("placement", "bonding", "transfer")]
GOLDEN_GRAPH = FIXTURES / "golden_graph.jsonl"
TRANSCRIPTS = FIXTURES / "transcripts.jsonl"
GROWN_ONTOLOGY = FIXTURES / "ontology_grown.tsv"


def build_fixture_graph(llm, ontology=None):
    """Extract the three fixture lines in order and merge them; returns (graph, ontology)."""
    ontology = ontology or load_ontology(default_ontology_path())
    graphs = []
    for path in LINE_FILES:
        ws = parse_worksheet(path)
        rows = extract_worksheet(ws, ontology, llm)
        graphs.append(instantiate_graph(ws, rows, build_process_flow(ws), ontology))
    return merge_graphs(graphs), ontology


@pytest.fixture(scope="session")
def golden_graph():
    return load_graph(GOLDEN_GRAPH)


@pytest.fixture
def base_ontology():
    return load_ontology(default_ontology_path())


_VERDICTS: list[str] = []


@pytest.hookimpl(hookwrapper=True)
def pytest_runtest_makereport(item, call):
    outcome = yield
    report = outcome.get_result()
    marker = item.get_closest_marker("criterion")
    if marker and (report.when == "call" or report.failed):
        _VERDICTS.append(f"{'PASS' if report.passed else 'FAIL'}  {marker.args[0]}")


def pytest_terminal_summary(terminalreporter):
    if _VERDICTS:
        terminalreporter.section("acceptance criteria")
        for line in _VERDICTS:
            terminalreporter.write_line(line)
