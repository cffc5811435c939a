"""Seeded synthetic multi-line FMEA data with planted cause rules.

Every line runs the same sequence of function types. Latent rules tie a
failure (state + component) at a function to a set of causes; each line words
the shared vocabulary through its own synonyms. A shared upstream failure at
the first function contributes causes to every rule, and decoy failures that
share a rule's state sit at downstream functions with unrelated causes.

The target line keeps one cause record per rule; the remaining records of
each rule are held out as query scenarios whose ground truth is the rule's
canonical cause labels.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .errors import ConfigError, InfeasibleSpec
from .ingest import FmeaRecord, Worksheet, format_worksheet, parse_worksheet
from .llm import LexiconTerm, load_lexicon, save_lexicon
from .ontology import ConceptClass, ConceptId, Ontology, OntologyEntry, load_ontology, normalize_label, save_ontology

# canonical word first, then synonyms
ACTIONS = [
    ["supply", "feeding", "loading"],
    ["clamping", "fastening", "holding"],
    ["cutting", "trimming", "slicing"],
    ["bonding", "gluing", "joining"],
    ["inspection", "checking", "examination"],
    ["assembly", "mounting", "fitting"],
    ["washing", "rinsing", "cleansing"],
    ["packing", "boxing", "wrapping"],
]
OBJECTS = [["workpiece", "part", "blank"]]
STATES = [
    ["misalignment", "offset", "deviation"],
    ["wear", "abrasion", "erosion"],
    ["contamination", "soiling", "dirt"],
    ["crack", "fissure", "split"],
    ["slip", "slippage", "sliding"],
    ["deformation", "warping", "bending"],
    ["looseness", "play", "slack"],
    ["breakage", "rupture", "snapping"],
    ["clogging", "blockage", "obstruction"],
    ["overheating", "overtemperature", "heat buildup"],
    ["burr", "flash", "sharp edge"],
    ["leak", "leakage", "seepage"],
]
COMPONENTS = [
    ["gripper", "chuck", "clamp jaw"],
    ["blade", "cutter", "knife"],
    ["nozzle", "dispenser tip", "applicator"],
    ["sensor", "detector", "probe"],
    ["camera", "imager", "vision unit"],
    ["belt", "conveyor", "transport band"],
    ["spindle", "shaft", "arbor"],
    ["motor", "drive", "actuator"],
    ["jig", "fixture", "holder"],
    ["hopper", "feeder bin", "supply bin"],
    ["bearing", "bushing", "race"],
    ["lamp", "light source", "illuminator"],
    ["hose", "tube", "pipe"],
    ["cylinder", "piston", "ram"],
]
EFFECTS = ["Line stoppage", "Product rework", "Scrapped unit", "Delayed shipment"]


@dataclass(frozen=True)
class SynthSpec:
    lines: int = 4  # the last one is the target line
    functions: int = 5
    rules: int = 4
    causes_per_rule: int = 3
    shared_causes: int = 2
    decoy_causes: int = 2
    noise: float = 0.3
    coverage: float = 0.8

    def validate(self) -> None:
        if self.lines < 2:
            raise InfeasibleSpec("transfer needs at least two lines (one source and one target)")
        if self.functions < 3:
            raise InfeasibleSpec("at least three functions per line are required")
        if self.functions > len(ACTIONS):
            raise InfeasibleSpec(f"at most {len(ACTIONS)} functions per line are supported")
        if self.rules < 1 or self.causes_per_rule < 2:
            raise InfeasibleSpec("need at least one rule with two causes")
        if not 0.0 <= self.noise <= 1.0 or not 0.0 < self.coverage <= 1.0:
            raise InfeasibleSpec("noise must lie in [0, 1] and coverage in (0, 1]")
        pairs_needed = (1 + self.shared_causes) + self.rules * (2 + self.causes_per_rule + self.decoy_causes)
        if pairs_needed > len(STATES) * len(COMPONENTS):
            raise InfeasibleSpec("vocabulary too small for the requested rules")


_SPEC_KEYS = {f: type(getattr(SynthSpec(), f)) for f in SynthSpec.__dataclass_fields__}


def parse_synth_spec(text: str) -> SynthSpec:
    """Flat ``key = value`` text with ``#`` comments."""
    values = {}
    for lineno, raw in enumerate(text.splitlines(), start=1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigError(f"line {lineno}: expected key = value")
        key, value = (s.strip() for s in line.split("=", 1))
        if key not in _SPEC_KEYS:
            raise ConfigError(f"line {lineno}: unknown generator key {key!r}")
        try:
            values[key] = _SPEC_KEYS[key](value)
        except ValueError:
            raise ConfigError(f"line {lineno}: bad value for {key}: {value!r}") from None
    return SynthSpec(**values)


def format_synth_spec(spec: SynthSpec) -> str:
    return "".join(f"{k} = {getattr(spec, k)}\n" for k in _SPEC_KEYS)


@dataclass(frozen=True)
class ScenarioRecord:
    line: str
    function: str
    desc: str
    truth: tuple[str, ...]

    def to_json(self) -> dict:
        return {"line": self.line, "function": self.function, "desc": self.desc, "truth": list(self.truth)}


@dataclass
class SyntheticDataset:
    worksheets: dict[str, Worksheet]
    ontology: Ontology
    lexicon: list[LexiconTerm]
    aliases: dict[str, str]
    scenarios: list[ScenarioRecord]
    target_line: str
    spec: SynthSpec = field(default_factory=SynthSpec)
    seed: int = 0

    @property
    def source_lines(self) -> list[str]:
        return [line for line in self.worksheets if line != self.target_line]


def _cap(text: str) -> str:
    return text[:1].upper() + text[1:]


def _phrase(state: str, component: str) -> str:
    return _cap(f"{state} of {component}")


def _vocabulary() -> list[tuple[ConceptClass, list[str]]]:
    vocab = [(ConceptClass.ACTION, w) for w in ACTIONS]
    vocab += [(ConceptClass.COMPONENT, w) for w in OBJECTS + COMPONENTS]
    vocab += [(ConceptClass.STATE, w) for w in STATES]
    return vocab


def _ontology_and_lexicon() -> tuple[Ontology, list[LexiconTerm]]:
    entries = []
    lexicon = []
    counters: dict[ConceptClass, int] = {}
    roots = {}
    for cls, root in ((ConceptClass.ACTION, "Process action"), (ConceptClass.STATE, "Abnormal state"),
                      (ConceptClass.COMPONENT, "Equipment element")):
        counters[cls] = 1
        roots[cls] = ConceptId(cls.prefix, 1)
        entries.append(OntologyEntry(roots[cls], root, None, cls))
    for cls, words in _vocabulary():
        counters[cls] += 1
        cid = ConceptId(cls.prefix, counters[cls])
        entries.append(OntologyEntry(cid, _cap(words[0]), roots[cls], cls))
        lexicon += [LexiconTerm(w, cls.value.lower(), str(cid)) for w in words]
    # parameters are unused by the generator but every slot needs a subtree
    entries.append(OntologyEntry(ConceptId("P", 1), "Operating condition", None, ConceptClass.PARAMETER))
    return Ontology(entries), lexicon


def generate_synthetic(spec: SynthSpec, seed: int) -> SyntheticDataset:
    spec.validate()
    rng = np.random.default_rng(seed)
    line_ids = [f"line{i + 1}" for i in range(spec.lines - 1)] + ["target"]
    target = line_ids[-1]

    # per-line wording: each vocabulary entry keeps its canonical word or swaps in a synonym
    wording: dict[str, dict[str, str]] = {}
    for line in line_ids:
        table = {}
        for _, words in _vocabulary():
            pick = words[0]
            if rng.random() < spec.noise:
                pick = words[1 + int(rng.integers(0, len(words) - 1))]
            table[words[0]] = pick
        wording[line] = table

    state_order = rng.permutation(len(STATES))
    comp_order = rng.permutation(len(COMPONENTS))
    used: set[tuple[int, int]] = set()

    def draw_pair(state: int | None = None) -> tuple[str, str]:
        for _ in range(10_000):
            s = int(rng.integers(0, len(STATES))) if state is None else state
            c = int(comp_order[int(rng.integers(0, len(COMPONENTS)))])
            if (s, c) not in used:
                used.add((s, c))
                return STATES[s][0], COMPONENTS[c][0]
        raise InfeasibleSpec("could not draw distinct state/component pairs")

    rule_positions = max(1, (spec.functions - 1) // 2)
    functions = [ACTIONS[i][0] for i in range(spec.functions)]

    upstream_failure = draw_pair()
    shared = [draw_pair() for _ in range(spec.shared_causes)]
    rules = []
    for r in range(spec.rules):
        state = int(state_order[r % len(STATES)])
        failure = draw_pair(state)
        causes = [draw_pair() for _ in range(spec.causes_per_rule)]
        decoy = draw_pair(state)
        decoy_causes = [draw_pair() for _ in range(spec.decoy_causes)]
        rules.append({
            "position": 1 + r % rule_positions,
            "decoy_position": 1 + rule_positions + r % (spec.functions - 1 - rule_positions),
            "failure": failure,
            "causes": causes,
            "decoy": decoy,
            "decoy_causes": decoy_causes,
        })

    # which source lines realize each rule cause (every cause in at least one)
    sources = line_ids[:-1]
    coverage = {}
    for r, rule in enumerate(rules):
        for c in range(len(rule["causes"])):
            lines = [line for line in sources if rng.random() < spec.coverage]
            if not lines:
                lines = [sources[int(rng.integers(0, len(sources)))]]
            coverage[(r, c)] = set(lines)

    def say(line: str, state: str, comp: str) -> str:
        return _phrase(wording[line][state], wording[line][comp])

    def fn_text(line: str, pos: int) -> str:
        return _cap(f"{wording[line][functions[pos]]} of {wording[line]['workpiece']}")

    def effect() -> str:
        return EFFECTS[int(rng.integers(0, len(EFFECTS)))]

    worksheets = {}
    scenarios = []
    for line in line_ids:
        rows: list[tuple[int, str, str, str]] = []  # (position, failure, cause, effect)
        up_effect = effect()
        for s, c in shared:
            rows.append((0, say(line, *upstream_failure), say(line, s, c), up_effect))
        for r, rule in enumerate(rules):
            fail_text = say(line, *rule["failure"])
            eff = effect()
            if line == target:
                kept = rule["causes"][0]
                rows.append((rule["position"], fail_text, say(line, *kept), eff))
                truth = [normalize_label(_phrase(*p)) for p in rule["causes"] + shared]
                scenarios.append(ScenarioRecord(line, fn_text(line, rule["position"]), fail_text, tuple(truth)))
            else:
                for c, pair in enumerate(rule["causes"]):
                    if line in coverage[(r, c)]:
                        rows.append((rule["position"], fail_text, say(line, *pair), eff))
            decoy_text = say(line, *rule["decoy"])
            deff = effect()
            for pair in rule["decoy_causes"]:
                rows.append((rule["decoy_position"], decoy_text, say(line, *pair), deff))
        order = rng.permutation(len(rows))
        # the worksheet lists functions in process order; records within a function are shuffled
        ordered = sorted((rows[i] for i in order), key=lambda row: row[0])
        records = tuple(
            FmeaRecord(line, pos, fn_text(line, pos), fail, cause, eff, None) for pos, fail, cause, eff in ordered
        )
        missing = set(range(spec.functions)) - {rec.order_index for rec in records}
        if missing:
            raise InfeasibleSpec(f"functions {sorted(missing)} of {line} received no records")
        worksheets[line] = Worksheet(line, records)

    ontology, lexicon = _ontology_and_lexicon()
    aliases = {}
    for line in line_ids:
        for s, c in _all_pairs(upstream_failure, shared, rules):
            aliases[normalize_label(say(line, s, c))] = normalize_label(_phrase(s, c))
    return SyntheticDataset(worksheets, ontology, lexicon, aliases, scenarios, target, spec, seed)


def _all_pairs(upstream, shared, rules):
    yield upstream
    yield from shared
    for rule in rules:
        yield rule["failure"]
        yield from rule["causes"]
        yield rule["decoy"]
        yield from rule["decoy_causes"]


# ---------------------------------------------------------------------------
# file layout


def save_dataset(ds: SyntheticDataset, out_dir: str | Path) -> None:
    out = Path(out_dir)
    (out / "lines").mkdir(parents=True, exist_ok=True)
    for line, ws in ds.worksheets.items():
        (out / "lines" / f"{line}.csv").write_text(format_worksheet(ws), encoding="utf-8")
    save_ontology(ds.ontology, out / "ontology.tsv")
    save_lexicon(ds.lexicon, out / "lexicon.tsv")
    save_aliases(ds.aliases, out / "aliases.tsv")
    save_scenarios(ds.scenarios, out / "scenarios.jsonl")
    (out / "synth.cfg").write_text(
        f"# seed = {ds.seed}\n# target = {ds.target_line}\n" + format_synth_spec(ds.spec), encoding="utf-8"
    )


def load_dataset(data_dir: str | Path) -> SyntheticDataset:
    d = Path(data_dir)
    cfg_text = (d / "synth.cfg").read_text(encoding="utf-8")
    header = dict(
        (k.strip(), v.strip())
        for k, v in (ln[1:].split("=", 1) for ln in cfg_text.splitlines() if ln.startswith("#") and "=" in ln)
    )
    worksheets = {p.stem: parse_worksheet(p) for p in sorted((d / "lines").glob("*.csv"))}
    target = header.get("target", "target")
    worksheets = {k: worksheets[k] for k in sorted(worksheets, key=lambda k: (k == target, k))}
    return SyntheticDataset(
        worksheets=worksheets,
        ontology=load_ontology(d / "ontology.tsv"),
        lexicon=load_lexicon(d / "lexicon.tsv"),
        aliases=load_aliases(d / "aliases.tsv"),
        scenarios=load_scenarios(d / "scenarios.jsonl"),
        target_line=target,
        spec=parse_synth_spec(cfg_text),
        seed=int(header.get("seed", 0)),
    )


def save_aliases(aliases: dict[str, str], path: str | Path) -> None:
    lines = ["# variant\tcanonical"] + [f"{k}\t{v}" for k, v in sorted(aliases.items())]
    Path(path).write_text("\n".join(lines) + "\n", encoding="utf-8")


def load_aliases(path: str | Path) -> dict[str, str]:
    out = {}
    for raw in Path(path).read_text(encoding="utf-8").splitlines():
        if raw.strip() and not raw.startswith("#"):
            variant, canonical = raw.split("\t")
            out[normalize_label(variant)] = normalize_label(canonical)
    return out


def save_scenarios(scenarios: list[ScenarioRecord], path: str | Path) -> None:
    Path(path).write_text(
        "".join(json.dumps(s.to_json(), ensure_ascii=False) + "\n" for s in scenarios), encoding="utf-8"
    )


def load_scenarios(path: str | Path) -> list[ScenarioRecord]:
    out = []
    for lineno, raw in enumerate(Path(path).read_text(encoding="utf-8").splitlines(), start=1):
        if not raw.strip():
            continue
        try:
            obj = json.loads(raw)
            out.append(ScenarioRecord(obj["line"], str(obj["function"]), obj["desc"], tuple(obj["truth"])))
        except (ValueError, KeyError, TypeError) as exc:
            raise ConfigError(f"{path}:{lineno}: bad scenario record ({exc})") from None
    return out


def toy_graph(num_nodes: int = 20, seed: int = 0):
    """Small random single-line graph that uses every relation; for gradient checks."""
    from .kg import Edge, KnowledgeGraph, Node, Relation

    if num_nodes < 8:
        raise InfeasibleSpec("toy graph needs at least 8 nodes")
    rng = np.random.default_rng(seed)
    n_fn = max(2, num_nodes // 5)
    n_concept = max(2, num_nodes // 5)
    n_fail = num_nodes - n_fn - n_concept
    classes = (ConceptClass.ACTION, ConceptClass.STATE, ConceptClass.COMPONENT, ConceptClass.PARAMETER)
    nodes = []
    for i in range(n_concept):
        cls = classes[i % 4]
        nodes.append(Node(len(nodes), cls, f"{cls.value} {i}", None, ConceptId(cls.prefix, i + 1)))
    fns = []
    for i in range(n_fn):
        fns.append(len(nodes))
        nodes.append(Node(len(nodes), ConceptClass.FUNCTION, f"Step {i}", "toy", None, i))
    fails = []
    for i in range(n_fail):
        fails.append(len(nodes))
        nodes.append(Node(len(nodes), ConceptClass.FAILURE, f"Failure mode {i}", "toy"))
    edges = [Edge(a, Relation.PRECEDES, b) for a, b in zip(fns, fns[1:])]
    for f in fails:
        edges.append(Edge(f, Relation.HAPPENS_AT, fns[int(rng.integers(0, n_fn))]))
    half = len(fails) // 2
    for f in fails[:half]:
        edges.append(Edge(f, Relation.HAS_CAUSE, fails[half + int(rng.integers(0, len(fails) - half))]))
    edges.append(Edge(fails[0], Relation.AFFECTS, fails[-1]))
    for c in range(n_concept):
        rel = Relation.ACTS_ON if nodes[c].kind in (ConceptClass.ACTION, ConceptClass.COMPONENT) else Relation.AFFECTS
        for target in rng.choice(fails + fns, size=2, replace=False):
            edges.append(Edge(c, rel, int(target)))
    return KnowledgeGraph(nodes, edges)
