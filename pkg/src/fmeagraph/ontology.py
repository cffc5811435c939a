"""Concept registry for the manufacturing and FMEA ontologies.

Concepts are addressed by class-prefixed identifiers such as ``A-010``. The
registry holds Action/State/Component/Parameter entries; Function and Failure
exist as classes but their instances live in the knowledge graph.

File format: UTF-8, one entry per line, ``id<TAB>class<TAB>label<TAB>parent``
where ``parent`` is ``-`` for roots. Lines starting with ``#`` are comments.
"""

from __future__ import annotations

import re
from dataclasses import dataclass
from enum import Enum
from pathlib import Path
from typing import Iterable, Iterator

from .errors import (
    ClassMismatch,
    CyclicParent,
    DanglingParent,
    DuplicateId,
    EmptyLabel,
    MalformedEntry,
    UnknownParent,
)


class ConceptClass(Enum):
    ACTION = "Action"
    STATE = "State"
    COMPONENT = "Component"
    PARAMETER = "Parameter"
    FUNCTION = "Function"
    FAILURE = "Failure"

    @property
    def prefix(self) -> str:
        return _PREFIX[self]

    @property
    def is_manufacturing(self) -> bool:
        return self in MANUFACTURING_CLASSES

    @classmethod
    def from_prefix(cls, letter: str) -> "ConceptClass":
        try:
            return _BY_PREFIX[letter]
        except KeyError:
            raise ValueError(f"unknown class prefix {letter!r}") from None


_PREFIX = {
    ConceptClass.ACTION: "A",
    ConceptClass.STATE: "S",
    ConceptClass.COMPONENT: "C",
    ConceptClass.PARAMETER: "P",
    ConceptClass.FUNCTION: "F",
    ConceptClass.FAILURE: "X",
}
_BY_PREFIX = {v: k for k, v in _PREFIX.items()}

MANUFACTURING_CLASSES = (
    ConceptClass.ACTION,
    ConceptClass.STATE,
    ConceptClass.COMPONENT,
    ConceptClass.PARAMETER,
)

_ID_RE = re.compile(r"^([ASCPFX])-([0-9]{3})$")


@dataclass(frozen=True, order=True)
class ConceptId:
    prefix: str
    number: int

    def __post_init__(self):
        if self.prefix not in _BY_PREFIX or not 0 <= self.number <= 999:
            raise ValueError(f"invalid concept id {self.prefix}-{self.number}")

    @classmethod
    def parse(cls, text: str) -> "ConceptId":
        m = _ID_RE.match(text)
        if m is None:
            raise ValueError(f"invalid concept id {text!r}")
        return cls(m.group(1), int(m.group(2)))

    @property
    def concept_class(self) -> ConceptClass:
        return _BY_PREFIX[self.prefix]

    def __str__(self) -> str:
        return f"{self.prefix}-{self.number:03d}"


@dataclass(frozen=True)
class OntologyEntry:
    id: ConceptId
    label: str
    parent: ConceptId | None
    concept_class: ConceptClass


class Ontology:
    """Mutable-by-append registry with id and per-class indices."""

    def __init__(self, entries: Iterable[OntologyEntry] = ()):
        self._by_id: dict[ConceptId, OntologyEntry] = {}
        self._by_class: dict[ConceptClass, dict[ConceptId, OntologyEntry]] = {
            c: {} for c in ConceptClass
        }
        pending = list(entries)
        for entry in pending:
            if entry.id in self._by_id:
                raise DuplicateId(str(entry.id))
            self._by_id[entry.id] = entry
        for entry in pending:
            self._check_entry(entry)
        for entry in pending:
            self._by_class[entry.concept_class][entry.id] = entry

    def _check_entry(self, entry: OntologyEntry) -> None:
        if entry.id.concept_class is not entry.concept_class:
            raise ClassMismatch(str(entry.id))
        if entry.parent is None:
            return
        parent = self._by_id.get(entry.parent)
        if parent is None:
            raise DanglingParent(str(entry.id))
        if parent.concept_class is not entry.concept_class:
            raise ClassMismatch(str(entry.id))
        seen = {entry.id}
        cur = parent
        while cur is not None:
            if cur.id in seen:
                raise CyclicParent(str(entry.id))
            seen.add(cur.id)
            cur = self._by_id.get(cur.parent) if cur.parent is not None else None

    def __len__(self) -> int:
        return len(self._by_id)

    def __contains__(self, concept_id: object) -> bool:
        return concept_id in self._by_id

    def __iter__(self) -> Iterator[OntologyEntry]:
        return iter(sorted(self._by_id.values(), key=lambda e: e.id))

    def __eq__(self, other: object) -> bool:
        if not isinstance(other, Ontology):
            return NotImplemented
        return self._by_id == other._by_id

    def get(self, concept_id: ConceptId) -> OntologyEntry | None:
        return self._by_id.get(concept_id)

    def __getitem__(self, concept_id: ConceptId) -> OntologyEntry:
        return self._by_id[concept_id]

    def counts(self) -> dict[ConceptClass, int]:
        return {c: len(self._by_class[c]) for c in ConceptClass}

    def subtree(self, concept_class: ConceptClass) -> list[OntologyEntry]:
        """All entries of ``concept_class`` in id order."""
        return [self._by_class[concept_class][k] for k in sorted(self._by_class[concept_class])]

    def find_label(self, concept_class: ConceptClass, label: str) -> OntologyEntry | None:
        key = normalize_label(label)
        for entry in self.subtree(concept_class):
            if normalize_label(entry.label) == key:
                return entry
        return None

    def add_new_entry(self, parent: ConceptId, label: str) -> ConceptId:
        """Insert ``label`` under ``parent`` with the smallest unused ordinal of its class."""
        if parent not in self._by_id:
            raise UnknownParent(str(parent))
        label = label.strip()
        if not label:
            raise EmptyLabel()
        cls = self._by_id[parent].concept_class
        used = {cid.number for cid in self._by_class[cls]}
        number = next(n for n in range(1, 1001) if n not in used)
        if number > 999:
            raise OverflowError(f"no free ordinal left in class {cls.value}")
        new_id = ConceptId(cls.prefix, number)
        entry = OntologyEntry(new_id, label, parent, cls)
        self._by_id[new_id] = entry
        self._by_class[cls][new_id] = entry
        return new_id


def subtree(ontology: Ontology, concept_class: ConceptClass) -> list[OntologyEntry]:
    return ontology.subtree(concept_class)


def add_new_entry(ontology: Ontology, parent: ConceptId, label: str) -> ConceptId:
    return ontology.add_new_entry(parent, label)


def normalize_label(text: str) -> str:
    """Lowercase, trim and collapse internal whitespace."""
    return " ".join(text.lower().split())


def parse_ontology(text: str) -> Ontology:
    entries = []
    for lineno, raw in enumerate(text.splitlines(), start=1):
        if not raw.strip() or raw.lstrip().startswith("#"):
            continue
        fields = raw.split("\t")
        if len(fields) != 4:
            raise MalformedEntry(lineno, f"expected 4 tab-separated fields, got {len(fields)}")
        id_text, class_text, label, parent_text = (f.strip() for f in fields)
        try:
            cid = ConceptId.parse(id_text)
            cls = ConceptClass(class_text)
            parent = None if parent_text == "-" else ConceptId.parse(parent_text)
        except ValueError as exc:
            raise MalformedEntry(lineno, str(exc)) from None
        if not label:
            raise MalformedEntry(lineno, "empty label")
        entries.append(OntologyEntry(cid, label, parent, cls))
    return Ontology(entries)


def load_ontology(path: str | Path) -> Ontology:
    return parse_ontology(Path(path).read_text(encoding="utf-8"))


def dump_ontology(ontology: Ontology) -> str:
    lines = ["# id\tclass\tlabel\tparent"]
    for e in ontology:
        parent = "-" if e.parent is None else str(e.parent)
        lines.append(f"{e.id}\t{e.concept_class.value}\t{e.label}\t{parent}")
    return "\n".join(lines) + "\n"


def save_ontology(ontology: Ontology, path: str | Path) -> None:
    Path(path).write_text(dump_ontology(ontology), encoding="utf-8")


def default_ontology_path() -> Path:
    return Path(__file__).parent / "resources" / "manufacturing_ontology.tsv"
