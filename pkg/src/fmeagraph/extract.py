"""Two-stage ontology-guided entity extraction.

For every worksheet sentence the LLM first fills the Action/State/Component/
Parameter slots; each filled slot is then shortlisted against its ontology
subtree by string similarity, and the LLM picks one identifier from the
shortlist or proposes a NEW entry under one of the shortlisted parents.
"""

from __future__ import annotations

import json
import logging
import re
from dataclasses import dataclass, field
from typing import Literal

from .errors import (
    DuplicateSlots,
    FmeaError,
    IdNotInCandidates,
    NewForbidden,
    ParentNotInCandidates,
    SchemaViolation,
)
from .ingest import Worksheet
from .llm import (
    EXTRACTION_SYSTEM,
    SELECT_ID_SYSTEM,
    SLOTS,
    LlmClient,
    extraction_user_prompt,
    select_id_user_prompt,
)
from .ontology import ConceptClass, ConceptId, Ontology, OntologyEntry, normalize_label

logger = logging.getLogger(__name__)

SLOT_CLASS = {
    "action": ConceptClass.ACTION,
    "state": ConceptClass.STATE,
    "component": ConceptClass.COMPONENT,
    "parameter": ConceptClass.PARAMETER,
}
RECORD_FIELDS = ("function", "failure", "cause", "effect")
DEFAULT_SHORTLIST_K = 5


@dataclass(frozen=True)
class SlotExtraction:
    action: str | None = None
    state: str | None = None
    component: str | None = None
    parameter: str | None = None

    def filled(self) -> list[tuple[str, str]]:
        return [(s, getattr(self, s)) for s in SLOTS if getattr(self, s) is not None]


@dataclass(frozen=True)
class Candidate:
    id: ConceptId
    label: str
    score: float


@dataclass(frozen=True)
class Existing:
    id: ConceptId


@dataclass(frozen=True)
class New:
    parent: ConceptId
    label: str


ResolvedId = Existing | New


@dataclass(frozen=True)
class SlotResolution:
    text: str
    resolved: ResolvedId
    concept: ConceptId  # id after NEW entries were registered


@dataclass
class ExtractionRow:
    record_index: int
    field: str
    sentence: str
    slots: dict[str, SlotResolution] = field(default_factory=dict)
    error: str | None = None

    def to_json(self) -> dict:
        out = {"record": self.record_index, "field": self.field, "sentence": self.sentence}
        for slot in SLOTS:
            res = self.slots.get(slot)
            if res is None:
                out[slot] = None
                continue
            if isinstance(res.resolved, New):
                how = {"new_parent": str(res.resolved.parent), "new_label": res.resolved.label}
            else:
                how = {}
            out[slot] = {"text": res.text, "id": str(res.concept), **how}
        if self.error:
            out["error"] = self.error
        return out


# ---------------------------------------------------------------------------
# string matching


def trigrams(text: str) -> set[str]:
    s = normalize_label(text)
    if len(s) < 3:
        return {s} if s else set()
    return {s[i:i + 3] for i in range(len(s) - 2)}


def trigram_similarity(a: str, b: str) -> float:
    """1.0 on equal normalized text, else character-trigram Jaccard."""
    if normalize_label(a) == normalize_label(b):
        return 1.0
    ta, tb = trigrams(a), trigrams(b)
    if not ta or not tb:
        return 0.0
    return len(ta & tb) / len(ta | tb)


def shortlist_by_string_match(text: str, entries: list[OntologyEntry], k: int) -> list[Candidate]:
    if k < 1:
        raise ValueError("shortlist size k must be >= 1")
    scored = [Candidate(e.id, e.label, trigram_similarity(text, e.label)) for e in entries]
    scored.sort(key=lambda c: (-c.score, c.id))
    return scored[:k]


# ---------------------------------------------------------------------------
# LLM calls


def _parse_json_object(raw: str) -> dict:
    text = raw.strip()
    try:
        obj = json.loads(text)
    except ValueError:
        m = re.search(r"\{.*\}", text, re.DOTALL)
        if m is None:
            raise SchemaViolation(raw, "not JSON") from None
        try:
            obj = json.loads(m.group(0))
        except ValueError:
            raise SchemaViolation(raw, "not JSON") from None
    if not isinstance(obj, dict):
        raise SchemaViolation(raw, "not a JSON object")
    return obj


def _slot_text(raw: str, node, name: str) -> str | None:
    if node is None:
        return None
    if not isinstance(node, dict) or "text" not in node:
        raise SchemaViolation(raw, f"{name} must be an object with a text field")
    value = node["text"]
    if value is None:
        return None
    if not isinstance(value, str):
        raise SchemaViolation(raw, f"{name}.text must be a string or null")
    return value.strip() or None


def parse_slots(raw: str) -> SlotExtraction:
    obj = _parse_json_object(raw)
    for key in ("action", "state", "object"):
        if key not in obj:
            raise SchemaViolation(raw, f"missing {key}")
    objects = obj["object"] or {}
    if not isinstance(objects, dict):
        raise SchemaViolation(raw, "object must be an object")
    slots = SlotExtraction(
        action=_slot_text(raw, obj["action"], "action"),
        state=_slot_text(raw, obj["state"], "state"),
        component=_slot_text(raw, objects.get("component"), "component"),
        parameter=_slot_text(raw, objects.get("parameter"), "parameter"),
    )
    texts = [t for _, t in slots.filled()]
    if len(texts) != len(set(texts)):
        raise DuplicateSlots(f"same text assigned to several slots: {raw!r}")
    return slots


def extract_slots(sentence: str, llm: LlmClient) -> SlotExtraction:
    if not sentence or not sentence.strip():
        raise ValueError("sentence must be non-empty")
    user = extraction_user_prompt(sentence)
    for attempt in (0, 1):
        raw = llm.complete(EXTRACTION_SYSTEM, user)
        try:
            return parse_slots(raw)
        except (SchemaViolation, DuplicateSlots):
            if attempt:
                raise
            logger.debug("retrying slot extraction for %r", sentence)
    raise AssertionError("unreachable")


def parse_selection(raw: str, candidates: list[Candidate], allow_new: bool) -> ResolvedId:
    obj = _parse_json_object(raw)
    element = obj.get("element")
    if not isinstance(element, str):
        raise SchemaViolation(raw, "element must be a string")
    ids = {c.id for c in candidates}
    if element.strip().upper() == "NEW":
        if not allow_new:
            raise NewForbidden("NEW entries are not allowed here")
        parent_text, label = obj.get("new_parent"), obj.get("new_label")
        if not isinstance(parent_text, str) or not isinstance(label, str) or not label.strip():
            raise SchemaViolation(raw, "NEW requires new_parent and new_label")
        try:
            parent = ConceptId.parse(parent_text.strip())
        except ValueError:
            raise SchemaViolation(raw, "new_parent is not an identifier") from None
        if parent not in ids:
            raise ParentNotInCandidates(str(parent))
        return New(parent, " ".join(label.split()))
    try:
        cid = ConceptId.parse(element.strip())
    except ValueError:
        raise SchemaViolation(raw, "element is not an identifier") from None
    if cid not in ids:
        raise IdNotInCandidates(str(cid))
    return Existing(cid)


def select_id(text: str, candidates: list[Candidate], llm: LlmClient, allow_new: bool = True) -> ResolvedId:
    if not candidates:
        raise ValueError("candidates must be non-empty")
    user = select_id_user_prompt(text, [(str(c.id), c.label) for c in candidates])
    for attempt in (0, 1):
        raw = llm.complete(SELECT_ID_SYSTEM, user)
        try:
            return parse_selection(raw, candidates, allow_new)
        except SchemaViolation:
            if attempt:
                raise
            logger.debug("retrying id selection for %r", text)
    raise AssertionError("unreachable")


# ---------------------------------------------------------------------------
# worksheet pipeline


def record_sentences(ws: Worksheet) -> list[tuple[int, str, str]]:
    """``(record_index, field, sentence)`` in extraction order; empty effects are skipped."""
    out = []
    for i, rec in enumerate(ws.records):
        for name, text in zip(
            RECORD_FIELDS, (rec.function_text, rec.failure_text, rec.cause_text, rec.effect_text)
        ):
            if text:
                out.append((i, name, text))
    return out


class Extractor:
    """Resolves sentences against an ontology, growing it with NEW entries.

    NEW labels are registered once per (class, normalized label); slot
    extractions and selections are memoized per prompt.
    """

    def __init__(self, ontology: Ontology, llm: LlmClient, k: int = DEFAULT_SHORTLIST_K,
                 allow_new: bool = True):
        self.ontology = ontology
        self.llm = llm
        self.k = k
        self.allow_new = allow_new
        self._slot_memo: dict[str, SlotExtraction] = {}
        self._new_ids: dict[tuple[ConceptClass, str], ConceptId] = {}

    def slots(self, sentence: str) -> SlotExtraction:
        if sentence not in self._slot_memo:
            self._slot_memo[sentence] = extract_slots(sentence, self.llm)
        return self._slot_memo[sentence]

    def resolve(self, slot: str, text: str, register: bool = True) -> SlotResolution | None:
        entries = self.ontology.subtree(SLOT_CLASS[slot])
        if not entries:
            return None
        cands = shortlist_by_string_match(text, entries, self.k)
        resolved = select_id(text, cands, self.llm, allow_new=self.allow_new)
        if isinstance(resolved, Existing):
            return SlotResolution(text, resolved, resolved.id)
        if not register:
            return SlotResolution(text, resolved, resolved.parent)
        key = (SLOT_CLASS[slot], normalize_label(resolved.label))
        if key not in self._new_ids:
            found = self.ontology.find_label(*key)
            self._new_ids[key] = (
                found.id if found is not None else self.ontology.add_new_entry(resolved.parent, resolved.label)
            )
        return SlotResolution(text, resolved, self._new_ids[key])

    def row(self, record_index: int, field_name: str, sentence: str) -> ExtractionRow:
        row = ExtractionRow(record_index, field_name, sentence)
        for slot, text in self.slots(sentence).filled():
            res = self.resolve(slot, text)
            if res is not None:
                row.slots[slot] = res
        return row


def extract_worksheet(
    ws: Worksheet,
    ontology: Ontology,
    llm: LlmClient,
    k: int = DEFAULT_SHORTLIST_K,
    on_error: Literal["abort", "skip"] = "abort",
) -> list[ExtractionRow]:
    """One row per non-empty record field, in input order."""
    for cls in SLOT_CLASS.values():
        if not ontology.subtree(cls) and ws.records:
            raise ValueError(f"ontology has no {cls.value} entries")
    extractor = Extractor(ontology, llm, k)
    rows = []
    for index, name, sentence in record_sentences(ws):
        try:
            rows.append(extractor.row(index, name, sentence))
        except FmeaError as exc:
            if on_error == "abort":
                raise
            logger.warning("line %s record %d %s: %s", ws.line_id, index, name, exc)
            rows.append(ExtractionRow(index, name, sentence, error=str(exc)))
    return rows


def rows_to_jsonl(rows: list[ExtractionRow]) -> str:
    return "".join(json.dumps(r.to_json(), ensure_ascii=False, sort_keys=True) + "\n" for r in rows)
