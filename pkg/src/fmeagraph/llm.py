"""LLM client backends: rule-table mock, transcript replay, recorder and HTTP.

Every backend exposes ``complete(system_prompt, user_prompt) -> str``.
"""

from __future__ import annotations

import hashlib
import json
import logging
import os
import re
from dataclasses import dataclass
from pathlib import Path
from typing import Iterable, Protocol

from .errors import LlmUnavailable, ReplayMiss

logger = logging.getLogger(__name__)

_PROMPT_DIR = Path(__file__).parent / "resources" / "prompts"


def _prompt(name: str) -> str:
    return (_PROMPT_DIR / name).read_text(encoding="utf-8")


EXTRACTION_SYSTEM = _prompt("extraction_system.txt")
EXTRACTION_USER = _prompt("extraction_user.txt")
SELECT_ID_SYSTEM = _prompt("select_id_system.txt")
SELECT_ID_USER = _prompt("select_id_user.txt")


def extraction_user_prompt(sentence: str) -> str:
    # the template carries literal JSON braces, so no str.format here
    return EXTRACTION_USER.replace("{sentence}", sentence)


def select_id_user_prompt(sentence: str, candidates: Iterable[tuple[str, str]]) -> str:
    block = "\n".join(f"{cid} -> {label}" for cid, label in candidates)
    return SELECT_ID_USER.format(sentence=sentence, id_to_label_block=block)


class LlmClient(Protocol):
    def complete(self, system_prompt: str, user_prompt: str) -> str: ...


def prompt_hash(text: str) -> str:
    return hashlib.sha256(text.encode("utf-8")).hexdigest()


# ---------------------------------------------------------------------------
# Mock backend

SLOTS = ("action", "state", "component", "parameter")

# Keyword lists of the extraction prompt's decision rules.
RULE_COMPONENTS = ("robot", "sensor", "conveyor", "chuck", "cylinder")
RULE_STATES = (
    "decrease", "increase", "excessive", "insufficient", "degradation", "fracture",
    "misalignment", "slip", "contamination", "scratch", "foreign substance adhesion", "omission",
)
RULE_ACTIONS = ("conveyance", "gripping", "discharge", "inspection", "cutting", "bonding")
RULE_PARAMETER_SUFFIXES = ("setting value", "function", "performance", "parameter", "characteristic")

_STOPWORDS = {"of", "the", "a", "an", "and", "in", "on", "by", "at", "to", "for", "with", "during", "causes"}


@dataclass(frozen=True)
class LexiconTerm:
    term: str
    slot: str
    concept: str | None = None


def rule_lexicon() -> list[LexiconTerm]:
    terms = [LexiconTerm(t, "component") for t in RULE_COMPONENTS]
    terms += [LexiconTerm(t, "state") for t in RULE_STATES]
    terms += [LexiconTerm(t, "action") for t in RULE_ACTIONS]
    return terms


def load_lexicon(path: str | Path) -> list[LexiconTerm]:
    """Read ``term<TAB>slot[<TAB>concept_id]`` lines."""
    terms = []
    for raw in Path(path).read_text(encoding="utf-8").splitlines():
        if not raw.strip() or raw.startswith("#"):
            continue
        parts = raw.split("\t")
        terms.append(LexiconTerm(parts[0], parts[1], parts[2] if len(parts) > 2 and parts[2] else None))
    return terms


def save_lexicon(terms: Iterable[LexiconTerm], path: str | Path) -> None:
    lines = ["# term\tslot\tconcept"]
    lines += [f"{t.term}\t{t.slot}\t{t.concept or ''}" for t in terms]
    Path(path).write_text("\n".join(lines) + "\n", encoding="utf-8")


def _parameter_spans(sentence: str) -> list[tuple[int, int]]:
    suffix = "|".join(re.escape(s) for s in RULE_PARAMETER_SUFFIXES)
    spans = []
    for m in re.finditer(rf"(?:\b([A-Za-z][\w-]*)\s+)?\b({suffix})\b", sentence, re.IGNORECASE):
        lead = m.group(1)
        start = m.start(2) if lead is None or lead.lower() in _STOPWORDS else m.start(1)
        spans.append((start, m.end()))
    return spans


class MockLLM:
    """Deterministic stand-in that answers both prompts from keyword tables.

    Slot extraction applies the decision-rule keywords first, then the
    supplied lexicon (e.g. ontology labels). Identifier selection prefers a
    lexicon concept present among the candidates, then an exact label match,
    then the best trigram match above ``accept_score``; otherwise it proposes
    a NEW entry under the top candidate.
    """

    def __init__(self, lexicon: Iterable[LexiconTerm] = (), accept_score: float = 0.5):
        self.lexicon = list(lexicon)
        self.accept_score = accept_score
        self.calls = 0
        self._concepts: dict[str, str] = {}
        for t in self.lexicon:
            if t.concept:
                self._concepts.setdefault(" ".join(t.term.lower().split()), t.concept)

    @classmethod
    def from_ontology(cls, ontology, extra: Iterable[LexiconTerm] = (), **kwargs) -> "MockLLM":
        from .ontology import MANUFACTURING_CLASSES

        terms = list(extra)
        for c in MANUFACTURING_CLASSES:
            for e in ontology.subtree(c):
                terms.append(LexiconTerm(e.label, c.value.lower(), str(e.id)))
        return cls(terms, **kwargs)

    def complete(self, system_prompt: str, user_prompt: str) -> str:
        self.calls += 1
        if system_prompt == EXTRACTION_SYSTEM:
            return self._extract(user_prompt)
        if system_prompt == SELECT_ID_SYSTEM:
            return self._select(user_prompt)
        raise LlmUnavailable("mock backend does not recognise the system prompt")

    # -- slot extraction
    def _extract(self, user_prompt: str) -> str:
        head = user_prompt.split("\nRespond strictly", 1)[0]
        sentence = head[len("Description: "):] if head.startswith("Description: ") else head
        slots: dict[str, str | None] = dict.fromkeys(SLOTS)
        used: list[tuple[int, int]] = []

        def free(span):
            return all(span[1] <= a or span[0] >= b for a, b in used)

        def take(slot, span):
            if slots[slot] is None and free(span):
                slots[slot] = sentence[span[0]:span[1]]
                used.append(span)

        for span in _parameter_spans(sentence):
            take("parameter", span)
        for tier in (rule_lexicon(), self.lexicon):
            hits = []
            for t in tier:
                pattern = r"\b" + r"\s+".join(re.escape(w) for w in t.term.split()) + r"\b"
                for m in re.finditer(pattern, sentence, re.IGNORECASE):
                    hits.append((m.start(), -(m.end() - m.start()), m.end(), t.slot))
            for start, _, end, slot in sorted(hits):
                if slot in slots:
                    take(slot, (start, end))

        def box(v):
            return {"text": v}

        return json.dumps(
            {
                "action": box(slots["action"]),
                "state": box(slots["state"]),
                "object": {"component": box(slots["component"]), "parameter": box(slots["parameter"])},
            },
            ensure_ascii=False,
        )

    # -- identifier selection
    def _select(self, user_prompt: str) -> str:
        from .extract import trigram_similarity
        from .ontology import normalize_label

        m = re.search(r'"""(.*?)"""', user_prompt, re.DOTALL)
        text = m.group(1) if m else ""
        block = user_prompt.split("Candidates (ID -> Label):\n", 1)[1].split("\n\nExample output:", 1)[0]
        cands = []
        for line in block.splitlines():
            if " -> " in line:
                cid, label = line.split(" -> ", 1)
                cands.append((cid.strip(), label.strip()))
        ids = [c for c, _ in cands]
        key = normalize_label(text)
        concept = self._concepts.get(key)
        if concept in ids:
            return json.dumps({"element": concept})
        for cid, label in cands:
            if normalize_label(label) == key:
                return json.dumps({"element": cid})
        if cands:
            scored = [(trigram_similarity(text, label), -i, cid) for i, (cid, label) in enumerate(cands)]
            best = max(scored)
            if best[0] >= self.accept_score:
                return json.dumps({"element": best[2]})
            new_label = text.strip()
            new_label = new_label[:1].upper() + new_label[1:]
            return json.dumps(
                {"element": "NEW", "new_parent": cands[0][0], "new_label": new_label},
                separators=(",", ":"),
                ensure_ascii=False,
            )
        return json.dumps({"element": "NEW"})


# ---------------------------------------------------------------------------
# Replay / recording


def _load_store(path: Path) -> dict[tuple[str, str], str]:
    store: dict[tuple[str, str], str] = {}
    if not path.exists():
        return store
    for lineno, raw in enumerate(path.read_text(encoding="utf-8").splitlines(), start=1):
        if not raw.strip():
            continue
        try:
            rec = json.loads(raw)
            store[(rec["system_hash"], rec["user_hash"])] = rec["response"]
        except (ValueError, KeyError) as exc:
            raise LlmUnavailable(f"{path}:{lineno}: bad replay record ({exc})") from None
    return store


class ReplayLLM:
    """Answers exclusively from a JSON Lines transcript store."""

    def __init__(self, path: str | Path):
        self.path = Path(path)
        self._store = _load_store(self.path)
        self.calls = 0
        self.live_calls = 0

    def complete(self, system_prompt: str, user_prompt: str) -> str:
        self.calls += 1
        key = (prompt_hash(system_prompt), prompt_hash(user_prompt))
        try:
            return self._store[key]
        except KeyError:
            raise ReplayMiss(f"no transcript for prompt pair {key[0][:12]}/{key[1][:12]}") from None


class RecordingLLM:
    """Wraps a live backend and appends each new exchange to a transcript store."""

    def __init__(self, inner: LlmClient, path: str | Path):
        self.inner = inner
        self.path = Path(path)
        self._store = _load_store(self.path)
        self.calls = 0

    def complete(self, system_prompt: str, user_prompt: str) -> str:
        self.calls += 1
        key = (prompt_hash(system_prompt), prompt_hash(user_prompt))
        if key in self._store:
            return self._store[key]
        response = self.inner.complete(system_prompt, user_prompt)
        self._store[key] = response
        with self.path.open("a", encoding="utf-8") as fh:
            fh.write(
                json.dumps({"system_hash": key[0], "user_hash": key[1], "response": response}, ensure_ascii=False)
                + "\n"
            )
        return response


class HttpLLM:
    """OpenAI-compatible chat-completion client."""

    def __init__(self, model: str, base_url: str | None = None, api_key: str | None = None,
                 timeout: float = 60.0, transport=None):
        import httpx

        self.model = model
        self.base_url = (base_url or os.environ.get("FMEA_LLM_BASE_URL") or "").rstrip("/")
        self.api_key = api_key or os.environ.get("FMEA_LLM_API_KEY")
        if not self.base_url:
            raise LlmUnavailable("FMEA_LLM_BASE_URL is not set")
        headers = {"Authorization": f"Bearer {self.api_key}"} if self.api_key else {}
        self._client = httpx.Client(timeout=timeout, headers=headers, transport=transport)
        self.calls = 0

    def complete(self, system_prompt: str, user_prompt: str) -> str:
        import httpx

        self.calls += 1
        payload = {
            "model": self.model,
            "temperature": 0,
            "messages": [
                {"role": "system", "content": system_prompt},
                {"role": "user", "content": user_prompt},
            ],
        }
        try:
            resp = self._client.post(f"{self.base_url}/chat/completions", json=payload)
            resp.raise_for_status()
            return resp.json()["choices"][0]["message"]["content"]
        except (httpx.HTTPError, KeyError, IndexError, ValueError) as exc:
            raise LlmUnavailable(f"chat completion failed: {exc}") from None
