import json

import httpx
import pytest

from fmeagraph.errors import LlmUnavailable, ReplayMiss
from fmeagraph.extract import extract_slots
from fmeagraph.llm import (
    EXTRACTION_SYSTEM,
    SELECT_ID_SYSTEM,
    HttpLLM,
    LexiconTerm,
    MockLLM,
    RecordingLLM,
    ReplayLLM,
    extraction_user_prompt,
    load_lexicon,
    prompt_hash,
    save_lexicon,
    select_id_user_prompt,
)


def test_prompts_are_filled():
    user = extraction_user_prompt("Wear of jig")
    assert "Wear of jig" in user and "{sentence}" not in user
    sel = select_id_user_prompt("jig", [("C-001", "Jig"), ("C-002", "Robot")])
    assert "C-001 -> Jig\nC-002 -> Robot" in sel
    assert '"""jig"""' in sel


def test_mock_decision_rules():
    slots = extract_slots("Conveyance of chip by robot causes misalignment", MockLLM())
    assert slots.action == "Conveyance"
    assert slots.component == "robot"
    assert slots.state == "misalignment"
    assert slots.parameter is None


def test_mock_parameter_phrase():
    slots = extract_slots("Decrease of gripper performance", MockLLM())
    assert slots.state == "Decrease"
    assert slots.parameter == "gripper performance"


def test_mock_uses_lexicon_after_rules():
    llm = MockLLM([LexiconTerm("nozzle", "component")])
    assert extract_slots("Clogging of nozzle", llm).component == "nozzle"


def test_mock_selection_prefers_exact_label():
    user = select_id_user_prompt("Robot", [("C-002", "Robot arm"), ("C-001", "Robot")])
    assert json.loads(MockLLM().complete(SELECT_ID_SYSTEM, user)) == {"element": "C-001"}


def test_mock_selection_proposes_new_under_top_candidate():
    user = select_id_user_prompt("zzqx", [("C-002", "Robot arm"), ("C-001", "Robot")])
    out = json.loads(MockLLM().complete(SELECT_ID_SYSTEM, user))
    assert out == {"element": "NEW", "new_parent": "C-002", "new_label": "Zzqx"}


def test_mock_rejects_unknown_prompt():
    with pytest.raises(LlmUnavailable):
        MockLLM().complete("something else", "hi")


def test_recording_then_replay(tmp_path):
    store = tmp_path / "t.jsonl"
    inner = MockLLM()
    rec = RecordingLLM(inner, store)
    user = extraction_user_prompt("Slip of chip")
    first = rec.complete(EXTRACTION_SYSTEM, user)
    assert rec.complete(EXTRACTION_SYSTEM, user) == first
    assert inner.calls == 1
    lines = store.read_text(encoding="utf-8").splitlines()
    assert len(lines) == 1
    assert json.loads(lines[0])["user_hash"] == prompt_hash(user)

    replay = ReplayLLM(store)
    assert replay.complete(EXTRACTION_SYSTEM, user) == first
    assert replay.live_calls == 0
    with pytest.raises(ReplayMiss):
        replay.complete(EXTRACTION_SYSTEM, extraction_user_prompt("other"))


def test_replay_rejects_bad_store(tmp_path):
    store = tmp_path / "t.jsonl"
    store.write_text("{not json\n", encoding="utf-8")
    with pytest.raises(LlmUnavailable):
        ReplayLLM(store)


def test_http_backend_with_fake_transport():
    seen = {}

    def handler(request):
        seen["body"] = json.loads(request.content)
        return httpx.Response(200, json={"choices": [{"message": {"content": "ok"}}]})

    llm = HttpLLM("m", base_url="http://fake", transport=httpx.MockTransport(handler))
    assert llm.complete("sys", "user") == "ok"
    assert seen["body"]["temperature"] == 0
    assert [m["role"] for m in seen["body"]["messages"]] == ["system", "user"]


def test_http_backend_errors_map_to_unavailable():
    llm = HttpLLM("m", base_url="http://fake", transport=httpx.MockTransport(lambda r: httpx.Response(500)))
    with pytest.raises(LlmUnavailable):
        llm.complete("s", "u")


def test_http_backend_needs_url(monkeypatch):
    monkeypatch.delenv("FMEA_LLM_BASE_URL", raising=False)
    with pytest.raises(LlmUnavailable):
        HttpLLM("m")


def test_lexicon_round_trip(tmp_path):
    terms = [LexiconTerm("jig", "component", "C-001"), LexiconTerm("wobble", "state")]
    path = tmp_path / "lex.tsv"
    save_lexicon(terms, path)
    assert load_lexicon(path) == terms
