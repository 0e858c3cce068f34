import json
import random
import threading
from http.server import BaseHTTPRequestHandler, HTTPServer

import pytest

from accentkit.editops import (Delete, Insert, Merge, Split, Substitute, apply_script,
                               change_rate)
from accentkit.llmedit import (FAILURE_KINDS, BackendError, ChatBackend, EditResponse,
                               IclExample, InsufficientCandidates, MockBackend, PromptSpec,
                               ScriptedBackend, ValidationFailure, build_prompt, edit_many,
                               edit_with_llm, mock_backend, pitch_std_ratio,
                               select_icl_examples, validate_response)
from accentkit.seqcore import UnknownPhoneme, parse_sequence, serialize_sequence

from conftest import PHONEMES, WILL, random_utterance

VILL = "V IH1 L | d:10,7,7 | p:5.3,5.3,5.2 | e:0.8,3.6,3.1"


def example_with_ratio(r, rng=None):
    rng = rng or random.Random(0)
    u = random_utterance(rng, 4)
    return IclExample(u, u, pitch_ratio=r)


# ---------------------------------------------------------------- selection

def test_select_by_ratio():
    cands = [example_with_ratio(r) for r in (1.5, 0.8, 1.2)]
    assert [c.pitch_ratio for c in select_icl_examples(cands, 2)] == [1.5, 1.2]


def test_select_zero_and_ties():
    a, b = example_with_ratio(1.0), example_with_ratio(1.0, random.Random(5))
    assert select_icl_examples([a, b], 0) == []
    assert select_icl_examples([a, b], 1)[0] is a


def test_select_insufficient():
    with pytest.raises(InsufficientCandidates):
        select_icl_examples([example_with_ratio(1.0)], 2)


def test_selection_prefix_monotone():
    rng = random.Random(2)
    cands = [example_with_ratio(round(rng.uniform(0, 3), 1)) for _ in range(20)]
    full = select_icl_examples(cands, 20)
    for k in range(21):
        assert select_icl_examples(cands, k) == full[:k]


def test_pitch_ratio_computed(will):
    tgt = will.replace(pitch=[5.0, 5.5, 6.0])
    ex = IclExample(will, tgt)
    assert ex.pitch_ratio == pytest.approx(pitch_std_ratio(will, tgt))
    assert ex.pitch_ratio > 1


def test_flat_source_ratio_zero(will, caplog):
    flat = will.replace(pitch=[5.0] * 3)
    assert IclExample(flat, will).pitch_ratio == 0.0
    assert "flat" in caplog.text


# ---------------------------------------------------------------- prompt

def test_prompt_without_examples(will):
    text = build_prompt(PromptSpec((), will))
    assert "EXAMPLE" not in text
    assert "substitution" in text and "merging" in text
    assert "approximately match" in text.lower()
    assert "to deviate when required to satisfy alignment and validity constraints" in text
    assert f"SOURCE: {serialize_sequence(will)}" in text
    assert "TARGET" in text and "'#'" in text


def test_prompt_embeds_will_pair(will):
    spec = PromptSpec([IclExample(will, parse_sequence(VILL))], will)
    text = build_prompt(spec)
    assert "EXAMPLE 1" in text
    assert f"SOURCE: {WILL}" in text.replace("5.3000", "5.3").replace("5.2000", "5.2") \
        .replace("0.8000", "0.8").replace("3.6000", "3.6").replace("3.1000", "3.1")
    assert spec.target_change_rate == pytest.approx(1 / 3)
    assert "0.3333" in text


def test_prompt_deterministic(will):
    exs = [IclExample(will, parse_sequence(VILL))]
    assert build_prompt(PromptSpec(exs, will)) == build_prompt(PromptSpec(list(exs), will))


def test_prompt_rate_must_match_examples(will):
    with pytest.raises(ValueError):
        PromptSpec([IclExample(will, parse_sequence(VILL))], will, target_change_rate=0.5)


# ---------------------------------------------------------------- validation

def test_validate_will(will):
    r = validate_response(will, f"TARGET: {VILL}\n# W -> V\n")
    assert isinstance(r, EditResponse)
    assert list(r.script.ops) == [Substitute(0, "V")]
    assert r.rationale_lines == ("# W -> V",)


def test_validate_identity(will):
    r = validate_response(will, f"TARGET: {WILL}")
    assert isinstance(r, EditResponse) and list(r.script.ops) == []


def test_validate_tamper(will):
    r = validate_response(will, "TARGET: V IH1 L | d:10,7,7 | p:5.3,9.9,5.2 | e:0.8,3.6,3.1")
    assert isinstance(r, ValidationFailure)
    assert (r.kind, r.position) == ("ProsodyTamperFail", 1)


@pytest.mark.parametrize("text,kind", [
    ("hello", "ParseFail"),
    ("", "ParseFail"),
    (f"TARGET: {VILL}\nTARGET: {VILL}", "ParseFail"),
    ("TARGET: V IH1 | d:10", "ParseFail"),
    ("TARGET: Q IH1 L | d:10,7,7 | p:5.3,5.3,5.2 | e:0.8,3.6,3.1", "InventoryFail"),
    ("TARGET: V IH1 L | d:10,7 | p:5.3,5.3,5.2 | e:0.8,3.6,3.1", "AlignmentFail"),
    ("TARGET: W IH1 L | d:10,8,7 | p:5.3,5.3,5.2 | e:0.8,3.6,3.1", "ProsodyTamperFail"),
    ("TARGET: W IH1 L AH0 | d:10,7,7,3 | p:5.3,5.3,5.2,5.2 | e:0.8,3.6,3.1,3.1",
     "StructuralRuleFail"),
])
def test_failure_kinds(will, text, kind):
    r = validate_response(will, text)
    assert isinstance(r, ValidationFailure) and r.kind == kind
    assert kind in FAILURE_KINDS and kind in r.describe()


def test_structural_edits_accepted():
    u = parse_sequence("T S IY1 | d:3,1,5 | p:4.0,8.0,5.0 | e:1.0,5.0,2.0")
    merged = apply_script(u, [Merge(0, "CH")])
    split = apply_script(merged, [Split(1, "IY1", "Y")])
    for tgt in (merged, split):
        assert isinstance(validate_response(u, f"TARGET: {serialize_sequence(tgt)}"),
                          EditResponse)


def test_inserted_value_at_4_decimals_accepted():
    u = parse_sequence("T S | d:3,1 | p:4.0,8.0 | e:1.0,5.0")
    r = validate_response(u, "TARGET: CH | d:4 | p:5.0000 | e:2.0000")
    assert isinstance(r, EditResponse)
    u2 = parse_sequence("T S | d:1,2 | p:4.0,5.0 | e:1.0,1.0")
    # merged pitch 14/3 = 4.666666..., echoed at 4 decimals
    assert isinstance(validate_response(u2, "TARGET: CH | d:3 | p:4.6667 | e:1.0"),
                      EditResponse)


def _spaced_ops(rng, n):
    """Ops on source positions at least two apart, listed right to left so indices stay put."""
    starts = sorted(rng.sample(range(n), rng.randint(0, min(4, n))))
    kept = []
    for i in starts:
        if not kept or i - kept[-1] >= 3:
            kept.append(i)
    ops = []
    for i in reversed(kept):
        ph = rng.choice(PHONEMES)
        kind = rng.choice("SDIPM" if i + 1 < n else "SDIP")
        if kind == "S":
            ops.append(Substitute(i, ph))
        elif kind == "D" and n > 1:
            ops.append(Delete(i))
        elif kind == "I":
            ops.append(Insert(i, ph))
        elif kind == "P":
            ops.append(Split(i, ph, rng.choice(PHONEMES)))
        elif kind == "M":
            ops.append(Merge(i, ph))
    return ops


def test_every_legal_edit_validates():
    rng = random.Random(11)
    for _ in range(400):
        src = random_utterance(rng, rng.randint(1, 10))
        tgt = apply_script(src, _spaced_ops(rng, len(src)))
        r = validate_response(src, f"TARGET: {serialize_sequence(tgt)}")
        assert isinstance(r, EditResponse), (serialize_sequence(src), serialize_sequence(tgt), r)
        assert r.edited.phonemes == tgt.phonemes and r.edited.durations == tgt.durations
        assert all(abs(a - b) < 1e-4 for a, b in zip(r.edited.pitch, tgt.pitch))


def test_validator_fuzz_never_crashes():
    rng = random.Random(9)
    src = random_utterance(rng, 6)
    good = serialize_sequence(src)
    for _ in range(300):
        s = list(f"TARGET: {good}")
        for _ in range(rng.randint(1, 4)):
            s[rng.randrange(len(s))] = rng.choice("AZ019|,.: -")
        r = validate_response(src, "".join(s))
        assert isinstance(r, (EditResponse, ValidationFailure))


# ---------------------------------------------------------------- edit loop

def test_edit_with_mock(will):
    r = edit_with_llm(will, PromptSpec((), will), mock_backend([("W", "V")]))
    assert not r.fallback and r.attempts_used == 1
    assert serialize_sequence(r.edited) == serialize_sequence(parse_sequence(VILL))
    assert len(r.rationale_lines) == 1


def test_edit_garbage_falls_back(will):
    b = ScriptedBackend(["no idea"])
    r = edit_with_llm(will, PromptSpec((), will), b, max_retries=2)
    assert r.fallback and r.attempts_used == 3 and r.edited == will
    assert len(b.prompts) == 3
    assert "rejected: ParseFail" in b.prompts[1]


def test_edit_retry_then_success(will):
    b = ScriptedBackend(["garbage", f"TARGET: {VILL}\n# w to v"])
    r = edit_with_llm(will, PromptSpec((), will), b)
    assert r.attempts_used == 2 and not r.fallback
    assert r.edited.symbols == ["V", "IH1", "L"]


def test_edit_keeps_full_precision():
    src = parse_sequence("W IH1 | d:2,3 | p:5.123456789,5.0 | e:1.0,2.0")
    r = edit_with_llm(src, PromptSpec((), src), mock_backend([("W", "V")]))
    assert r.edited.pitch[0] == 5.123456789


def test_edit_max_retries_zero(will):
    r = edit_with_llm(will, PromptSpec((), will), ScriptedBackend(["x"]), max_retries=0)
    assert r.fallback and r.attempts_used == 1
    with pytest.raises(ValueError):
        edit_with_llm(will, PromptSpec((), will), ScriptedBackend(["x"]), max_retries=-1)


def test_edit_random_backend_output_is_valid():
    rng = random.Random(4)
    src = random_utterance(rng, 8)
    good = serialize_sequence(src)

    def chaotic(prompt):
        s = list(f"TARGET: {good}")
        for _ in range(rng.randint(0, 3)):
            s[rng.randrange(len(s))] = rng.choice("AZ01,|")
        return "".join(s)

    for _ in range(50):
        r = edit_with_llm(src, PromptSpec((), src), chaotic, max_retries=1)
        r.edited.check()


def test_edit_many_parallel_matches_serial():
    rng = random.Random(1)
    jobs = [(u, PromptSpec((), u)) for u in (random_utterance(rng, 10) for _ in range(12))]
    b = mock_backend([("T", "D"), ("AH", "AA")])
    assert edit_many(jobs, b, workers=4) == edit_many(jobs, b, workers=1)


# ---------------------------------------------------------------- mock backend

def test_mock_cap_zero(will):
    r = edit_with_llm(will, PromptSpec((), will), mock_backend([("W", "V")], cap_rate=0.0))
    assert r.edited == will


def test_mock_cap_arithmetic():
    rng = random.Random(0)
    hits = set(rng.sample(range(100), 30))
    toks = [rng.choice(["DH", "TH"]) if i in hits else rng.choice(["AH0", "N", "S", "IY1"])
            for i in range(100)]
    line = " ".join(toks) + " | d:" + ",".join(["2"] * 100) + " | p:" + \
        ",".join(["5.0"] * 100) + " | e:" + ",".join(["1.0"] * 100)
    src = parse_sequence(line)
    edited, notes = MockBackend([("DH", "D"), ("TH", "T")], cap_rate=0.19).rewrite(src)
    assert len(notes) == 19
    changed = [i for i in range(100) if edited.phonemes[i] != src.phonemes[i]]
    assert changed == sorted(hits)[:19]
    assert change_rate(src, edited) == pytest.approx(0.19)


def test_mock_vowel_stress():
    src = parse_sequence("IH1 T | d:1,1 | p:5,5 | e:1,1")
    edited, _ = MockBackend([("IH", "IY"), ("T", "AH")]).rewrite(src)
    assert [str(p) for p in edited.phonemes] == ["IY1", "AH0"]


def test_mock_rejects_bad_rules():
    with pytest.raises(UnknownPhoneme):
        MockBackend([("W", "Q")])


# ---------------------------------------------------------------- HTTP backend

class _Handler(BaseHTTPRequestHandler):
    seen = []
    status = 200

    def do_POST(self):
        body = json.loads(self.rfile.read(int(self.headers["Content-Length"])))
        _Handler.seen.append((self.path, self.headers.get("Authorization"), body))
        self.send_response(_Handler.status)
        self.send_header("Content-Type", "application/json")
        self.end_headers()
        if _Handler.status == 200:
            reply = {"choices": [{"message": {"role": "assistant",
                                              "content": f"TARGET: {VILL}\n# w to v"}}]}
            self.wfile.write(json.dumps(reply).encode())

    def log_message(self, *args):
        pass


@pytest.fixture
def server():
    srv = HTTPServer(("127.0.0.1", 0), _Handler)
    threading.Thread(target=srv.serve_forever, daemon=True).start()
    _Handler.seen.clear()
    _Handler.status = 200
    yield f"http://127.0.0.1:{srv.server_address[1]}/v1"
    srv.shutdown()


def test_chat_backend_roundtrip(server, will, monkeypatch):
    monkeypatch.setenv("TEST_EDITOR_KEY", "sekret")
    b = ChatBackend(server, "m1", api_key_env="TEST_EDITOR_KEY", backoff=0)
    r = edit_with_llm(will, PromptSpec((), will), b)
    assert r.attempts_used == 1 and r.edited.symbols == ["V", "IH1", "L"]
    path, auth, body = _Handler.seen[0]
    assert path == "/v1/chat/completions" and auth == "Bearer sekret"
    assert body["model"] == "m1" and body["temperature"] == 0.0
    assert [m["role"] for m in body["messages"]] == ["user"]


def test_chat_backend_auth_error(server, will):
    _Handler.status = 401
    b = ChatBackend(server, "m1", api_key_env=None, backoff=0)
    with pytest.raises(BackendError, match="authentication"):
        edit_with_llm(will, PromptSpec((), will), b)
    assert len(_Handler.seen) == 1


def test_chat_backend_server_error_retries(server):
    _Handler.status = 500
    b = ChatBackend(server, "m1", api_key_env=None, transport_retries=2, backoff=0)
    with pytest.raises(BackendError, match="3 attempts"):
        b.complete("hi")
    assert len(_Handler.seen) == 3
