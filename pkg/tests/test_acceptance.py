"""The twelve acceptance criteria, one test each.

Each test records its outcome; the terminal summary prints one PASS/FAIL line
per criterion.
"""
import functools
import math
import random
import time

import numpy as np
import pytest

from accentkit.editops import (Insert, Merge, Split, apply_script, change_rate,
                               diff_to_script, random_matched_rate)
from accentkit.evalkit import accent_similarity, wer
from accentkit.harness import (ManifestEntry, SweepSpec, check_disjointness, plan_k_sweep,
                               plan_scaling)
from accentkit.llmedit import (EditResponse, PromptSpec, ScriptedBackend, ValidationFailure,
                               edit_with_llm, mock_backend, validate_response)
from accentkit.prosody import (SpeakerStats, WaveBuffer, denormalize, mel_energy,
                               MelConfig, normalize, track_pitch)
from accentkit.seqcore import (AlignmentError, InvariantViolation, SequenceSyntaxError,
                               UnknownPhoneme, parse_sequence, serialize_sequence)

import conftest
from conftest import PHONEMES, WILL, make_manifest, random_utterance
from oracles import edit_distance_full, edit_distance_recursive

SR = 22050


def criterion(n, title):
    def wrap(fn):
        @functools.wraps(fn)
        def run(*args, **kwargs):
            try:
                note = fn(*args, **kwargs) or ""
            except BaseException:
                conftest.ACCEPTANCE[n] = (title, False, "")
                raise
            conftest.ACCEPTANCE[n] = (title, True, f" ({note})" if note else "")
        return run
    return wrap


@criterion(1, "worked example through the mock pipeline")
def test_01_worked_example():
    t0 = time.perf_counter()
    src = parse_sequence(WILL)
    resp = edit_with_llm(src, PromptSpec((), src), mock_backend([("W", "V")], 1.0))
    elapsed = time.perf_counter() - t0
    assert resp.edited.symbols == ["V", "IH1", "L"] and not resp.fallback
    assert resp.edited.durations == (10, 7, 7)
    assert resp.edited.pitch == (5.3, 5.3, 5.2)
    assert resp.edited.energy == (0.8, 3.6, 3.1)
    assert elapsed < 1.0
    return f"{elapsed * 1000:.1f} ms"


@criterion(2, "matched-rate random baseline is exact")
def test_02_matched_rate():
    rng = random.Random(2)
    for k in range(200):
        u = random_utterance(rng, rng.randint(5, 80))
        L = len(u)
        for rate in (0.19, 0.35):
            edited, script = random_matched_rate(u, rate, seed=1000 * k + int(rate * 100))
            n = math.floor(rate * L + 0.5)
            assert change_rate(u, edited) == n / L
            assert len(script) == n
            for op in script:
                assert op.new.base != u.phonemes[op.index].base


@criterion(3, "edit distances agree with brute-force DP")
def test_03_edit_distance_oracles():
    t0 = time.perf_counter()
    rng = random.Random(3)
    for _ in range(1000):
        a = random_utterance(rng, rng.randint(1, 12))
        b = [rng.choice(PHONEMES[:8]) for _ in range(rng.randint(0, 12))]
        a = a.replace(phonemes=[rng.choice(PHONEMES[:8]) for _ in range(len(a))])
        assert change_rate(a, b) == edit_distance_recursive(a.phonemes, tuple(b)) / len(a)
    for _ in range(1000):
        r = [rng.choice("abcde") for _ in range(rng.randint(1, 12))]
        h = [rng.choice("abcde") for _ in range(rng.randint(0, 12))]
        assert wer(r, h) == edit_distance_full(r, h) / len(r)
    elapsed = time.perf_counter() - t0
    assert elapsed < 10.0
    return f"{elapsed:.2f} s"


@criterion(4, "diff_to_script is sound")
def test_04_diff_soundness():
    rng = random.Random(4)
    pool = PHONEMES[:10]
    for _ in range(1000):
        src = random_utterance(rng, rng.randint(1, 15))
        src = src.replace(phonemes=[rng.choice(pool) for _ in range(len(src))])
        tgt = [rng.choice(pool) for _ in range(rng.randint(1, 15))]
        assert list(apply_script(src, diff_to_script(src, tgt)).phonemes) == tgt


@criterion(5, "pitch tracker on pure tones and silence")
def test_05_pitch_tracker():
    t = np.arange(SR) / SR
    found = []
    for f in (110.0, 220.0, 330.0):
        lf0 = track_pitch(WaveBuffer(np.sin(2 * np.pi * f * t), SR))
        med = math.exp(np.nanmedian(lf0))
        assert abs(med - f) <= 3.0
        found.append(f"{med:.2f}")
    assert np.isnan(track_pitch(WaveBuffer(np.zeros(SR), SR))).all()
    return "median F0 " + "/".join(found) + " Hz"


@criterion(6, "mel energy homogeneity and zero input")
def test_06_energy():
    cfg = MelConfig(n_mels=80, fft_size=1024, hop=256, fmin=0.0, fmax=8000.0)
    x = np.random.default_rng(6).uniform(-1, 1, SR)
    base = mel_energy(WaveBuffer(x, SR), cfg)
    for alpha in (0.01, 0.5, 3.0, 1000.0):
        scaled = mel_energy(WaveBuffer(alpha * x, SR), cfg)
        np.testing.assert_allclose(scaled, alpha * base, rtol=1e-9, atol=0)
    assert np.all(mel_energy(WaveBuffer(np.zeros(SR), SR), cfg) == 0.0)


@criterion(7, "normalize/denormalize round trip")
def test_07_normalization():
    rng = random.Random(7)
    worst = 0.0
    for _ in range(100):
        u = random_utterance(rng, rng.randint(1, 40), decimals=12)
        s = SpeakerStats(rng.uniform(4, 6), rng.uniform(0.01, 1), rng.uniform(0, 3),
                         rng.uniform(0.01, 2), 5)
        back = denormalize(normalize(u, s), s)
        assert back.phonemes == u.phonemes and back.durations == u.durations
        err = max(np.max(np.abs(np.subtract(back.pitch, u.pitch))),
                  np.max(np.abs(np.subtract(back.energy, u.energy))))
        worst = max(worst, err)
    assert worst <= 1e-9
    return f"max error {worst:.1e}"


MALFORMED = [
    ("W IH1 L | d:10,7 | p:5.3,5.3,5.2 | e:0.8,3.6,3.1", AlignmentError),
    ("W IH1 L | d:10,7,7 | p:5.3,5.3 | e:0.8,3.6,3.1", AlignmentError),
    ("W IH1 | d:10,7 | p:5.3,5.3 | e:0.8,3.6 | w:3", InvariantViolation),
    ("W IH L | d:10,7,7 | p:5.3,5.3,5.2 | e:0.8,3.6,3.1", UnknownPhoneme),
    ("W1 IH1 L | d:10,7,7 | p:5.3,5.3,5.2 | e:0.8,3.6,3.1", UnknownPhoneme),
    ("Q IH1 L | d:10,7,7 | p:5.3,5.3,5.2 | e:0.8,3.6,3.1", UnknownPhoneme),
    ("W IH1 L | d:10,7,7 | p:5.3,5.3,5.2", SequenceSyntaxError),
    ("W IH1 L | d:10,x,7 | p:5.3,5.3,5.2 | e:0.8,3.6,3.1", SequenceSyntaxError),
    ("W IH1 L | d:10,0,7 | p:5.3,5.3,5.2 | e:0.8,3.6,3.1", InvariantViolation),
    ("W IH1 L | d:10,7,7 | p:5.3,nan,5.2 | e:0.8,3.6,3.1", SequenceSyntaxError),
    ("", SequenceSyntaxError),
]


@criterion(8, "serialization round trip and malformed-line rejection")
def test_08_serialization():
    rng = random.Random(8)
    for _ in range(1000):
        u = random_utterance(rng, rng.randint(1, 30), words=rng.random() < 0.5)
        back = parse_sequence(serialize_sequence(u))
        assert back == u
    for line, exc in MALFORMED:
        with pytest.raises(exc):
            parse_sequence(line)


@criterion(9, "accent similarity geometry")
def test_09_accsim():
    e1, e2 = np.eye(2)
    assert abs(accent_similarity([e1], {"a": [e1, e1]}) - 1.0) <= 1e-6
    assert abs(accent_similarity([e2], {"a": [e1]}) - 0.0) <= 1e-6
    diag = (e1 + e2) / np.linalg.norm(e1 + e2)
    assert abs(accent_similarity([diag], {"a": [e1], "b": [e2]}) - math.cos(math.pi / 4)) <= 1e-6
    rng = np.random.default_rng(9)
    real = {s: list(rng.normal(size=(4, 6))) for s in "xyz"}
    synth = list(rng.normal(size=(5, 6)))
    base = accent_similarity(synth, real)
    for _ in range(20):
        r2 = {s: [v * rng.uniform(1e-3, 1e3) for v in vs] for s, vs in real.items()}
        s2 = [v * rng.uniform(1e-3, 1e3) for v in synth]
        assert abs(accent_similarity(s2, r2) - base) <= 1e-6


def _adversarial_corpus(rng, src):
    """(response text, expected failure kind) pairs built against ``src``."""
    n = len(src)
    line = serialize_sequence(src)
    ph, rest = line.split(" | ", 1)
    toks = ph.split()
    d, p, e = list(src.durations), list(src.pitch), list(src.energy)

    def seq(tokens, d, p, e):
        f = lambda xs: ",".join(f"{x:.4f}" for x in xs)
        return f"TARGET: {' '.join(tokens)} | d:{','.join(map(str, d))} | p:{f(p)} | e:{f(e)}"

    i = rng.randrange(n)
    out = []
    # parse failures
    out += [("", "ParseFail"), ("I think it should be V IH1 L", "ParseFail"),
            (f"TARGET: {line}\nTARGET: {line}", "ParseFail"),
            (f"SOURCE: {line}", "ParseFail"), (f"TARGET: {ph}", "ParseFail"),
            (seq(toks, d, p, e).replace("| e:", "| x:"), "ParseFail")]
    # inventory
    for bad in ("Q", "IH", "B1", "AA3", "w"):
        t = list(toks)
        t[i] = bad
        out.append((seq(t, d, p, e), "InventoryFail"))
    # length mismatches
    out += [(seq(toks, d + [3], p, e), "AlignmentFail"), (seq(toks, d, p + [5.0], e),
                                                         "AlignmentFail"),
            (seq(toks + ["N"], d, p, e), "AlignmentFail")]
    # prosody tampering at an untouched position
    for field in ("d", "p", "e"):
        dd, pp, ee = list(d), list(p), list(e)
        if field == "d":
            dd[i] += 7
        elif field == "p":
            pp[i] = 9.9
        else:
            ee[i] = 99.0
        out.append((seq(toks, dd, pp, ee), "ProsodyTamperFail"))
    # structural rule breaks, using a symbol absent from the source so the
    # edited positions are unambiguous
    fresh = next(x for x in PHONEMES if x not in src.phonemes)
    split = apply_script(src, [Split(i, fresh, fresh)])
    dd = list(split.durations)
    dd[i + 1] += 5
    out.append((seq([str(x) for x in split.phonemes], dd, split.pitch, split.energy),
                "StructuralRuleFail"))
    ins = apply_script(src, [Insert(i, fresh)])
    dd = list(ins.durations)
    dd[i] += 9
    out.append((seq([str(x) for x in ins.phonemes], dd, ins.pitch, ins.energy),
                "StructuralRuleFail"))
    if n >= 2:
        j = min(i, n - 2)
        mg = apply_script(src, [Merge(j, fresh)])
        pp = list(mg.pitch)
        pp[j] = 9.9
        out.append((seq([str(x) for x in mg.phonemes], mg.durations, pp, mg.energy),
                    "StructuralRuleFail"))
    return out


@criterion(10, "validator classifies adversarial responses, fallback after retries")
def test_10_validator_robustness():
    rng = random.Random(10)
    total = 0
    seen = set()
    for _ in range(60):
        src = random_utterance(rng, rng.randint(1, 12))
        for text, kind in _adversarial_corpus(rng, src):
            res = validate_response(src, text)
            assert isinstance(res, ValidationFailure), f"false accept: {text!r}"
            assert res.kind == kind, (text, res)
            seen.add(kind)
            total += 1
    assert seen == {"ParseFail", "InventoryFail", "AlignmentFail", "ProsodyTamperFail",
                    "StructuralRuleFail"}
    src = parse_sequence(WILL)
    for retries in (0, 1, 3):
        backend = ScriptedBackend(["TARGET: Q IH1 L | d:10,7,7 | p:5.3,5.3,5.2 | e:0.8,3.6,3.1"])
        r = edit_with_llm(src, PromptSpec((), src), backend, max_retries=retries)
        assert r.fallback and r.attempts_used == retries + 1 and r.edited == src
        assert len(backend.prompts) == retries + 1
    return f"{total} adversarial responses"


@criterion(11, "plan determinism and budget exactness")
def test_11_plans():
    m = make_manifest(n_train=150, n_synth=520)
    spec = dict(kind="n_scaling", n_values=[1, 3, 5, 10, 25, 100], runs=7, synth_budget=500)
    a = [j.to_json() for j in plan_scaling(SweepSpec(**spec), m)]
    b = [j.to_json() for j in plan_scaling(SweepSpec(**spec), m)]
    assert "\n".join(a).encode() == "\n".join(b).encode()
    mixed = [j for j in plan_scaling(SweepSpec(**spec), m) if j.condition == "real_plus_synth"]
    assert len(mixed) == 6 * 7
    for j in mixed:
        ids = j.train_real + j.train_synth
        assert len(ids) == j.x + 500 == len(set(ids))
    ks = plan_k_sweep(SweepSpec("k_sweep", varied_component="icl"), m)
    assert [j.x for j in ks] == [0, 1, 3, 5, 10, 15]
    assert ks[0].component_refs["icl"] == ()
    for comp in ("speaker_emb", "style_emb", "decoder_ft", "joint"):
        assert [j.x for j in plan_k_sweep(SweepSpec("k_sweep", varied_component=comp), m)] \
            == [1, 3, 5, 10, 15]


@criterion(12, "disjointness finds exactly the planted violations")
def test_12_disjointness():
    m = make_manifest(n_synth=10, n_train=10)
    assert check_disjointness(m) == []
    m.entries += [
        ManifestEntry("ref05", "TNI", "indian", "eval", text="an entirely new sentence"),
        ManifestEntry("ev900", "TNI", "indian", "eval", text="Sentence tr003."),
        ManifestEntry("ev901", "TNI", "indian", "eval", text="SENTENCE syn007"),
    ]
    findings = check_disjointness(m)
    assert sorted((f.kind, f.ids) for f in findings) == [
        ("id_overlap", ("ref05",)),
        ("text_overlap", ("syn007", "ev901")),
        ("text_overlap", ("tr003", "ev900")),
    ]
