"""Accent-editing prompts, response validation and the retry loop around an editor backend.

A backend is anything with ``complete(prompt) -> str``. Two are provided:
``MockBackend`` (deterministic rule substitutions, for offline runs and
tests) and ``ChatBackend`` (an OpenAI-style chat-completions endpoint).
"""
from __future__ import annotations

import logging
import math
import os
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from typing import Callable, List, Optional, Sequence, Tuple

import numpy as np

from .editops import (EditScript, Insert, Merge, Split, align, apply_script,
                      change_rate, steps_to_script)
from .seqcore import (INVENTORY, AlignedUtterance, AlignmentError, Phoneme, SeqError,
                      UnknownPhoneme, as_phoneme, is_vowel, parse_sequence, quantize,
                      round_half_up, serialize_sequence)

log = logging.getLogger(__name__)

PROSODY_TOL = 1e-6
DEFAULT_RETRIES = 3


class InsufficientCandidates(ValueError):
    pass


class BackendError(RuntimeError):
    """Transport or authentication failure talking to the editor backend."""


# ------------------------------------------------------------ ICL examples

def pitch_std_ratio(source: AlignedUtterance, target: AlignedUtterance) -> float:
    """Population std of target phoneme pitch over that of the source; 0 for a flat source."""
    src = float(np.std(source.pitch))
    if src == 0.0:
        log.warning("flat source pitch contour; ranking ratio set to 0")
        return 0.0
    return float(np.std(target.pitch)) / src


@dataclass(frozen=True)
class IclExample:
    source: AlignedUtterance
    target: AlignedUtterance
    pitch_ratio: float = field(default=None)

    def __post_init__(self):
        if self.pitch_ratio is None:
            object.__setattr__(self, "pitch_ratio", pitch_std_ratio(self.source, self.target))
        if not self.pitch_ratio >= 0:
            raise ValueError("pitch_ratio must be non-negative")


def select_icl_examples(candidates: Sequence[IclExample], k: int) -> List[IclExample]:
    """Top ``k`` candidates by pitch-std ratio, highest first; ties keep input order."""
    if k < 0:
        raise ValueError("k must be non-negative")
    if k > len(candidates):
        raise InsufficientCandidates(f"asked for {k} examples, only {len(candidates)} available")
    order = sorted(range(len(candidates)), key=lambda i: (-candidates[i].pitch_ratio, i))
    return [candidates[i] for i in order[:k]]


# ------------------------------------------------------------ prompt

@dataclass(frozen=True)
class PromptSpec:
    examples: tuple
    query: AlignedUtterance
    accent_label: str = "target-accent English"
    target_change_rate: Optional[float] = None

    def __post_init__(self):
        object.__setattr__(self, "examples", tuple(self.examples))
        mean_rate = (float(np.mean([change_rate(ex.source, ex.target) for ex in self.examples]))
                     if self.examples else 0.0)
        if self.target_change_rate is None:
            object.__setattr__(self, "target_change_rate", mean_rate)
        elif not math.isclose(self.target_change_rate, mean_rate, abs_tol=1e-12):
            raise ValueError(f"target_change_rate {self.target_change_rate} differs from the "
                             f"examples' mean change rate {mean_rate}")

    @property
    def instructions(self) -> str:
        return render_instructions(self.accent_label, self.target_change_rate)


_OPS_TEXT = """\
Allowed edits on the phoneme sequence:
  - substitution of one phoneme by another
  - insertion of a new phoneme
  - deletion of a phoneme
  - splitting one phoneme into two
  - merging two adjacent phonemes into one
Constraints:
  - Use ARPAbet symbols only (AA AE AH AO AW AY EH ER EY IH IY OW OY UH UW with stress 0/1/2;
    B CH D DH F G HH JH K L M N NG P R S SH T TH V W Y Z ZH without stress).
  - The d, p and e vectors must have exactly one value per output phoneme.
  - Do not change prosody. Unedited and substituted phonemes keep their d, p, e values.
  - Only structural edits adjust prosody, and only to keep the vectors aligned:
      insertion copies p and e from the left neighbour (the right one at the start)
        and takes the rounded mean duration of its neighbours;
      splitting halves the duration (floor, then ceil) and copies p and e to both parts;
      merging sums the durations and takes duration-weighted means of p and e."""


def render_instructions(accent_label: str, target_change_rate: float) -> str:
    pct = 100.0 * target_change_rate
    return (
        f"You rewrite Standard American English pronunciations as {accent_label} "
        "pronunciations.\n"
        f"{_OPS_TEXT}\n"
        "Reason explicitly about each phoneme-level change you make, one line per change.\n"
        f"The examples change about {pct:.1f}% of source phonemes (change rate "
        f"{target_change_rate:.4f}). Approximately match this level of phoneme substitution, "
        "but you are free to deviate when required to satisfy alignment and validity "
        "constraints.\n"
        "Answer with exactly one line starting with 'TARGET: ' holding the edited sequence in "
        "the same format as the SOURCE line, followed by one line per change starting with "
        "'#' that explains it. Write nothing else."
    )


def build_prompt(spec: PromptSpec) -> str:
    parts = [spec.instructions, ""]
    for i, ex in enumerate(spec.examples, 1):
        parts += [f"EXAMPLE {i}",
                  f"SOURCE: {serialize_sequence(ex.source)}",
                  f"TARGET: {serialize_sequence(ex.target)}",
                  ""]
    parts += ["QUERY",
              f"SOURCE: {serialize_sequence(spec.query)}",
              "Respond with a single TARGET line and '#' rationale lines."]
    return "\n".join(parts) + "\n"


# ------------------------------------------------------------ validation

@dataclass(frozen=True)
class ValidationFailure:
    kind: str  # ParseFail | InventoryFail | AlignmentFail | ProsodyTamperFail | StructuralRuleFail
    message: str
    position: Optional[int] = None

    def describe(self) -> str:
        where = "" if self.position is None else f" at position {self.position}"
        return f"{self.kind}{where}: {self.message}"


FAILURE_KINDS = ("ParseFail", "InventoryFail", "AlignmentFail", "ProsodyTamperFail",
                 "StructuralRuleFail")


@dataclass(frozen=True)
class EditResponse:
    edited: AlignedUtterance
    script: EditScript
    rationale_lines: tuple = ()
    attempts_used: int = 1
    fallback: bool = False
    failures: tuple = ()


def _split_response(text: str):
    target, rationale = None, []
    for raw in text.splitlines():
        line = raw.strip()
        if not line:
            continue
        if line.startswith("#"):
            rationale.append(line)
        elif line.startswith("TARGET:"):
            if target is not None:
                return None, rationale, "more than one TARGET line"
            target = line[len("TARGET:"):].strip()
        else:
            return None, rationale, f"unexpected line {line[:60]!r}"
    if target is None:
        return None, rationale, "no TARGET line"
    return target, rationale, None


def _close(a: float, b: float) -> bool:
    return abs(a - b) <= PROSODY_TOL


def _close_quantized(a: float, expected: float) -> bool:
    # derived values (means) may be echoed at full or at 4-decimal precision
    return _close(a, expected) or _close(a, round(expected, 4))


def validate_response(source: AlignedUtterance, response_text: str):
    """Check an editor response against the source; EditResponse or ValidationFailure."""
    target_line, rationale, err = _split_response(response_text)
    if err:
        return ValidationFailure("ParseFail", err)
    try:
        target = parse_sequence(target_line)
    except UnknownPhoneme as exc:
        return ValidationFailure("InventoryFail", str(exc), exc.index)
    except AlignmentError as exc:
        return ValidationFailure("AlignmentFail", str(exc))
    except SeqError as exc:
        return ValidationFailure("ParseFail", str(exc))
    # the cheapest alignment can misread a legal edit ("IY1 -> IY1 Y" as match
    # plus insert), so rule-breaking moves are priced far above any edit cost:
    # the path found has the fewest violations, and among those the fewest edits
    steps = align(source.phonemes, target.phonemes, _rule_penalty(source, target))
    result = _check_against(source, target, steps)
    if isinstance(result, ValidationFailure):
        return result
    return EditResponse(result[0], result[1], tuple(rationale))


_VIOLATION = 1e6


def _rule_penalty(source: AlignedUtterance, target: AlignedUtterance):
    sd, sp, se = source.durations, source.pitch, source.energy
    td, tp, te = target.durations, target.pitch, target.energy
    n = len(source)

    def ok(kind, i, j):
        if kind in ("match", "sub"):
            return td[j - 1] == sd[i - 1] and _close(tp[j - 1], sp[i - 1]) \
                and _close(te[j - 1], se[i - 1])
        if kind == "del":
            return True
        if kind == "ins":
            # live neighbours: the previous output row and the next unread source row
            left = (td[j - 2], tp[j - 2], te[j - 2]) if j >= 2 else None
            right = (sd[i], sp[i], se[i]) if i < n else None
            if left is None and right is None:
                return False
            donor = left or right
            adj = [r[0] for r in (left, right) if r is not None]
            d = max(1, round_half_up(sum(adj) / len(adj)))
            return td[j - 1] == d and _close_quantized(tp[j - 1], donor[1]) \
                and _close_quantized(te[j - 1], donor[2])
        if kind == "split":
            d = sd[i - 1]
            return td[j - 2] == max(1, d // 2) and td[j - 1] == max(1, d - d // 2) and all(
                _close_quantized(x, ref) for x, ref in
                ((tp[j - 2], sp[i - 1]), (tp[j - 1], sp[i - 1]),
                 (te[j - 2], se[i - 1]), (te[j - 1], se[i - 1])))
        # merge
        d = sd[i - 2] + sd[i - 1]
        p = (sd[i - 2] * sp[i - 2] + sd[i - 1] * sp[i - 1]) / d
        e = (sd[i - 2] * se[i - 2] + sd[i - 1] * se[i - 1]) / d
        return td[j - 1] == d and _close_quantized(tp[j - 1], p) and _close_quantized(te[j - 1], e)

    def penalty(kind, i, j):
        if kind == "del" and j + n - i == 0:
            return math.inf  # would delete the only live phoneme
        return 0.0 if ok(kind, i, j) else _VIOLATION

    return penalty


def _check_against(source: AlignedUtterance, target: AlignedUtterance, steps):
    """Compare ``target`` with the source edited along ``steps``."""
    script, kinds = steps_to_script(steps, target.phonemes, provenance="llm")
    try:
        expected = apply_script(source, script)
    except (SeqError, IndexError) as exc:  # pragma: no cover - scripts from align always apply
        return ValidationFailure("StructuralRuleFail", str(exc))
    for i, kind in enumerate(kinds):
        got = (target.durations[i], target.pitch[i], target.energy[i])
        want = (expected.durations[i], expected.pitch[i], expected.energy[i])
        if kind in ("match", "sub"):
            if got[0] != want[0] or not _close(got[1], want[1]) or not _close(got[2], want[2]):
                return ValidationFailure(
                    "ProsodyTamperFail",
                    f"{target.phonemes[i]} has d/p/e {got}, source values are {want}", i)
        elif (got[0] != want[0] or not _close_quantized(got[1], want[1])
              or not _close_quantized(got[2], want[2])):
            return ValidationFailure(
                "StructuralRuleFail",
                f"{kind} output {target.phonemes[i]} has d/p/e {got}, rule gives {want}", i)
    if target.word_lengths is not None and expected.word_lengths is not None \
            and target.word_lengths != expected.word_lengths:
        return ValidationFailure("StructuralRuleFail",
                                 f"word lengths {target.word_lengths} != {expected.word_lengths}")
    return expected, script


# ------------------------------------------------------------ backends

class EditorBackend:
    def complete(self, prompt: str) -> str:
        raise NotImplementedError

    def __call__(self, prompt: str) -> str:
        return self.complete(prompt)


def _query_source(prompt: str) -> AlignedUtterance:
    lines = [l for l in prompt.splitlines() if l.startswith("SOURCE: ")]
    if not lines:
        raise ValueError("prompt has no SOURCE line")
    return parse_sequence(lines[-1][len("SOURCE: "):])


class MockBackend(EditorBackend):
    """Rule substitutions applied left to right until the change rate would pass ``cap_rate``.

    Rules map base symbols (``("W", "V")``). Vowel targets keep the source
    vowel's stress, or get stress 0 when replacing a consonant.
    """

    def __init__(self, rules: Sequence[Tuple[str, str]], cap_rate: float = 1.0):
        self.rules = [(str(a), str(b)) for a, b in rules]
        for a, b in self.rules:
            if a not in INVENTORY or b not in INVENTORY:
                raise UnknownPhoneme(f"{a}->{b}", reason="rules map base symbols in the inventory")
        self.cap_rate = cap_rate
        self.calls = 0

    def rewrite(self, source: AlignedUtterance) -> Tuple[AlignedUtterance, List[str]]:
        table = {}
        for a, b in self.rules:
            table.setdefault(a, b)
        budget = math.floor(self.cap_rate * len(source) + 1e-9)
        phonemes = list(source.phonemes)
        notes = []
        for i, ph in enumerate(phonemes):
            if len(notes) >= budget:
                break
            new_base = table.get(ph.base)
            if new_base is None or new_base == ph.base:
                continue
            if is_vowel(new_base):
                new = Phoneme(new_base, ph.stress if ph.is_vowel else 0)
            else:
                new = Phoneme(new_base)
            phonemes[i] = new
            notes.append(f"# position {i}: {ph} -> {new} (rule {ph.base}->{new_base})")
        return source.replace(phonemes=phonemes), notes

    def complete(self, prompt: str) -> str:
        self.calls += 1
        edited, notes = self.rewrite(_query_source(prompt))
        return "\n".join([f"TARGET: {serialize_sequence(edited)}", *notes]) + "\n"


def mock_backend(rules, cap_rate: float = 1.0) -> MockBackend:
    return MockBackend(rules, cap_rate)


class ScriptedBackend(EditorBackend):
    """Replays canned responses in order, repeating the last one."""

    def __init__(self, responses: Sequence[str]):
        if not responses:
            raise ValueError("need at least one response")
        self.responses = list(responses)
        self.prompts: List[str] = []

    def complete(self, prompt: str) -> str:
        self.prompts.append(prompt)
        return self.responses[min(len(self.prompts), len(self.responses)) - 1]


class ChatBackend(EditorBackend):
    """OpenAI-style ``/chat/completions`` client; the prompt goes out as one user message."""

    def __init__(self, base_url: str, model: str, api_key_env: str = "OPENAI_API_KEY",
                 temperature: float = 0.0, timeout: float = 60.0,
                 transport_retries: int = 2, backoff: float = 1.0):
        self.url = base_url.rstrip("/") + "/chat/completions"
        self.model = model
        self.api_key_env = api_key_env
        self.temperature = temperature
        self.timeout = timeout
        self.transport_retries = transport_retries
        self.backoff = backoff

    def payload(self, prompt: str) -> dict:
        return {"model": self.model, "temperature": self.temperature,
                "messages": [{"role": "user", "content": prompt}]}

    def complete(self, prompt: str) -> str:
        import requests

        headers = {"Content-Type": "application/json"}
        token = os.environ.get(self.api_key_env) if self.api_key_env else None
        if token:
            headers["Authorization"] = f"Bearer {token}"
        last = None
        for attempt in range(self.transport_retries + 1):
            try:
                r = requests.post(self.url, json=self.payload(prompt), headers=headers,
                                  timeout=self.timeout)
            except requests.RequestException as exc:
                last = f"transport error: {exc}"
            else:
                if r.status_code in (401, 403):
                    raise BackendError(f"authentication failed ({r.status_code}) at {self.url}")
                if r.status_code == 200:
                    try:
                        return r.json()["choices"][0]["message"]["content"]
                    except (ValueError, KeyError, IndexError, TypeError):
                        raise BackendError(f"unexpected response body from {self.url}") from None
                last = f"HTTP {r.status_code}"
            if attempt < self.transport_retries:
                time.sleep(self.backoff * 2 ** attempt)
        raise BackendError(f"{self.url}: {last} after {self.transport_retries + 1} attempts")


# ------------------------------------------------------------ edit loop

def edit_with_llm(source: AlignedUtterance, spec: PromptSpec, backend,
                  max_retries: int = DEFAULT_RETRIES) -> EditResponse:
    """Ask the backend for an edit, re-asking with the failure appended until it validates.

    After ``max_retries`` failed re-asks the source comes back unchanged with
    ``fallback=True``. Backend transport errors propagate as BackendError.
    """
    if max_retries < 0:
        raise ValueError("max_retries must be >= 0")
    complete = backend.complete if hasattr(backend, "complete") else backend
    shown = quantize(source)
    prompt = build_prompt(spec)
    failures = []
    for attempt in range(1, max_retries + 2):
        text = complete(prompt if not failures else _with_feedback(prompt, failures[-1]))
        result = validate_response(shown, text)
        if isinstance(result, EditResponse):
            # re-apply to the unrounded source so untouched values keep full precision
            return EditResponse(apply_script(source, result.script), result.script,
                                result.rationale_lines,
                                attempt, False, tuple(failures))
        log.info("attempt %d rejected: %s", attempt, result.describe())
        failures.append(result)
    return EditResponse(source, EditScript((), "llm"), (), max_retries + 1, True,
                        tuple(failures))


def _with_feedback(prompt: str, failure: ValidationFailure) -> str:
    return (prompt + "\nYour previous answer was rejected: " + failure.describe()
            + "\nFix the problem and answer again in the required format.\n")


def edit_many(jobs: Sequence[Tuple[AlignedUtterance, PromptSpec]], backend,
              max_retries: int = DEFAULT_RETRIES, workers: int = 4) -> List[EditResponse]:
    """Run ``edit_with_llm`` over many utterances with at most ``workers`` calls in flight."""
    if workers <= 1:
        return [edit_with_llm(u, s, backend, max_retries) for u, s in jobs]
    with ThreadPoolExecutor(max_workers=workers) as pool:
        return list(pool.map(lambda job: edit_with_llm(job[0], job[1], backend, max_retries),
                             jobs))
