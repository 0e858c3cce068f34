"""ARPAbet inventory and the aligned phoneme/prosody line format.

A line looks like::

    W IH1 L | d:10,7,7 | p:5.3,5.3,5.2 | e:0.8,3.6,3.1

with an optional trailing ``| w:...`` field holding phoneme counts per word.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Iterable, Iterator, List, Optional, Sequence

VOWELS = ("AA", "AE", "AH", "AO", "AW", "AY", "EH", "ER", "EY",
          "IH", "IY", "OW", "OY", "UH", "UW")
CONSONANTS = ("B", "CH", "D", "DH", "F", "G", "HH", "JH", "K", "L", "M", "N",
              "NG", "P", "R", "S", "SH", "T", "TH", "V", "W", "Y", "Z", "ZH")
INVENTORY = VOWELS + CONSONANTS
_VOWEL_SET = frozenset(VOWELS)
_BASE_SET = frozenset(INVENTORY)


class SeqError(ValueError):
    """Base class for sequence-format errors."""


class UnknownPhoneme(SeqError):
    def __init__(self, token, index=None, reason="not in inventory"):
        self.token = token
        self.index = index
        self.reason = reason
        where = "" if index is None else f" at position {index}"
        super().__init__(f"unknown phoneme {token!r}{where}: {reason}")


class AlignmentError(SeqError):
    """Prosody vector lengths disagree with the phoneme count."""


class SequenceSyntaxError(SeqError):
    """Missing field or malformed number in a sequence line."""


class InvariantViolation(SeqError):
    """An utterance (or an edit on it) breaks the aligned-utterance invariants."""


def is_vowel(base: str) -> bool:
    return base in _VOWEL_SET


@dataclass(frozen=True, order=True)
class Phoneme:
    """One ARPAbet symbol; vowels carry a stress digit, consonants never do."""

    base: str
    stress: Optional[int] = None

    def __post_init__(self):
        if self.base not in _BASE_SET:
            raise UnknownPhoneme(str(self), reason="not in inventory")
        if is_vowel(self.base):
            if self.stress not in (0, 1, 2):
                raise UnknownPhoneme(str(self), reason="vowel requires stress 0, 1 or 2")
        elif self.stress is not None:
            raise UnknownPhoneme(str(self), reason="consonant cannot carry stress")

    @classmethod
    def parse(cls, token: str) -> "Phoneme":
        if token[-1:].isdigit():
            base, digit = token[:-1], token[-1]
            if base not in _BASE_SET:
                raise UnknownPhoneme(token)
            if not is_vowel(base):
                raise UnknownPhoneme(token, reason="consonant cannot carry stress")
            if digit not in "012":
                raise UnknownPhoneme(token, reason="stress must be 0, 1 or 2")
            return cls(base, int(digit))
        if token not in _BASE_SET:
            raise UnknownPhoneme(token)
        if is_vowel(token):
            raise UnknownPhoneme(token, reason="vowel requires stress 0, 1 or 2")
        return cls(token)

    @property
    def is_vowel(self) -> bool:
        return is_vowel(self.base)

    def __str__(self):
        return self.base if self.stress is None else f"{self.base}{self.stress}"


def all_phonemes() -> List[Phoneme]:
    """Every distinct symbol, stress variants included (15*3 + 24 = 69)."""
    out = []
    for base in INVENTORY:
        if is_vowel(base):
            out.extend(Phoneme(base, s) for s in (0, 1, 2))
        else:
            out.append(Phoneme(base))
    return out


def validate_inventory(tokens: Iterable[str]) -> List[Phoneme]:
    """Map tokens to phonemes, reporting the first offending token and its index."""
    out = []
    for i, tok in enumerate(tokens):
        try:
            out.append(Phoneme.parse(tok))
        except UnknownPhoneme as exc:
            raise UnknownPhoneme(tok, index=i, reason=exc.reason) from None
    return out


def as_phoneme(value) -> Phoneme:
    return value if isinstance(value, Phoneme) else Phoneme.parse(str(value))


@dataclass(frozen=True)
class AlignedUtterance:
    """Phoneme sequence with one duration (frames), log-F0 and energy value per phoneme."""

    phonemes: tuple
    durations: tuple
    pitch: tuple
    energy: tuple
    word_lengths: Optional[tuple] = None

    def __post_init__(self):
        object.__setattr__(self, "phonemes", tuple(as_phoneme(p) for p in self.phonemes))
        object.__setattr__(self, "durations", tuple(self.durations))
        object.__setattr__(self, "pitch", tuple(float(x) for x in self.pitch))
        object.__setattr__(self, "energy", tuple(float(x) for x in self.energy))
        if self.word_lengths is not None:
            object.__setattr__(self, "word_lengths", tuple(self.word_lengths))
        self.check()

    def check(self):
        n = len(self.phonemes)
        if n == 0:
            raise InvariantViolation("utterance has no phonemes")
        lens = (len(self.durations), len(self.pitch), len(self.energy))
        if any(m != n for m in lens):
            raise AlignmentError(
                f"{n} phonemes but d/p/e lengths {lens[0]}/{lens[1]}/{lens[2]}")
        for i, d in enumerate(self.durations):
            if isinstance(d, bool) or not isinstance(d, int):
                raise InvariantViolation(f"duration at {i} is not an integer: {d!r}")
            if d < 1:
                raise InvariantViolation(f"duration at {i} is {d}; minimum is 1 frame")
        for i, (p, e) in enumerate(zip(self.pitch, self.energy)):
            if not math.isfinite(p):
                raise InvariantViolation(f"pitch at {i} is not finite")
            if not math.isfinite(e):
                raise InvariantViolation(f"energy at {i} is not finite")
        if self.word_lengths is not None:
            if any(isinstance(w, bool) or not isinstance(w, int) or w < 1
                   for w in self.word_lengths):
                raise InvariantViolation("word lengths must be positive integers")
            if sum(self.word_lengths) != n:
                raise InvariantViolation(
                    f"word lengths sum to {sum(self.word_lengths)}, expected {n}")

    def __len__(self):
        return len(self.phonemes)

    @property
    def symbols(self) -> List[str]:
        return [str(p) for p in self.phonemes]

    def replace(self, **changes) -> "AlignedUtterance":
        fields = dict(phonemes=self.phonemes, durations=self.durations,
                      pitch=self.pitch, energy=self.energy,
                      word_lengths=self.word_lengths)
        fields.update(changes)
        return AlignedUtterance(**fields)


def _split_numbers(field_name, text, conv):
    if not text.strip():
        raise SequenceSyntaxError(f"field {field_name!r} is empty")
    out = []
    for raw in text.split(","):
        raw = raw.strip()
        try:
            out.append(conv(raw))
        except ValueError:
            raise SequenceSyntaxError(
                f"malformed number {raw!r} in field {field_name!r}") from None
    return out


def _int(raw):
    if not raw.lstrip("+-").isdigit():
        raise ValueError(raw)
    return int(raw)


def _float(raw):
    value = float(raw)
    if not math.isfinite(value):
        raise ValueError(raw)
    return value


def parse_sequence(line: str) -> AlignedUtterance:
    """Parse one aligned-utterance line."""
    if not line or not line.strip():
        raise SequenceSyntaxError("empty line")
    parts = [p.strip() for p in line.strip().split("|")]
    phonemes = validate_inventory(parts[0].split())
    if not phonemes:
        raise SequenceSyntaxError("no phonemes before the first '|'")
    fields = {}
    for part in parts[1:]:
        key, sep, value = part.partition(":")
        key = key.strip()
        if not sep or key not in ("d", "p", "e", "w"):
            raise SequenceSyntaxError(f"unrecognised field {part!r}")
        if key in fields:
            raise SequenceSyntaxError(f"duplicate field {key!r}")
        fields[key] = value
    missing = [k for k in "dpe" if k not in fields]
    if missing:
        raise SequenceSyntaxError(f"missing field(s): {', '.join(missing)}")
    d = _split_numbers("d", fields["d"], _int)
    p = _split_numbers("p", fields["p"], _float)
    e = _split_numbers("e", fields["e"], _float)
    w = _split_numbers("w", fields["w"], _int) if "w" in fields else None
    n = len(phonemes)
    if not (len(d) == len(p) == len(e) == n):
        raise AlignmentError(
            f"{n} phonemes but d/p/e lengths {len(d)}/{len(p)}/{len(e)}")
    return AlignedUtterance(phonemes, d, p, e, w)


def _fmt(x: float) -> str:
    s = f"{x:.4f}"
    return "0.0000" if s == "-0.0000" else s


def serialize_sequence(u: AlignedUtterance) -> str:
    u.check()
    line = (" ".join(u.symbols)
            + " | d:" + ",".join(str(d) for d in u.durations)
            + " | p:" + ",".join(_fmt(x) for x in u.pitch)
            + " | e:" + ",".join(_fmt(x) for x in u.energy))
    if u.word_lengths is not None:
        line += " | w:" + ",".join(str(w) for w in u.word_lengths)
    return line


def quantize(u: AlignedUtterance) -> AlignedUtterance:
    """The utterance as it reads back after a serialization round trip."""
    return parse_sequence(serialize_sequence(u))


def iter_sequence_lines(lines: Iterable[str]) -> Iterator[tuple]:
    """Yield ``(line_number, line)`` for non-blank, non-comment lines."""
    for lineno, line in enumerate(lines, 1):
        line = line.strip()
        if line and not line.startswith("#"):
            yield lineno, line


def read_sequences(path) -> List[AlignedUtterance]:
    """Read a file of sequence lines; an optional ``<id>\\t`` prefix is dropped."""
    return [u for _, u in read_keyed_sequences(path)]


def read_keyed_sequences(path) -> List[tuple]:
    """Read ``(utterance_id, utterance)`` pairs.

    Lines may carry an utterance id before a tab; lines without one get
    ``line<N>`` as their id.
    """
    out = []
    with open(path, encoding="utf-8") as fh:
        for lineno, line in iter_sequence_lines(fh):
            key, tab, rest = line.partition("\t")
            if tab:
                out.append((key.strip(), parse_sequence(rest)))
            else:
                out.append((f"line{lineno}", parse_sequence(line)))
    return out


def write_keyed_sequences(path, items: Sequence[tuple]):
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        for key, u in items:
            fh.write(f"{key}\t{serialize_sequence(u)}\n")


def round_half_up(x: float) -> int:
    return int(math.floor(x + 0.5))
