"""Constrained edits on aligned utterances.

Edits never invent prosody: a substitution keeps the position's values,
structural edits only adjust what is needed to keep the four vectors aligned.
"""
from __future__ import annotations

import random
from dataclasses import dataclass
from typing import Callable, List, Optional, Sequence, Tuple, Union

from .seqcore import (INVENTORY, AlignedUtterance, AlignmentError, InvariantViolation, Phoneme,
                      SequenceSyntaxError, as_phoneme, is_vowel, round_half_up,
                      validate_inventory)

PROVENANCES = ("llm", "random", "oracle-alignment")


@dataclass(frozen=True)
class Substitute:
    index: int
    new: Phoneme

    def __post_init__(self):
        object.__setattr__(self, "new", as_phoneme(self.new))


@dataclass(frozen=True)
class Delete:
    index: int


@dataclass(frozen=True)
class Insert:
    index: int
    new: Phoneme

    def __post_init__(self):
        object.__setattr__(self, "new", as_phoneme(self.new))


@dataclass(frozen=True)
class Split:
    index: int
    first: Phoneme
    second: Phoneme

    def __post_init__(self):
        object.__setattr__(self, "first", as_phoneme(self.first))
        object.__setattr__(self, "second", as_phoneme(self.second))


@dataclass(frozen=True)
class Merge:
    """Replace positions ``index`` and ``index + 1`` with one phoneme."""

    index: int
    new: Phoneme

    def __post_init__(self):
        object.__setattr__(self, "new", as_phoneme(self.new))


EditOp = Union[Substitute, Delete, Insert, Split, Merge]


@dataclass(frozen=True)
class EditScript:
    ops: tuple = ()
    provenance: str = "llm"

    def __post_init__(self):
        object.__setattr__(self, "ops", tuple(self.ops))
        if self.provenance not in PROVENANCES:
            raise ValueError(f"unknown provenance {self.provenance!r}")

    def __len__(self):
        return len(self.ops)

    def __iter__(self):
        return iter(self.ops)


class _Row:
    # mutable working copy of one position; ``word`` is the owning word's ordinal
    __slots__ = ("ph", "d", "p", "e", "word")

    def __init__(self, ph, d, p, e, word):
        self.ph, self.d, self.p, self.e, self.word = ph, d, p, e, word


def _check_index(op, i, hi):
    if isinstance(i, bool) or not isinstance(i, int) or not 0 <= i < hi:
        raise IndexError(f"{op!r}: index must lie in [0, {hi})")


def _apply_one(rows: List[_Row], op) -> None:
    n = len(rows)
    if isinstance(op, Substitute):
        _check_index(op, op.index, n)
        rows[op.index].ph = op.new
    elif isinstance(op, Delete):
        _check_index(op, op.index, n)
        if n == 1:
            raise InvariantViolation("cannot delete the only phoneme")
        del rows[op.index]
    elif isinstance(op, Insert):
        _check_index(op, op.index, n + 1)
        i = op.index
        left = rows[i - 1] if i > 0 else None
        right = rows[i] if i < n else None
        donor = left if left is not None else right
        adjacent = [r.d for r in (left, right) if r is not None]
        d = max(1, round_half_up(sum(adjacent) / len(adjacent)))
        rows.insert(i, _Row(op.new, d, donor.p, donor.e, donor.word))
    elif isinstance(op, Split):
        _check_index(op, op.index, n)
        r = rows[op.index]
        d1 = max(1, r.d // 2)
        d2 = max(1, r.d - r.d // 2)
        rows[op.index:op.index + 1] = [_Row(op.first, d1, r.p, r.e, r.word),
                                       _Row(op.second, d2, r.p, r.e, r.word)]
    elif isinstance(op, Merge):
        _check_index(op, op.index, n)
        if op.index + 1 >= n:
            raise InvariantViolation(f"{op!r}: no position after {op.index} to merge with")
        a, b = rows[op.index], rows[op.index + 1]
        d = a.d + b.d
        p = (a.d * a.p + b.d * b.p) / d
        e = (a.d * a.e + b.d * b.e) / d
        rows[op.index:op.index + 2] = [_Row(op.new, d, p, e, a.word)]
    else:
        raise TypeError(f"not an edit operation: {op!r}")


def apply_script(source: AlignedUtterance, script) -> AlignedUtterance:
    """Apply ops left to right, each index referring to the sequence as it stands."""
    if source.word_lengths is not None:
        words = [w for w, n in enumerate(source.word_lengths) for _ in range(n)]
    else:
        words = [0] * len(source)
    rows = [_Row(*vals) for vals in zip(source.phonemes, source.durations,
                                        source.pitch, source.energy, words)]
    ops = script.ops if isinstance(script, EditScript) else tuple(script)
    for op in ops:
        _apply_one(rows, op)
    word_lengths = None
    if source.word_lengths is not None:
        word_lengths = []
        prev = object()
        for r in rows:
            if r.word == prev:
                word_lengths[-1] += 1
            else:
                word_lengths.append(1)
                prev = r.word
    return AlignedUtterance([r.ph for r in rows], [r.d for r in rows],
                            [r.p for r in rows], [r.e for r in rows], word_lengths)


def levenshtein(a: Sequence, b: Sequence) -> int:
    """Unit-cost edit distance, two-row DP."""
    if len(a) < len(b):
        a, b = b, a
    prev = list(range(len(b) + 1))
    for i, x in enumerate(a, 1):
        cur = [i]
        for j, y in enumerate(b, 1):
            cur.append(min(prev[j] + 1, cur[j - 1] + 1, prev[j - 1] + (x != y)))
        prev = cur
    return prev[-1]


def change_rate(source: AlignedUtterance, target) -> float:
    """Phoneme edit distance over source length (stress digits count)."""
    if len(source) == 0:
        raise ValueError("source is empty")
    tgt = target.phonemes if isinstance(target, AlignedUtterance) else target
    return levenshtein(source.phonemes, tuple(tgt)) / len(source)


def random_matched_rate(source: AlignedUtterance, rate: float,
                        seed: int) -> Tuple[AlignedUtterance, EditScript]:
    """Substitute ``round(rate * L)`` uniformly chosen positions with random symbols.

    The replacement base is drawn uniformly from the 38 bases other than the
    original one. A vowel replacement inherits the original vowel's stress,
    otherwise gets stress 0. Substitutions can line up with shifted
    neighbours (``AB AB -> BA BA`` is distance 2, not 4), so the symbols are
    redrawn, positions kept, until the edit distance equals the count.
    """
    if not 0.0 <= rate <= 1.0:
        raise ValueError(f"rate must lie in [0, 1], got {rate}")
    L = len(source)
    n = round_half_up(rate * L)
    rng = random.Random(seed)
    positions = sorted(rng.sample(range(L), n))
    for _ in range(_MAX_REDRAWS):
        ops = [_random_substitute(rng, i, source.phonemes[i]) for i in positions]
        edited = apply_script(source, ops)
        if levenshtein(source.phonemes, edited.phonemes) == n:
            return edited, EditScript(ops, provenance="random")
    raise RuntimeError(f"no exact {n}-substitution draw after {_MAX_REDRAWS} tries")


_MAX_REDRAWS = 10_000


def _random_substitute(rng: random.Random, i: int, orig: Phoneme) -> Substitute:
    base = rng.choice([b for b in INVENTORY if b != orig.base])
    if is_vowel(base):
        return Substitute(i, Phoneme(base, orig.stress if orig.is_vowel else 0))
    return Substitute(i, Phoneme(base))


# alignment costs in half units so split/merge (1.5) sit between one op and two
_COST = {"match": 0, "sub": 2, "merge": 3, "split": 3, "del": 2, "ins": 2}
_PREFERENCE = ("match", "sub", "merge", "split", "del", "ins")


def align(source: Sequence[Phoneme], target: Sequence[Phoneme],
          penalty: Optional[Callable[[str, int, int], float]] = None) -> List[tuple]:
    """Minimal-cost alignment steps ``(kind, src_slice, tgt_slice)``.

    Ties are resolved match > substitute > merge/split > delete > insert,
    preferring that kind for the last step when tracing back. ``penalty(kind,
    i, j)`` adds to the cost of the move ending at cell ``(i, j)``; an infinite
    penalty forbids it, and AlignmentError is raised when no path survives.
    """
    src, tgt = list(source), list(target)
    n, m = len(src), len(tgt)
    INF = float("inf")
    cost = [[INF] * (m + 1) for _ in range(n + 1)]
    cost[0][0] = 0
    for i in range(n + 1):
        for j in range(m + 1):
            if i == 0 and j == 0:
                continue
            best = INF
            for kind, di, dj in _moves(src, tgt, i, j):
                c = cost[i - di][j - dj] + _COST[kind]
                if penalty is not None:
                    c += penalty(kind, i, j)
                if c < best:
                    best = c
            cost[i][j] = best
    if cost[n][m] == INF:
        raise AlignmentError("no admissible alignment")
    steps = []
    i, j = n, m
    while i > 0 or j > 0:
        for kind, di, dj in sorted(_moves(src, tgt, i, j),
                                   key=lambda mv: _PREFERENCE.index(mv[0])):
            c = cost[i - di][j - dj] + _COST[kind]
            if penalty is not None:
                c += penalty(kind, i, j)
            if c == cost[i][j]:
                steps.append((kind, (i - di, i), (j - dj, j)))
                i, j = i - di, j - dj
                break
        else:  # pragma: no cover - the DP always has a predecessor
            raise AssertionError("broken alignment table")
    steps.reverse()
    return steps


def _moves(src, tgt, i, j):
    moves = []
    if i >= 1 and j >= 1:
        moves.append(("match" if src[i - 1] == tgt[j - 1] else "sub", 1, 1))
    if i >= 1:
        moves.append(("del", 1, 0))
    if j >= 1:
        moves.append(("ins", 0, 1))
    if i >= 1 and j >= 2:
        moves.append(("split", 1, 2))
    if i >= 2 and j >= 1:
        moves.append(("merge", 2, 1))
    return moves


def steps_to_script(steps, target: Sequence[Phoneme],
                    provenance: str = "oracle-alignment") -> Tuple[EditScript, List[str]]:
    """Turn alignment steps into live-index ops.

    Also returns, per output position, the step kind that produced it.
    """
    ops, kinds = [], []
    pos = 0
    for kind, _, (t0, t1) in steps:
        if kind == "match":
            kinds.append(kind)
            pos += 1
        elif kind == "sub":
            ops.append(Substitute(pos, target[t0]))
            kinds.append(kind)
            pos += 1
        elif kind == "del":
            ops.append(Delete(pos))
        elif kind == "ins":
            ops.append(Insert(pos, target[t0]))
            kinds.append(kind)
            pos += 1
        elif kind == "split":
            ops.append(Split(pos, target[t0], target[t0 + 1]))
            kinds.extend([kind, kind])
            pos += 2
        elif kind == "merge":
            ops.append(Merge(pos, target[t0]))
            kinds.append(kind)
            pos += 1
    return EditScript(ops, provenance), kinds


def diff_to_script(source: AlignedUtterance, target_phonemes,
                   provenance: str = "oracle-alignment") -> EditScript:
    """Cheapest script turning ``source``'s phonemes into ``target_phonemes``."""
    target = [as_phoneme(p) for p in target_phonemes]
    if not target:
        raise ValueError("target is empty")
    script, _ = steps_to_script(align(source.phonemes, target), target, provenance)
    return script


def format_op(op) -> str:
    if isinstance(op, Substitute):
        return f"SUB {op.index} {op.new}"
    if isinstance(op, Delete):
        return f"DEL {op.index}"
    if isinstance(op, Insert):
        return f"INS {op.index} {op.new}"
    if isinstance(op, Split):
        return f"SPLIT {op.index} {op.first} {op.second}"
    if isinstance(op, Merge):
        return f"MERGE {op.index} {op.new}"
    raise TypeError(f"not an edit operation: {op!r}")


def format_script(script: EditScript) -> str:
    return "".join(format_op(op) + "\n" for op in script.ops)


_ARITY = {"SUB": (Substitute, 1), "DEL": (Delete, 0), "INS": (Insert, 1),
          "SPLIT": (Split, 2), "MERGE": (Merge, 1)}


def parse_script(text: str, provenance: str = "llm") -> EditScript:
    ops = []
    for lineno, line in enumerate(text.splitlines(), 1):
        line = line.split("#", 1)[0].strip()
        if not line:
            continue
        name, *args = line.split()
        if name not in _ARITY:
            raise SequenceSyntaxError(f"line {lineno}: unknown op {name!r}")
        cls, nsym = _ARITY[name]
        if len(args) != 1 + nsym or not args[0].isdigit():
            raise SequenceSyntaxError(f"line {lineno}: malformed {name} op")
        ops.append(cls(int(args[0]), *validate_inventory(args[1:])))
    return EditScript(ops, provenance)
