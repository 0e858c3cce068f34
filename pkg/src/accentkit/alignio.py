"""Readers for forced-alignment output: Praat TextGrids and 3-column TSV."""
from __future__ import annotations

import re
from typing import Dict, List, Optional, Tuple

from .prosody import PhoneInterval, check_intervals

_INDEX_LINE = re.compile(r"^\s*\w+\s*\[\s*\d*\s*\]\s*:?\s*$")
_TOKEN = re.compile(r'"((?:[^"]|"")*)"|(<exists>|<absent>)|([-+]?\d+(?:\.\d*)?(?:[eE][-+]?\d+)?)')


class TextGridError(ValueError):
    pass


def _tokens(text: str) -> List:
    """Numbers and strings in file order, for both the long and the short layout."""
    toks = []
    for line in text.splitlines():
        if _INDEX_LINE.match(line):
            continue
        stripped = line.strip()
        if "=" in stripped and not stripped.startswith('"'):
            stripped = stripped.split("=", 1)[1]
        for m in _TOKEN.finditer(stripped):
            s, flag, num = m.groups()
            if s is not None:
                toks.append(s.replace('""', '"'))
            elif flag is None:
                toks.append(float(num))
    return toks


def parse_textgrid(text: str) -> Dict[str, List[Tuple[float, float, str]]]:
    """Interval tiers by name, each a list of ``(start, end, label)``."""
    toks = _tokens(text)
    pos = 0

    def take(kind):
        nonlocal pos
        if pos >= len(toks):
            raise TextGridError("unexpected end of TextGrid")
        tok = toks[pos]
        pos += 1
        if not isinstance(tok, kind):
            raise TextGridError(f"expected {kind.__name__}, got {tok!r}")
        return tok

    if take(str) != "ooTextFile" or take(str) != "TextGrid":
        raise TextGridError("not a Praat TextGrid text file")
    take(float), take(float)
    n_tiers = int(take(float))
    tiers = {}
    for _ in range(n_tiers):
        cls = take(str)
        name = take(str)
        take(float), take(float)
        n = int(take(float))
        if cls == "IntervalTier":
            tiers[name] = [(take(float), take(float), take(str)) for _ in range(n)]
        elif cls == "TextTier":
            for _ in range(n):
                take(float), take(str)
        else:
            raise TextGridError(f"unknown tier class {cls!r}")
    return tiers


def _to_intervals(rows) -> List[PhoneInterval]:
    out = [PhoneInterval(label.strip(), float(s), float(e)) for s, e, label in rows]
    check_intervals(out)
    return out


def read_textgrid_phones(path, tier: str = "phones") -> List[PhoneInterval]:
    with open(path, encoding="utf-8-sig") as fh:
        tiers = parse_textgrid(fh.read())
    if tier not in tiers:
        raise TextGridError(f"{path}: no interval tier named {tier!r} (have {sorted(tiers)})")
    return _to_intervals(tiers[tier])


def read_textgrid_word_lengths(path, phones: List[PhoneInterval],
                               tier: str = "words") -> Optional[List[int]]:
    """Phone counts per non-silent word, or None if the tier is missing or doesn't cover the phones."""
    with open(path, encoding="utf-8-sig") as fh:
        tiers = parse_textgrid(fh.read())
    if tier not in tiers:
        return None
    speech = [p for p in phones if not p.is_silence]
    counts = []
    for s, e, label in tiers[tier]:
        if label.strip().lower() in ("", "sil", "sp"):
            continue
        c = sum(1 for p in speech if p.start >= s - 1e-6 and p.end <= e + 1e-6)
        if c:
            counts.append(c)
    return counts if sum(counts) == len(speech) else None


def read_phone_tsv(path) -> List[PhoneInterval]:
    """``phoneme<TAB>start_sec<TAB>end_sec`` per line; ``#`` comments allowed."""
    rows = []
    with open(path, encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, 1):
            if not line.strip() or line.lstrip().startswith("#"):
                continue
            parts = line.rstrip("\n").split("\t")
            if len(parts) != 3:
                raise ValueError(f"{path}:{lineno}: expected 3 tab-separated columns")
            try:
                rows.append((float(parts[1]), float(parts[2]), parts[0]))
            except ValueError:
                raise ValueError(f"{path}:{lineno}: malformed time") from None
    return _to_intervals(rows)


def read_alignment(path) -> Tuple[List[PhoneInterval], Optional[List[int]]]:
    """Dispatch on extension: ``.TextGrid`` files, anything else as TSV."""
    if str(path).lower().endswith(".textgrid"):
        phones = read_textgrid_phones(path)
        return phones, read_textgrid_word_lengths(path, phones)
    return read_phone_tsv(path), None


def format_textgrid(tiers: Dict[str, List[Tuple[float, float, str]]]) -> str:
    """Long-format TextGrid text for interval tiers."""
    xmax = max((row[1] for rows in tiers.values() for row in rows), default=0.0)
    out = ['File type = "ooTextFile"', 'Object class = "TextGrid"', "",
           "xmin = 0", f"xmax = {xmax!r}", "tiers? <exists>", f"size = {len(tiers)}",
           "item []:"]
    for k, (name, rows) in enumerate(tiers.items(), 1):
        out += [f"    item [{k}]:", '        class = "IntervalTier"',
                f'        name = "{name}"', "        xmin = 0", f"        xmax = {xmax!r}",
                f"        intervals: size = {len(rows)}"]
        for j, (s, e, label) in enumerate(rows, 1):
            label = label.replace('"', '""')
            out += [f"        intervals [{j}]:", f"            xmin = {s!r}",
                    f"            xmax = {e!r}", f'            text = "{label}"']
    return "\n".join(out) + "\n"
