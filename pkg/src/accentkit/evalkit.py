"""WER, embedding-centroid accent similarity, and run aggregation."""
from __future__ import annotations

import csv
import re
from dataclasses import dataclass
from typing import Dict, List, Mapping, Sequence

import numpy as np

from .editops import levenshtein


class EmptyReference(ValueError):
    pass


class EmptyInput(ValueError):
    pass


class DimensionMismatch(ValueError):
    pass


class ZeroNormEmbedding(ValueError):
    pass


_STRIP = re.compile(r"[^a-z0-9'\s]")


def normalize_text(raw: str) -> List[str]:
    """Lowercase, keep ``[a-z0-9']``, split on whitespace."""
    return _STRIP.sub("", raw.lower()).split()


def edit_distance(a: Sequence, b: Sequence) -> int:
    return levenshtein(a, b)


def wer(reference: Sequence[str], hypothesis: Sequence[str]) -> float:
    """(S + D + I) / len(reference); strings are normalised first."""
    ref = normalize_text(reference) if isinstance(reference, str) else list(reference)
    hyp = normalize_text(hypothesis) if isinstance(hypothesis, str) else list(hypothesis)
    if not ref:
        raise EmptyReference("reference transcript is empty")
    return levenshtein(ref, hyp) / len(ref)


def _unit_rows(vectors, what: str) -> np.ndarray:
    arr = np.asarray(vectors, dtype=np.float64)
    if arr.ndim != 2 or arr.shape[0] == 0:
        raise EmptyInput(f"{what}: need a non-empty list of vectors")
    norms = np.linalg.norm(arr, axis=1)
    if np.any(norms == 0):
        raise ZeroNormEmbedding(f"{what}: embedding {int(np.argmin(norms))} has zero norm")
    return arr / norms[:, None]


def speaker_centroids(real_by_speaker: Mapping[str, Sequence]) -> Dict[str, np.ndarray]:
    """Mean of each speaker's unit-normalised embeddings."""
    out = {}
    dim = None
    for spk in sorted(real_by_speaker):
        rows = _unit_rows(real_by_speaker[spk], f"speaker {spk}")
        if dim is not None and rows.shape[1] != dim:
            raise DimensionMismatch(f"speaker {spk} has dimension {rows.shape[1]}, expected {dim}")
        dim = rows.shape[1]
        out[spk] = rows.mean(axis=0)
    return out


def accent_similarity(synth: Sequence, real_by_speaker: Mapping[str, Sequence]) -> float:
    """Mean over synthetic embeddings of the mean cosine to every speaker centroid."""
    if not real_by_speaker:
        raise EmptyInput("no real speakers given")
    cents = speaker_centroids(real_by_speaker)
    C = np.stack([cents[k] for k in sorted(cents)])
    S = _unit_rows(synth, "synthetic embeddings")
    if S.shape[1] != C.shape[1]:
        raise DimensionMismatch(f"synthetic dimension {S.shape[1]} != real {C.shape[1]}")
    c_norm = np.linalg.norm(C, axis=1)
    if np.any(c_norm == 0):
        raise ZeroNormEmbedding("a speaker centroid has zero norm")
    cos = (S @ C.T) / c_norm[None, :]
    return float(cos.mean(axis=1).mean())


@dataclass(frozen=True)
class RunAggregate:
    mean: float
    std: float
    n_runs: int


def aggregate_runs(values: Sequence[float]) -> RunAggregate:
    """Population mean and std. Values are sorted first so order never changes the bits."""
    if len(values) == 0:
        raise EmptyInput("no run values to aggregate")
    v = np.sort(np.asarray(values, dtype=np.float64))
    return RunAggregate(float(v.mean()), float(v.std()), int(v.size))


# ---------------------------------------------------------------- file formats

def read_embeddings(path) -> Dict[str, np.ndarray]:
    """``utt_id v1 v2 ...`` per line; every line must match the first line's dimension."""
    out = {}
    dim = None
    with open(path, encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, 1):
            parts = line.split()
            if not parts or parts[0].startswith("#"):
                continue
            try:
                vec = np.array([float(x) for x in parts[1:]])
            except ValueError:
                raise ValueError(f"{path}:{lineno}: malformed number") from None
            if dim is None:
                dim = vec.size
            if vec.size != dim or dim == 0:
                raise DimensionMismatch(f"{path}:{lineno}: dimension {vec.size}, expected {dim}")
            out[parts[0]] = vec
    return out


def read_transcripts(path) -> Dict[str, str]:
    """``utt_id<TAB>raw text`` per line."""
    out = {}
    with open(path, encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, 1):
            line = line.rstrip("\n")
            if not line.strip() or line.startswith("#"):
                continue
            key, tab, text = line.partition("\t")
            if not tab:
                raise ValueError(f"{path}:{lineno}: expected utt_id<TAB>text")
            out[key.strip()] = text
    return out


SCORE_COLUMNS = ("condition", "speaker", "metric", "mean", "std", "n_runs")


def write_scores(path, rows: Sequence[Mapping]):
    with open(path, "w", encoding="utf-8", newline="") as fh:
        w = csv.DictWriter(fh, fieldnames=SCORE_COLUMNS, lineterminator="\n")
        w.writeheader()
        for r in rows:
            w.writerow({k: _fmt(r[k]) for k in SCORE_COLUMNS})


def _fmt(v):
    return f"{v:.6f}" if isinstance(v, float) else v
