"""Experiment bookkeeping: manifests, job plans for the scaling and K sweeps,
score ingestion and mean/std reports.

Nothing here trains a model. Plans go out as JSONL, externally produced
scores come back as ``job_id,metric,value[,speaker]`` CSV.
"""
from __future__ import annotations

import csv
import hashlib
import json
import logging
import random
from collections import defaultdict
from concurrent.futures import ThreadPoolExecutor
from dataclasses import asdict, dataclass, field
from typing import Callable, Dict, Iterable, List, Optional, Sequence, Tuple

from .evalkit import aggregate_runs, normalize_text

log = logging.getLogger(__name__)

ROLES = ("reference_pool", "adaptation_train", "eval", "synthetic")
CONDITIONS = ("adapt_only", "adapt_llm", "adapt_random", "adapt_gt", "real", "real_plus_synth")
COMPONENTS = ("icl", "speaker_emb", "style_emb", "decoder_ft")
VARIED = COMPONENTS + ("joint",)
JOINT_COMPONENTS = ("decoder_ft", "speaker_emb", "style_emb")
FIXED_K = 15
TRAIN_TEXT_ROLES = ("adaptation_train", "synthetic")


class ManifestError(ValueError):
    pass


class PoolTooSmall(ValueError):
    pass


class InsufficientData(ValueError):
    pass


class IngestError(ValueError):
    def __init__(self, lineno, message):
        self.lineno = lineno
        super().__init__(f"line {lineno}: {message}")


class UnknownJob(IngestError):
    pass


class MalformedRecord(IngestError):
    pass


class DuplicateRecord(IngestError):
    pass


# ---------------------------------------------------------------- manifest

@dataclass
class ManifestEntry:
    utterance_id: str
    speaker_id: str
    accent_label: str
    role: str
    wav: Optional[str] = None
    transcript: Optional[str] = None
    alignment: Optional[str] = None
    pcl_phonemes: Optional[str] = None
    embedding: Optional[str] = None
    pool_rank: Optional[int] = None
    text: Optional[str] = None
    # synthetic entries: which system variant produced them
    condition: Optional[str] = None

    def __post_init__(self):
        if self.role not in ROLES:
            raise ManifestError(f"{self.utterance_id}: unknown role {self.role!r}")
        if self.condition is not None and self.condition not in CONDITIONS:
            raise ManifestError(f"{self.utterance_id}: unknown condition {self.condition!r}")

    def transcript_text(self) -> Optional[str]:
        if self.text is not None:
            return self.text
        if self.transcript:
            with open(self.transcript, encoding="utf-8") as fh:
                return fh.read().strip()
        return None

    def to_json(self) -> str:
        d = {k: v for k, v in asdict(self).items() if v is not None}
        return json.dumps(d, sort_keys=True)


@dataclass
class Manifest:
    entries: List[ManifestEntry] = field(default_factory=list)

    def __post_init__(self):
        seen = set()
        for e in self.entries:
            key = (e.utterance_id, e.role)
            if key in seen:
                raise ManifestError(f"duplicate entry {e.utterance_id!r} with role {e.role!r}")
            seen.add(key)

    def by_role(self, role: str, speaker: Optional[str] = None) -> List[ManifestEntry]:
        return [e for e in self.entries
                if e.role == role and (speaker is None or e.speaker_id == speaker)]

    @property
    def speakers(self) -> List[str]:
        return sorted({e.speaker_id for e in self.entries})

    @classmethod
    def load(cls, path) -> "Manifest":
        entries = []
        with open(path, encoding="utf-8") as fh:
            for lineno, line in enumerate(fh, 1):
                if not line.strip() or line.lstrip().startswith("#"):
                    continue
                try:
                    entries.append(ManifestEntry(**json.loads(line)))
                except (json.JSONDecodeError, TypeError) as exc:
                    raise ManifestError(f"{path}:{lineno}: {exc}") from None
        return cls(entries)

    def save(self, path):
        with open(path, "w", encoding="utf-8", newline="\n") as fh:
            for e in self.entries:
                fh.write(e.to_json() + "\n")


def select_references(pool: Sequence[ManifestEntry], k: int) -> List[str]:
    """Ids of the ``k`` best-ranked (lowest ``pool_rank``) entries, best first."""
    unranked = [e.utterance_id for e in pool if e.pool_rank is None]
    if unranked:
        raise ManifestError(f"pool entries without pool_rank: {unranked[:5]}")
    if k < 0:
        raise ValueError("k must be non-negative")
    if k > len(pool):
        raise PoolTooSmall(f"need {k} references, pool has {len(pool)}")
    ranked = sorted(pool, key=lambda e: (e.pool_rank, e.utterance_id))
    return [e.utterance_id for e in ranked[:k]]


@dataclass(frozen=True)
class Finding:
    kind: str  # id_overlap | text_overlap
    speaker: Optional[str]
    ids: Tuple[str, ...]
    detail: str


def check_disjointness(manifest: Manifest) -> List[Finding]:
    """Reference/eval id overlaps per speaker and train/eval transcript overlaps.

    Returns one finding per overlapping (speaker, id) and one per overlapping
    normalised transcript; an empty list means the manifest is clean.
    """
    findings = []
    for spk in manifest.speakers:
        refs = {e.utterance_id for e in manifest.by_role("reference_pool", spk)}
        evals = {e.utterance_id for e in manifest.by_role("eval", spk)}
        for uid in sorted(refs & evals):
            findings.append(Finding("id_overlap", spk, (uid,),
                                    f"{uid} is both a reference and an eval utterance"))
    eval_texts = defaultdict(list)
    for e in manifest.by_role("eval"):
        t = e.transcript_text()
        if t is not None and normalize_text(t):
            eval_texts[" ".join(normalize_text(t))].append(e.utterance_id)
    train_texts = defaultdict(list)
    for role in TRAIN_TEXT_ROLES:
        for e in manifest.by_role(role):
            t = e.transcript_text()
            if t is not None and normalize_text(t):
                train_texts[" ".join(normalize_text(t))].append(e.utterance_id)
    for text in sorted(set(eval_texts) & set(train_texts)):
        ids = tuple(sorted(train_texts[text])) + tuple(sorted(eval_texts[text]))
        findings.append(Finding("text_overlap", None, ids,
                                f"train {sorted(train_texts[text])} and eval "
                                f"{sorted(eval_texts[text])} share the text {text!r}"))
    return findings


# ---------------------------------------------------------------- plans

@dataclass
class SweepSpec:
    kind: str  # "k_sweep" | "n_scaling"
    k_values: Optional[List[int]] = None
    n_values: List[int] = field(default_factory=lambda: [1, 3, 5, 10, 25, 100, 500])
    runs: int = 7
    synth_budget: int = 500
    master_seed: int = 0
    varied_component: str = "icl"
    speaker: Optional[str] = None
    eval_speakers: Optional[List[str]] = None
    # synthetic-only conditions, each trained on N of its own utterances
    synth_conditions: List[str] = field(default_factory=list)
    mix_condition: str = "adapt_llm"

    def __post_init__(self):
        if self.kind not in ("k_sweep", "n_scaling"):
            raise ValueError(f"unknown sweep kind {self.kind!r}")
        if self.varied_component not in VARIED:
            raise ValueError(f"unknown component {self.varied_component!r}")
        if self.k_values is None:
            self.k_values = ([0, 1, 3, 5, 10, 15] if self.varied_component == "icl"
                             else [1, 3, 5, 10, 15])
        self.k_values = list(self.k_values)
        self.n_values = list(self.n_values)
        for name, vals in (("k_values", self.k_values), ("n_values", self.n_values)):
            if vals != sorted(vals) or len(set(vals)) != len(vals):
                raise ValueError(f"{name} must be strictly ascending")
        if any(k < 0 for k in self.k_values):
            raise ValueError("k values must be non-negative")
        if 0 in self.k_values and self.varied_component != "icl":
            raise ValueError("K=0 is only defined for the icl component")
        if any(not 1 <= n <= 500 for n in self.n_values):
            raise ValueError("n values must lie in [1, 500]")
        if self.runs < 1 or self.synth_budget < 1:
            raise ValueError("runs and synth_budget must be positive")
        for c in list(self.synth_conditions) + [self.mix_condition]:
            if c not in CONDITIONS:
                raise ValueError(f"unknown condition {c!r}")


@dataclass(frozen=True)
class JobPlan:
    job_id: str
    kind: str
    series: str
    condition: str
    x: int
    run: int
    seed: int
    train_real: Tuple[str, ...] = ()
    train_synth: Tuple[str, ...] = ()
    component_refs: Optional[Dict[str, Tuple[str, ...]]] = None
    eval_speakers: Tuple[str, ...] = ()
    expected_outputs: Tuple[str, ...] = ()

    def to_json(self) -> str:
        d = asdict(self)
        d["train_real"] = list(self.train_real)
        d["train_synth"] = list(self.train_synth)
        if self.component_refs is not None:
            d["component_refs"] = {k: list(v) for k, v in self.component_refs.items()}
        return json.dumps(d, sort_keys=True)

    @classmethod
    def from_json(cls, line: str) -> "JobPlan":
        d = json.loads(line)
        for k in ("train_real", "train_synth", "eval_speakers", "expected_outputs"):
            d[k] = tuple(d.get(k, ()))
        if d.get("component_refs") is not None:
            d["component_refs"] = {k: tuple(v) for k, v in d["component_refs"].items()}
        return cls(**d)


def derive_seed(master_seed: int, *dims) -> int:
    """Stable 63-bit seed from the master seed and the job's coordinates."""
    blob = json.dumps([master_seed, *dims], separators=(",", ":")).encode()
    return int.from_bytes(hashlib.sha256(blob).digest()[:8], "big") >> 1


def _adaptation_speaker(spec: SweepSpec, entries: Sequence[ManifestEntry]) -> Optional[str]:
    if spec.speaker is not None:
        return spec.speaker
    spk = sorted({e.speaker_id for e in entries})
    return spk[0] if len(spk) == 1 else None


def _eval_speakers(spec, manifest, adapt_spk):
    if spec.eval_speakers is not None:
        return tuple(spec.eval_speakers)
    if adapt_spk is not None:
        return (adapt_spk,)
    return tuple(sorted({e.speaker_id for e in manifest.by_role("eval")}))


def _synth_pool(manifest, condition, speaker):
    return [e.utterance_id for e in manifest.by_role("synthetic", speaker)
            if e.condition in (None, condition)]


def plan_scaling(spec: SweepSpec, manifest: Manifest) -> List[JobPlan]:
    """``real`` and ``real_plus_synth`` jobs for every (N, run).

    Real utterances are drawn without replacement, independently per (N, run);
    the mixed job reuses that draw and adds the fixed synthetic set (the first
    ``synth_budget`` synthetic ids in manifest order).
    """
    if spec.kind != "n_scaling":
        raise ValueError("plan_scaling needs an n_scaling spec")
    real_pool = [e.utterance_id for e in manifest.by_role("adaptation_train", spec.speaker)]
    adapt_spk = _adaptation_speaker(spec, manifest.by_role("adaptation_train", spec.speaker))
    max_n = max(spec.n_values)
    if len(real_pool) < max_n:
        raise InsufficientData(f"need {max_n} real adaptation_train utterances, have {len(real_pool)}")
    mix_pool = _synth_pool(manifest, spec.mix_condition, spec.speaker)
    if len(mix_pool) < spec.synth_budget:
        raise InsufficientData(
            f"need {spec.synth_budget} synthetic utterances, have {len(mix_pool)}")
    fixed_synth = tuple(mix_pool[:spec.synth_budget])
    synth_pools = {}
    for cond in spec.synth_conditions:
        synth_pools[cond] = _synth_pool(manifest, cond, spec.speaker)
        if len(synth_pools[cond]) < max_n:
            raise InsufficientData(f"need {max_n} synthetic {cond} utterances, "
                                   f"have {len(synth_pools[cond])}")
    evals = _eval_speakers(spec, manifest, adapt_spk)
    order = {uid: i for i, uid in enumerate(real_pool)}
    jobs = []
    for n in spec.n_values:
        for r in range(spec.runs):
            seed = derive_seed(spec.master_seed, "n_scaling", n, r)
            real = tuple(sorted(random.Random(seed).sample(real_pool, n), key=order.__getitem__))
            jobs.append(JobPlan(f"scale-real-n{n:03d}-r{r}", "n_scaling", "real", "real", n, r,
                                seed, train_real=real, eval_speakers=evals,
                                expected_outputs=("wer",)))
            jobs.append(JobPlan(f"scale-real_plus_synth-n{n:03d}-r{r}", "n_scaling",
                                "real_plus_synth", "real_plus_synth", n, r, seed,
                                train_real=real, train_synth=fixed_synth, eval_speakers=evals,
                                expected_outputs=("wer",)))
            for cond in spec.synth_conditions:
                cseed = derive_seed(spec.master_seed, "n_scaling", cond, n, r)
                pool = synth_pools[cond]
                pos = {uid: i for i, uid in enumerate(pool)}
                synth = tuple(sorted(random.Random(cseed).sample(pool, n), key=pos.__getitem__))
                jobs.append(JobPlan(f"scale-{cond}-n{n:03d}-r{r}", "n_scaling", cond, cond, n,
                                    r, cseed, train_synth=synth, eval_speakers=evals,
                                    expected_outputs=("wer",)))
    return jobs


def plan_k_sweep(spec: SweepSpec, manifest: Manifest) -> List[JobPlan]:
    """One job per K: the varied component gets the top-K references, the rest the top 15."""
    if spec.kind != "k_sweep":
        raise ValueError("plan_k_sweep needs a k_sweep spec")
    pool = manifest.by_role("reference_pool", spec.speaker)
    if len(pool) < FIXED_K:
        raise PoolTooSmall(f"reference pool has {len(pool)} entries, need {FIXED_K}")
    if max(spec.k_values) > len(pool):
        raise PoolTooSmall(f"K={max(spec.k_values)} exceeds pool size {len(pool)}")
    ranked = select_references(pool, len(pool))
    fixed = tuple(ranked[:FIXED_K])
    varied = JOINT_COMPONENTS if spec.varied_component == "joint" else (spec.varied_component,)
    adapt_spk = _adaptation_speaker(spec, pool)
    evals = _eval_speakers(spec, manifest, adapt_spk)
    jobs = []
    for k in spec.k_values:
        refs = {c: (tuple(ranked[:k]) if c in varied else fixed) for c in COMPONENTS}
        seed = derive_seed(spec.master_seed, "k_sweep", spec.varied_component, k)
        jobs.append(JobPlan(f"ksweep-{spec.varied_component}-k{k:02d}", "k_sweep",
                            f"k_{spec.varied_component}", "adapt_llm", k, 0, seed,
                            component_refs=refs, eval_speakers=evals,
                            expected_outputs=("accsim", "utmos", "wer")))
    return jobs


def plan(spec: SweepSpec, manifest: Manifest) -> List[JobPlan]:
    return plan_scaling(spec, manifest) if spec.kind == "n_scaling" else plan_k_sweep(spec, manifest)


def write_plan(path, jobs: Sequence[JobPlan]):
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        for j in jobs:
            fh.write(j.to_json() + "\n")


def read_plan(path) -> List[JobPlan]:
    with open(path, encoding="utf-8") as fh:
        return [JobPlan.from_json(line) for line in fh if line.strip()]


# ---------------------------------------------------------------- results

@dataclass(frozen=True)
class RunRecord:
    job_id: str
    metric: str
    value: float
    provenance: str = "external"
    speaker: Optional[str] = None


def ingest_results(lines: Iterable[str], jobs: Sequence[JobPlan]):
    """Parse score CSV lines against a plan.

    Returns ``(records, rejected)``; ``rejected`` holds UnknownJob,
    MalformedRecord and DuplicateRecord errors carrying line numbers. The
    first of two records for the same (job, metric, speaker) wins.
    """
    known = {j.job_id: j for j in jobs}
    records, rejected = [], []
    seen = set()
    reader = csv.reader(lines)
    header = None
    for lineno, row in enumerate(reader, 1):
        if not row or not "".join(row).strip() or row[0].lstrip().startswith("#"):
            continue
        row = [c.strip() for c in row]
        if header is None and row[:3] == ["job_id", "metric", "value"]:
            header = row
            continue
        if len(row) not in (3, 4) or not row[0] or not row[1]:
            rejected.append(MalformedRecord(lineno, f"expected job_id,metric,value[,speaker]: {row}"))
            continue
        try:
            value = float(row[2])
        except ValueError:
            rejected.append(MalformedRecord(lineno, f"value {row[2]!r} is not a number"))
            continue
        job_id, metric = row[0], row[1]
        if job_id not in known:
            rejected.append(UnknownJob(lineno, f"job {job_id!r} is not in the plan"))
            continue
        speaker = row[3] if len(row) == 4 and row[3] else None
        if speaker is None and known[job_id].eval_speakers:
            speaker = known[job_id].eval_speakers[0]
        key = (job_id, metric, speaker)
        if key in seen:
            rejected.append(DuplicateRecord(lineno, f"second record for {key}"))
            continue
        seen.add(key)
        records.append(RunRecord(job_id, metric, value, "external", speaker))
    return records, rejected


def read_results(path, jobs):
    with open(path, encoding="utf-8", newline="") as fh:
        return ingest_results(fh, jobs)


@dataclass(frozen=True)
class ReportRow:
    series: str
    condition: str
    x: int
    speaker: Optional[str]
    metric: str
    mean: float
    std: float
    n_runs: int
    expected_runs: int

    @property
    def complete(self) -> bool:
        return self.n_runs >= self.expected_runs


@dataclass
class Report:
    rows: List[ReportRow]
    gaps: List[Tuple[str, Optional[str], int, float]]  # (metric, speaker, x, random - llm)

    def series_points(self):
        """``(series, metric, speaker, x, mean, std)`` tuples including the gap series."""
        pts = [(r.series, r.metric, r.speaker, r.x, r.mean, r.std) for r in self.rows]
        pts += [("gap_random_minus_llm", m, s, x, g, 0.0) for m, s, x, g in self.gaps]
        return pts


GAP_PAIR = ("adapt_random", "adapt_llm")


def report(records: Sequence[RunRecord], jobs: Sequence[JobPlan]) -> Report:
    """Mean/std over runs per (series, x, speaker, metric)."""
    by_id = {j.job_id: j for j in jobs}
    missing = sorted({r.job_id for r in records} - set(by_id))
    if missing:
        raise UnknownJob(None, f"records reference unplanned jobs {missing[:5]}")
    planned = defaultdict(int)
    for j in jobs:
        planned[(j.series, j.x)] += 1
    groups = defaultdict(list)
    for r in records:
        j = by_id[r.job_id]
        groups[(j.series, j.condition, j.x, r.speaker or "", r.metric)].append(r.value)
    rows = []
    for key in sorted(groups):
        series, condition, x, spk, metric = key
        agg = aggregate_runs(groups[key])
        expected = planned[(series, x)]
        if agg.n_runs < expected:
            log.warning("%s x=%s %s %s: %d of %d runs present", series, x, spk, metric,
                        agg.n_runs, expected)
        rows.append(ReportRow(series, condition, x, spk or None, metric, agg.mean, agg.std,
                              agg.n_runs, expected))
    means = {(r.series, r.metric, r.speaker, r.x): r.mean for r in rows}
    gaps = []
    for (series, metric, spk, x), m in sorted(means.items(), key=lambda kv: str(kv[0])):
        if series != GAP_PAIR[0]:
            continue
        other = means.get((GAP_PAIR[1], metric, spk, x))
        if other is not None:
            gaps.append((metric, spk, x, m - other))
    gaps.sort(key=lambda g: (g[0], g[1] or "", g[2]))
    return Report(rows, gaps)


REPORT_COLUMNS = ("series", "condition", "x", "speaker", "metric", "mean", "std", "n_runs",
                  "expected_runs")


def write_report(path, rep: Report):
    with open(path, "w", encoding="utf-8", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(REPORT_COLUMNS)
        for r in rep.rows:
            w.writerow([r.series, r.condition, r.x, r.speaker or "", r.metric,
                        f"{r.mean:.6f}", f"{r.std:.6f}", r.n_runs, r.expected_runs])


def write_plot_data(path, rep: Report):
    with open(path, "w", encoding="utf-8", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(("series", "metric", "speaker", "x", "mean", "std"))
        for series, metric, spk, x, mean, std in rep.series_points():
            w.writerow([series, metric, spk or "", x, f"{mean:.6f}", f"{std:.6f}"])


def run_parallel(fn: Callable, items: Sequence, workers: int = 4) -> List:
    """``[fn(item)]`` in input order with at most ``workers`` threads.

    Exceptions are returned in place of results so one bad item never sinks a batch.
    """
    def safe(item):
        try:
            return fn(item)
        except Exception as exc:  # noqa: BLE001 - collected and reported by callers
            return exc

    if workers <= 1:
        return [safe(it) for it in items]
    with ThreadPoolExecutor(max_workers=workers) as pool:
        return list(pool.map(safe, items))
