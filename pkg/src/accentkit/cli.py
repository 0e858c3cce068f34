"""Command line entry point: ``accentkit {extract,edit,eval,sweep,validate-manifest}``."""
from __future__ import annotations

import argparse
import json
import logging
import os
import sys
from pathlib import Path

import numpy as np

from . import alignio, editops, evalkit, harness, llmedit, prosody
from .config import ConfigFileError, load_config
from .seqcore import (SeqError, parse_sequence, read_keyed_sequences, serialize_sequence,
                      validate_inventory)

log = logging.getLogger("accentkit")

ALIGN_SUFFIXES = (".TextGrid", ".textgrid", ".tsv", ".txt")


def _fail(msg: str, code: int = 2):
    log.error(msg)
    return code


# ---------------------------------------------------------------- extract

def _find_alignment(align_dir: Path, stem: str):
    for suf in ALIGN_SUFFIXES:
        p = align_dir / (stem + suf)
        if p.exists():
            return p
    return None


def _extract_one(job):
    utt_id, wav_path, align_path, cfg = job
    if align_path is None:
        raise FileNotFoundError(f"no alignment file for {utt_id}")
    wave = prosody.read_wav(wav_path)
    track = prosody.extract_track(wave, cfg.mel, cfg.tracker)
    phones, word_lengths = alignio.read_alignment(align_path)
    return prosody.aggregate(track, phones, cfg.mel, wave.sample_rate, word_lengths)


def cmd_extract(args, cfg):
    wav_dir, align_dir = Path(args.wav_dir), Path(args.align_dir)
    wavs = sorted(wav_dir.glob("*.wav"))
    jobs = [(w.stem, w, _find_alignment(align_dir, w.stem), cfg) for w in wavs]
    if not jobs:
        log.warning("no .wav files in %s", wav_dir)
    results = harness.run_parallel(_extract_one, jobs, args.workers or cfg.workers)
    failures = []
    with open(args.out, "w", encoding="utf-8", newline="\n") as fh:
        for (utt_id, *_), res in zip(jobs, results):
            if isinstance(res, Exception):
                failures.append(f"{utt_id}\t{type(res).__name__}: {res}")
                log.warning("%s: %s", utt_id, res)
            else:
                fh.write(f"{utt_id}\t{serialize_sequence(res)}\n")
    fail_path = args.failures or str(args.out) + ".failures"
    with open(fail_path, "w", encoding="utf-8", newline="\n") as fh:
        fh.writelines(f + "\n" for f in failures)
    log.info("extracted %d of %d utterances", len(jobs) - len(failures), len(jobs))
    return 1 if jobs and len(failures) == len(jobs) else 0


# ---------------------------------------------------------------- edit

def _read_examples(path):
    out = []
    with open(path, encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, 1):
            if not line.strip() or line.startswith("#"):
                continue
            parts = line.rstrip("\n").split("\t")
            if len(parts) != 3:
                raise ValueError(f"{path}:{lineno}: expected id<TAB>source<TAB>target")
            out.append(llmedit.IclExample(parse_sequence(parts[1]), parse_sequence(parts[2])))
    return out


def _read_pcl(path):
    out = {}
    with open(path, encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, 1):
            if not line.strip() or line.startswith("#"):
                continue
            key, tab, phones = line.rstrip("\n").partition("\t")
            if not tab:
                raise ValueError(f"{path}:{lineno}: expected id<TAB>phonemes")
            out[key.strip()] = validate_inventory(phones.split())
    return out


def cmd_edit(args, cfg):
    items = read_keyed_sequences(args.input)
    seed = args.seed if args.seed is not None else cfg.master_seed
    if args.mode == "random":
        if args.rate is None:
            return _fail("--rate is required for mode=random")

        def run(item):
            uid, u = item
            edited, script = editops.random_matched_rate(u, args.rate,
                                                         harness.derive_seed(seed, "random", uid))
            return edited, script, False
    elif args.mode == "oracle":
        if not args.pcl:
            return _fail("--pcl is required for mode=oracle")
        pcl = _read_pcl(args.pcl)

        def run(item):
            uid, u = item
            if uid not in pcl:
                raise KeyError(f"no PCL phonemes for {uid}")
            script = editops.diff_to_script(u, pcl[uid])
            return editops.apply_script(u, script), script, False
    else:
        backend = cfg.make_backend()
        examples = _read_examples(args.examples) if args.examples else []
        chosen = llmedit.select_icl_examples(examples, min(args.k, len(examples)))

        def run(item):
            uid, u = item
            spec = llmedit.PromptSpec(chosen, u, cfg.accent_label)
            resp = llmedit.edit_with_llm(u, spec, backend, cfg.max_retries)
            return resp.edited, resp.script, resp.fallback

    results = harness.run_parallel(run, items, args.workers or cfg.workers)
    rates, failures, fallbacks = [], [], 0
    out_path = Path(args.out)
    scripts_path = Path(args.scripts or out_path.with_suffix(".scripts"))
    stats_path = Path(args.stats or out_path.with_suffix(".stats.json"))
    with open(out_path, "w", encoding="utf-8", newline="\n") as out, \
            open(scripts_path, "w", encoding="utf-8", newline="\n") as sc:
        for (uid, u), res in zip(items, results):
            if isinstance(res, Exception):
                if isinstance(res, llmedit.BackendError):
                    log.error("%s: backend error: %s", uid, res)
                failures.append({"id": uid, "error": f"{type(res).__name__}: {res}"})
                continue
            edited, script, fell_back = res
            fallbacks += fell_back
            rates.append(editops.change_rate(u, edited))
            out.write(f"{uid}\t{serialize_sequence(edited)}\n")
            sc.write(f"# utt {uid}\n{editops.format_script(script)}")
    stats = {"mode": args.mode, "n_input": len(items), "n_edited": len(rates),
             "mean_change_rate": float(np.mean(rates)) if rates else 0.0,
             "per_utterance_change_rate": [round(r, 6) for r in rates],
             "fallback_count": fallbacks, "failures": failures}
    with open(stats_path, "w", encoding="utf-8", newline="\n") as fh:
        json.dump(stats, fh, indent=2, sort_keys=True)
        fh.write("\n")
    print(f"edited {len(rates)}/{len(items)} utterances, mean change rate "
          f"{stats['mean_change_rate']:.4f}, fallbacks {fallbacks}")
    return 1 if items and not rates else 0


# ---------------------------------------------------------------- eval

def _speaker_files(specs):
    out = {}
    for spec in specs:
        spk, eq, path = spec.partition("=")
        if not eq:
            spk, path = Path(spec).stem, spec
        out[spk] = path
    return out


def cmd_eval(args, cfg):
    rows = []
    if args.kind == "wer":
        if not (args.ref and args.hyp):
            return _fail("wer needs --ref and --hyp")
        ref, hyp = evalkit.read_transcripts(args.ref), evalkit.read_transcripts(args.hyp)
        missing = sorted(set(ref) - set(hyp))
        if missing:
            log.warning("%d reference utterances have no hypothesis (scored as empty)",
                        len(missing))
        errors = words = 0
        per_utt = []
        for uid in sorted(ref):
            r = evalkit.normalize_text(ref[uid])
            if not r:
                log.warning("%s: empty reference skipped", uid)
                continue
            h = evalkit.normalize_text(hyp.get(uid, ""))
            errors += evalkit.edit_distance(r, h)
            words += len(r)
            per_utt.append((uid, evalkit.wer(r, h)))
        if not words:
            return _fail("no scorable reference transcripts")
        rows.append({"condition": args.condition, "speaker": args.speaker, "metric": "wer",
                     "mean": errors / words, "std": 0.0, "n_runs": 1})
        if args.per_utterance:
            with open(args.per_utterance, "w", encoding="utf-8", newline="\n") as fh:
                fh.write("utterance_id,wer\n")
                fh.writelines(f"{u},{w:.6f}\n" for u, w in per_utt)
    else:
        if not (args.synth and args.real):
            return _fail("accsim needs --synth and at least one --real")
        synth = evalkit.read_embeddings(args.synth)
        real = {spk: list(evalkit.read_embeddings(p).values())
                for spk, p in _speaker_files(args.real).items()}
        score = evalkit.accent_similarity([synth[k] for k in sorted(synth)], real)
        rows.append({"condition": args.condition, "speaker": args.speaker, "metric": "accsim",
                     "mean": score, "std": 0.0, "n_runs": 1})
    evalkit.write_scores(args.out, rows)
    for r in rows:
        print(f"{r['metric']}: {r['mean']:.4f}")
    return 0


# ---------------------------------------------------------------- sweep / manifest

def _int_list(text):
    return [int(x) for x in text.split(",") if x.strip()]


def _write_findings(path, findings):
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        for f in findings:
            fh.write(f"{f.kind}\t{f.speaker or '*'}\t{','.join(f.ids)}\t{f.detail}\n")


def cmd_sweep(args, cfg):
    manifest = harness.Manifest.load(args.manifest)
    kw = dict(kind=args.kind, runs=args.runs, synth_budget=args.synth_budget,
              master_seed=args.seed if args.seed is not None else cfg.master_seed,
              varied_component=args.component, speaker=args.speaker,
              synth_conditions=args.synth_conditions.split(",") if args.synth_conditions else [])
    if args.k_values:
        kw["k_values"] = _int_list(args.k_values)
    if args.n_values:
        kw["n_values"] = _int_list(args.n_values)
    spec = harness.SweepSpec(**kw)
    jobs = harness.plan(spec, manifest)
    out = Path(args.out_dir)
    out.mkdir(parents=True, exist_ok=True)
    harness.write_plan(out / "plan.jsonl", jobs)
    findings = harness.check_disjointness(manifest)
    _write_findings(out / "disjointness.tsv", findings)
    print(f"planned {len(jobs)} jobs; {len(findings)} disjointness findings")
    if args.scores:
        records, rejected = harness.read_results(args.scores, jobs)
        with open(out / "rejected.txt", "w", encoding="utf-8", newline="\n") as fh:
            fh.writelines(f"{type(e).__name__}\t{e}\n" for e in rejected)
        rep = harness.report(records, jobs)
        harness.write_report(out / "report.csv", rep)
        harness.write_plot_data(out / "plot_data.csv", rep)
        print(f"ingested {len(records)} records, rejected {len(rejected)}")
    return 0


def cmd_validate_manifest(args, cfg):
    manifest = harness.Manifest.load(args.manifest)
    findings = harness.check_disjointness(manifest)
    for f in findings:
        print(f"{f.kind}\t{f.speaker or '*'}\t{','.join(f.ids)}\t{f.detail}")
    print(f"{len(manifest.entries)} entries, {len(findings)} findings")
    return 1 if findings and args.strict else 0


# ---------------------------------------------------------------- parser

def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="accentkit", description=__doc__)
    p.add_argument("--config", help="JSON config file")
    p.add_argument("--seed", type=int, help="master seed (overrides the config)")
    p.add_argument("--workers", type=int, help="worker threads (overrides the config)")
    p.add_argument("--verbose", "-v", action="store_true")
    sub = p.add_subparsers(dest="command", required=True)

    s = sub.add_parser("extract", help="phoneme-level prosody from wav + alignment")
    s.add_argument("--wav-dir", required=True)
    s.add_argument("--align-dir", required=True)
    s.add_argument("--out", required=True)
    s.add_argument("--failures", help="failure report path (default: OUT.failures)")
    s.set_defaults(func=cmd_extract)

    s = sub.add_parser("edit", help="edit pronunciations (llm, random, oracle)")
    s.add_argument("--input", required=True, help="id<TAB>sequence lines")
    s.add_argument("--mode", choices=("llm", "random", "oracle"), required=True)
    s.add_argument("--out", required=True)
    s.add_argument("--scripts")
    s.add_argument("--stats")
    s.add_argument("--rate", type=float, help="random mode: substitution rate")
    s.add_argument("--examples", help="llm mode: id<TAB>source<TAB>target lines")
    s.add_argument("--k", type=int, default=10, help="llm mode: in-context examples")
    s.add_argument("--pcl", help="oracle mode: id<TAB>phonemes lines")
    s.set_defaults(func=cmd_edit)

    s = sub.add_parser("eval", help="WER or accent similarity")
    s.add_argument("kind", choices=("wer", "accsim"))
    s.add_argument("--ref")
    s.add_argument("--hyp")
    s.add_argument("--per-utterance")
    s.add_argument("--synth")
    s.add_argument("--real", action="append", default=[],
                   help="SPEAKER=embedding file (repeatable)")
    s.add_argument("--condition", default="unspecified")
    s.add_argument("--speaker", default="all")
    s.add_argument("--out", required=True)
    s.set_defaults(func=cmd_eval)

    s = sub.add_parser("sweep", help="plan an experiment and report ingested scores")
    s.add_argument("--manifest", required=True)
    s.add_argument("--kind", choices=("k_sweep", "n_scaling"), required=True)
    s.add_argument("--component", choices=harness.VARIED, default="icl")
    s.add_argument("--k-values")
    s.add_argument("--n-values")
    s.add_argument("--runs", type=int, default=7)
    s.add_argument("--synth-budget", type=int, default=500)
    s.add_argument("--synth-conditions", help="comma-separated synthetic-only conditions")
    s.add_argument("--speaker")
    s.add_argument("--scores", help="CSV job_id,metric,value[,speaker]")
    s.add_argument("--out-dir", required=True)
    s.set_defaults(func=cmd_sweep)

    s = sub.add_parser("validate-manifest", help="check reference/eval disjointness")
    s.add_argument("--manifest", required=True)
    s.add_argument("--strict", action="store_true", help="exit 1 when findings exist")
    s.set_defaults(func=cmd_validate_manifest)
    return p


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.DEBUG if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        cfg = load_config(args.config)
        return args.func(args, cfg)
    except (OSError, ConfigFileError, SeqError, ValueError, llmedit.BackendError) as exc:
        log.error("%s", exc)
        return 2


if __name__ == "__main__":
    sys.exit(main())
