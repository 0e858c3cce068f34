"""
Planning scaling and K-sweep experiments
========================================

The harness writes job plans; something else trains the recognizers and
hands back scores, which come back in for a mean/std report.
"""
import random
import tempfile
from pathlib import Path

from accentkit.harness import (Manifest, ManifestEntry, SweepSpec, check_disjointness,
                               ingest_results, plan_k_sweep, plan_scaling, report,
                               write_plot_data, write_report)


def entry(uid, role, **kw):
    return ManifestEntry(uid, "TNI", "indian", role, text=f"prompt {uid}", **kw)


entries = [entry(f"ref{i:02d}", "reference_pool", pool_rank=i + 1) for i in range(15)]
entries += [entry(f"real{i:03d}", "adaptation_train") for i in range(120)]
entries += [entry(f"llm{i:03d}", "synthetic", condition="adapt_llm") for i in range(520)]
entries += [entry(f"rnd{i:03d}", "synthetic", condition="adapt_random") for i in range(520)]
entries += [entry(f"ev{i:03d}", "eval") for i in range(50)]
manifest = Manifest(entries)
print("findings on a clean manifest:", check_disjointness(manifest))

# plant a leak: a reference utterance is also evaluated on
manifest.entries.append(entry("ref04", "eval"))
for f in check_disjointness(manifest):
    print(f.kind, f.ids, f.detail)
manifest.entries.pop()

# scaling: N real utterances alone and with the fixed 500 synthetic ones
spec = SweepSpec("n_scaling", n_values=[1, 3, 10, 100], runs=7,
                 synth_conditions=["adapt_llm", "adapt_random"])
jobs = plan_scaling(spec, manifest)
print(len(jobs), "jobs")
for j in jobs[:4]:
    print(j.job_id, len(j.train_real), len(j.train_synth), j.seed)

# K sweep for the in-context examples, other components held at 15
for j in plan_k_sweep(SweepSpec("k_sweep"), manifest):
    print(j.job_id, {c: len(r) for c, r in j.component_refs.items()})

# fake scores: more data helps, LLM edits a bit better than random ones
rng = random.Random(0)
base = {"real": 30.0, "real_plus_synth": 24.0, "adapt_llm": 27.0, "adapt_random": 28.5}
lines = ["job_id,metric,value"]
for j in jobs:
    v = base[j.condition] - 3.0 * (j.x ** 0.3) + rng.gauss(0, 0.5)
    lines.append(f"{j.job_id},wer,{v:.3f}")
lines.append("scale-real-n999-r0,wer,1.0")  # not in the plan
records, rejected = ingest_results(lines, jobs)
print(len(records), "records;", *rejected)

rep = report(records, jobs)
for r in rep.rows[:6]:
    print(f"{r.series:16s} N={r.x:<4d} {r.mean:6.2f} +- {r.std:.2f} ({r.n_runs} runs)")
for metric, spk, x, gap in rep.gaps:
    print(f"random - llm at N={x}: {gap:+.2f}")

out = Path(tempfile.mkdtemp())
write_report(out / "report.csv", rep)
write_plot_data(out / "plot_data.csv", rep)
print("wrote", out / "report.csv")
