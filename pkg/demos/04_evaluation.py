"""
Scoring synthetic speech
========================

WER needs transcripts from an external recognizer and AccSim needs
embeddings from an external accent classifier; both arrive as text files.
Here they are made up on the spot.
"""
import numpy as np

from accentkit.evalkit import accent_similarity, aggregate_runs, normalize_text, wer

print(normalize_text("Don't STOP, the cat sat!"))
print(wer("the cat sat on the mat", "the cat sat on a mat"))
print(wer("a b", "x y z"))  # insertions can push WER past 1

# three speakers who share an accent direction, plus their own quirks
rng = np.random.default_rng(0)
accent = rng.normal(size=32)
real = {spk: accent + 0.4 * rng.normal(size=(12, 32)) + 0.3 * rng.normal(size=32)
        for spk in ("TNI", "RRBI", "SVBI")}

close = accent + 0.4 * rng.normal(size=(20, 32))
american = rng.normal(size=(20, 32))
print(f"accented synth {accent_similarity(close, real):.3f}")
print(f"unrelated synth {accent_similarity(american, real):.3f}")

# scale does not matter, only direction
print(f"rescaled {accent_similarity(close * 7.5, real):.3f}")

# seven runs of one configuration
runs = 16.81 + rng.normal(scale=0.4, size=7)
agg = aggregate_runs(runs)
print(f"WER {agg.mean:.2f} +- {agg.std:.2f} over {agg.n_runs} runs")
