"""
Phoneme-level prosody from a waveform
=====================================

Frame-level log-F0 and mel energy, pooled over forced-alignment intervals.
The audio here is synthetic so the numbers are easy to check by eye.
"""
import math
import tempfile
from pathlib import Path

import numpy as np

from accentkit.alignio import format_textgrid, read_alignment
from accentkit.prosody import (SpeakerStats, WaveBuffer, aggregate, extract_track,
                               mel_energy, normalize, read_wav, sample_speaker_stats,
                               write_wav)
from accentkit.seqcore import serialize_sequence

sr = 22050
t = np.arange(int(0.9 * sr)) / sr

# three "phonemes": 140 Hz, a breath of silence, then 190 Hz at half the level
x = np.where(t < 0.35, 0.5 * np.sin(2 * np.pi * 140 * t), 0.0)
x += np.where(t >= 0.45, 0.25 * np.sin(2 * np.pi * 190 * t), 0.0)
wave = WaveBuffer(x, sr)

track = extract_track(wave)
voiced = ~np.isnan(track.log_f0)
print("frames", track.log_f0.size, "voiced", int(voiced.sum()))
print("F0 range (Hz)", np.exp(np.nanmin(track.log_f0)).round(1),
      np.exp(np.nanmax(track.log_f0)).round(1))

# energy scales linearly with the signal
print("energy ratio at 2x gain", (mel_energy(WaveBuffer(2 * x, sr)) /
                                  np.maximum(mel_energy(wave), 1e-12)).max().round(6))

# write the pair to disk the way a corpus would look
work = Path(tempfile.mkdtemp())
write_wav(work / "u1.wav", wave)
(work / "u1.TextGrid").write_text(format_textgrid({
    "words": [(0.0, 0.35, "ah"), (0.35, 0.45, ""), (0.45, 0.9, "me")],
    "phones": [(0.0, 0.35, "AA1"), (0.35, 0.45, "sil"), (0.45, 0.6, "M"),
               (0.6, 0.9, "IY1")],
}))

phones, words = read_alignment(work / "u1.TextGrid")
u = aggregate(extract_track(read_wav(work / "u1.wav")), phones, word_lengths=words)
print(serialize_sequence(u))
print("pitch in Hz", [round(math.exp(p), 1) for p in u.pitch])

# per-speaker z-scoring; with a single utterance the stats are its own
stats = sample_speaker_stats([track], m=1, seed=0)
print(stats)
print(serialize_sequence(normalize(u, stats)))

# a speaker with no voiced frames falls back to a default mean and says so
flat = sample_speaker_stats([extract_track(WaveBuffer(np.zeros(sr), sr))], 1, 0)
print("no voiced frames:", flat.no_voiced_frames, round(math.exp(flat.pitch_mean), 1), "Hz")
