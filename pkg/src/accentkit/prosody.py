"""Frame-level pitch/energy extraction and phoneme-level aggregation.

All frame grids follow the centred STFT convention: frame ``i`` is centred
on sample ``i * hop`` of the unpadded signal, giving ``len // hop + 1``
frames for any signal length.
"""
from __future__ import annotations

import logging
import math
import random
from dataclasses import dataclass, field
from typing import Dict, List, Optional, Sequence

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view

from .seqcore import AlignedUtterance, Phoneme, round_half_up, validate_inventory

log = logging.getLogger(__name__)

SAMPLE_RATE = 22050
DEFAULT_LOG_F0 = math.log(150.0)
NORM_EPS = 1e-8
SILENCE_LABELS = frozenset({"sil", "sp", ""})


class ConfigError(ValueError):
    pass


class CoverageError(ValueError):
    """A phone interval reaches past the last available frame."""


class EmptyPool(ValueError):
    pass


@dataclass(frozen=True)
class MelConfig:
    n_mels: int = 80
    fft_size: int = 1024
    hop: int = 256
    fmin: float = 0.0
    fmax: float = 8000.0

    def check(self, sample_rate: int):
        if self.hop > self.fft_size:
            raise ConfigError(f"hop {self.hop} exceeds fft_size {self.fft_size}")
        if self.fmax > sample_rate / 2:
            raise ConfigError(f"fmax {self.fmax} Hz exceeds Nyquist {sample_rate / 2} Hz")
        if not 0 <= self.fmin < self.fmax:
            raise ConfigError("need 0 <= fmin < fmax")


@dataclass(frozen=True)
class TrackerConfig:
    """Normalised cross-correlation pitch tracker settings."""

    window_s: float = 0.025
    f0_min: float = 60.0
    f0_max: float = 400.0
    voicing_threshold: float = 0.30
    # earliest lag whose NCC is within this fraction of the best wins (octave guard)
    peak_tolerance: float = 0.9
    silence_rms: float = 1e-5


@dataclass
class WaveBuffer:
    samples: np.ndarray
    sample_rate: int = SAMPLE_RATE

    def __post_init__(self):
        self.samples = np.asarray(self.samples, dtype=np.float64)
        if self.samples.ndim != 1 or self.samples.size == 0:
            raise ValueError("waveform must be a non-empty 1-D array")
        if self.sample_rate <= 0:
            raise ValueError("sample_rate must be positive")


@dataclass
class FrameTrack:
    """Per-frame log-F0 (NaN marks an unvoiced frame) and energy."""

    log_f0: np.ndarray
    energy: np.ndarray

    def __post_init__(self):
        self.log_f0 = np.asarray(self.log_f0, dtype=np.float64)
        self.energy = np.asarray(self.energy, dtype=np.float64)
        if self.log_f0.shape != self.energy.shape or self.log_f0.ndim != 1:
            raise ValueError("log_f0 and energy must be 1-D and equally long")

    @property
    def n_frames(self) -> int:
        return self.log_f0.size

    @property
    def voiced(self) -> np.ndarray:
        return ~np.isnan(self.log_f0)


@dataclass(frozen=True)
class PhoneInterval:
    label: str
    start: float
    end: float

    @property
    def is_silence(self) -> bool:
        return self.label.strip().lower() in SILENCE_LABELS


@dataclass(frozen=True)
class SpeakerStats:
    pitch_mean: float
    pitch_std: float
    energy_mean: float
    energy_std: float
    n_utterances_used: int
    no_voiced_frames: bool = False


def n_frames(n_samples: int, hop: int) -> int:
    return n_samples // hop + 1


def hz_to_mel(f):
    """Slaney mel scale: linear below 1 kHz, logarithmic above."""
    f = np.asanyarray(f, dtype=np.float64)
    f_sp = 200.0 / 3
    min_log_hz = 1000.0
    min_log_mel = min_log_hz / f_sp
    logstep = np.log(6.4) / 27.0
    return np.where(f >= min_log_hz,
                    min_log_mel + np.log(np.maximum(f, 1e-12) / min_log_hz) / logstep,
                    f / f_sp)


def mel_to_hz(m):
    m = np.asanyarray(m, dtype=np.float64)
    f_sp = 200.0 / 3
    min_log_hz = 1000.0
    min_log_mel = min_log_hz / f_sp
    logstep = np.log(6.4) / 27.0
    return np.where(m >= min_log_mel,
                    min_log_hz * np.exp(logstep * (m - min_log_mel)),
                    f_sp * m)


def mel_filterbank(sample_rate: int, cfg: MelConfig) -> np.ndarray:
    """Area-normalised triangular filters, shape ``(n_mels, fft_size // 2 + 1)``."""
    cfg.check(sample_rate)
    fft_freqs = np.fft.rfftfreq(cfg.fft_size, d=1.0 / sample_rate)
    edges = mel_to_hz(np.linspace(hz_to_mel(cfg.fmin), hz_to_mel(cfg.fmax), cfg.n_mels + 2))
    widths = np.diff(edges)
    ramps = edges[:, None] - fft_freqs[None, :]
    lower = -ramps[:-2] / widths[:-1, None]
    upper = ramps[2:] / widths[1:, None]
    weights = np.maximum(0.0, np.minimum(lower, upper))
    weights *= (2.0 / (edges[2:] - edges[:-2]))[:, None]
    return weights


def _hann(n: int) -> np.ndarray:
    # periodic window, as used for spectral analysis
    return 0.5 - 0.5 * np.cos(2.0 * np.pi * np.arange(n) / n)


def _reflect_pad(x: np.ndarray, left: int, right: int) -> np.ndarray:
    if x.size == 1:
        return np.pad(x, (left, right), mode="edge")
    return np.pad(x, (left, right), mode="reflect")


def stft_magnitude(wave: WaveBuffer, cfg: MelConfig) -> np.ndarray:
    """Centred magnitude spectrogram, shape ``(n_frames, fft_size // 2 + 1)``."""
    half = cfg.fft_size // 2
    padded = _reflect_pad(wave.samples, half, half)
    frames = sliding_window_view(padded, cfg.fft_size)[::cfg.hop]
    frames = frames[:n_frames(wave.samples.size, cfg.hop)]
    return np.abs(np.fft.rfft(frames * _hann(cfg.fft_size), axis=1))


def mel_spectrogram(wave: WaveBuffer, cfg: MelConfig = MelConfig()) -> np.ndarray:
    """Linear-magnitude mel spectrogram, shape ``(n_frames, n_mels)``."""
    basis = mel_filterbank(wave.sample_rate, cfg)
    return stft_magnitude(wave, cfg) @ basis.T


def mel_energy(wave: WaveBuffer, cfg: MelConfig = MelConfig()) -> np.ndarray:
    """Per-frame L2 norm of the linear-magnitude mel vector."""
    return np.linalg.norm(mel_spectrogram(wave, cfg), axis=1)


def _ncc_frame(x, start, win, lag_lo, lag_hi, cum_sq):
    ref = x[start:start + win]
    ref_energy = cum_sq[start + win] - cum_sq[start]
    seg = x[start + lag_lo:start + lag_hi + win]
    cands = sliding_window_view(seg, win)
    num = cands @ ref
    lag_starts = start + np.arange(lag_lo, lag_hi + 1)
    cand_energy = cum_sq[lag_starts + win] - cum_sq[lag_starts]
    denom = np.sqrt(np.maximum(ref_energy * cand_energy, 0.0))
    out = np.zeros_like(num)
    ok = denom > 0
    out[ok] = num[ok] / denom[ok]
    return out, ref_energy


def _pick_lag(ncc: np.ndarray, lag_lo: int, tcfg: TrackerConfig) -> Optional[float]:
    """Fractional lag of the chosen NCC peak, or None when unvoiced."""
    if ncc.size < 3:
        return None
    interior = (ncc[1:-1] >= ncc[:-2]) & (ncc[1:-1] > ncc[2:])
    peaks = np.flatnonzero(interior) + 1
    if peaks.size == 0:
        return None
    best = ncc[peaks].max()
    if best < tcfg.voicing_threshold:
        return None
    k = int(peaks[np.argmax(ncc[peaks] >= tcfg.peak_tolerance * best)])
    a, b, c = ncc[k - 1], ncc[k], ncc[k + 1]
    curv = a - 2 * b + c
    offset = 0.5 * (a - c) / curv if curv < 0 else 0.0
    return lag_lo + k + offset


def median3_voiced(f0: np.ndarray) -> np.ndarray:
    """3-point median over runs of voiced (non-NaN) frames; run ends kept."""
    out = f0.copy()
    for i in range(1, f0.size - 1):
        trio = f0[i - 1:i + 2]
        if not np.isnan(trio).any():
            out[i] = np.median(trio)
    return out


def track_pitch(wave: WaveBuffer, cfg: MelConfig = MelConfig(),
                tcfg: TrackerConfig = TrackerConfig()) -> np.ndarray:
    """Per-frame natural-log F0, NaN for unvoiced frames."""
    sr = wave.sample_rate
    win = int(round(tcfg.window_s * sr))
    lag_lo = int(math.floor(sr / tcfg.f0_max)) - 1
    lag_hi = int(math.ceil(sr / tcfg.f0_min)) + 1
    nf = n_frames(wave.samples.size, cfg.hop)
    left = win // 2
    right = win + lag_hi
    x = _reflect_pad(wave.samples, left, right)
    cum_sq = np.concatenate(([0.0], np.cumsum(x * x)))
    f0 = np.full(nf, np.nan)
    min_energy = (tcfg.silence_rms ** 2) * win
    for i in range(nf):
        start = i * cfg.hop  # centre i*hop shifted by the left pad
        ncc, energy = _ncc_frame(x, start, win, lag_lo, lag_hi, cum_sq)
        if energy <= min_energy:
            continue
        lag = _pick_lag(ncc, lag_lo, tcfg)
        if lag is None or lag <= 0:
            continue
        hz = sr / lag
        if tcfg.f0_min <= hz <= tcfg.f0_max:
            f0[i] = hz
    f0 = median3_voiced(f0)
    return np.log(f0)


def extract_track(wave: WaveBuffer, cfg: MelConfig = MelConfig(),
                  tcfg: TrackerConfig = TrackerConfig()) -> FrameTrack:
    return FrameTrack(track_pitch(wave, cfg, tcfg), mel_energy(wave, cfg))


def interpolate_unvoiced(track: FrameTrack, default_log_f0: float = DEFAULT_LOG_F0) -> FrameTrack:
    """Fill unvoiced frames linearly between voiced neighbours; edges hold the nearest value."""
    f0 = track.log_f0
    voiced = ~np.isnan(f0)
    if not voiced.any():
        filled = np.full(f0.shape, default_log_f0)
    else:
        idx = np.arange(f0.size)
        filled = np.interp(idx, idx[voiced], f0[voiced])
    return FrameTrack(filled, track.energy.copy())


def frame_index(t: float, sample_rate: int, hop: int) -> int:
    return round_half_up(t * sample_rate / hop)


def aggregate(track: FrameTrack, intervals: Sequence[PhoneInterval],
              cfg: MelConfig = MelConfig(), sample_rate: int = SAMPLE_RATE,
              word_lengths: Optional[Sequence[int]] = None) -> AlignedUtterance:
    """Average a frame track over each non-silence phone interval."""
    check_intervals(intervals)
    filled = interpolate_unvoiced(track)
    phones, durs, pitch, energy = [], [], [], []
    for iv in intervals:
        if iv.is_silence:
            continue
        f0 = frame_index(iv.start, sample_rate, cfg.hop)
        f1 = frame_index(iv.end, sample_rate, cfg.hop)
        d = max(1, f1 - f0)
        if f0 + d > track.n_frames:
            raise CoverageError(
                f"interval {iv.label!r} [{iv.start}, {iv.end}] needs frames up to "
                f"{f0 + d}, track has {track.n_frames}")
        phones.append(iv.label.strip())
        durs.append(d)
        pitch.append(float(filled.log_f0[f0:f0 + d].mean()))
        energy.append(float(filled.energy[f0:f0 + d].mean()))
    if not phones:
        raise CoverageError("no non-silence intervals to aggregate")
    return AlignedUtterance(validate_inventory(phones), durs, pitch, energy, word_lengths)


def check_intervals(intervals: Sequence[PhoneInterval]):
    prev_end = -math.inf
    for iv in intervals:
        if not iv.start < iv.end:
            raise ValueError(f"interval {iv!r} has start >= end")
        if iv.start < prev_end - 1e-9:
            raise ValueError(f"interval {iv!r} overlaps or precedes the previous one")
        prev_end = iv.end


def sample_speaker_stats(utterances: Sequence[FrameTrack], m: int, seed: int,
                         default_log_f0: float = DEFAULT_LOG_F0) -> SpeakerStats:
    """Pitch/energy mean and std pooled over ``m`` utterances drawn without replacement.

    Only voiced frames contribute to pitch. With no voiced frame at all the
    pitch mean falls back to ``default_log_f0`` and ``no_voiced_frames`` is set.
    """
    if not 1 <= m <= len(utterances):
        raise EmptyPool(f"cannot sample {m} of {len(utterances)} utterances")
    chosen = sorted(random.Random(seed).sample(range(len(utterances)), m))
    f0 = np.concatenate([utterances[i].log_f0 for i in chosen])
    f0 = f0[~np.isnan(f0)]
    energy = np.concatenate([utterances[i].energy for i in chosen])
    if energy.size == 0:
        raise EmptyPool("sampled utterances contain no frames")
    if f0.size == 0:
        log.warning("no voiced frames in %d sampled utterances; pitch std set to 0", m)
        pitch_mean, pitch_std, flag = default_log_f0, 0.0, True
    else:
        pitch_mean, pitch_std, flag = float(f0.mean()), float(f0.std()), False
    return SpeakerStats(pitch_mean, pitch_std, float(energy.mean()), float(energy.std()),
                        m, flag)


class DynamicStatsSampler:
    """Speaker statistics resampled from a random subset every ``refresh_every`` steps.

    At each refresh the subset size is drawn uniformly from
    ``1..min(max_m, n_available)``; everything is a pure function of
    ``(seed, speaker, step // refresh_every)``.
    """

    def __init__(self, tracks_by_speaker: Dict[str, Sequence[FrameTrack]],
                 max_m: int = 15, refresh_every: int = 2500, seed: int = 0):
        if refresh_every < 1 or max_m < 1:
            raise ValueError("refresh_every and max_m must be positive")
        self.tracks = {k: list(v) for k, v in tracks_by_speaker.items()}
        self.max_m = max_m
        self.refresh_every = refresh_every
        self.seed = seed

    def stats_at(self, speaker: str, step: int) -> SpeakerStats:
        tracks = self.tracks[speaker]
        epoch = step // self.refresh_every
        rng = random.Random(f"{self.seed}:{speaker}:{epoch}")
        m = rng.randint(1, min(self.max_m, len(tracks)))
        return sample_speaker_stats(tracks, m, rng.getrandbits(63))


def normalize(u: AlignedUtterance, stats: SpeakerStats) -> AlignedUtterance:
    ps = max(stats.pitch_std, NORM_EPS)
    es = max(stats.energy_std, NORM_EPS)
    return _with_prosody(u, [(p - stats.pitch_mean) / ps for p in u.pitch],
                         [(e - stats.energy_mean) / es for e in u.energy])


def denormalize(u: AlignedUtterance, stats: SpeakerStats) -> AlignedUtterance:
    ps = max(stats.pitch_std, NORM_EPS)
    es = max(stats.energy_std, NORM_EPS)
    return _with_prosody(u, [p * ps + stats.pitch_mean for p in u.pitch],
                         [e * es + stats.energy_mean for e in u.energy])


def _with_prosody(u, pitch, energy):
    return AlignedUtterance(u.phonemes, u.durations, pitch, energy, u.word_lengths)


# ---------------------------------------------------------------- I/O

def read_wav(path, target_rate: int = SAMPLE_RATE) -> WaveBuffer:
    """Read 16-bit PCM or float WAV as mono floats in [-1, 1] at ``target_rate``."""
    from scipy.io import wavfile

    rate, data = wavfile.read(path)
    if data.dtype == np.int16:
        x = data.astype(np.float64) / 32768.0
    elif data.dtype == np.int32:
        x = data.astype(np.float64) / 2147483648.0
    elif data.dtype == np.uint8:
        x = (data.astype(np.float64) - 128.0) / 128.0
    elif np.issubdtype(data.dtype, np.floating):
        x = data.astype(np.float64)
    else:
        raise ValueError(f"{path}: unsupported sample type {data.dtype}")
    if x.ndim == 2:
        log.warning("%s: %d channels averaged to mono", path, x.shape[1])
        x = x.mean(axis=1)
    if rate != target_rate:
        log.warning("%s: resampling %d Hz -> %d Hz (linear)", path, rate, target_rate)
        x = resample_linear(x, rate, target_rate)
    return WaveBuffer(x, target_rate)


def resample_linear(x: np.ndarray, rate: int, target_rate: int) -> np.ndarray:
    n_out = max(1, int(round(x.size * target_rate / rate)))
    t_out = np.arange(n_out) / target_rate
    t_in = np.arange(x.size) / rate
    return np.interp(t_out, t_in, x)


def write_wav(path, wave: WaveBuffer):
    from scipy.io import wavfile

    pcm = np.clip(np.round(wave.samples * 32767.0), -32768, 32767).astype(np.int16)
    wavfile.write(path, wave.sample_rate, pcm)


_STATS_KEYS = ("pitch_mean", "pitch_std", "energy_mean", "energy_std", "n_utterances_used")


def format_stats(speaker: str, s: SpeakerStats) -> str:
    vals = " ".join(f"{k}={getattr(s, k)!r}" for k in _STATS_KEYS)
    return f"speaker={speaker} {vals} no_voiced_frames={int(s.no_voiced_frames)}"


def parse_stats(line: str):
    kv = dict(tok.split("=", 1) for tok in line.split())
    try:
        stats = SpeakerStats(float(kv["pitch_mean"]), float(kv["pitch_std"]),
                             float(kv["energy_mean"]), float(kv["energy_std"]),
                             int(kv["n_utterances_used"]),
                             bool(int(kv.get("no_voiced_frames", "0"))))
        return kv["speaker"], stats
    except KeyError as exc:
        raise ValueError(f"stats record missing {exc.args[0]!r}: {line!r}") from None


def write_stats_cache(path, stats_by_speaker: Dict[str, SpeakerStats]):
    with open(path, "w", encoding="utf-8") as fh:
        for spk in sorted(stats_by_speaker):
            fh.write(format_stats(spk, stats_by_speaker[spk]) + "\n")


def read_stats_cache(path) -> Dict[str, SpeakerStats]:
    out = {}
    with open(path, encoding="utf-8") as fh:
        for line in fh:
            if line.strip() and not line.startswith("#"):
                spk, s = parse_stats(line)
                out[spk] = s
    return out
