"""Speech-like test signals.

The experiments need dry utterances with speech statistics (syllabic
on/off activity, harmonic voicing with a moving pitch, formant colouring,
unvoiced bursts) but no corpus ships with the package. These generators
produce such signals deterministically from a seed.
"""

from __future__ import annotations

import numpy as np
from scipy.signal import lfilter

# Typical f0 ranges (Hz)
F0_RANGES = {"male": (85.0, 155.0), "female": (165.0, 255.0)}

_VOWEL_FORMANTS = np.array([
    [730, 1090, 2440],
    [270, 2290, 3010],
    [530, 1840, 2480],
    [570, 840, 2410],
    [300, 870, 2240],
    [660, 1720, 2410],
    [490, 1350, 1690],
], dtype=float)


def _resonator(x, freq, bandwidth, fs):
    r = np.exp(-np.pi * bandwidth / fs)
    theta = 2 * np.pi * freq / fs
    a = [1.0, -2 * r * np.cos(theta), r * r]
    return lfilter([1.0 - r], a, x)


def speech_like(duration: float, sample_rate: int = 24000, gender: str = "male",
                seed=None) -> np.ndarray:
    """Synthesize one utterance of roughly ``duration`` seconds.

    Returns a float64 array normalized to unit RMS over its active part.
    """
    rng = np.random.default_rng(seed)
    n = int(round(duration * sample_rate))
    fs = sample_rate
    f_lo, f_hi = F0_RANGES[gender]
    if gender == "female":
        formant_scale = 1.15
    else:
        formant_scale = 1.0

    out = np.zeros(n)
    pos = int(rng.uniform(0.02, 0.08) * fs)
    base_f0 = rng.uniform(f_lo, f_hi)
    while pos < n:
        syl = int(rng.uniform(0.12, 0.32) * fs)
        seg_n = min(syl, n - pos)
        if seg_n < 64:
            break
        t = np.arange(seg_n) / fs
        # pitch: slow drift around the speaker's base with a per-syllable glide
        glide = rng.uniform(-0.15, 0.15)
        f0 = base_f0 * (1 + glide * t / max(t[-1], 1e-3))
        f0 = np.clip(f0 * (1 + 0.02 * np.sin(2 * np.pi * 5.0 * t)), f_lo * 0.8, f_hi * 1.2)
        phase = 2 * np.pi * np.cumsum(f0) / fs
        n_harm = int(min(60, (0.45 * fs) / f_hi))
        k = np.arange(1, n_harm + 1)
        voiced = np.sin(np.outer(phase, k) + rng.uniform(0, 2 * np.pi, n_harm)) @ (1.0 / k)

        noise = rng.standard_normal(seg_n)
        src = voiced + 0.05 * noise
        formants = _VOWEL_FORMANTS[rng.integers(len(_VOWEL_FORMANTS))] * formant_scale
        seg = np.zeros(seg_n)
        for i, fr in enumerate(formants):
            seg += _resonator(src, fr, 80.0 + 40 * i, fs) / (i + 1)
        # occasional fricative onset
        if rng.random() < 0.35:
            fric_n = min(seg_n, int(rng.uniform(0.03, 0.08) * fs))
            fric = _resonator(rng.standard_normal(fric_n), rng.uniform(3500, 6500), 1500, fs)
            seg[:fric_n] += 0.6 * fric * np.hanning(fric_n)
        seg *= np.hanning(seg_n) ** 0.5 * rng.uniform(0.4, 1.0)
        out[pos : pos + seg_n] += seg
        base_f0 = np.clip(base_f0 * rng.uniform(0.95, 1.05), f_lo, f_hi)
        pos += seg_n + int(rng.uniform(0.03, 0.18) * fs)

    active = np.abs(out) > 1e-6 * np.max(np.abs(out))
    rms = np.sqrt(np.mean(out[active] ** 2)) if active.any() else 1.0
    return 0.1 * out / rms


def speaker_pair(duration: float, sample_rate: int = 24000, seed=None):
    """Two utterances of different genders, target first.

    The target gender alternates with the seed so corpora built from
    consecutive seeds are balanced.
    """
    rng = np.random.default_rng(seed)
    genders = ("male", "female") if rng.random() < 0.5 else ("female", "male")
    s1, s2 = rng.integers(0, 2**31, size=2)
    return (
        speech_like(duration, sample_rate, genders[0], s1),
        speech_like(duration, sample_rate, genders[1], s2),
        genders,
    )
