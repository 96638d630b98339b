"""Waveform containers, STFT/ISTFT and convolution.

Arrays follow the layout ``[channel, sample]`` for waveforms and
``[channel, bin, frame]`` for spectrograms.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
from scipy.io import wavfile
from scipy.signal import fftconvolve

DEFAULT_SAMPLE_RATE = 24000


@dataclass(frozen=True)
class WaveBuffer:
    """Multi-channel real audio.

    ``samples`` is always stored as a 2-D float64 array ``(channels, n)``;
    a 1-D input is promoted to a single channel.
    """

    samples: np.ndarray
    sample_rate: int = DEFAULT_SAMPLE_RATE

    def __post_init__(self):
        x = np.asarray(self.samples, dtype=np.float64)
        if x.ndim == 1:
            x = x[None, :]
        if x.ndim != 2:
            raise ValueError(f"samples must be 1-D or 2-D, got shape {x.shape}")
        if self.sample_rate <= 0:
            raise ValueError("sample_rate must be positive")
        if not np.all(np.isfinite(x)):
            raise ValueError("samples contain NaN or Inf")
        object.__setattr__(self, "samples", x)

    @property
    def n_channels(self) -> int:
        return self.samples.shape[0]

    @property
    def n_samples(self) -> int:
        return self.samples.shape[1]

    @property
    def duration(self) -> float:
        return self.n_samples / self.sample_rate

    def channel(self, j: int) -> "WaveBuffer":
        return WaveBuffer(self.samples[j], self.sample_rate)


@dataclass(frozen=True)
class StftParams:
    """Framing parameters: periodic Hann window of ``window_length`` samples
    advanced by ``hop`` samples."""

    window_length: int = 4096
    hop: int = 2048

    def __post_init__(self):
        if self.window_length <= 0 or self.hop <= 0:
            raise ValueError("window_length and hop must be positive")
        if self.window_length % 2:
            raise ValueError("window_length must be even")
        if self.window_length % self.hop:
            raise ValueError("hop must divide window_length")

    @property
    def n_bins(self) -> int:
        return self.window_length // 2 + 1

    @property
    def pad(self) -> int:
        return self.window_length - self.hop

    def window(self) -> np.ndarray:
        n = np.arange(self.window_length)
        return 0.5 - 0.5 * np.cos(2.0 * np.pi * n / self.window_length)

    def frequencies(self, sample_rate: float) -> np.ndarray:
        return np.fft.rfftfreq(self.window_length, d=1.0 / sample_rate)


@dataclass(frozen=True)
class Spectrogram:
    """One-sided complex STFT, ``data[channel, bin, frame]``.

    ``length`` is the pre-padding signal length when the spectrogram came
    from :func:`stft`; :func:`istft` trims to it.
    """

    data: np.ndarray
    params: StftParams = field(default_factory=StftParams)
    sample_rate: int = DEFAULT_SAMPLE_RATE
    length: int | None = None

    def __post_init__(self):
        z = np.asarray(self.data)
        if z.ndim == 2:
            z = z[None]
        if z.ndim != 3:
            raise ValueError(f"spectrogram data must be 3-D, got shape {z.shape}")
        if z.shape[1] != self.params.n_bins:
            raise ValueError(
                f"expected {self.params.n_bins} bins for window "
                f"{self.params.window_length}, got {z.shape[1]}"
            )
        object.__setattr__(self, "data", z.astype(np.complex128, copy=False))

    @property
    def n_channels(self) -> int:
        return self.data.shape[0]

    @property
    def n_bins(self) -> int:
        return self.data.shape[1]

    @property
    def n_frames(self) -> int:
        return self.data.shape[2]

    def frequencies(self) -> np.ndarray:
        return self.params.frequencies(self.sample_rate)

    def with_data(self, data: np.ndarray) -> "Spectrogram":
        return Spectrogram(data, self.params, self.sample_rate, self.length)


def _n_frames(n_samples: int, params: StftParams) -> int:
    padded = n_samples + 2 * params.pad
    if padded < params.window_length:
        raise ValueError(
            f"window ({params.window_length}) longer than padded signal ({padded})"
        )
    return 1 + -(-(padded - params.window_length) // params.hop)


def stft(wave: WaveBuffer, params: StftParams | None = None) -> Spectrogram:
    """Short-time Fourier transform of every channel.

    The signal is zero-padded by ``window_length - hop`` samples at the
    front and at least as much at the back, so every true sample is covered
    by ``window_length / hop`` frames and :func:`istft` inverts exactly.
    """
    params = params or StftParams()
    x = wave.samples
    if x.shape[1] == 0:
        raise ValueError("cannot transform an empty signal")
    n_frames = _n_frames(x.shape[1], params)
    total = (n_frames - 1) * params.hop + params.window_length
    padded = np.zeros((x.shape[0], total))
    padded[:, params.pad : params.pad + x.shape[1]] = x

    frames = np.lib.stride_tricks.sliding_window_view(
        padded, params.window_length, axis=1
    )[:, :: params.hop]
    spec = np.fft.rfft(frames * params.window(), axis=-1)
    return Spectrogram(
        np.swapaxes(spec, 1, 2), params, wave.sample_rate, length=x.shape[1]
    )


def _ola_norm(n_frames: int, params: StftParams) -> np.ndarray:
    w2 = params.window() ** 2
    total = (n_frames - 1) * params.hop + params.window_length
    norm = np.zeros(total)
    for f in range(n_frames):
        norm[f * params.hop : f * params.hop + params.window_length] += w2
    return norm


def istft(spec: Spectrogram, length: int | None = None) -> WaveBuffer:
    """Weighted overlap-add inverse of :func:`stft`.

    Frames are windowed again at synthesis and divided by the overlap-added
    squared window, which gives the least-squares signal estimate for
    inconsistent spectrograms.
    """
    params = spec.params
    if spec.n_frames < 1:
        raise ValueError("spectrogram has no frames")
    frames = np.fft.irfft(np.swapaxes(spec.data, 1, 2), n=params.window_length, axis=-1)
    frames *= params.window()

    n_frames = spec.n_frames
    total = (n_frames - 1) * params.hop + params.window_length
    out = np.zeros((spec.n_channels, total))
    for f in range(n_frames):
        out[:, f * params.hop : f * params.hop + params.window_length] += frames[:, f]
    norm = _ola_norm(n_frames, params)
    nz = norm > 1e-10
    out[:, nz] /= norm[nz]

    if length is None:
        length = spec.length
    if length is None:
        length = total - 2 * params.pad
    out = out[:, params.pad : params.pad + length]
    if out.shape[1] < length:
        out = np.pad(out, ((0, 0), (0, length - out.shape[1])))
    return WaveBuffer(out, spec.sample_rate)


def convolve(signal: np.ndarray, kernel: np.ndarray) -> np.ndarray:
    """Full linear convolution, length ``len(signal) + len(kernel) - 1``."""
    signal = np.asarray(signal, dtype=np.float64)
    kernel = np.asarray(kernel, dtype=np.float64)
    if signal.ndim != 1 or kernel.ndim != 1:
        raise ValueError("convolve expects 1-D arrays")
    if signal.size == 0 or kernel.size == 0:
        raise ValueError("convolve expects non-empty inputs")
    if min(signal.size, kernel.size) <= 64:
        return np.convolve(signal, kernel)
    return fftconvolve(signal, kernel)


def read_wav(path, sample_rate: int | None = None) -> WaveBuffer:
    """Read a PCM-16 or float-32 RIFF WAV.

    If ``sample_rate`` is given the file must match it; no resampling is done.
    """
    fs, data = wavfile.read(str(path))
    if sample_rate is not None and fs != sample_rate:
        raise ValueError(f"{path}: sample rate {fs} Hz, expected {sample_rate} Hz")
    if data.dtype == np.int16:
        x = data.astype(np.float64) / 32768.0
    elif data.dtype == np.int32:
        x = data.astype(np.float64) / 2147483648.0
    elif data.dtype.kind == "f":
        x = data.astype(np.float64)
    else:
        raise ValueError(f"{path}: unsupported WAV sample type {data.dtype}")
    if x.ndim == 2:
        x = x.T
    return WaveBuffer(x, fs)


def write_wav(path, wave: WaveBuffer, subtype: str = "float32") -> Path:
    """Write ``wave`` as float-32 (default) or PCM-16 WAV."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    x = wave.samples.T
    if subtype == "float32":
        data = x.astype(np.float32)
    elif subtype == "pcm16":
        data = np.clip(np.round(x * 32768.0), -32768, 32767).astype(np.int16)
    else:
        raise ValueError(f"unknown WAV subtype {subtype!r}")
    if data.shape[1] == 1:
        data = data[:, 0]
    wavfile.write(str(path), wave.sample_rate, data)
    return path
