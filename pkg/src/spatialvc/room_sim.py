"""Shoebox room simulation with the image-source method.

Provides impulse responses between every source and microphone, the
multi-channel rendering ``y_j = sum_i h_ij * x_i`` and the ideal converted
rendering in which the target source is replaced by a converted signal.
"""

from __future__ import annotations

from dataclasses import dataclass, field, asdict
from functools import lru_cache

import numpy as np

from .signal_core import WaveBuffer, convolve, write_wav

SINC_TAPS = 81


@dataclass(frozen=True)
class RoomScene:
    """Shoebox geometry with sources and microphones (metres).

    ``reflection_coeff`` is an amplitude reflection coefficient applied once
    per wall bounce, so the energy absorbed per bounce is ``1 - r**2``.
    """

    sources: tuple
    microphones: tuple
    room_dims: tuple = (9.0, 7.5, 3.5)
    reflection_coeff: float = 0.5
    max_image_order: int = 17
    sound_speed: float = 343.0
    mic_spacing: float = 0.15

    def __post_init__(self):
        dims = np.asarray(self.room_dims, dtype=float)
        if dims.shape != (3,) or np.any(dims <= 0):
            raise ValueError("room_dims must be three positive lengths")
        src = np.atleast_2d(np.asarray(self.sources, dtype=float))
        mic = np.atleast_2d(np.asarray(self.microphones, dtype=float))
        for name, pts in (("source", src), ("microphone", mic)):
            if pts.shape[1] != 3:
                raise ValueError(f"{name} positions must be 3-D")
            inside = np.all((pts > 0) & (pts < dims), axis=1)
            if not np.all(inside):
                bad = int(np.flatnonzero(~inside)[0])
                raise ValueError(f"{name} {bad} at {pts[bad].tolist()} is outside the room")
        if len(src) != len(mic):
            raise ValueError(
                f"need as many sources as microphones, got {len(src)} and {len(mic)}"
            )
        if not 0.0 <= self.reflection_coeff < 1.0:
            raise ValueError("reflection_coeff must lie in [0, 1)")
        if self.max_image_order < 0:
            raise ValueError("max_image_order must be >= 0")
        if self.sound_speed <= 0:
            raise ValueError("sound_speed must be positive")
        object.__setattr__(self, "room_dims", tuple(dims.tolist()))
        object.__setattr__(self, "sources", tuple(map(tuple, src.tolist())))
        object.__setattr__(self, "microphones", tuple(map(tuple, mic.tolist())))

    @property
    def n_sources(self) -> int:
        return len(self.sources)

    @property
    def n_mics(self) -> int:
        return len(self.microphones)

    def array_center(self) -> np.ndarray:
        return np.mean(np.asarray(self.microphones), axis=0)

    def source_angle(self, i: int = 0) -> float:
        """Angle of source ``i`` from array broadside, positive towards +x."""
        rel = np.asarray(self.sources[i]) - self.array_center()
        return float(np.arctan2(rel[0], rel[1]))

    def replace(self, **changes) -> "RoomScene":
        kw = asdict(self)
        kw.update(changes)
        return RoomScene(**kw)

    def to_dict(self) -> dict:
        return {k: list(map(list, v)) if k in ("sources", "microphones") else
                (list(v) if isinstance(v, tuple) else v)
                for k, v in asdict(self).items()}

    @classmethod
    def from_dict(cls, d: dict) -> "RoomScene":
        return cls(**d)


def default_scene(
    reflection_coeff: float = 0.5,
    room_dims=(9.0, 7.5, 3.5),
    mic_spacing: float = 0.15,
    source_distance: float = 2.0,
    angles=(np.pi / 4, -np.pi / 4),
    height: float = 1.5,
    max_image_order: int = 17,
    sound_speed: float = 343.0,
) -> RoomScene:
    """Two-microphone, two-speaker layout used throughout the experiments.

    The array sits at the room centre at ``height``, aligned with the x axis.
    Sources are ``source_distance`` from the array centre at ``angles`` from
    broadside (the +y direction); the first angle is the target speaker.
    """
    cx, cy = room_dims[0] / 2, room_dims[1] / 2
    n = len(angles)
    offsets = (np.arange(n) - (n - 1) / 2) * mic_spacing
    mics = [(cx + o, cy, height) for o in offsets]
    srcs = [
        (cx + source_distance * np.sin(a), cy + source_distance * np.cos(a), height)
        for a in angles
    ]
    return RoomScene(
        sources=srcs,
        microphones=mics,
        room_dims=room_dims,
        reflection_coeff=reflection_coeff,
        max_image_order=max_image_order,
        sound_speed=sound_speed,
        mic_spacing=mic_spacing,
    )


@dataclass(frozen=True)
class RirSet:
    """Impulse responses ``rir[i][j]`` from source i to microphone j."""

    rirs: np.ndarray  # (n_sources, n_mics, n_taps)
    sample_rate: int

    def __post_init__(self):
        h = np.asarray(self.rirs, dtype=np.float64)
        if h.ndim != 3:
            raise ValueError("rirs must have shape (sources, mics, taps)")
        if not np.all(np.isfinite(h)):
            raise ValueError("rirs contain NaN or Inf")
        object.__setattr__(self, "rirs", h)

    @property
    def n_sources(self) -> int:
        return self.rirs.shape[0]

    @property
    def n_mics(self) -> int:
        return self.rirs.shape[1]

    def __getitem__(self, ij):
        return self.rirs[ij]

    def to_wave(self, source: int) -> WaveBuffer:
        """RIRs of one source as a multi-channel wave (one channel per mic)."""
        return WaveBuffer(self.rirs[source], self.sample_rate)

    def write(self, path) -> None:
        """Export as float-32 WAV with channels ordered source-major."""
        flat = self.rirs.reshape(-1, self.rirs.shape[-1])
        write_wav(path, WaveBuffer(flat, self.sample_rate))


@dataclass(frozen=True)
class SourceProgram:
    """Dry source waveforms with onset offsets (samples)."""

    signals: tuple
    offsets: tuple = field(default=None)
    sample_rate: int = 24000

    def __post_init__(self):
        sig = tuple(np.asarray(s, dtype=np.float64).ravel() for s in self.signals)
        offs = self.offsets if self.offsets is not None else (0,) * len(sig)
        offs = tuple(int(o) for o in offs)
        if len(offs) != len(sig):
            raise ValueError("one offset per source signal is required")
        if any(o < 0 for o in offs):
            raise ValueError("offsets must be non-negative")
        object.__setattr__(self, "signals", sig)
        object.__setattr__(self, "offsets", offs)

    @property
    def n_sources(self) -> int:
        return len(self.signals)

    @property
    def length(self) -> int:
        return max(o + len(s) for s, o in zip(self.signals, self.offsets))

    def placed(self, i: int, length: int | None = None) -> np.ndarray:
        """Source ``i`` shifted by its onset inside a zero buffer."""
        n = self.length if length is None else length
        out = np.zeros(n)
        s, o = self.signals[i], self.offsets[i]
        out[o : o + len(s)] = s[: max(0, n - o)]
        return out

    def replace_signal(self, i: int, signal) -> "SourceProgram":
        sig = list(self.signals)
        sig[i] = np.asarray(signal, dtype=np.float64).ravel()
        return SourceProgram(tuple(sig), self.offsets, self.sample_rate)


def overlapped_program(target, nontarget, sample_rate: int = 24000,
                       overlap: float = 0.5) -> SourceProgram:
    """Program in which the non-target starts once ``1 - overlap`` of the
    target utterance has elapsed, so the utterances overlap by ``overlap``
    of the target length."""
    target = np.asarray(target, dtype=float)
    offset = int(round(len(target) * (1.0 - overlap)))
    return SourceProgram((target, nontarget), (0, offset), sample_rate)


def _image_lattice(order: int) -> np.ndarray:
    """Integer image indices (u, v, w) with |u| + |v| + |w| <= order."""
    r = np.arange(-order, order + 1)
    u, v, w = np.meshgrid(r, r, r, indexing="ij")
    keep = np.abs(u) + np.abs(v) + np.abs(w) <= order
    return np.stack([u[keep], v[keep], w[keep]], axis=1)


@lru_cache(maxsize=None)
def _sinc_offsets() -> np.ndarray:
    half = SINC_TAPS // 2
    return np.arange(-half, half + 1)


def image_sources(scene: RoomScene, source: int):
    """Image positions of ``source`` and their reflection counts.

    Along each axis the image with index ``u`` sits at ``u * L + x`` for even
    ``u`` and ``(u + 1) * L - x`` for odd ``u``, after ``|u|`` reflections.
    """
    lat = _image_lattice(scene.max_image_order)
    dims = np.asarray(scene.room_dims)
    pos = np.asarray(scene.sources[source])
    odd = lat % 2 != 0
    img = np.where(odd, (lat + 1) * dims - pos, lat * dims + pos)
    order = np.abs(lat).sum(axis=1)
    return img, order


def simulate_rirs(scene: RoomScene, sample_rate: int = 24000) -> RirSet:
    """Image-source impulse responses for every (source, microphone) pair.

    Each image contributes ``r**order / distance`` at delay
    ``distance / c``, placed with an 81-tap Hann-windowed sinc. Taps that
    would fall before t = 0 are dropped.
    """
    half = SINC_TAPS // 2
    k = _sinc_offsets()
    r = scene.reflection_coeff
    mics = np.asarray(scene.microphones)

    per_pair = []
    for i in range(scene.n_sources):
        img, order = image_sources(scene, i)
        if r == 0.0:
            keep = order == 0
        else:
            keep = np.ones(order.shape, dtype=bool)
        img, order = img[keep], order[keep]
        gains_r = r ** order if r > 0 else np.ones(order.shape)
        for j in range(scene.n_mics):
            dist = np.linalg.norm(img - mics[j], axis=1)
            delay = dist / scene.sound_speed * sample_rate
            amp = gains_r / dist
            base = np.floor(delay).astype(int)
            idx = base[:, None] + k[None, :]
            x = idx - delay[:, None]
            taps = np.sinc(x) * (0.5 + 0.5 * np.cos(np.pi * x / (half + 1)))
            taps[np.abs(x) > half + 1] = 0.0
            per_pair.append((idx, amp[:, None] * taps))

    n_taps = max(int(idx.max()) + 1 for idx, _ in per_pair)
    out = np.zeros((scene.n_sources * scene.n_mics, n_taps))
    for p, (idx, vals) in enumerate(per_pair):
        ok = idx >= 0
        np.add.at(out[p], idx[ok], vals[ok])
    return RirSet(out.reshape(scene.n_sources, scene.n_mics, n_taps), sample_rate)


def _render(signals, rirs: RirSet, length: int) -> np.ndarray:
    n_taps = rirs.rirs.shape[-1]
    out = np.zeros((rirs.n_mics, length + n_taps - 1))
    for i, x in enumerate(signals):
        if not np.any(x):
            continue
        for j in range(rirs.n_mics):
            out[j] += convolve(x, rirs[i, j])
    return out


def render_observation(program: SourceProgram, rirs: RirSet) -> WaveBuffer:
    """Microphone signals ``y_j = sum_i h_ij * x_i`` with onsets applied.

    Output length is ``program.length + n_taps - 1`` for every channel.
    """
    if program.n_sources != rirs.n_sources:
        raise ValueError(
            f"program has {program.n_sources} sources, RIRs have {rirs.n_sources}"
        )
    if program.sample_rate != rirs.sample_rate:
        raise ValueError(
            f"sample rate mismatch: program {program.sample_rate} Hz, "
            f"RIRs {rirs.sample_rate} Hz"
        )
    n = program.length
    placed = [program.placed(i, n) for i in range(program.n_sources)]
    return WaveBuffer(_render(placed, rirs, n), rirs.sample_rate)


def render_ideal(vc_output, program: SourceProgram, rirs: RirSet,
                 target: int = 0) -> WaveBuffer:
    """Rendering with the target's dry signal replaced by ``vc_output``.

    ``vc_output`` is placed at the target's onset and cut or zero-padded to
    the target's original length so the scene timing is unchanged.
    """
    if isinstance(vc_output, WaveBuffer):
        if vc_output.sample_rate != program.sample_rate:
            raise ValueError(
                f"sample rate mismatch: VC output {vc_output.sample_rate} Hz, "
                f"program {program.sample_rate} Hz"
            )
        vc_output = vc_output.samples[0]
    vc = np.asarray(vc_output, dtype=np.float64).ravel()
    n_target = len(program.signals[target])
    fitted = np.zeros(n_target)
    fitted[: min(n_target, len(vc))] = vc[:n_target]
    return render_observation(program.replace_signal(target, fitted), rirs)


def render_source_image(program: SourceProgram, rirs: RirSet, source: int) -> WaveBuffer:
    """Contribution of one source to all microphones (its spatial image)."""
    n = program.length
    signals = [program.placed(i, n) if i == source else np.zeros(n)
               for i in range(program.n_sources)]
    return WaveBuffer(_render(signals, rirs, n), rirs.sample_rate)


def schroeder_curve(rir) -> np.ndarray:
    """Energy decay curve in dB, normalized to 0 dB at t = 0."""
    e = np.asarray(rir, dtype=np.float64) ** 2
    edc = np.cumsum(e[::-1])[::-1]
    if edc[0] <= 0:
        raise ValueError("impulse response is all zeros")
    with np.errstate(divide="ignore"):
        return 10.0 * np.log10(edc / edc[0])


def measure_rt60(rir, sample_rate: int, fit_range=(-5.0, -35.0)) -> float:
    """Reverberation time from Schroeder backward integration.

    A least-squares line is fitted to the decay curve between the two
    ``fit_range`` levels and extrapolated to -60 dB.
    """
    rir = np.asarray(rir, dtype=np.float64).ravel()
    edc = schroeder_curve(rir)
    hi, lo = fit_range
    start = int(np.argmax(edc <= hi))
    below = edc <= lo
    if not below.any() or edc[start] > hi:
        raise ValueError(f"decay curve never reaches {lo} dB")
    stop = int(np.argmax(below))
    if stop - start < 2:
        raise ValueError(
            "decay too abrupt to fit; the response is below the measurable floor"
        )
    t = np.arange(start, stop + 1) / sample_rate
    slope, _ = np.polyfit(t, edc[start : stop + 1], 1)
    if slope >= 0:
        raise ValueError("decay curve is not decreasing")
    return float(-60.0 / slope)
