"""Geometrically constrained IVA, projection back and demixing.

Separation works on the per-bin observation vectors ``Y[f, :, t]``. The
demixing matrix ``V[f]`` maps them to source estimates; after projection
back ``W[f] = diag(k[f]) V[f]`` scales each estimate to its image at the
reference microphone.
"""

from __future__ import annotations

import json
import struct
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .signal_core import Spectrogram, StftParams


class SeparationError(RuntimeError):
    """Raised when a demixing update or inversion is numerically singular."""


@dataclass(frozen=True)
class SteeringVector:
    """Far-field steering vectors, ``d[f, j]`` for bin f and microphone j."""

    d: np.ndarray
    theta: float = 0.0
    sound_speed: float = 343.0

    def __post_init__(self):
        d = np.asarray(self.d, dtype=np.complex128)
        if d.ndim != 2:
            raise ValueError("steering vectors must have shape (bins, mics)")
        object.__setattr__(self, "d", d)

    @property
    def n_bins(self) -> int:
        return self.d.shape[0]

    @property
    def n_mics(self) -> int:
        return self.d.shape[1]


def far_field_steering(mic_positions, theta: float, freqs, c: float = 343.0,
                       array_axis=None) -> SteeringVector:
    """Plane-wave steering vectors towards direction ``theta``.

    ``theta`` is measured from broadside, positive towards ``array_axis``
    (the direction of the principal microphone offset, +x by default for
    a horizontal array). With ``u`` the unit vector pointing from the array
    towards the source, microphone j receives the wave ``tau_j =
    -(p_j . u) / c`` seconds after the array centroid, and
    ``d[f, j] = exp(-2j pi f tau_j)``.
    """
    p = np.atleast_2d(np.asarray(mic_positions, dtype=float))
    if p.shape[0] < 1:
        raise ValueError("need at least one microphone")
    if not np.isfinite(theta):
        raise ValueError("theta must be finite")
    if p.shape[1] == 1:
        p = np.hstack([p, np.zeros((len(p), 2))])
    elif p.shape[1] == 2:
        p = np.hstack([p, np.zeros((len(p), 1))])
    rel = p - p.mean(axis=0)
    if array_axis is None:
        array_axis = np.array([1.0, 0.0, 0.0])
    axis = np.asarray(array_axis, dtype=float)
    axis = axis / np.linalg.norm(axis)
    # broadside: horizontal direction orthogonal to the array axis
    broadside = np.cross([0.0, 0.0, 1.0], axis)
    if np.linalg.norm(broadside) < 1e-12:
        broadside = np.array([0.0, 1.0, 0.0])
    broadside /= np.linalg.norm(broadside)
    u = np.sin(theta) * axis + np.cos(theta) * broadside
    tau = -(rel @ u) / c
    freqs = np.asarray(freqs, dtype=float)
    d = np.exp(-2j * np.pi * freqs[:, None] * tau[None, :])
    return SteeringVector(d, float(theta), float(c))


@dataclass(frozen=True)
class IvaConfig:
    """Iteration schedule and numerical floors for :func:`gc_iva`."""

    constrained_iters: int = 50
    unconstrained_iters: int = 50
    lam: float = 1.0
    epsilon_r: float = 1e-8
    epsilon_load: float = 1e-10

    def __post_init__(self):
        if self.constrained_iters < 0 or self.unconstrained_iters < 0:
            raise ValueError("iteration counts must be >= 0")
        if self.lam < 0:
            raise ValueError("lam must be >= 0")

    def to_dict(self) -> dict:
        return {
            "constrained_iters": self.constrained_iters,
            "unconstrained_iters": self.unconstrained_iters,
            "lambda": self.lam,
            "epsilon_r": self.epsilon_r,
            "epsilon_load": self.epsilon_load,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "IvaConfig":
        d = dict(d)
        if "lambda" in d:
            d["lam"] = d.pop("lambda")
        return cls(**d)


@dataclass(frozen=True)
class DemixState:
    """Demixing matrices for every frequency bin.

    ``V`` is the raw IVA result. After :func:`projection_back`, ``W``, ``k``
    and ``A = W^-1`` are filled in. ``invertible[f]`` is False where ``W``
    is singular and ``A`` holds the pseudo-inverse instead.
    """

    V: np.ndarray
    W: np.ndarray | None = None
    k: np.ndarray | None = None
    A: np.ndarray | None = None
    steering: SteeringVector | None = None
    ref_channel: int = 0
    invertible: np.ndarray | None = None
    history: tuple = field(default=(), compare=False)

    @property
    def n_bins(self) -> int:
        return self.V.shape[0]

    @property
    def n_channels(self) -> int:
        return self.V.shape[1]


def _loaded(M: np.ndarray, eps: float) -> np.ndarray:
    n = M.shape[-1]
    tr = np.real(np.trace(M, axis1=-2, axis2=-1))
    return M + (eps * tr / n)[..., None, None] * np.eye(n)


def _activity(X: np.ndarray, eps: float) -> np.ndarray:
    """Frequency-joint source norms ``r[k, t]`` of separated ``X[f, k, t]``."""
    return np.maximum(np.sqrt(np.sum(np.abs(X) ** 2, axis=0)), eps)


def iva_objective(V: np.ndarray, Y: np.ndarray, d: np.ndarray | None,
                  lam: float, epsilon_r: float = 1e-8) -> float:
    """Penalized IVA cost minimized by :func:`gc_iva`.

    ``2 sum_k mean_t r_k(t) - 2 sum_f log|det V[f]|
    + lam sum_f sum_{k>=1} |v_k[f]^H d[f]|^2``, with ``v_k^H`` the k-th row
    of ``V[f]`` and ``Y`` shaped ``(bins, channels, frames)``.
    """
    X = V @ Y
    r = _activity(X, epsilon_r)
    cost = 2.0 * np.sum(np.mean(r, axis=1))
    _, logdet = np.linalg.slogdet(V)
    cost -= 2.0 * np.sum(logdet)
    if lam > 0 and d is not None:
        # rows of V are v_k^H, so V @ d gives v_k^H d
        vd = np.einsum("fkn,fn->fk", V, d)
        cost += lam * np.sum(np.abs(vd[:, 1:]) ** 2)
    return float(cost)


def _input_scale(Y: np.ndarray) -> float:
    n_bins, n_ch, n_frames = Y.shape
    s = np.sqrt(np.sum(np.abs(Y) ** 2) / (n_ch * n_frames))
    return float(s) if s > 0 else 1.0


def gc_iva(spec: Spectrogram, steering: SteeringVector,
           config: IvaConfig | None = None, track_objective: bool = False) -> DemixState:
    """Auxiliary-function IVA with a null penalty towards the target.

    Rows 2..N of the demixing matrix are pushed to null the steering
    direction during the first ``constrained_iters`` sweeps, which steers
    the target into output channel 1; the remaining sweeps run plain IVA
    from that starting point.

    The input is divided by its RMS frame energy before iterating so the
    penalty weight is independent of the recording level. Row scales of the
    returned ``V`` are therefore arbitrary; :func:`projection_back` fixes
    them.
    """
    config = config or IvaConfig()
    Y = np.moveaxis(spec.data, 0, 1)  # (bins, channels, frames)
    n_bins, n_ch, n_frames = Y.shape
    if n_ch < 2:
        raise ValueError("separation needs at least two channels")
    if steering.n_bins != n_bins or steering.n_mics != n_ch:
        raise ValueError(
            f"steering shape {steering.d.shape} does not match "
            f"spectrogram ({n_bins} bins, {n_ch} channels)"
        )
    scale = _input_scale(Y)
    Y = Y / scale
    d = steering.d
    ddH = d[:, :, None] * d[:, None, :].conj()
    eye = np.eye(n_ch)

    V = np.tile(eye.astype(np.complex128), (n_bins, 1, 1))
    history = []
    schedule = [config.lam] * config.constrained_iters + [0.0] * config.unconstrained_iters
    if track_objective:
        history.append((schedule[0] if schedule else 0.0,
                        iva_objective(V, Y, d, schedule[0] if schedule else 0.0,
                                      config.epsilon_r)))
    for lam in schedule:
        for k in range(n_ch):
            X = V @ Y
            r = _activity(X, config.epsilon_r)[k]
            U = np.einsum("fit,fjt->fij", Y / r, Y.conj()) / n_frames
            if k >= 1 and lam > 0:
                U = U + lam * ddH
            U = _loaded(U, config.epsilon_load)
            try:
                v = np.linalg.solve(V @ U, np.broadcast_to(eye[:, k], (n_bins, n_ch))[..., None])[..., 0]
            except np.linalg.LinAlgError:
                bad = _first_singular(V @ U)
                raise SeparationError(f"singular IVA update at frequency bin {bad}") from None
            norm = np.sqrt(np.real(np.einsum("fi,fij,fj->f", v.conj(), U, v)))
            if not np.all(np.isfinite(norm)) or np.any(norm <= 0):
                bad = int(np.flatnonzero(~(np.isfinite(norm) & (norm > 0)))[0])
                raise SeparationError(f"degenerate IVA update at frequency bin {bad}")
            V[:, k, :] = (v / norm[:, None]).conj()
        if track_objective:
            history.append((lam, iva_objective(V, Y, d, lam, config.epsilon_r)))
    return DemixState(V, steering=steering, history=tuple(history))


def _first_singular(M: np.ndarray) -> int:
    c = np.linalg.cond(M)
    bad = np.flatnonzero(~np.isfinite(c) | (c > 1e15))
    return int(bad[0]) if bad.size else -1


def projection_back(V, spec: Spectrogram | None = None, ref_channel: int = 0,
                    steering: SteeringVector | None = None) -> DemixState:
    """Resolve the per-bin scale of each output by projecting it back to
    the reference microphone.

    The scalings ``k[f]`` are the ``ref_channel`` row of ``V[f]^-1``, which
    makes ``sum_i (W[f] Y)_i`` reproduce ``Y_ref`` exactly for every frame.
    ``spec`` is accepted for interface symmetry and only used for a shape
    check.
    """
    if isinstance(V, DemixState):
        steering = steering or V.steering
        V = V.V
    V = np.asarray(V, dtype=np.complex128)
    n_bins, n_ch, _ = V.shape
    if spec is not None and (spec.n_bins != n_bins or spec.n_channels != n_ch):
        raise ValueError("demixing matrices do not match the spectrogram shape")
    if not 0 <= ref_channel < n_ch:
        raise ValueError(f"ref_channel {ref_channel} out of range")
    cond = np.linalg.cond(V)
    bad = np.flatnonzero(~np.isfinite(cond) | (cond > 1e14))
    if bad.size:
        raise SeparationError(f"demixing matrix is singular at frequency bin {int(bad[0])}")
    Vinv = np.linalg.inv(V)
    k = Vinv[:, ref_channel, :]
    W = k[:, :, None] * V

    scale = np.max(np.abs(k), axis=1, keepdims=True)
    invertible = np.all(np.abs(k) > 1e-12 * scale, axis=1)
    A = np.empty_like(W)
    A[invertible] = Vinv[invertible] / k[invertible][:, None, :]
    if not np.all(invertible):
        A[~invertible] = np.linalg.pinv(W[~invertible])
    return DemixState(V, W, k, A, steering, ref_channel, invertible)


def apply_demix(W, spec: Spectrogram) -> Spectrogram:
    """Per-bin product ``X[f, :, t] = W[f] Y[f, :, t]``."""
    if isinstance(W, DemixState):
        W = W.W if W.W is not None else W.V
    W = np.asarray(W)
    if W.shape[0] != spec.n_bins or W.shape[2] != spec.n_channels:
        raise ValueError(
            f"demixing matrices {W.shape} do not match spectrogram "
            f"({spec.n_channels} channels, {spec.n_bins} bins)"
        )
    X = np.einsum("fij,jft->ift", W, spec.data)
    return spec.with_data(X)


# -- serialization ---------------------------------------------------------

MAGIC = b"SVCDEMIX"


def save_demix(path, state: DemixState, params: StftParams | None = None,
               sample_rate: int | None = None) -> Path:
    """Write a demixing state to ``path``.

    Layout: 8-byte magic ``SVCDEMIX``, little-endian uint32 header length,
    UTF-8 JSON header, then each array listed in ``header["arrays"]`` as
    little-endian complex128 (float64 real/imag pairs) in C order.
    """
    arrays = {"V": state.V}
    for name in ("W", "k", "A"):
        val = getattr(state, name)
        if val is not None:
            arrays[name] = val
    if state.steering is not None:
        arrays["d"] = state.steering.d
    header = {
        "n_channels": state.n_channels,
        "n_bins": state.n_bins,
        "ref_channel": state.ref_channel,
        "window_length": params.window_length if params else None,
        "hop": params.hop if params else None,
        "sample_rate": sample_rate,
        "theta": state.steering.theta if state.steering is not None else None,
        "sound_speed": state.steering.sound_speed if state.steering is not None else None,
        "invertible": state.invertible.tolist() if state.invertible is not None else None,
        "arrays": [{"name": n, "shape": list(a.shape)} for n, a in arrays.items()],
    }
    blob = json.dumps(header).encode("utf-8")
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "wb") as fh:
        fh.write(MAGIC)
        fh.write(struct.pack("<I", len(blob)))
        fh.write(blob)
        for a in arrays.values():
            fh.write(np.ascontiguousarray(a, dtype="<c16").tobytes())
    return path


def load_demix(path):
    """Read a file written by :func:`save_demix`.

    Returns ``(state, header)``.
    """
    with open(path, "rb") as fh:
        if fh.read(len(MAGIC)) != MAGIC:
            raise ValueError(f"{path}: not a demixing-state file")
        (n,) = struct.unpack("<I", fh.read(4))
        header = json.loads(fh.read(n).decode("utf-8"))
        arrays = {}
        for spec in header["arrays"]:
            shape = tuple(spec["shape"])
            count = int(np.prod(shape))
            buf = fh.read(16 * count)
            if len(buf) != 16 * count:
                raise ValueError(f"{path}: truncated array {spec['name']}")
            arrays[spec["name"]] = np.frombuffer(buf, dtype="<c16").reshape(shape).copy()
    steering = None
    if "d" in arrays:
        steering = SteeringVector(arrays["d"], header["theta"] or 0.0,
                                  header["sound_speed"] or 343.0)
    inv = header.get("invertible")
    state = DemixState(
        arrays["V"], arrays.get("W"), arrays.get("k"), arrays.get("A"),
        steering, header["ref_channel"],
        np.asarray(inv, dtype=bool) if inv is not None else None,
    )
    return state, header
