"""Spatial covariance, log-determinant divergence and summary statistics."""

from __future__ import annotations

import csv
import json
from dataclasses import dataclass, field, asdict
from pathlib import Path

import numpy as np

from .signal_core import Spectrogram

SI_SDR_CAP = 80.0


@dataclass(frozen=True)
class ScmSet:
    """Per-bin spatial covariance matrices ``Phi[f]`` (N x N, Hermitian)."""

    phi: np.ndarray
    frame_count: int

    @property
    def n_bins(self) -> int:
        return self.phi.shape[0]

    @property
    def n_channels(self) -> int:
        return self.phi.shape[1]


def spatial_covariance(spec: Spectrogram, loading: float = 1e-6) -> ScmSet:
    """Frame-averaged outer products with relative diagonal loading.

    ``Phi[f] = mean_t z z^H + loading * trace/N * I``.
    """
    if spec.n_frames < 2:
        raise ValueError("spatial covariance needs at least two frames")
    Z = spec.data
    n = spec.n_channels
    phi = np.einsum("ift,jft->fij", Z, Z.conj()) / spec.n_frames
    phi = 0.5 * (phi + np.swapaxes(phi, 1, 2).conj())
    tr = np.real(np.trace(phi, axis1=1, axis2=2))
    phi = phi + (loading * tr / n)[:, None, None] * np.eye(n)
    return ScmSet(phi, spec.n_frames)


def _check_scm(phi: np.ndarray, name: str, herm_tol=1e-12, psd_tol=1e-10):
    scale = np.maximum(np.abs(phi).max(axis=(1, 2)), 1e-300)
    herm = np.abs(phi - np.swapaxes(phi, 1, 2).conj()).max(axis=(1, 2))
    if np.any(herm > herm_tol * scale):
        raise ValueError(f"{name} is not Hermitian")
    ev = np.linalg.eigvalsh(phi)
    tr = np.real(np.trace(phi, axis1=1, axis2=2))
    if np.any(ev.min(axis=1) < -psd_tol * np.abs(tr)):
        raise ValueError(f"{name} is not positive semidefinite")


def ldd_per_bin(A, B) -> np.ndarray:
    """``tr(A B^-1) - log det(A B^-1) - N`` for every bin."""
    A = A.phi if isinstance(A, ScmSet) else np.asarray(A)
    B = B.phi if isinstance(B, ScmSet) else np.asarray(B)
    if A.shape != B.shape:
        raise ValueError(f"SCM shapes differ: {A.shape} vs {B.shape}")
    _check_scm(A, "reference SCM")
    _check_scm(B, "estimate SCM")
    n = A.shape[-1]
    M = np.linalg.solve(B, A)  # B^-1 A has the same trace and determinant as A B^-1
    tr = np.real(np.trace(M, axis1=1, axis2=2))
    _, logdet_a = np.linalg.slogdet(A)
    _, logdet_b = np.linalg.slogdet(B)
    return tr - (logdet_a - logdet_b) - n


def ldd(A, B, exclude_edges: bool = True):
    """Log-determinant divergence from reference ``A`` to estimate ``B``.

    Returns ``(per_bin, mean)``; the mean skips the DC and Nyquist bins
    unless ``exclude_edges`` is False.
    """
    per_bin = ldd_per_bin(A, B)
    inner = per_bin[1:-1] if exclude_edges and per_bin.size > 2 else per_bin
    return per_bin, float(np.mean(inner))


def si_sdr(estimate, reference) -> float:
    """Scale-invariant SDR in dB, capped at +80 dB."""
    est = np.asarray(estimate, dtype=np.float64).ravel()
    ref = np.asarray(reference, dtype=np.float64).ravel()
    if est.shape != ref.shape:
        raise ValueError(f"length mismatch: {est.size} vs {ref.size}")
    ref_energy = ref @ ref
    if ref_energy == 0:
        raise ValueError("reference signal is all zeros")
    target = (est @ ref) / ref_energy * ref
    noise = est - target
    t, e = target @ target, noise @ noise
    if e <= t * 10 ** (-SI_SDR_CAP / 10):
        return SI_SDR_CAP
    if t == 0:
        return -np.inf
    return float(10 * np.log10(t / e))


def iqr_stats(values):
    """Mean and population SD of the values between the first and third
    quartiles (inclusive, linear interpolation)."""
    v = np.sort(np.asarray(values, dtype=np.float64).ravel())
    if v.size < 4:
        raise ValueError("iqr_stats needs at least four values")
    q1, q3 = np.percentile(v, [25, 75], method="linear")
    kept = v[(v >= q1) & (v <= q3)]
    return float(np.mean(kept)), float(np.std(kept))


@dataclass
class EvalReport:
    """Per-scene or aggregated evaluation results."""

    ldd_mean: float
    ldd_sd: float
    per_utterance_ldd: list = field(default_factory=list)
    si_sdr_db: list = field(default_factory=list)
    rt60_s: float | None = None
    config_echo: dict = field(default_factory=dict)
    conventions: dict = field(default_factory=lambda: {
        "ldd": "reference=Ideal, estimate=method; mean over bins 1..F-2",
        "scm_loading": 1e-6,
        "quartiles": "linear interpolation, inclusive [Q1, Q3]",
    })

    def to_dict(self) -> dict:
        return asdict(self)

    def to_json(self, path=None) -> str:
        text = json.dumps(self.to_dict(), indent=2, sort_keys=True)
        if path is not None:
            Path(path).write_text(text)
        return text

    def table(self) -> str:
        rows = [
            ("LDD mean", f"{self.ldd_mean:.4f}"),
            ("LDD SD", f"{self.ldd_sd:.4f}"),
            ("utterances", str(len(self.per_utterance_ldd))),
        ]
        if self.si_sdr_db:
            rows.append(("SI-SDR (dB)", ", ".join(f"{x:.2f}" for x in self.si_sdr_db)))
        if self.rt60_s is not None:
            rows.append(("RT60 (s)", f"{self.rt60_s:.3f}"))
        width = max(len(k) for k, _ in rows)
        return "\n".join(f"{k:<{width}}  {v}" for k, v in rows)

    def write_csv(self, path) -> None:
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["utterance", "ldd"])
            for i, x in enumerate(self.per_utterance_ldd):
                w.writerow([i, repr(float(x))])
