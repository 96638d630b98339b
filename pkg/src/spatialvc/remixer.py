"""Rebuild a multi-channel scene from the converted target and the
separated non-target streams."""

from __future__ import annotations

from enum import Enum

import numpy as np

from .bss import DemixState, SteeringVector
from .signal_core import Spectrogram


class RemixStrategy(str, Enum):
    INVERSE = "inverse"
    STEERING = "steering"


def _stack(demix: DemixState, vc_spec: Spectrogram, nontarget: Spectrogram) -> np.ndarray:
    if demix.A is None:
        raise ValueError("demixing state has no inverse; run projection_back first")
    if vc_spec.n_channels != 1:
        raise ValueError("vc_spec must be mono")
    if vc_spec.data.shape[1:] != nontarget.data.shape[1:]:
        raise ValueError(
            f"VC spectrogram {vc_spec.data.shape[1:]} and non-target "
            f"{nontarget.data.shape[1:]} differ in bins/frames"
        )
    n = demix.n_channels
    if nontarget.n_channels != n - 1:
        raise ValueError(f"expected {n - 1} non-target channels, got {nontarget.n_channels}")
    if demix.n_bins != vc_spec.n_bins:
        raise ValueError("demixing state and spectrograms differ in bin count")
    return np.concatenate([vc_spec.data, nontarget.data], axis=0)


def remix_inverse(demix: DemixState, vc_spec: Spectrogram,
                  nontarget: Spectrogram) -> Spectrogram:
    """``Z[f, :, t] = A[f] [vc; nontarget]`` with ``A = W^-1``."""
    S = _stack(demix, vc_spec, nontarget)
    return nontarget.with_data(np.einsum("fij,jft->ift", demix.A, S))


def remix_steering(demix: DemixState, steering: SteeringVector, vc_spec: Spectrogram,
                   nontarget: Spectrogram, target_gain: float = 1.0) -> Spectrogram:
    """Like :func:`remix_inverse` but the target column of ``A`` is
    replaced by ``target_gain * d``."""
    S = _stack(demix, vc_spec, nontarget)
    if steering.d.shape != (demix.n_bins, demix.n_channels):
        raise ValueError(f"steering shape {steering.d.shape} does not match demixing state")
    M = demix.A.copy()
    M[:, :, 0] = target_gain * steering.d
    return nontarget.with_data(np.einsum("fij,jft->ift", M, S))


def remix(strategy, demix: DemixState, vc_spec: Spectrogram, nontarget: Spectrogram,
          steering: SteeringVector | None = None, target_gain: float = 1.0) -> Spectrogram:
    strategy = RemixStrategy(strategy)
    if strategy is RemixStrategy.INVERSE:
        return remix_inverse(demix, vc_spec, nontarget)
    steering = steering or demix.steering
    if steering is None:
        raise ValueError("steering remix needs a steering vector")
    return remix_steering(demix, steering, vc_spec, nontarget, target_gain)
