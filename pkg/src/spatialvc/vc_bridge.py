"""Pluggable monaural voice-conversion backends.

A backend turns the single-channel target estimate into converted speech.
Three are provided: a passthrough, a constant gain, and a wrapper around
any external command that reads and writes WAV files.
"""

from __future__ import annotations

import logging
import shlex
import subprocess
import tempfile
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .signal_core import WaveBuffer, read_wav, write_wav

log = logging.getLogger(__name__)


class VcError(RuntimeError):
    """Voice conversion failed; ``diagnostics`` holds captured process output."""

    def __init__(self, message: str, diagnostics: str = ""):
        super().__init__(message if not diagnostics else f"{message}\n{diagnostics}")
        self.diagnostics = diagnostics


@dataclass(frozen=True)
class Identity:
    def spec(self) -> str:
        return "identity"


@dataclass(frozen=True)
class Gain:
    scale: float

    def __post_init__(self):
        if not np.isfinite(self.scale) or self.scale == 0:
            raise ValueError("gain scale must be finite and nonzero")

    def spec(self) -> str:
        return f"gain:{self.scale!r}"


@dataclass(frozen=True)
class ExternalCommand:
    """Shell command template with ``{input}`` and ``{output}`` placeholders."""

    template: str
    workdir: str | None = None
    timeout: float = 600.0

    def __post_init__(self):
        if "{input}" not in self.template or "{output}" not in self.template:
            raise ValueError("command template needs {input} and {output} placeholders")
        if self.timeout <= 0:
            raise ValueError("timeout must be positive")

    def spec(self) -> str:
        return f"cmd:{self.template}"


VcBackend = Identity | Gain | ExternalCommand


def parse_backend(text: str, workdir=None, timeout: float = 600.0) -> VcBackend:
    """Parse ``identity``, ``gain:<x>`` or ``cmd:<template>``."""
    if text == "identity":
        return Identity()
    if text.startswith("gain:"):
        return Gain(float(text[5:]))
    if text.startswith("cmd:"):
        return ExternalCommand(text[4:], workdir, timeout)
    raise ValueError(f"unknown VC backend {text!r}")


def _fit_length(x: np.ndarray, n: int, tolerance: int) -> np.ndarray:
    if len(x) == n:
        return x
    if abs(len(x) - n) > tolerance:
        log.warning("VC output length %d differs from input %d by more than %d samples; "
                    "padding/truncating", len(x), n, tolerance)
    out = np.zeros(n)
    out[: min(n, len(x))] = x[:n]
    return out


def _run_external(source: WaveBuffer, backend: ExternalCommand) -> WaveBuffer:
    with tempfile.TemporaryDirectory(dir=backend.workdir) as tmp:
        tmp = Path(tmp)
        inp, outp = tmp / "vc_input.wav", tmp / "vc_output.wav"
        write_wav(inp, source)
        cmd = backend.template.format(input=shlex.quote(str(inp)),
                                      output=shlex.quote(str(outp)))
        try:
            proc = subprocess.run(cmd, shell=True, cwd=backend.workdir,
                                  capture_output=True, text=True,
                                  timeout=backend.timeout)
        except subprocess.TimeoutExpired as exc:
            raise VcError(f"VC command timed out after {backend.timeout} s: {cmd}",
                          f"stderr: {exc.stderr or ''}") from None
        if proc.stderr:
            log.info("VC command stderr:\n%s", proc.stderr.rstrip())
        if proc.returncode != 0:
            raise VcError(f"VC command exited with status {proc.returncode}: {cmd}",
                          f"stdout: {proc.stdout}\nstderr: {proc.stderr}")
        if not outp.exists():
            raise VcError(f"VC command produced no output file: {cmd}",
                          f"stderr: {proc.stderr}")
        try:
            result = read_wav(outp)
        except Exception as exc:
            raise VcError(f"cannot read VC output: {exc}", f"stderr: {proc.stderr}") from exc
    if result.sample_rate != source.sample_rate:
        raise VcError(f"VC output is {result.sample_rate} Hz, input was {source.sample_rate} Hz")
    return result


def apply_vc(source: WaveBuffer, backend: VcBackend, hop: int = 2048) -> WaveBuffer:
    """Convert a mono wave with ``backend``.

    The result always has the input's sample rate and length; outputs that
    drift by more than ``hop`` samples trigger a warning before being
    padded or truncated.
    """
    if source.n_channels != 1:
        raise ValueError("voice conversion expects a mono signal")
    if source.n_samples == 0:
        raise ValueError("voice conversion input is empty")
    if isinstance(backend, Identity):
        return WaveBuffer(source.samples.copy(), source.sample_rate)
    if isinstance(backend, Gain):
        return WaveBuffer(source.samples * backend.scale, source.sample_rate)
    if isinstance(backend, ExternalCommand):
        result = _run_external(source, backend)
        y = result.samples[0] if result.n_channels == 1 else result.samples.mean(axis=0)
        if result.n_channels != 1:
            log.warning("VC output has %d channels; downmixing to mono", result.n_channels)
        return WaveBuffer(_fit_length(y, source.n_samples, hop), source.sample_rate)
    raise TypeError(f"unsupported VC backend {backend!r}")
