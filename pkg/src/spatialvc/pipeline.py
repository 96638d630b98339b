"""End-to-end spatial voice conversion runs.

A scene run simulates (or loads) the microphone recording, separates it,
converts the target estimate, remixes with both strategies and scores the
result against the ideal rendering. Grid runs repeat this over reflection
coefficients and aggregate the divergences.
"""

from __future__ import annotations

import csv
import json
import logging
import math
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field, replace
from pathlib import Path

import numpy as np

from . import bss, remixer
from .evaluation import EvalReport, iqr_stats, ldd, si_sdr, spatial_covariance
from .room_sim import (
    RirSet,
    RoomScene,
    SourceProgram,
    default_scene,
    measure_rt60,
    overlapped_program,
    render_ideal,
    render_observation,
    render_source_image,
    simulate_rirs,
)
from .signal_core import StftParams, WaveBuffer, istft, read_wav, stft, write_wav
from .synth import speaker_pair
from .vc_bridge import apply_vc, parse_backend

log = logging.getLogger(__name__)

STRATEGIES = ("inverse", "steering")


class StageError(RuntimeError):
    """A pipeline stage failed; ``stage`` names it."""

    def __init__(self, stage: str, message: str):
        super().__init__(f"[{stage}] {message}")
        self.stage = stage
        self.detail = message


@dataclass(frozen=True)
class RunConfig:
    scene: RoomScene = field(default_factory=default_scene)
    stft: StftParams = field(default_factory=StftParams)
    iva: bss.IvaConfig = field(default_factory=bss.IvaConfig)
    theta: float | None = None
    vc: str = "identity"
    remix: str = "inverse"
    seed: int = 0
    sample_rate: int = 24000
    sources: dict | None = None
    observation: str | None = None
    duration: float = 4.0
    overlap: float = 0.5
    ref_channel: int = 0
    target_gain: float = 1.0
    vc_timeout: float = 600.0
    output_dir: str = "out"

    def __post_init__(self):
        remixer.RemixStrategy(self.remix)
        parse_backend(self.vc)
        if self.sources is not None:
            for key in ("target", "nontarget"):
                if key not in self.sources:
                    raise ValueError(f"sources needs a {key!r} path")

    def target_theta(self) -> float:
        return self.scene.source_angle(0) if self.theta is None else self.theta

    def check_paths(self) -> None:
        paths = list((self.sources or {}).values())
        if self.observation:
            paths.append(self.observation)
        missing = [p for p in paths if not Path(p).exists()]
        if missing:
            raise FileNotFoundError(f"missing input files: {missing}")

    def to_dict(self) -> dict:
        return {
            "scene": self.scene.to_dict(),
            "stft": {"window_length": self.stft.window_length, "hop": self.stft.hop},
            "iva": self.iva.to_dict(),
            "theta": self.target_theta(),
            "vc": self.vc,
            "remix": self.remix,
            "seed": self.seed,
            "sample_rate": self.sample_rate,
            "sources": self.sources,
            "observation": self.observation,
            "duration": self.duration,
            "overlap": self.overlap,
            "ref_channel": self.ref_channel,
            "target_gain": self.target_gain,
            "vc_timeout": self.vc_timeout,
            "output_dir": self.output_dir,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "RunConfig":
        d = dict(d)
        scene = d.pop("scene", None)
        if scene is None:
            d["scene"] = default_scene()
        elif "sources" in scene:
            d["scene"] = RoomScene.from_dict(scene)
        else:
            d["scene"] = default_scene(**scene)
        if "stft" in d:
            d["stft"] = StftParams(**d["stft"])
        if "iva" in d:
            d["iva"] = bss.IvaConfig.from_dict(d["iva"])
        return cls(**d)

    @classmethod
    def load(cls, path) -> "RunConfig":
        return cls.from_dict(json.loads(Path(path).read_text()))


@dataclass(frozen=True)
class GridSpec:
    reflection_coeffs: tuple = (0.2, 0.5, 0.8)
    scenes_per_cell: int = 8
    pairing: str = "different_gender"
    manifest: str | None = None

    def __post_init__(self):
        if len(self.reflection_coeffs) < 1:
            raise ValueError("grid needs at least one reflection coefficient")
        if self.scenes_per_cell < 4:
            raise ValueError("need at least four scenes per cell")
        if self.pairing not in ("different_gender", "any"):
            raise ValueError(f"unknown pairing policy {self.pairing!r}")


# -- corpus manifests ------------------------------------------------------

def read_manifest(path) -> list[dict]:
    """CSV with columns ``utterance_id,path,speaker`` and optional ``gender``.

    Relative paths resolve against the manifest's directory.
    """
    path = Path(path)
    rows = []
    with open(path, newline="") as fh:
        for row in csv.DictReader(fh):
            p = Path(row["path"])
            if not p.is_absolute():
                p = path.parent / p
            rows.append({**row, "path": str(p)})
    if not rows:
        raise ValueError(f"{path}: manifest is empty")
    return rows


def pick_pair(rows: list[dict], seed: int, pairing: str = "different_gender"):
    """Choose (target, nontarget) manifest rows from different speakers.

    With ``different_gender`` pairing and gender labels present, the two
    speakers must also differ in gender.
    """
    rng = np.random.default_rng(seed)
    order = rng.permutation(len(rows))
    labelled = all(r.get("gender") for r in rows)
    for a in order:
        t = rows[a]
        candidates = [r for r in rows if r["speaker"] != t["speaker"]]
        if pairing == "different_gender" and labelled:
            candidates = [r for r in candidates if r["gender"] != t["gender"]]
        if candidates:
            return t, candidates[int(rng.integers(len(candidates)))]
    raise ValueError("manifest has no admissible speaker pair")


# -- stages ----------------------------------------------------------------

@dataclass
class Simulation:
    program: SourceProgram | None
    rirs: RirSet | None
    observation: WaveBuffer
    labels: tuple = ()


def _stage(name):
    def wrap(fn):
        def inner(*args, **kwargs):
            try:
                return fn(*args, **kwargs)
            except StageError:
                raise
            except Exception as exc:
                raise StageError(name, f"{type(exc).__name__}: {exc}") from exc
        inner.__name__ = fn.__name__
        inner.__doc__ = fn.__doc__
        return inner
    return wrap


def load_program(config: RunConfig) -> tuple[SourceProgram, tuple]:
    """Dry sources for the scene: WAV files if configured, synthetic otherwise."""
    if config.sources is not None:
        t = read_wav(config.sources["target"], config.sample_rate)
        n = read_wav(config.sources["nontarget"], config.sample_rate)
        if t.n_channels != 1 or n.n_channels != 1:
            raise ValueError("dry sources must be mono")
        x1, x2 = t.samples[0], n.samples[0]
        labels = tuple(config.sources.get("labels", ()))
    else:
        x1, x2, labels = speaker_pair(config.duration, config.sample_rate, config.seed)
    return overlapped_program(x1, x2, config.sample_rate, config.overlap), labels


@_stage("simulate")
def simulate(config: RunConfig) -> Simulation:
    if config.observation:
        obs = read_wav(config.observation, config.sample_rate)
        if obs.n_channels != config.scene.n_mics:
            raise ValueError(f"observation has {obs.n_channels} channels, "
                             f"scene has {config.scene.n_mics} microphones")
        program = rirs = None
        labels = ()
        if config.sources is not None:
            program, labels = load_program(config)
            rirs = simulate_rirs(config.scene, config.sample_rate)
        return Simulation(program, rirs, obs, labels)
    program, labels = load_program(config)
    rirs = simulate_rirs(config.scene, config.sample_rate)
    return Simulation(program, rirs, render_observation(program, rirs), labels)


def steering_for(config: RunConfig) -> bss.SteeringVector:
    freqs = config.stft.frequencies(config.sample_rate)
    return bss.far_field_steering(config.scene.microphones, config.target_theta(),
                                  freqs, config.scene.sound_speed)


@_stage("separate")
def separate(observation: WaveBuffer, config: RunConfig):
    """Returns ``(observation spectrogram, demix state, separated spectrogram)``."""
    Y = stft(observation, config.stft)
    d = steering_for(config)
    state = bss.gc_iva(Y, d, config.iva)
    state = bss.projection_back(state, Y, config.ref_channel)
    return Y, state, bss.apply_demix(state.W, Y)


@_stage("convert")
def convert(target_estimate: WaveBuffer, config: RunConfig) -> WaveBuffer:
    backend = parse_backend(config.vc, timeout=config.vc_timeout)
    return apply_vc(target_estimate, backend, hop=config.stft.hop)


@_stage("remix")
def remix_waves(state: bss.DemixState, separated, vc_output: WaveBuffer,
                config: RunConfig, strategies=STRATEGIES) -> dict:
    """Remixed waveforms for each strategy, keyed by name."""
    vc_spec = stft(vc_output, config.stft)
    if vc_spec.n_frames != separated.n_frames:
        raise ValueError(f"VC output has {vc_spec.n_frames} frames, separation "
                         f"has {separated.n_frames}")
    nontarget = separated.with_data(separated.data[1:])
    out = {}
    for s in strategies:
        Z = remixer.remix(s, state, vc_spec, nontarget, state.steering, config.target_gain)
        out[s] = istft(Z, separated.length)
    return out


def _ldd_to(ideal_scm, wave: WaveBuffer, params: StftParams) -> float:
    return ldd(ideal_scm, spatial_covariance(stft(wave, params)))[1]


@_stage("eval")
def evaluate(sim: Simulation, separated, remixed: dict, ideal: WaveBuffer | None,
             config: RunConfig) -> dict:
    """Per-scene metrics: LDD (Ideal -> method), separation SI-SDR, RT60."""
    result = {"ldd": {}, "si_sdr_db": None, "rt60_s": None}
    if ideal is not None:
        ideal_scm = spatial_covariance(stft(ideal, config.stft))
        result["ldd"] = {s: _ldd_to(ideal_scm, w, config.stft) for s, w in remixed.items()}
    if sim.program is not None and sim.rirs is not None:
        ref = config.ref_channel
        est = istft(separated, separated.length).samples
        images = [render_source_image(sim.program, sim.rirs, i).samples[ref]
                  for i in range(sim.program.n_sources)]
        n = est.shape[1]
        images = [np.pad(im, (0, max(0, n - len(im))))[:n] for im in images]
        mix = sim.observation.samples[ref][:n]
        out_sdr = [si_sdr(est[i], images[i]) for i in range(len(images))]
        in_sdr = si_sdr(mix, images[0])
        corr = [abs(np.corrcoef(est[i], images[0])[0, 1]) for i in range(len(images))]
        result["si_sdr_db"] = out_sdr
        result["si_sdr_input_db"] = in_sdr
        result["si_sdr_improvement_db"] = out_sdr[0] - in_sdr
        result["target_in_channel_1"] = bool(int(np.argmax(corr)) == 0)
        try:
            result["rt60_s"] = measure_rt60(sim.rirs[0, ref], sim.rirs.sample_rate)
        except ValueError as exc:
            log.warning("RT60 not measurable: %s", exc)
    return result


@_stage("ideal")
def ideal_rendering(sim: Simulation, config: RunConfig) -> WaveBuffer | None:
    """Scene with the dry target replaced by its conversion."""
    if sim.program is None or sim.rirs is None:
        return None
    dry = WaveBuffer(sim.program.signals[0], config.sample_rate)
    vc_dry = convert(dry, config)
    ideal = render_ideal(vc_dry, sim.program, sim.rirs)
    n = sim.observation.n_samples
    if ideal.n_samples != n:
        x = np.zeros((ideal.n_channels, n))
        m = min(n, ideal.n_samples)
        x[:, :m] = ideal.samples[:, :m]
        ideal = WaveBuffer(x, ideal.sample_rate)
    return ideal


def run_scene(config: RunConfig, write: bool = True) -> dict:
    """Run every stage for one scene and write artifacts to ``output_dir``.

    Returns the report dictionary (also written as ``report.json``).
    """
    out = Path(config.output_dir)
    config.check_paths()
    sim = simulate(config)
    Y, state, separated = separate(sim.observation, config)
    target_est = istft(separated.with_data(separated.data[:1]), Y.length)
    vc_out = convert(target_est, config)
    remixed = remix_waves(state, separated, vc_out, config)
    ideal = ideal_rendering(sim, config)
    metrics = evaluate(sim, separated, remixed, ideal, config)

    report = {
        "status": "ok",
        "config": config.to_dict(),
        "labels": list(sim.labels),
        **metrics,
    }
    if write:
        out.mkdir(parents=True, exist_ok=True)
        write_wav(out / "observation.wav", sim.observation)
        seps = istft(separated, Y.length)
        for i in range(seps.n_channels):
            write_wav(out / f"separated_{i + 1}.wav", seps.channel(i))
        write_wav(out / "vc_output.wav", vc_out)
        write_wav(out / "remixed.wav", remixed[config.remix])
        for s, w in remixed.items():
            write_wav(out / f"remixed_{s}.wav", w)
        if ideal is not None:
            write_wav(out / "ideal.wav", ideal)
        if sim.rirs is not None:
            sim.rirs.write(out / "rirs.wav")
        bss.save_demix(out / "demix.bin", state, config.stft, config.sample_rate)
        (out / "report.json").write_text(json.dumps(report, indent=2, sort_keys=True))
    return report


# -- grids -----------------------------------------------------------------

def _scene_configs(grid: GridSpec, base: RunConfig):
    rows = read_manifest(grid.manifest) if grid.manifest else None
    root = Path(base.output_dir)
    for r in grid.reflection_coeffs:
        for s in range(grid.scenes_per_cell):
            seed = base.seed + s
            sources = base.sources
            if rows is not None:
                t, n = pick_pair(rows, seed, grid.pairing)
                sources = {"target": t["path"], "nontarget": n["path"],
                           "labels": [t.get("gender", ""), n.get("gender", "")]}
            yield r, s, replace(
                base,
                scene=base.scene.replace(reflection_coeff=r),
                seed=seed,
                sources=sources,
                output_dir=str(root / f"r{r:g}" / f"scene_{s:03d}"),
            )


def _safe_run(config: RunConfig, write: bool) -> dict:
    try:
        return run_scene(config, write=write)
    except StageError as exc:
        log.error("scene failed: %s", exc)
        return {"status": "failed", "stage": exc.stage, "error": exc.detail,
                "config": config.to_dict()}
    except Exception as exc:
        log.error("scene failed: %s", exc)
        return {"status": "failed", "stage": "setup", "error": f"{type(exc).__name__}: {exc}",
                "config": config.to_dict()}


def summarize(scenes: list[dict], reflection_coeffs) -> dict:
    """Aggregate per-scene LDD with :func:`iqr_stats` per (strategy, r)."""
    table = {}
    for s in STRATEGIES:
        table[s] = {}
        for r in reflection_coeffs:
            vals = [sc["ldd"][s] for sc in scenes
                    if sc["status"] == "ok" and sc["r"] == r and s in sc.get("ldd", {})
                    and math.isfinite(sc["ldd"][s])]
            if len(vals) < 4:
                table[s][f"{r:g}"] = {"valid": False, "n": len(vals)}
                continue
            m, sd = iqr_stats(vals)
            table[s][f"{r:g}"] = {"valid": True, "n": len(vals), "mean": m, "sd": sd,
                                  "values": vals}
    return table


def format_table(summary: dict, reflection_coeffs) -> str:
    cols = [f"{r:g}" for r in reflection_coeffs]
    head = "method    " + "".join(f"| r={c:<18}" for c in cols)
    lines = [head, "-" * len(head)]
    for s, row in summary.items():
        cells = []
        for c in cols:
            cell = row[c]
            cells.append(f"| {cell['mean']:.3f} +/- {cell['sd']:.3f}    " if cell["valid"]
                         else f"| invalid (n={cell['n']})   ")
        lines.append(f"{s:<10}" + "".join(cells))
    return "\n".join(lines)


def run_grid(grid: GridSpec, base: RunConfig, workers: int = 1,
             write_scenes: bool = True) -> dict:
    """Run every scene of the grid and write ``grid_report.json``,
    ``grid_scenes.csv`` and ``grid_table.txt`` under ``base.output_dir``."""
    jobs = list(_scene_configs(grid, base))
    if workers > 1:
        with ProcessPoolExecutor(workers) as pool:
            results = list(pool.map(_safe_run, [c for _, _, c in jobs],
                                    [write_scenes] * len(jobs)))
    else:
        results = [_safe_run(c, write_scenes) for _, _, c in jobs]
    scenes = []
    for (r, s, _), res in zip(jobs, results):
        scenes.append({**res, "r": r, "scene": s})

    summary = summarize(scenes, grid.reflection_coeffs)
    reports = {}
    for strat, row in summary.items():
        for c, cell in row.items():
            if cell["valid"]:
                reports[f"{strat}@r={c}"] = EvalReport(
                    ldd_mean=cell["mean"], ldd_sd=cell["sd"],
                    per_utterance_ldd=cell["values"],
                    config_echo={"strategy": strat, "r": float(c)},
                ).to_dict()
    out = {
        "grid": {"reflection_coeffs": list(grid.reflection_coeffs),
                 "scenes_per_cell": grid.scenes_per_cell, "pairing": grid.pairing,
                 "manifest": grid.manifest},
        "base_config": base.to_dict(),
        "summary": summary,
        "cells": reports,
        "scenes": scenes,
        "table": format_table(summary, grid.reflection_coeffs),
    }
    root = Path(base.output_dir)
    root.mkdir(parents=True, exist_ok=True)
    (root / "grid_report.json").write_text(json.dumps(out, indent=2, sort_keys=True))
    (root / "grid_table.txt").write_text(out["table"] + "\n")
    with open(root / "grid_scenes.csv", "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["r", "scene", "status", "stage", "ldd_inverse", "ldd_steering",
                    "si_sdr_improvement_db", "rt60_s"])
        for sc in scenes:
            l = sc.get("ldd", {})
            w.writerow([sc["r"], sc["scene"], sc["status"], sc.get("stage", ""),
                        l.get("inverse", ""), l.get("steering", ""),
                        sc.get("si_sdr_improvement_db", ""), sc.get("rt60_s", "")])
    return out
