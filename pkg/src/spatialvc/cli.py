"""Command-line front end.

Every stage reads and writes files in ``--out`` so stages can be rerun one
at a time::

    spatialvc simulate --config run.json --out scene/
    spatialvc separate --config run.json --out scene/
    spatialvc convert  --config run.json --out scene/ --vc gain:0.8
    spatialvc remix    --config run.json --out scene/ --remix steering
    spatialvc eval     --config run.json --out scene/

``run`` does all of the above in one go and ``grid`` repeats it over
reflection coefficients.
"""

from __future__ import annotations

import argparse
import json
import logging
import sys
from dataclasses import replace
from pathlib import Path

import numpy as np

from . import bss, pipeline
from .room_sim import SourceProgram
from .signal_core import WaveBuffer, istft, read_wav, stft, write_wav

log = logging.getLogger("spatialvc")


def _config(args) -> pipeline.RunConfig:
    cfg = pipeline.RunConfig.load(args.config) if args.config else pipeline.RunConfig()
    changes = {}
    if getattr(args, "remix", None):
        changes["remix"] = args.remix
    if getattr(args, "vc", None):
        changes["vc"] = args.vc
    if getattr(args, "seed", None) is not None:
        changes["seed"] = args.seed
    if getattr(args, "out", None):
        changes["output_dir"] = args.out
    return replace(cfg, **changes) if changes else cfg


def _program_from_dir(out: Path, cfg) -> tuple[SourceProgram, list]:
    meta = json.loads((out / "program.json").read_text())
    sigs = [read_wav(out / name, cfg.sample_rate).samples[0] for name in meta["files"]]
    return SourceProgram(tuple(sigs), tuple(meta["offsets"]), cfg.sample_rate), meta["labels"]


def cmd_simulate(args):
    cfg = _config(args)
    out = Path(cfg.output_dir)
    sim = pipeline.simulate(cfg)
    write_wav(out / "observation.wav", sim.observation)
    if sim.program is not None:
        files = ["target_dry.wav", "nontarget_dry.wav"]
        for name, sig in zip(files, sim.program.signals):
            write_wav(out / name, WaveBuffer(sig, cfg.sample_rate))
        (out / "program.json").write_text(json.dumps({
            "files": files, "offsets": list(sim.program.offsets),
            "labels": list(sim.labels)}, indent=2))
    if sim.rirs is not None:
        sim.rirs.write(out / "rirs.wav")
    return 0


def cmd_separate(args):
    cfg = _config(args)
    out = Path(cfg.output_dir)
    obs = read_wav(out / "observation.wav", cfg.sample_rate)
    Y, state, separated = pipeline.separate(obs, cfg)
    bss.save_demix(out / "demix.bin", state, cfg.stft, cfg.sample_rate)
    seps = istft(separated, Y.length)
    for i in range(seps.n_channels):
        write_wav(out / f"separated_{i + 1}.wav", seps.channel(i))
    return 0


def cmd_convert(args):
    cfg = _config(args)
    out = Path(cfg.output_dir)
    src = read_wav(out / "separated_1.wav", cfg.sample_rate)
    write_wav(out / "vc_output.wav", pipeline.convert(src, cfg))
    return 0


def _separated_from_dir(out: Path, cfg):
    obs = read_wav(out / "observation.wav", cfg.sample_rate)
    state, _ = bss.load_demix(out / "demix.bin")
    Y = stft(obs, cfg.stft)
    return obs, state, bss.apply_demix(state.W, Y)


def cmd_remix(args):
    cfg = _config(args)
    out = Path(cfg.output_dir)
    _, state, separated = _separated_from_dir(out, cfg)
    vc_out = read_wav(out / "vc_output.wav", cfg.sample_rate)
    waves = pipeline.remix_waves(state, separated, vc_out, cfg, strategies=(cfg.remix,))
    write_wav(out / "remixed.wav", waves[cfg.remix])
    write_wav(out / f"remixed_{cfg.remix}.wav", waves[cfg.remix])
    return 0


def cmd_eval(args):
    cfg = _config(args)
    out = Path(cfg.output_dir)
    obs, state, separated = _separated_from_dir(out, cfg)
    program, labels = _program_from_dir(out, cfg)
    from .room_sim import simulate_rirs
    sim = pipeline.Simulation(program, simulate_rirs(cfg.scene, cfg.sample_rate), obs,
                              tuple(labels))
    remixed = {s: read_wav(out / f"remixed_{s}.wav", cfg.sample_rate)
               for s in pipeline.STRATEGIES if (out / f"remixed_{s}.wav").exists()}
    ideal = pipeline.ideal_rendering(sim, cfg)
    write_wav(out / "ideal.wav", ideal)
    metrics = pipeline.evaluate(sim, separated, remixed, ideal, cfg)
    report = {"status": "ok", "config": cfg.to_dict(), "labels": list(labels), **metrics}
    (out / "report.json").write_text(json.dumps(report, indent=2, sort_keys=True))
    _print_scene(report)
    return 0


def _print_scene(report):
    for s, v in report.get("ldd", {}).items():
        print(f"LDD(Ideal -> {s}): {v:.4f}")
    if report.get("si_sdr_db") is not None:
        print("SI-SDR (dB): " + ", ".join(f"{x:.2f}" for x in report["si_sdr_db"]))
        print(f"SI-SDR improvement (dB): {report['si_sdr_improvement_db']:.2f}")
    if report.get("rt60_s") is not None:
        print(f"RT60 (s): {report['rt60_s']:.3f}")


def cmd_run(args):
    cfg = _config(args)
    report = pipeline.run_scene(cfg)
    _print_scene(report)
    return 0


def cmd_grid(args):
    cfg = _config(args)
    kw = {}
    if args.grid:
        kw = json.loads(Path(args.grid).read_text())
        if "reflection_coeffs" in kw:
            kw["reflection_coeffs"] = tuple(kw["reflection_coeffs"])
    if args.r:
        kw["reflection_coeffs"] = tuple(args.r)
    if args.scenes:
        kw["scenes_per_cell"] = args.scenes
    if args.manifest:
        kw["manifest"] = args.manifest
    grid = pipeline.GridSpec(**kw)
    result = pipeline.run_grid(grid, cfg, workers=args.workers,
                               write_scenes=not args.no_scene_files)
    print(result["table"])
    failed = [s for s in result["scenes"] if s["status"] != "ok"]
    if failed:
        print(f"{len(failed)} scene(s) failed", file=sys.stderr)
    return 0


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="spatialvc", description=__doc__.split("\n")[0])
    p.add_argument("-v", "--verbose", action="store_true")
    sub = p.add_subparsers(dest="command", required=True)

    def common(sp):
        sp.add_argument("--config", help="JSON run configuration")
        sp.add_argument("--out", help="output directory")
        sp.add_argument("--seed", type=int)
        return sp

    common(sub.add_parser("simulate", help="render the microphone observation")).set_defaults(fn=cmd_simulate)
    common(sub.add_parser("separate", help="GC-IVA + projection back")).set_defaults(fn=cmd_separate)
    sp = common(sub.add_parser("convert", help="voice-convert the target estimate"))
    sp.add_argument("--vc", help="identity | gain:<x> | cmd:<template>")
    sp.set_defaults(fn=cmd_convert)
    sp = common(sub.add_parser("remix", help="rebuild the multi-channel output"))
    sp.add_argument("--remix", choices=pipeline.STRATEGIES)
    sp.set_defaults(fn=cmd_remix)
    sp = common(sub.add_parser("eval", help="score remixed outputs against the ideal"))
    sp.add_argument("--vc", help="backend used for the ideal rendering")
    sp.set_defaults(fn=cmd_eval)
    for name, fn in (("run", cmd_run), ("grid", cmd_grid)):
        sp = common(sub.add_parser(name))
        sp.add_argument("--remix", choices=pipeline.STRATEGIES)
        sp.add_argument("--vc", help="identity | gain:<x> | cmd:<template>")
        sp.set_defaults(fn=fn)
        if name == "grid":
            sp.add_argument("--grid", help="JSON grid spec")
            sp.add_argument("--r", type=float, nargs="+", help="reflection coefficients")
            sp.add_argument("--scenes", type=int, help="scenes per cell")
            sp.add_argument("--manifest", help="corpus manifest CSV")
            sp.add_argument("--workers", type=int, default=1)
            sp.add_argument("--no-scene-files", action="store_true",
                            help="keep only grid-level outputs")
    return p


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        return args.fn(args)
    except pipeline.StageError as exc:
        print(f"error: stage={exc.stage}: {exc.detail}", file=sys.stderr)
        return 2
    except (OSError, ValueError) as exc:
        print(f"error: stage=setup: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
