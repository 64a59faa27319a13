"""``mhdaq`` command line: simulate, characterize, replay, dump.

Exit status: 0 success, 1 invalid arguments or configuration, 2 runtime
failure.
"""
from __future__ import annotations

import argparse
import os
import sys

from . import adc_analysis
from .errors import ArgInvalid, ConfigInvalid, DaqError
from .presets import PRESETS
from .scenario import ScenarioConfig, run_scenario
from .signal_model import AdcSpec, coherent_tone, full_scale_tone
from .storage import CoincidenceWindow, dump_lines, read_run, replay_merge, write_run


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise ArgInvalid(message)


def _build_parser():
    p = _Parser(prog="mhdaq", description="Multi-host DAQ front-end simulator and ADC tools")
    sub = p.add_subparsers(dest="command", required=True, parser_class=_Parser)

    s = sub.add_parser("simulate", help="run a scenario file")
    s.add_argument("--config", required=True)
    s.add_argument("--seed", type=int, help="override the config's master seed")
    s.add_argument("--out", required=True, help="output directory")

    c = sub.add_parser("characterize", help="ENOB of an ADC model")
    c.add_argument("--preset", choices=sorted(PRESETS))
    c.add_argument("--bits", type=int)
    c.add_argument("--fs", type=float, help="sampling rate [Hz]")
    c.add_argument("--noise", type=float, help="input noise [V rms]")
    c.add_argument("--full-scale", type=float, default=1.0, help="peak input [V]")
    c.add_argument("--target-enob", type=float, help="calibrate noise to this ENOB first")
    c.add_argument("--level", default="auto",
                   help="tone level as a fraction of full scale, 'full', or 'auto' "
                        "(full scale when noise is 0, else 0.95)")
    c.add_argument("--records", type=int, default=16)
    c.add_argument("--samples", type=int, default=1 << 14)
    c.add_argument("--seed", type=int, default=0)
    c.add_argument("--out", help="directory for enob.txt and enob.csv")

    r = sub.add_parser("replay", help="merge run files by timestamp")
    r.add_argument("--window-ticks", type=int, default=100)
    r.add_argument("--source-ports", help="comma-separated trigger ports (default: all)")
    r.add_argument("--out", required=True, help="event file to write")
    r.add_argument("inputs", nargs="*")

    d = sub.add_parser("dump", help="print one line per record")
    d.add_argument("file")
    return p


def cmd_simulate(args, out=sys.stdout):
    cfg = ScenarioConfig.from_file(args.config)
    if args.seed is not None:
        cfg.seed = args.seed
        cfg.validate()
    report = run_scenario(cfg, args.out)
    out.write(report.to_text())
    out.write(f"wall time           : {report.wall_s:.2f} s\n")
    return report


def _characterize_spec(args):
    if args.preset:
        preset = PRESETS[args.preset]
        spec = preset.spec
        refs = {"measured ref.": preset.target_enob,
                "datasheet": preset.datasheet_enob}
        if args.noise is not None:
            spec = spec.with_noise(args.noise)
        return spec, refs
    if args.bits is None or args.fs is None:
        raise ArgInvalid("give --preset, or --bits and --fs")
    if args.noise is None and args.target_enob is None:
        raise ArgInvalid("give --noise or --target-enob")
    try:
        spec = AdcSpec(args.bits, args.fs, args.full_scale, args.noise or 0.0)
    except ValueError as exc:
        raise ArgInvalid(str(exc)) from None
    return spec, {}


def cmd_characterize(args, out=sys.stdout):
    if args.records < 1 or args.samples < 16:
        raise ArgInvalid("--records must be >= 1 and --samples >= 16")
    spec, refs = _characterize_spec(args)
    if args.level == "auto":
        quiet = spec.noise_rms_v == 0 and args.target_enob is None
        tone = full_scale_tone(spec, args.samples) if quiet else coherent_tone(spec, args.samples)
    elif args.level == "full":
        tone = full_scale_tone(spec, args.samples)
    else:
        try:
            level = float(args.level)
        except ValueError:
            raise ArgInvalid(f"--level: {args.level!r}") from None
        if not 0 < level <= 1:
            raise ArgInvalid("--level must be in (0, 1]")
        tone = coherent_tone(spec, args.samples, level=level)
    if args.target_enob is not None:
        sigma = adc_analysis.calibrate_noise(spec.with_noise(0.0), tone, args.target_enob,
                                             0.01, args.records, args.samples, args.seed)
        spec = spec.with_noise(sigma)
    report = adc_analysis.characterize(spec, tone, args.records, args.samples, args.seed)
    table = adc_analysis.format_table(report, refs)
    out.write(table)
    if args.out:
        os.makedirs(args.out, exist_ok=True)
        with open(os.path.join(args.out, "enob.txt"), "w", encoding="utf-8") as f:
            f.write(table)
        with open(os.path.join(args.out, "enob.csv"), "w", encoding="utf-8") as f:
            f.write(adc_analysis.to_csv(report))
    return report


def cmd_replay(args, out=sys.stdout):
    if not args.inputs:
        raise ArgInvalid("replay needs at least one input file")
    if args.window_ticks < 1:
        raise ArgInvalid("--window-ticks must be >= 1")
    sources = None
    if args.source_ports:
        try:
            sources = {int(x) for x in args.source_ports.split(",") if x.strip()}
        except ValueError:
            raise ArgInvalid(f"--source-ports: {args.source_ports!r}") from None
    runs = []
    for path in args.inputs:
        try:
            runs.append(read_run(path))
        except DaqError as exc:
            raise type(exc)(f"{path}: {exc}") from exc
        except OSError as exc:
            raise DaqError(f"{path}: {exc}") from exc
    result = replay_merge(runs, CoincidenceWindow(args.window_ticks), sources)
    run_id = runs[0].header.run_id
    write_run(args.out, result.events, run_id=run_id, frontend_id=0,
              epoch_ns=runs[0].header.epoch_ns)
    multi = sum(1 for e in result.events if len(e.fragments) > 1)
    out.write(f"inputs              : {len(runs)} file(s)\n")
    out.write(f"window              : +/-{args.window_ticks} ticks\n")
    out.write(f"events              : {len(result.events)} ({multi} with >1 front-end)\n")
    out.write(f"unmatched fragments : {len(result.unmatched)}\n")
    return result


def cmd_dump(args, out=sys.stdout):
    for line in dump_lines(read_run(args.file)):
        out.write(line + "\n")


def main(argv=None, out=sys.stdout) -> int:
    try:
        args = _build_parser().parse_args(argv)
        {"simulate": cmd_simulate, "characterize": cmd_characterize,
         "replay": cmd_replay, "dump": cmd_dump}[args.command](args, out)
    except (ArgInvalid, ConfigInvalid) as exc:
        print(f"mhdaq: error: {exc}", file=sys.stderr)
        return 1
    except (DaqError, OSError) as exc:
        print(f"mhdaq: {type(exc).__name__}: {exc}", file=sys.stderr)
        return 2
    return 0


if __name__ == "__main__":
    sys.exit(main())
