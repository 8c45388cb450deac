"""Command-line entry point: ``tinyeegnet <command> [options]``."""

from __future__ import annotations

import argparse
import datetime
import json
import logging
import sys
from fractions import Fraction
from pathlib import Path


from . import __version__
from .arch import (AcquisitionSpec, ArithmeticMode, ConfigError, ReductionSpec, derive_config,
                   feature_counts, flash_bytes, layer_plan, param_count, peak_two_buffer_bytes)
from .bundle import BundleError, describe_header, load_bundle, save_bundle
from .edf import EdfError
from .engine import EngineError, fuse, infer
from .ingest import DEFAULT_EXCLUDE, TASK_CLASSES, IngestError, build_dataset, read_header, read_manifest, read_windows
from .montage import MontageError
from .profile import (ProfileError, estimate_energy, estimate_runtime, get_profile,
                      load_accuracy_table, load_platforms, macc_count, sweep)
from .reduction import ReductionError

log = logging.getLogger("tinyeegnet")

ERRORS = (ConfigError, BundleError, EdfError, EngineError, IngestError, MontageError,
          ProfileError, ReductionError, OSError)


class CliError(Exception):
    pass


def fmt(v) -> str:
    if isinstance(v, Fraction):
        if v.denominator == 1:
            v = int(v)
        else:
            return f"{float(v):,.3f}".rstrip("0").rstrip(".")
    if isinstance(v, float):
        return f"{v:,.2f}"
    return f"{v:,}"


def shape_str(shape) -> str:
    return " x ".join(fmt(s) for s in shape)


def _jsonable(v):
    if isinstance(v, Fraction):
        return int(v) if v.denominator == 1 else float(v)
    return v


def parse_ids(text: str) -> list[int]:
    out = []
    for part in text.split(","):
        part = part.strip()
        if not part or part.lower() == "none":
            continue
        if "-" in part:
            a, b = part.split("-", 1)
            out.extend(range(int(a), int(b) + 1))
        else:
            out.append(int(part))
    return out


def add_config_flags(p):
    g = p.add_argument_group("configuration")
    g.add_argument("--ds", type=int, default=None, help="downsampling factor (default 1)")
    g.add_argument("--subset", default=None,
                   help="channel subset preset or file (all64, reduced38, standard19, headset8)")
    g.add_argument("--window-seconds", type=float, default=None, help="classification window (default 3)")
    g.add_argument("--classes", type=int, default=None, choices=(2, 3, 4), help="class count (default 4)")


def config_from_args(args):
    red = ReductionSpec(args.ds if args.ds is not None else 1,
                        args.subset or "all64",
                        args.window_seconds if args.window_seconds is not None else 3.0)
    return derive_config(AcquisitionSpec(), red, args.classes or 4)


def banner(args, out):
    if not args.no_banner:
        stamp = datetime.datetime.now().isoformat(timespec="seconds")
        print(f"tinyeegnet {__version__}  {stamp}", file=out)


# -- describe ---------------------------------------------------------------

def describe_report(cfg, mode: ArithmeticMode) -> dict:
    plan = layer_plan(cfg, mode)
    params = param_count(cfg, mode)
    feats = feature_counts(cfg, mode)
    return {
        "mode": mode.value,
        "config": {"n_samples": cfg.n_samples, "n_channels": cfg.n_channels,
                   "n_classes": cfg.n_classes, "kernel_length": cfg.kernel_length,
                   "pool_length": cfg.pool_length, "ds": cfg.ds, "window_seconds": cfg.window_seconds,
                   "subset": cfg.subset, "fs_eff": cfg.fs_eff},
        "layers": [{"block": r.block, "name": r.name, "type": r.kind, "n": r.n_out,
                    "padding": r.padding, "kernel": r.kernel, "stride": r.stride,
                    "output_shape": [_jsonable(s) for s in r.output_shape],
                    "params": _jsonable(r.params)} for r in plan],
        "params": {k: _jsonable(v) for k, v in params.parts.items()},
        "params_total": _jsonable(params.total),
        "features": {k: _jsonable(v) for k, v in feats.parts.items()},
        "features_total": _jsonable(feats.total),
        "ram_two_buffer_bytes": peak_two_buffer_bytes(cfg),
        "flash_bytes": flash_bytes(cfg),
    }


def cmd_describe(args, out):
    mode = ArithmeticMode(args.mode or "paper")
    cfg = config_from_args(args)
    rep = describe_report(cfg, mode)
    other = describe_report(cfg, ArithmeticMode.ENGINE if mode is ArithmeticMode.PAPER
                            else ArithmeticMode.PAPER)
    if args.format == "json":
        rep["divergence"] = _divergence(rep, other)
        print(json.dumps(rep, indent=2, sort_keys=True), file=out)
        return
    banner(args, out)
    c = rep["config"]
    print(f"EEGNet  N_s={c['n_samples']}  N_ch={c['n_channels']}  N_cl={c['n_classes']}  "
          f"N_f={c['kernel_length']}  N_p={c['pool_length']}  "
          f"(ds={c['ds']}, subset={c['subset']}, T={c['window_seconds']:g} s)  mode={mode.value}",
          file=out)
    print(f"{'block':<6}{'layer':<13}{'n':>4} {'pad':<6}{'kernel':<10}{'stride':<9}"
          f"{'params':>9}  output (time x ch x filt)", file=out)
    for r in layer_plan(cfg, mode):
        kern = "x".join(map(str, r.kernel)) if r.kernel else "-"
        stride = "x".join(map(str, r.stride)) if r.stride else "-"
        print(f"{r.block:<6}{r.kind:<13}{(r.n_out or '-'):>4} {(r.padding or '-'):<6}{kern:<10}"
              f"{stride:<9}{fmt(r.params) if r.params else '-':>9}  {shape_str(r.output_shape)}",
              file=out)
    print(f"parameters total: {fmt(rep['params_total'])}", file=out)
    feats = " / ".join(f"{k} {fmt(_as_num(v))}" for k, v in rep["features"].items())
    print(f"feature maps: {feats}", file=out)
    print(f"feature total (incl. input): {fmt(_as_num(rep['features_total']))}", file=out)
    ram = rep["ram_two_buffer_bytes"]
    print(f"RAM (two consecutive maps, float32): {fmt(ram)} B ({ram / 1024:.2f} KiB)", file=out)
    fl = rep["flash_bytes"]
    print(f"flash (engine parameters, float32): {fmt(fl)} B ({fl / 1024:.2f} KiB)", file=out)
    for line in _divergence(rep, other):
        print(f"note: {line}", file=out)


def _as_num(v):
    return Fraction(v).limit_denominator(1000) if isinstance(v, float) else v


def _divergence(rep, other) -> list[str]:
    lines = []
    for key in ("params_total", "features_total"):
        if rep[key] != other[key]:
            lines.append(f"{key} is {fmt(_as_num(rep[key]))} in {rep['mode']} mode, "
                         f"{fmt(_as_num(other[key]))} in {other['mode']} mode")
    for k in rep["features"]:
        if rep["features"][k] != other["features"][k]:
            lines.append(f"{k} features: {fmt(_as_num(rep['features'][k]))} ({rep['mode']}) vs "
                         f"{fmt(_as_num(other['features'][k]))} ({other['mode']})")
    return lines


# -- ingest -----------------------------------------------------------------

def cmd_ingest(args, out):
    subjects = parse_ids(args.subjects)
    exclude = DEFAULT_EXCLUDE if args.exclude is None else parse_ids(args.exclude)
    red = ReductionSpec(args.ds or 1, args.subset or "all64",
                        args.window_seconds if args.window_seconds is not None else 3.0)
    n_cl = args.classes or 4
    derive_config(AcquisitionSpec(), red, n_cl)  # validate before touching files
    manifest, windows = build_dataset(subjects, n_cl, red, input_dir=args.input_dir,
                                      exclude=exclude, out_prefix=args.out, jobs=args.jobs)
    banner(args, out)
    shape = "x".join(map(str, manifest.shape)) if manifest.shape else "-"
    print(f"windows: {len(manifest.rows)}  shape (channels x samples): {shape}", file=out)
    for c, n in manifest.counts.items():
        print(f"class {c}: {n}", file=out)
    for f in manifest.flags:
        print(f"flag: {f}", file=out)
    print(f"wrote {Path(args.out).with_suffix('.csv')} and {Path(args.out).with_suffix('.bin')}",
          file=out)


# -- infer ------------------------------------------------------------------

def _read_labels(path):
    p = Path(path)
    if p.suffix == ".csv":
        return [row["label"] for row in read_manifest(p)]
    return [ln.strip() for ln in p.read_text().splitlines() if ln.strip()]


def cmd_infer(args, out):
    weights, cfg = load_bundle(args.weights, fold_bn=True)
    count, rows, cols = read_header(args.windows)
    if (rows, cols) != (cfg.n_channels, cfg.n_samples):
        raise CliError(f"window file holds {rows}x{cols} windows, bundle expects "
                       f"{cfg.n_channels}x{cfg.n_samples} (channels x samples)")
    windows = read_windows(args.windows)
    classes = TASK_CLASSES[cfg.n_classes]
    labels = _read_labels(args.labels) if args.labels else None
    if labels is not None and len(labels) != count:
        raise CliError(f"{len(labels)} labels for {count} windows")
    fw = fuse(weights)
    banner(args, out)
    print("index,class,label," + ",".join(f"p_{c}" for c in classes), file=out)
    correct = 0
    for i, w in enumerate(windows):
        p, k = infer(w.T, fw, cfg)
        print(f"{i},{k},{classes[k]}," + ",".join(f"{v:.6f}" for v in p), file=out)
        if labels is not None:
            correct += labels[i] == classes[k] or labels[i] == str(k)
    if labels is not None:
        acc = 100.0 * correct / count if count else 0.0
        print(f"accuracy: {acc:.2f}% ({correct}/{count})", file=out)


# -- estimate ---------------------------------------------------------------

def cmd_estimate(args, out):
    cfg_flags = [args.ds, args.subset, args.window_seconds, args.classes]
    if args.weights and any(v is not None for v in cfg_flags):
        raise UsageError("--weights cannot be combined with configuration flags")
    if args.weights:
        _, cfg = load_bundle(args.weights)
    else:
        cfg = config_from_args(args)
    counts = macc_count(cfg)
    macc = args.macc if args.macc is not None else counts.total
    if macc <= 0:
        raise CliError("MACC count must be positive")
    names = [args.platform] if args.platform != "all" else list(load_platforms(args.platforms))
    banner(args, out)
    print(f"config: N_s={cfg.n_samples} N_ch={cfg.n_channels} N_cl={cfg.n_classes} "
          f"N_f={cfg.kernel_length} N_p={cfg.pool_length} ds={cfg.ds}", file=out)
    for k, v in counts.parts.items():
        print(f"  macc {k:<14}{v:>12,}", file=out)
    print(f"  macc {'total':<14}{counts.total:>12,}", file=out)
    if args.macc is not None:
        print(f"using MACC override: {macc:,}", file=out)
    print(f"{'platform':<10}{'cyc/MACC':>9}{'power mW':>10}{'latency ms':>12}{'energy mJ':>11}", file=out)
    for name in names:
        prof = get_profile(name, macc, args.platforms)
        t = estimate_runtime(macc, prof)
        e = estimate_energy(t, prof)
        print(f"{prof.name:<10}{prof.cycles_per_macc:>9.2f}{prof.power_mw:>10.2f}"
              f"{t * 1e3:>12.2f}{e:>11.2f}", file=out)


# -- plan -------------------------------------------------------------------

def cmd_plan(args, out):
    table = load_accuracy_table(args.accuracy_table)
    res = sweep(table, args.classes or 4, budget=args.budget_bytes)
    banner(args, out)
    front = {p.key for p in res.front}
    print(f"{'ds':>3} {'channels':<12}{'T s':>5}{'N_ch':>5}{'RAM B':>11}{'MACC':>12}{'acc %':>8}  front",
          file=out)
    for p in res.points:
        print(f"{p.ds:>3} {p.channels:<12}{p.window_s:>5g}{p.n_channels:>5}{p.memory_bytes:>11,}"
              f"{p.macc:>12,}{p.accuracy:>8.2f}  {'*' if p.key in front else ''}", file=out)
    if args.budget_bytes is not None:
        s = res.selected
        if s is None:
            print(f"budget {args.budget_bytes:,} B: no configuration fits", file=out)
        else:
            print(f"budget {args.budget_bytes:,} B: selected ds={s.ds} channels={s.channels} "
                  f"({s.n_channels}ch) T={s.window_s:g} s at {s.accuracy:.2f}% "
                  f"with {s.memory_bytes:,} B", file=out)


# -- convert ----------------------------------------------------------------

def cmd_convert(args, out):
    weights, cfg = load_bundle(args.input, fold_bn=args.fold_bn)
    n = save_bundle(weights, cfg, args.output)
    head = describe_header(Path(args.output).read_bytes())
    banner(args, out)
    print(f"wrote {args.output} ({n:,} bytes)", file=out)
    for k in ("version", "n_samples", "n_channels", "n_classes", "kernel_length", "pool_length",
              "ds", "folded"):
        print(f"  {k}: {head[k]}", file=out)
    print(f"  bn_eps: {head['bn_eps']:.6g}", file=out)


class UsageError(Exception):
    pass


def build_parser() -> argparse.ArgumentParser:
    def globals_parser(default):
        g = argparse.ArgumentParser(add_help=False)
        g.add_argument("--mode", choices=("paper", "engine"), default=default,
                       help="arithmetic mode for size reports")
        g.add_argument("--verbose", "-v", action="store_true", default=default)
        g.add_argument("--no-banner", action="store_true", default=default,
                       help="omit the version/timestamp line")
        return g

    # subcommands repeat the global flags without defaults so they never clobber earlier values
    common = globals_parser(argparse.SUPPRESS)
    p = argparse.ArgumentParser(prog="tinyeegnet", parents=[globals_parser(None)],
                                description="EEGNet inference and resource planning for MCUs")
    sub = p.add_subparsers(dest="command", required=True)

    d = sub.add_parser("describe", parents=[common], help="architecture, parameter and memory report")
    add_config_flags(d)
    d.add_argument("--format", choices=("text", "json"), default="text")
    d.set_defaults(func=cmd_describe)

    i = sub.add_parser("ingest", parents=[common], help="build a window dataset from EDF recordings")
    i.add_argument("--input-dir", required=True)
    i.add_argument("--subjects", required=True, help="ids and ranges, e.g. 1-10,12")
    i.add_argument("--exclude", default=None,
                   help=f"subject ids to skip (default {','.join(map(str, DEFAULT_EXCLUDE))}; 'none' for no exclusions)")
    add_config_flags(i)
    i.add_argument("--out", required=True, help="output prefix for .csv manifest and .bin windows")
    i.add_argument("--jobs", type=int, default=1)
    i.set_defaults(func=cmd_ingest)

    f = sub.add_parser("infer", parents=[common], help="classify windows with a weight bundle")
    f.add_argument("--weights", required=True)
    f.add_argument("--windows", required=True)
    f.add_argument("--labels", default=None, help="manifest .csv or text file with one label per line")
    f.set_defaults(func=cmd_infer)

    e = sub.add_parser("estimate", parents=[common], help="MACC, latency and energy estimate")
    e.add_argument("--weights", default=None)
    add_config_flags(e)
    e.add_argument("--platform", default="all", help="platform name or 'all'")
    e.add_argument("--platforms", default=None, help="platform profile JSON file")
    e.add_argument("--macc", type=int, default=None, help="override the counted MACC total")
    e.set_defaults(func=cmd_estimate)

    pl = sub.add_parser("plan", parents=[common], help="accuracy vs RAM sweep and budget pick")
    pl.add_argument("--accuracy-table", default=None)
    pl.add_argument("--budget-bytes", type=int, default=None)
    pl.add_argument("--classes", type=int, default=4, choices=(2, 3, 4))
    pl.set_defaults(func=cmd_plan)

    c = sub.add_parser("convert", parents=[common], help="validate and rewrite a weight bundle")
    c.add_argument("--in", dest="input", required=True)
    c.add_argument("--out", dest="output", required=True)
    c.add_argument("--fold-bn", action="store_true")
    c.set_defaults(func=cmd_convert)
    return p


def main(argv=None, out=None) -> int:
    out = out or sys.stdout
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.DEBUG if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        args.func(args, out)
    except UsageError as exc:
        parser.error(str(exc))
    except (CliError, *ERRORS) as exc:
        log.debug("command failed", exc_info=True)
        print(f"error: {exc}", file=sys.stderr)
        return 1
    return 0


if __name__ == "__main__":
    sys.exit(main())
