"""Command-line front end for the single-photon QRNG pipeline.

Every subcommand reads an optional ``key = value`` config file; ``--set
KEY=VALUE`` and the dedicated flags override it.  Outputs go to ``--out``
and are written atomically.  Exit codes: 0 success, 2 invalid input or
configuration, 3 unreadable, unwritable or malformed file, 4 statistical
failure (battery failed, or the g2 fit did not converge).
"""

from __future__ import annotations

import argparse
import csv
import io
import json
import sys
from pathlib import Path

import numpy as np

from . import config as cfg
from .correlate import AntibunchFit, G2Curve, fit_antibunching, histogram_coincidences
from .errors import ConfigError, FitError, FormatError
from .extract import BitStream, debias_cascade, encode_bits, encode_qbit, read_bits
from .photon_sim import expected_signal_rates, simulate_scene
from .randtests import run_battery
from .timetags import Detector, TimeTags, atomic_write, encode_ptag, encode_tags_csv, read_tags

EXIT_OK, EXIT_INVALID, EXIT_IO, EXIT_STATISTICAL = 0, 2, 3, 4

SIDECAR = "simulate.json"
RATES = "rates"
BATTERY = "battery"
SUMMARY = "summary"
_TAG_EXT = {"bin": ".ptag", "csv": ".csv", "json": ".json"}
_BIT_EXT = {"bin": ".qbit", "csv": ".csv", "json": ".json"}

# dedicated flag -> config key
_FLAG_KEYS = {
    "seed": "seed",
    "preset": "preset",
    "duration_ns": "duration_ns",
    "prob_reflection": "split.prob_reflection",
    "reflection_hbt_split": "reflection_hbt_split",
    "bin_width_ns": "correlation.bin_width_ns",
    "max_lag_ns": "correlation.max_lag_ns",
    "alpha": "tests.alpha",
}


def _json(obj) -> bytes:
    return (json.dumps(obj, indent=2, sort_keys=True) + "\n").encode()


def _rows_csv(header, rows) -> bytes:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(header)
    w.writerows(rows)
    return buf.getvalue().encode()


def _log(msg):
    print(msg, file=sys.stderr)


# ---------------------------------------------------------------- file forms


def dump_tags(tags: TimeTags, fmt: str) -> bytes:
    if fmt == "bin":
        return encode_ptag(tags)
    if fmt == "csv":
        return encode_tags_csv(tags)
    names = np.array([d.name for d in Detector])
    return _json({"timestamp_ps": tags.timestamp_ps.tolist(), "detector": names[tags.detector].tolist()})


def load_tags(path) -> TimeTags:
    data = Path(path).read_bytes()
    if data[:1] != b"{":
        return read_tags(path)
    try:
        obj = json.loads(data)
        det = np.array([int(Detector.parse(d)) for d in obj["detector"]], dtype=np.uint8)
        tags = TimeTags(np.array(obj["timestamp_ps"], dtype=np.int64), det)
    except json.JSONDecodeError as exc:
        raise FormatError(f"invalid JSON tag file: {exc.msg}", exc.pos) from None
    except (KeyError, TypeError, ValueError) as exc:
        raise FormatError(f"JSON tag file needs 'timestamp_ps' and 'detector' lists ({exc})", 0) from None
    if not tags.is_sorted():
        raise FormatError("JSON time tags are not sorted by timestamp", 0)
    return tags


def dump_bits(bits: BitStream, fmt: str) -> bytes:
    if fmt == "bin":
        return encode_qbit(bits)
    if fmt == "csv":
        return (str(bits) + "\n").encode()
    return _json({"origin": bits.origin, "length_bits": bits.length_bits, "bits": str(bits)})


def load_bits(path, origin="raw") -> BitStream:
    data = Path(path).read_bytes()
    if data[:1] != b"{":
        return read_bits(path, origin)
    try:
        obj = json.loads(data)
        bits = BitStream.from_string(obj["bits"], obj.get("origin", origin))
    except json.JSONDecodeError as exc:
        raise FormatError(f"invalid JSON bit file: {exc.msg}", exc.pos) from None
    except (KeyError, TypeError, ValueError) as exc:
        raise FormatError(f"JSON bit file needs a 'bits' string of 0/1 ({exc})", 0) from None
    if obj.get("length_bits", bits.length_bits) != bits.length_bits:
        raise FormatError("JSON bit file: length_bits does not match the bit string", 0)
    return bits


# ---------------------------------------------------------------- steps


def _duration_ns(kv: dict, tags_path):
    """Acquisition time: config value, else the simulate sidecar next to the tags."""
    if "duration_ns" in kv:
        return cfg._num("duration_ns", kv["duration_ns"])
    side = Path(tags_path).parent / SIDECAR
    if side.exists():
        try:
            return float(json.loads(side.read_text())["duration_ns"])
        except (ValueError, KeyError) as exc:
            raise FormatError(f"{side}: unreadable sidecar ({exc})", 0) from None
    return None


def step_simulate(kv: dict, out: Path, fmt: str) -> Path:
    pipe = cfg.build_pipeline(kv)
    scene = pipe.scene
    tags = simulate_scene(scene)
    counts = tags.counts()
    duration_s = scene.duration_ns * 1e-9
    names = [d.name for d in Detector]
    per_second = []
    n_windows = max(1, int(np.ceil(duration_s - 1e-12)))
    window = np.minimum(tags.timestamp_ps // 10**12, n_windows - 1)
    for s in range(n_windows):
        sel = tags.detector[window == s]
        length = min(1.0, duration_s - s)
        c = np.bincount(sel, minlength=len(names))
        row = {"second": s, "window_s": length, "total": int(c.sum())}
        row.update({n: int(c[i]) for i, n in enumerate(names)})
        row["total_rate_per_s"] = c.sum() / length
        per_second.append(row)
    total = len(tags)
    sidecar = {
        "tags_file": "tags" + _TAG_EXT[fmt],
        "seed": int(scene.seed),
        "duration_ns": float(scene.duration_ns),
        "counts": {**counts, "total": total},
        "rates_per_s": {**{n: counts[n] / duration_s for n in names}, "total": total / duration_s},
        "transmission_share": counts["T1"] / total if total else None,
        "expected_signal_rates_per_s": {d.name: r * 1e9 for d, r in sorted(expected_signal_rates(scene).items())},
        "per_second": per_second,
        "scene": cfg.scene_to_kv(scene),
    }
    path = out / sidecar["tags_file"]
    atomic_write(path, dump_tags(tags, fmt))
    atomic_write(out / SIDECAR, _json(sidecar))
    _log(f"wrote {path} ({total} tags, {total / duration_s:.0f} /s)")
    return path


def step_g2(tags_path, kv: dict, out: Path, pairs=None) -> dict:
    opts = cfg.correlation_options(kv)
    pairs = pairs or opts["pairs"]
    tags = load_tags(tags_path)
    duration = _duration_ns(kv, tags_path)
    fits = {}
    for a, b in pairs:
        sa, sb = tags.channel(Detector[a]), tags.channel(Detector[b])
        for name, s in ((a, sa), (b, sb)):
            if s.size == 0:
                raise ConfigError(f"pair {a}x{b}: channel {name} has no events in {tags_path}")
        if a == b:
            raise ConfigError(f"pair {a}x{b}: a detector cannot be correlated with itself here (dead time)")
        curve = histogram_coincidences(sa, sb, opts["bin_width_ns"], opts["max_lag_ns"], duration)
        fit = fit_antibunching(curve)
        tag = f"{a}x{b}"
        atomic_write(out / f"g2_{tag}.csv", curve.to_csv().encode())
        atomic_write(out / f"fit_{tag}.json", fit.to_json().encode())
        fits[tag] = fit
        _log(f"{tag}: g2(0) = {fit.g2_at_zero:.4f}, tau0 = {fit.tau0_ns:.4f} ns" + (f"  flags: {','.join(fit.flags)}" if fit.flags else ""))
    return fits


def step_extract(tags_path, kv: dict, out: Path, fmt: str):
    rule = cfg.encoding_rule(kv)
    tags = load_tags(tags_path)
    duration = _duration_ns(kv, tags_path)
    raw = encode_bits(tags, rule)
    stage1, unbiased, report = debias_cascade(raw, None if duration is None else duration * 1e-9)
    for bits in (raw, stage1, unbiased):
        atomic_write(out / (bits.origin + _BIT_EXT[fmt]), dump_bits(bits, fmt))
    d = report.to_dict()
    d["encoding"] = rule.to_dict()
    atomic_write(out / f"{RATES}.json", _json(d))
    rates = report.rates_bps()
    atomic_write(
        out / f"{RATES}.csv",
        _rows_csv(
            ["stage", "bits", "rate_bps"],
            [[k, getattr(report, f"{k}_bits"), repr(rates[k]) if rates else ""] for k in ("raw", "stage1", "unbiased")],
        ),
    )
    _log(f"raw {raw.length_bits} -> stage1 {stage1.length_bits} -> unbiased {unbiased.length_bits} bits")
    return out / ("unbiased" + _BIT_EXT[fmt])


def step_test(bits_path, kv: dict, out: Path, workers: int = 1):
    params = cfg.test_params(kv)
    bits = load_bits(bits_path)
    report = run_battery(bits, params, workers=workers)
    atomic_write(out / f"{BATTERY}.json", report.to_json().encode())
    atomic_write(out / f"{BATTERY}.csv", report.to_csv().encode())
    for r in report.results:
        status = "skip" if not r.executed else ("pass" if r.passed else "FAIL")
        p = "" if not r.executed else f"{r.min_p_value:.6f}"
        _log(f"  {r.name:28s} {status:5s} {p}")
    _log(f"battery on {report.length_bits} bits: {'passed' if report.passed else 'FAILED'}")
    return report


def _read_json(path):
    try:
        return json.loads(Path(path).read_text())
    except json.JSONDecodeError as exc:
        raise FormatError(f"{path}: invalid JSON ({exc.msg})", exc.pos) from None


def _load_curve(path) -> G2Curve:
    rows = np.loadtxt(path, delimiter=",", skiprows=1, ndmin=2)
    lags, counts, g = rows[:, 0], rows[:, 1].astype(np.int64), rows[:, 2]
    width = float(lags[1] - lags[0]) if lags.size > 1 else 1.0
    return G2Curve(width, lags, counts, g, float("nan"), float("nan"), float("nan"))


def step_report(run: Path) -> dict:
    """Consolidate a run directory into summary.json / summary.csv and figures."""
    from .plotting import plot_battery, plot_g2

    if not run.is_dir():
        raise FileNotFoundError(f"run directory {run} does not exist")
    summary = {}
    rows = []
    side = run / SIDECAR
    if side.exists():
        sim = _read_json(side)
        summary["simulation"] = {k: sim[k] for k in ("seed", "duration_ns", "counts", "rates_per_s", "transmission_share")}
        for k, v in sim["rates_per_s"].items():
            rows.append(["simulation", f"rate_per_s.{k}", repr(v)])
        rows.append(["simulation", "transmission_share", repr(sim["transmission_share"])])
    fits = {}
    for path in sorted(run.glob("fit_*.json")):
        tag = path.stem[4:]
        fit = _read_json(path)
        fits[tag] = fit
        for k in ("g2_at_zero", "tau0_ns", "residual_rms"):
            rows.append(["correlation", f"{tag}.{k}", repr(fit[k])])
        rows.append(["correlation", f"{tag}.flags", ";".join(fit["flags"])])
        curve_path = run / f"g2_{tag}.csv"
        if curve_path.exists():
            curve = _load_curve(curve_path)
            f = AntibunchFit(fit["a"], fit["tau0_ns"], fit["residual_rms"], (fit["std_errors"]["a"], fit["std_errors"]["tau0_ns"]))
            plot_g2(curve, f, run / f"g2_{tag}.png", title=tag)
    if fits:
        summary["correlation"] = fits
    if (run / f"{RATES}.json").exists():
        rates = _read_json(run / f"{RATES}.json")
        summary["extraction"] = rates
        for k, v in rates["lengths"].items():
            rows.append(["extraction", f"bits.{k}", str(v)])
        for k, v in rates["retention"].items():
            rows.append(["extraction", f"retention.{k}", "" if v is None else repr(v)])
        rows.append(["extraction", "hardware_reference.retention", repr(rates["hardware_reference"]["retention"])])
    if (run / f"{BATTERY}.json").exists():
        bat = _read_json(run / f"{BATTERY}.json")
        failures = [t["name"] for t in bat["tests"] if t["skipped"] is None and not t["passed"]]
        summary["battery"] = {k: bat[k] for k in ("alpha", "length_bits", "passed", "executed", "skipped")}
        summary["battery"]["failures"] = failures
        for t in bat["tests"]:
            status = "skipped" if t["skipped"] is not None else ("pass" if t["passed"] else "fail")
            rows.append(["battery", t["name"], status])
        rows.append(["battery", "passed", str(bat["passed"])])
        plot_battery(bat, run / f"{BATTERY}.png", title=f"{bat['length_bits']} bits")
    if not summary:
        raise FileNotFoundError(f"{run} contains no run outputs to report on")
    atomic_write(run / f"{SUMMARY}.json", _json(summary))
    atomic_write(run / f"{SUMMARY}.csv", _rows_csv(["section", "key", "value"], rows))
    _log(f"wrote {run / SUMMARY}.json")
    return summary


# ---------------------------------------------------------------- argparse


def _resolve(args) -> dict:
    kv = cfg.read_kv(args.config) if args.config else {}
    for item in args.set:
        if "=" not in item:
            raise ConfigError(f"--set expects KEY=VALUE, got {item!r}")
        k, v = (s.strip() for s in item.split("=", 1))
        kv[k] = v
    for flag, key in _FLAG_KEYS.items():
        value = getattr(args, flag, None)
        if value is not None:
            kv[key] = str(value)
    if getattr(args, "pair", None):
        kv["correlation.pairs"] = ",".join(args.pair)
    if getattr(args, "all_templates", False):
        kv["tests.nonoverlapping_all_templates"] = "true"
    cfg.check_keys(kv)
    return kv


def _out(args, kv) -> Path:
    return Path(args.out or kv.get("output.directory", "run"))


def _fmt(args, kv) -> str:
    fmt = args.format or kv.get("output.format", "bin")
    if fmt not in cfg.FORMATS:
        raise ConfigError(f"output.format must be one of {cfg.FORMATS}")
    return fmt


def cmd_simulate(args) -> int:
    kv = _resolve(args)
    step_simulate(kv, _out(args, kv), _fmt(args, kv))
    return EXIT_OK


def cmd_g2(args) -> int:
    kv = _resolve(args)
    step_g2(args.tags, kv, _out(args, kv))
    return EXIT_OK


def cmd_extract(args) -> int:
    kv = _resolve(args)
    step_extract(args.tags, kv, _out(args, kv), _fmt(args, kv))
    return EXIT_OK


def cmd_test(args) -> int:
    kv = _resolve(args)
    report = step_test(args.bits, kv, _out(args, kv), args.workers)
    return EXIT_OK if report.passed else EXIT_STATISTICAL


def cmd_report(args) -> int:
    summary = step_report(Path(args.run))
    bat = summary.get("battery")
    return EXIT_STATISTICAL if bat is not None and not bat["passed"] else EXIT_OK


def cmd_pipeline(args) -> int:
    kv = _resolve(args)
    out, fmt = _out(args, kv), _fmt(args, kv)
    cfg.build_pipeline(kv)  # validate everything before any file is written
    tags_path = step_simulate(kv, out, fmt)
    step_g2(tags_path, kv, out)
    bits_path = step_extract(tags_path, kv, out, fmt)
    report = step_test(bits_path, kv, out, args.workers)
    step_report(out)
    return EXIT_OK if report.passed else EXIT_STATISTICAL


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    g = common.add_argument_group("common")
    g.add_argument("--config", help="key = value configuration file")
    g.add_argument("--set", action="append", default=[], metavar="KEY=VALUE", help="override a config key (repeatable)")
    g.add_argument("--seed", type=lambda s: str(int(s, 0)), help="simulation seed (required for simulate/pipeline)")
    g.add_argument("--out", help="output directory (default: output.directory or ./run)")
    g.add_argument("--format", choices=cfg.FORMATS, help="encoding of tag and bit files (default bin)")
    s = common.add_argument_group("scene")
    s.add_argument("--preset", choices=sorted(cfg.PRESETS))
    s.add_argument("--duration-ns", type=float)
    s.add_argument("--prob-reflection", type=float)
    s.add_argument("--reflection-hbt-split", type=float)
    c = common.add_argument_group("correlation")
    c.add_argument("--pair", action="append", help="detector pair such as R1xT1 (repeatable)")
    c.add_argument("--bin-width-ns", type=float)
    c.add_argument("--max-lag-ns", type=float)
    t = common.add_argument_group("tests")
    t.add_argument("--alpha", type=float)
    t.add_argument("--all-templates", action="store_true", help="non-overlapping template test over all aperiodic 9-bit templates")
    t.add_argument("--workers", type=int, default=1, help="threads for the battery")

    p = argparse.ArgumentParser(prog="dipole-qrng", description=__doc__.splitlines()[0])
    sub = p.add_subparsers(dest="command", required=True)
    sp = sub.add_parser("simulate", parents=[common], help="simulate a scene and write time tags plus a JSON sidecar")
    sp.set_defaults(func=cmd_simulate)
    sp = sub.add_parser("g2", parents=[common], help="coincidence histogram and antibunching fit")
    sp.add_argument("tags", help="PTAG, CSV or JSON time-tag file")
    sp.set_defaults(func=cmd_g2)
    sp = sub.add_parser("extract", parents=[common], help="encode bits and run the debiasing cascade")
    sp.add_argument("tags")
    sp.set_defaults(func=cmd_extract)
    sp = sub.add_parser("test", parents=[common], help="run the randomness battery on a bit file")
    sp.add_argument("bits", help="QBIT, 0/1 CSV or JSON bit file")
    sp.set_defaults(func=cmd_test)
    sp = sub.add_parser("report", help="consolidate a run directory into summary files and figures")
    sp.add_argument("run")
    sp.set_defaults(func=cmd_report)
    sp = sub.add_parser("pipeline", parents=[common], help="simulate, g2, extract, test and report in one go")
    sp.set_defaults(func=cmd_pipeline)
    return p


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return args.func(args)
    except FitError as exc:
        _log(f"error: {exc}")
        return EXIT_STATISTICAL
    except FormatError as exc:
        _log(f"error: {exc}")
        return EXIT_IO
    except (ConfigError, ValueError) as exc:
        _log(f"error: {exc}")
        return EXIT_INVALID
    except OSError as exc:
        _log(f"error: {exc}")
        return EXIT_IO


if __name__ == "__main__":
    sys.exit(main())
