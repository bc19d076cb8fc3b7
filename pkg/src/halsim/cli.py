"""Command-line entry point: ``halsim <subcommand> [flags]``.

Every subcommand resolves one configuration (built-in defaults, then an
optional JSON file given with ``--config``, then flags), echoes it as
``config.json`` into the output directory and derives all randomness from
the single ``seed`` value.
"""
from __future__ import annotations

import argparse
import copy
import json
import sys
from collections import defaultdict
from pathlib import Path
from typing import Dict, List

import numpy as np

from . import error_model as em
from . import predictors as pr
from . import traces as tr
from .adaptation import AdaptationConfig, DEFAULT_LADDER_KBPS, StreamManifest, make_policy
from .errors import ConfigError, DataError, HalsimError
from .simulator import run_experiment, write_results_csv, write_session_metrics_csv

EXIT_OK, EXIT_USAGE, EXIT_DATA, EXIT_INTERNAL = 0, 1, 2, 3

DEFAULT_SEED = 2015
DEFAULT_POLICIES = ["utility", "oracle", "lowest"]
DEFAULT_MARGINS = [0.7, 0.8, 0.9]

DEFAULTS = {
    "seed": DEFAULT_SEED,
    "traces": None,  # None means the bundled synthetic suite
    "synthetic": {"count": 10, "duration_s": 1800},
    "windows": [1],
    "predictors": ["SMA:1:ar", "SMA:10:hm", "SES:10", "LinExt:10", "HW:10"],
    "horizons": [1, 2, 5, 10],
    "families": list(em.FAMILIES),
    "fit_grid_points": em.FIT_GRID_POINTS,
    "manifest": {"tau_s": 2.0, "ladder_kbps": list(DEFAULT_LADDER_KBPS),
                 "n_segments": 1000, "vbr_cv": 0.1},
    "adaptation": AdaptationConfig().to_dict(),
    "policies": DEFAULT_POLICIES,
    "margins": DEFAULT_MARGINS,
    "confidence_level": 0.9,
    "event_logs": True,
    "out": None,
}


class UsageError(ConfigError):
    pass


class _Parser(argparse.ArgumentParser):
    """argparse exits with status 2 by default; usage problems here exit 1."""

    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(EXIT_USAGE, f"{self.prog}: error: {message}\n")


# --------------------------------------------------------------------------
# configuration
# --------------------------------------------------------------------------

def _merge(base, override, path=""):
    out = copy.deepcopy(base)
    for k, v in override.items():
        if k not in base:
            raise ConfigError(f"unknown configuration key {path + k!r}")
        if isinstance(base[k], dict) and isinstance(v, dict) and k != "manifest":
            out[k] = _merge(base[k], v, path + k + ".")
        else:
            out[k] = v
    return out


def _csv_list(text, cast=str):
    items = [s for s in text.replace(" ", "").split(",") if s]
    try:
        return [cast(s) for s in items]
    except ValueError:
        raise UsageError(f"cannot parse list {text!r}") from None


def resolve_config(args) -> dict:
    cfg = copy.deepcopy(DEFAULTS)
    if args.config:
        try:
            user = json.loads(Path(args.config).read_text())
        except OSError as exc:
            raise ConfigError(f"cannot read config: {exc}") from None
        except json.JSONDecodeError as exc:
            raise ConfigError(f"config is not valid JSON: {exc}") from None
        if not isinstance(user, dict):
            raise ConfigError("config must be a JSON object")
        cfg = _merge(cfg, user)
    if args.seed is not None:
        cfg["seed"] = args.seed
    if args.traces:
        cfg["traces"] = list(args.traces)
    if args.horizons:
        cfg["horizons"] = _csv_list(args.horizons, int)
    if args.policies:
        cfg["policies"] = _csv_list(args.policies)
    if args.margins is not None:
        cfg["margins"] = _csv_list(args.margins, float)
    if getattr(args, "predictors", None):
        cfg["predictors"] = _csv_list(args.predictors)
    if getattr(args, "count", None) is not None:
        cfg["synthetic"]["count"] = args.count
    if getattr(args, "duration", None) is not None:
        cfg["synthetic"]["duration_s"] = args.duration
    cfg["out"] = args.out
    _validate(cfg)
    return cfg


def _validate(cfg):
    if not isinstance(cfg["seed"], int) or cfg["seed"] < 0:
        raise ConfigError("seed must be a non-negative integer")
    if not cfg["horizons"] or any(int(h) < 1 for h in cfg["horizons"]):
        raise ConfigError("horizons must be positive integers")
    for m in cfg["margins"]:
        if not 0.0 <= m < 1.0:
            raise ConfigError(f"margin {m} outside [0, 1)")
    for fam in cfg["families"]:
        if fam not in em.FAMILIES:
            raise ConfigError(f"unknown distribution family {fam!r}")
    for spec in cfg["predictors"]:
        try:
            pr.PredictorSpec.parse(spec)
        except ValueError as exc:
            raise ConfigError(str(exc)) from None
    for name in _policy_names(cfg):
        make_policy(name)
    AdaptationConfig.from_dict(cfg["adaptation"])


def _policy_names(cfg) -> List[str]:
    names = list(cfg["policies"])
    fixed = [f"fixed:{m:g}" for m in cfg["margins"]]
    if "utility" in names:
        pos = names.index("utility") + 1
        names[pos:pos] = fixed
    else:
        names = fixed + names
    seen = []
    for n in names:
        if n not in seen:
            seen.append(n)
    return seen


def _out_dir(cfg, default_name) -> Path:
    out = Path(cfg["out"] or default_name)
    out.mkdir(parents=True, exist_ok=True)
    with open(out / "config.json", "w") as fh:
        json.dump(cfg, fh, indent=2, sort_keys=True)
        fh.write("\n")
    return out


# --------------------------------------------------------------------------
# inputs
# --------------------------------------------------------------------------

def load_traces(cfg) -> List[tr.ThroughputTrace]:
    """Trace CSVs, directories of CSVs, synthetic spec JSON files or ``bundled``."""
    entries = cfg["traces"]
    if not entries:
        entries = ["bundled"]
    out = []
    for entry in entries:
        if isinstance(entry, dict):
            out.append(tr.generate_trace(tr.SyntheticTraceSpec.from_dict(entry)))
            continue
        if entry == "bundled":
            syn = cfg["synthetic"]
            specs = tr.bundled_specs(int(syn["count"]), int(syn["duration_s"]), cfg["seed"])
            out.extend(tr.generate_trace(s) for s in specs)
            continue
        path = Path(entry)
        if path.is_dir():
            files = sorted(path.glob("*.csv"))
            if not files:
                raise DataError(f"no trace CSVs in {path}")
            out.extend(_load_one(f) for f in files)
        elif path.suffix == ".json":
            try:
                specs = tr.load_specs_json(path)
            except (OSError, json.JSONDecodeError) as exc:
                raise DataError(f"{path}: {exc}") from None
            out.extend(tr.generate_trace(s) for s in specs)
        else:
            out.append(_load_one(path))
    return out


def _load_one(path):
    try:
        return tr.load_trace(path)
    except OSError as exc:
        raise DataError(f"cannot read trace {path}: {exc}") from None
    except (DataError, ValueError) as exc:
        raise DataError(f"{path}: {exc}") from None


def build_manifest(cfg) -> StreamManifest:
    m = cfg["manifest"]
    if isinstance(m, str):
        try:
            return StreamManifest.load(m)
        except OSError as exc:
            raise DataError(f"cannot read manifest {m}: {exc}") from None
    if "representations" in m:
        return StreamManifest.from_dict(m)
    try:
        rates = np.asarray(m.get("ladder_kbps", DEFAULT_LADDER_KBPS), dtype=float) * 1e3
        return StreamManifest.generate(rates, m.get("psnr_db"), float(m.get("tau_s", 2.0)),
                                       int(m.get("n_segments", 1000)),
                                       float(m.get("vbr_cv", 0.0)), cfg["seed"])
    except (TypeError, ValueError) as exc:
        raise ConfigError(f"malformed manifest generator: {exc}") from None


def _log(msg):
    print(msg, file=sys.stderr)


# --------------------------------------------------------------------------
# subcommands
# --------------------------------------------------------------------------

STAT_KEYS = ("median_bps", "cv", "acf1", "acf1_diff")


def cmd_stats(cfg) -> int:
    traces = load_traces(cfg)
    out = _out_dir(cfg, "stats-out")
    rows = tr.statistics_table(traces, cfg["windows"])
    tr.write_rows_csv(out / "stats.csv", rows,
                      ["trace_id", "window_s", *STAT_KEYS])
    by_key = []
    for w in cfg["windows"]:
        for k in STAT_KEYS:
            vals = [r[k] for r in rows if r["window_s"] == w and r[k] is not None]
            by_key.append((f"{k}@{w}", vals))
    em.write_ecdf_csv(out / "stats_ecdf.csv", by_key)
    _log(f"wrote {len(rows)} rows to {out / 'stats.csv'}")
    return EXIT_OK


SUMMARY_FIELDS = ["trace_id", "predictor", "horizon_s", "side", "n",
                  *(f"frac_lt_{t}" for t in pr.THRESHOLDS)]


def _check_thresholds(row):
    vals = [row[f"frac_lt_{t}"] for t in pr.THRESHOLDS]
    if any(b < a for a, b in zip(vals, vals[1:])):
        raise HalsimError(f"threshold fractions decrease in {row}")


def cmd_predict_eval(cfg) -> int:
    traces = load_traces(cfg)
    specs = [pr.PredictorSpec.parse(s) for s in cfg["predictors"]]
    out = _out_dir(cfg, "predict-out")
    records, summary = [], []
    for trace in traces:
        series = tr.window(trace, 1)
        for spec in specs:
            for h in cfg["horizons"]:
                try:
                    recs = pr.evaluate_predictor(series, spec, int(h))
                except DataError as exc:
                    _log(f"warning: {trace.id} {spec.label} h={h}: {exc}")
                    continue
                records.extend((trace.id, spec.label, r) for r in recs)
                for row in pr.threshold_summary(recs):
                    row = {"trace_id": trace.id, "predictor": spec.label, "horizon_s": h, **row}
                    _check_thresholds(row)
                    summary.append(row)
    pr.write_error_csv(out / "errors.csv", records)
    tr.write_rows_csv(out / "summary.csv", summary, SUMMARY_FIELDS)
    _log(f"wrote {len(records)} predictions to {out / 'errors.csv'}")
    return EXIT_OK


def cmd_fit_errors(cfg, inputs) -> int:
    if not inputs:
        raise UsageError("fit-errors needs at least one error CSV")
    groups: Dict[tuple, list] = defaultdict(list)
    for path in inputs:
        try:
            rows = pr.read_error_csv(path)
        except OSError as exc:
            raise DataError(f"cannot read {path}: {exc}") from None
        except (KeyError, ValueError) as exc:
            raise DataError(f"{path}: malformed error CSV ({exc})") from None
        for _tid, label, rec in rows:
            groups[(label, rec.horizon_s)].append(rec.signed_error)
    out = _out_dir(cfg, "fit-out")
    entries, ecdfs, fallbacks = [], [], 0
    for (label, h) in sorted(groups):
        errs = np.asarray(groups[(label, h)])
        for side in ("under", "over"):
            ecdfs.append((f"{label}@{h}@{side}", em.side_samples(errs, side)))
            for rep in em.fit_side(errs, side, cfg["families"], cfg["fit_grid_points"]):
                if rep.fallback:
                    fallbacks += 1
                entries.append({"predictor": label, "horizon_s": h, **rep.as_dict()})
    em.write_fit_report(out / "fit_report.json", entries)
    em.write_ecdf_csv(out / "error_ecdf.csv", ecdfs)
    if fallbacks:
        _log(f"warning: {fallbacks} fit(s) had fewer than {em.MIN_FIT_SAMPLES} samples "
             "in range; flagged as fallback")
    _log(f"wrote {len(entries)} fits to {out / 'fit_report.json'}")
    return EXIT_OK


def cmd_simulate(cfg) -> int:
    traces = load_traces(cfg)
    manifest = build_manifest(cfg)
    config = AdaptationConfig.from_dict(cfg["adaptation"])
    config.check_tau(manifest.tau_s)
    policies = _policy_names(cfg)
    out = _out_dir(cfg, "simulate-out")
    res = run_experiment(traces, manifest, policies, config, cfg["seed"],
                         cfg["confidence_level"], keep_sessions=cfg["event_logs"],
                         progress=_log)
    write_results_csv(out / "results.csv", res.table())
    write_session_metrics_csv(out / "session_metrics.csv", res)
    if cfg["event_logs"]:
        logs = out / "events"
        logs.mkdir(exist_ok=True)
        for policy, by_trace in res.sessions.items():
            for tid, session in by_trace.items():
                session.log.write(logs / f"{tid}__{policy.replace(':', '-')}.jsonl")
    _log(f"wrote {out / 'results.csv'} (intervals over traces, level {cfg['confidence_level']})")
    return EXIT_OK


def cmd_gen_traces(cfg) -> int:
    out = _out_dir(cfg, "traces-out")
    if cfg["traces"]:
        traces = load_traces(cfg)
        specs = None
    else:
        syn = cfg["synthetic"]
        specs = tr.bundled_specs(int(syn["count"]), int(syn["duration_s"]), cfg["seed"])
        traces = [tr.generate_trace(s) for s in specs]
    for t in traces:
        t.to_csv(out / f"{t.id}.csv")
    if specs is not None:
        with open(out / "specs.json", "w") as fh:
            json.dump([s.to_dict() for s in specs], fh, indent=2, sort_keys=True)
            fh.write("\n")
    _log(f"wrote {len(traces)} traces to {out}")
    return EXIT_OK


# --------------------------------------------------------------------------
# parser
# --------------------------------------------------------------------------

def build_parser() -> argparse.ArgumentParser:
    common = _Parser(add_help=False)
    common.add_argument("--config", help="JSON configuration file (flags take precedence)")
    common.add_argument("--seed", type=int, default=None,
                        help=f"master seed (default {DEFAULT_SEED})")
    common.add_argument("--out", default=None, help="output directory")
    common.add_argument("--traces", nargs="+", default=None,
                        help="trace CSVs, directories, synthetic spec JSON or 'bundled'")
    common.add_argument("--horizons", default=None, help="comma-separated horizons in seconds")
    common.add_argument("--policies", default=None,
                        help="comma-separated policies: utility, oracle, lowest, fixed:<m>")
    common.add_argument("--margins", default=None,
                        help="comma-separated fixed margins (empty string for none)")

    parser = _Parser(prog="halsim", description="Live adaptive streaming experiments.")
    sub = parser.add_subparsers(dest="command", metavar="command", parser_class=_Parser)
    sub.required = True
    sub.add_parser("stats", parents=[common], help="per-trace throughput statistics")
    p = sub.add_parser("predict-eval", parents=[common], help="evaluate throughput predictors")
    p.add_argument("--predictors", default=None, help="comma-separated specs, e.g. SMA:10:hm")
    p = sub.add_parser("fit-errors", parents=[common], help="fit error distributions")
    p.add_argument("errors", nargs="*", help="error CSVs written by predict-eval")
    sub.add_parser("simulate", parents=[common], help="run the policy comparison")
    p = sub.add_parser("gen-traces", parents=[common], help="write synthetic trace CSVs")
    p.add_argument("--count", type=int, default=None)
    p.add_argument("--duration", type=int, default=None, help="seconds per trace")
    return parser


COMMANDS = {
    "stats": cmd_stats,
    "predict-eval": cmd_predict_eval,
    "simulate": cmd_simulate,
    "gen-traces": cmd_gen_traces,
}


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        cfg = resolve_config(args)
        if args.command == "fit-errors":
            return cmd_fit_errors(cfg, args.errors)
        return COMMANDS[args.command](cfg)
    except ConfigError as exc:
        print(f"halsim: configuration error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except DataError as exc:
        print(f"halsim: data error: {exc}", file=sys.stderr)
        return EXIT_DATA
    except Exception as exc:  # noqa: BLE001 - mapped to the internal-error exit code
        print(f"halsim: internal error: {type(exc).__name__}: {exc}", file=sys.stderr)
        return EXIT_INTERNAL


if __name__ == "__main__":
    sys.exit(main())
