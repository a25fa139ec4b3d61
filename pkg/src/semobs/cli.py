"""``semobs`` command line.

Option precedence is flags > environment (``SEMOBS_<FLAG>``) > config file >
built-in defaults. Exit codes: 0 success / gate PASS, 1 operational error,
2 gate FAIL.
"""

from __future__ import annotations

import argparse
import json
import logging
import os
import sys
import warnings
from pathlib import Path

import numpy as np

from semobs import __version__, kernels
from semobs.backend import RemoteBackend, ReplayBackend, StochasticBackend, builtin_profiles, load_profile
from semobs.errors import ClipTooShort, EmptyLog, ManifestError, SemobsError
from semobs.fixtures import manifest_path, write_all
from semobs.gate import default_goals, evaluate, load_goals
from semobs.ingest import load_manifest, sample_windows
from semobs.logs import decision_record, handoff_record, read_jsonl, run_meta, write_jsonl
from semobs.metrics import (
    ConfusionMatrix,
    MetricsReport,
    compute_scores,
    emit_report,
    fingerprint_of,
    latency_stats,
    score_log,
)
from semobs.orchestrator import ObserverConfig, RunStats, run_observer
from semobs.prompting import build_prompt
from semobs.stub_server import Script, serve

log = logging.getLogger("semobs")

EXIT_OK, EXIT_ERROR, EXIT_GATE_FAIL = 0, 1, 2

# flag dest -> (env var, ObserverConfig field or None, converter)
OVERRIDES = {
    "config": ("SEMOBS_CONFIG", None, str),
    "manifest": ("SEMOBS_MANIFEST", None, str),
    "profile": ("SEMOBS_PROFILE", "profile", str),
    "seed": ("SEMOBS_SEED", "seed", int),
    "out": ("SEMOBS_OUT", None, str),
    "endpoint": ("SEMOBS_ENDPOINT", "endpoint", str),
    "goals": ("SEMOBS_GOALS", None, str),
    "format": ("SEMOBS_FORMAT", None, str),
    "n_min": ("SEMOBS_N_MIN", "n_min", int),
    "deadline_s": ("SEMOBS_DEADLINE_S", "deadline_s", str),
    "rate_hz": ("SEMOBS_RATE_HZ", "rate_hz", str),
    "tier": ("SEMOBS_TIER", "tier", str),
}


def _resolve(args: argparse.Namespace, dest: str):
    """Flag value, else environment, else None."""
    value = getattr(args, dest, None)
    if value is not None:
        return value
    env, _, conv = OVERRIDES[dest]
    raw = os.environ.get(env)
    return conv(raw) if raw not in (None, "") else None


def load_config_file(path: str | Path) -> dict:
    path = Path(path)
    text = path.read_bytes()
    if path.suffix == ".toml":
        try:
            import tomllib
        except ModuleNotFoundError:  # Python < 3.11
            import tomli as tomllib
        try:
            return tomllib.loads(text.decode("utf-8"))
        except tomllib.TOMLDecodeError as exc:
            raise SemobsError(f"{path}: {exc}") from None
    try:
        data = json.loads(text)
    except json.JSONDecodeError as exc:
        raise SemobsError(f"{path}:{exc.lineno}: {exc.msg}") from None
    if not isinstance(data, dict):
        raise SemobsError(f"{path}: config must be an object")
    return data


def resolve_config(args: argparse.Namespace, **forced) -> ObserverConfig:
    cfg_path = _resolve(args, "config")
    data = load_config_file(cfg_path) if cfg_path else {}
    for dest, (_, field, _) in OVERRIDES.items():
        if field is None or not hasattr(args, dest):
            continue
        value = _resolve(args, dest)
        if value is not None:
            data[field] = value
    data.update(forced)
    try:
        return ObserverConfig.from_dict(data)
    except (SemobsError, TypeError, ValueError) as exc:
        where = f"{cfg_path}: " if cfg_path else ""
        raise SemobsError(f"{where}invalid config: {exc}") from None


def _load_clips(args):
    path = _resolve(args, "manifest")
    if path is None:
        data, fmt, label = manifest_path().read_bytes(), "jsonl", "<bundled hpt224 manifest>"
    else:
        p = Path(path)
        fmt = "csv" if p.suffix == ".csv" else "jsonl"
        data, label = p.read_bytes(), str(p)
    try:
        return load_manifest(data, fmt)
    except ManifestError as exc:
        raise SemobsError(f"{label}: {exc}") from None


def _out_dir(args) -> Path:
    out = Path(_resolve(args, "out") or "semobs-out")
    out.mkdir(parents=True, exist_ok=True)
    return out


def run_pipeline(cfg: ObserverConfig, clips: dict, backend, limit: int | None = None):
    """Window every clip and run one observer episode per clip.

    Returns ``(decisions, events, stats, expected_handoffs, missed_handoffs)``.
    A handoff is expected for a clip whose ground-truth window labels contain
    ``n_min`` consecutive anomalies; it is missed if that episode never fired.
    """
    prompt = build_prompt(cfg.tier, cfg.context, max_new_tokens=cfg.max_new_tokens)
    decisions, events = [], []
    total = RunStats(clock=cfg.clock)
    expected = missed = 0
    seen = 0
    with warnings.catch_warnings():
        warnings.simplefilter("ignore", ClipTooShort)
        for clip_id, frames in clips.items():
            windows = sample_windows(frames, cfg.sampling)
            if limit is not None:
                windows = windows[: max(0, limit - seen)]
            if not windows:
                continue
            seen += len(windows)
            d, e, s = run_observer(windows, cfg, backend, prompt)
            decisions.extend(d)
            events.extend(e)
            for name in ("windows_seen", "processed", "timeouts", "deadline_violations",
                         "hazardous_latency_events", "budget_exceeded", "retries", "handoffs"):
                setattr(total, name, getattr(total, name) + getattr(s, name))
            total.dropped.extend(s.dropped)
            gt = np.array([[w.label == "Anomaly" for w in windows]], dtype=np.int8)
            if kernels.first_triggers(gt, cfg.n_min)[0] >= 0:
                expected += 1
                missed += not e
    if decisions:
        total.mean_total_s = float(sum(x.latency.total_s for x in decisions) / len(decisions))
    return decisions, events, total, prompt, expected, missed


def _write_run(out: Path, cfg: ObserverConfig, backend, prompt, result) -> MetricsReport | None:
    decisions, events, stats, _, expected, missed = result
    meta = run_meta(cfg.config_hash(), cfg.seed, prompt.template_hash, cfg.n_min, cfg.deadline_s)
    records = [
        decision_record(d, prompt.template_hash, backend.backend_id, backend.profile_id, meta)
        for d in decisions
    ]
    write_jsonl(out / "predictions.jsonl", records)
    write_jsonl(out / "handoffs.jsonl", [handoff_record(e, meta) for e in events])
    summary = {
        **meta,
        "config": cfg.to_dict(),
        "stats": stats.to_dict(),
        "expected_handoffs": expected,
        "missed_handoffs": missed,
        "kernels": kernels.ACTIVE,
    }
    (out / "run.json").write_text(json.dumps(summary, indent=2, sort_keys=True) + "\n")
    report = None
    if records and all(r["gt"] for r in records):
        matrix = score_log(records)
        report = MetricsReport(
            matrix,
            compute_scores(matrix),
            latency_stats(records, float(cfg.deadline_s)),
            fingerprint_of(records),
            meta,
        )
        (out / "report.json").write_bytes(emit_report(report, "json"))
        (out / "report.md").write_bytes(emit_report(report, "markdown"))
    return report


def _print_summary(report: MetricsReport | None, stats: RunStats, expected: int, missed: int):
    print(f"windows={stats.windows_seen} processed={stats.processed} dropped={len(stats.dropped)} "
          f"timeouts={stats.timeouts} deadline_violations={stats.deadline_violations} "
          f"handoffs={stats.handoffs} missed_handoffs={missed}/{expected}")
    if report is not None:
        sys.stdout.write(emit_report(report, "markdown").decode())


def cmd_simulate(args) -> int:
    cfg = resolve_config(args, backend="stochastic", clock="simulated")
    if not cfg.profile:
        raise SemobsError("simulate needs --profile")
    profile = load_profile(cfg.profile)
    backend = StochasticBackend(profile, cfg.seed)
    clips = _load_clips(args)
    result = run_pipeline(cfg, clips, backend, args.limit)
    out = _out_dir(args)
    report = _write_run(out, cfg, backend, result[3], result)
    _print_summary(report, result[2], result[4], result[5])
    if report is not None:
        gate = evaluate(report, cfg, _goals(args))
        (out / "gate.json").write_text(gate.to_json())
        print(f"gate: {gate.overall}" + (f" (blocking: {', '.join(gate.blocking)})" if gate.blocking else ""))
        if args.gate and gate.overall != "PASS":
            return EXIT_GATE_FAIL
    return EXIT_OK


def cmd_run_remote(args) -> int:
    cfg = resolve_config(args, backend="remote", clock="wall")
    if not cfg.endpoint:
        raise SemobsError("run-remote needs --endpoint")
    timeout = args.request_timeout or float(cfg.deadline_s) + 1.0
    backend = RemoteBackend(cfg.endpoint, timeout_s=timeout, profile_id=cfg.profile)
    clips = _load_clips(args)
    result = run_pipeline(cfg, clips, backend, args.limit)
    out = _out_dir(args)
    report = _write_run(out, cfg, backend, result[3], result)
    _print_summary(report, result[2], result[4], result[5])
    return EXIT_OK


def cmd_replay(args) -> int:
    cfg = resolve_config(args, backend="replay", clock="simulated")
    backend = ReplayBackend(read_jsonl(args.log))
    clips = _load_clips(args)
    result = run_pipeline(cfg, clips, backend, args.limit)
    out = _out_dir(args)
    report = _write_run(out, cfg, backend, result[3], result)
    _print_summary(report, result[2], result[4], result[5])
    return EXIT_OK


def evaluate_logs(paths) -> MetricsReport:
    """Score each log shard separately and merge the matrices."""
    shards = [read_jsonl(p) for p in paths]
    records = [r for shard in shards for r in shard]
    if not records:
        raise EmptyLog("prediction log is empty")
    matrix = ConfusionMatrix()
    for shard in shards:
        matrix = matrix + score_log(shard)
    fp = fingerprint_of(records)
    deadline = fp["deadline_s"] if isinstance(fp.get("deadline_s"), (int, float)) else 1.0
    latency = latency_stats(records, deadline) if all("total_s" in r for r in records) else None
    meta = {"tool_version": __version__, "sources": [Path(p).name for p in paths]}
    return MetricsReport(matrix, compute_scores(matrix), latency, fp, meta)


def cmd_evaluate(args) -> int:
    report = evaluate_logs(args.logs)
    fmt = _resolve(args, "format") or "json"
    body = emit_report(report, "markdown" if fmt == "markdown" else "json")
    out = _resolve(args, "out")
    if out:
        out = Path(out)
        out.mkdir(parents=True, exist_ok=True)
        (out / "report.json").write_bytes(emit_report(report, "json"))
        (out / "report.md").write_bytes(emit_report(report, "markdown"))
    sys.stdout.write(body.decode())
    return EXIT_OK


def _goals(args):
    path = _resolve(args, "goals") if hasattr(args, "goals") else None
    return load_goals(path) if path else default_goals()


def cmd_gate(args) -> int:
    report = MetricsReport.from_dict(json.loads(Path(args.report).read_text()))
    cfg = resolve_config(args)
    gate = evaluate(report, cfg, _goals(args))
    out = _resolve(args, "out")
    if out:
        Path(out).mkdir(parents=True, exist_ok=True)
        (Path(out) / "gate.json").write_text(gate.to_json())
    sys.stdout.write(gate.to_json())
    return EXIT_OK if gate.overall == "PASS" else EXIT_GATE_FAIL


def cmd_profiles(args) -> int:
    for key in builtin_profiles():
        p = load_profile(key)
        print(f"{key:20s} {p.name:6s} {p.modality:6s} tpr={p.tpr:.3f} fpr={p.fpr:.3f} "
              f"latency={p.mean_latency_s:.3f}s")
    return EXIT_OK


def cmd_make_fixtures(args) -> int:
    for path in write_all(args.dest):
        print(path)
    return EXIT_OK


def cmd_stub_server(args) -> int:
    serve(Script(text=args.answer, delay_s=args.delay, status=args.status), args.host, args.port)
    return EXIT_OK


def _add_run_flags(p: argparse.ArgumentParser, remote: bool = False):
    p.add_argument("--config", help="observer config (JSON or TOML)")
    p.add_argument("--manifest", help="frame manifest (.jsonl or .csv); default: bundled")
    p.add_argument("--profile", help="builtin profile key or profile JSON path")
    p.add_argument("--seed", type=int)
    p.add_argument("--out", help="output directory (default ./semobs-out)")
    p.add_argument("--goals", help="safety goals JSON")
    p.add_argument("--n-min", dest="n_min", type=int)
    p.add_argument("--deadline-s", dest="deadline_s")
    p.add_argument("--rate-hz", dest="rate_hz")
    p.add_argument("--tier", choices=["Verbose", "Pruned", "Minimal"])
    p.add_argument("--limit", type=int, help="process at most this many windows")
    if remote:
        p.add_argument("--endpoint", help="inference server base URL")
        p.add_argument("--request-timeout", type=float, help="HTTP timeout in seconds")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="semobs", description=__doc__.splitlines()[0])
    parser.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("simulate", help="run the observer against a stochastic profile")
    _add_run_flags(p)
    p.add_argument("--gate", action="store_true", help="exit 2 if the safety gate fails")
    p.set_defaults(func=cmd_simulate)

    p = sub.add_parser("run-remote", help="run the observer in wall-clock mode against a server")
    _add_run_flags(p, remote=True)
    p.set_defaults(func=cmd_run_remote)

    p = sub.add_parser("replay", help="re-run the observer from a recorded prediction log")
    _add_run_flags(p)
    p.add_argument("log")
    p.set_defaults(func=cmd_replay)

    p = sub.add_parser("evaluate", help="score prediction logs (several paths = shards)")
    p.add_argument("logs", nargs="+")
    p.add_argument("--out")
    p.add_argument("--format", choices=["json", "markdown"])
    p.set_defaults(func=cmd_evaluate)

    p = sub.add_parser("gate", help="check a metrics report against the safety goals")
    p.add_argument("--report", required=True)
    p.add_argument("--config")
    p.add_argument("--profile")
    p.add_argument("--goals")
    p.add_argument("--out")
    p.add_argument("--n-min", dest="n_min", type=int)
    p.add_argument("--deadline-s", dest="deadline_s")
    p.add_argument("--tier", choices=["Verbose", "Pruned", "Minimal"])
    p.set_defaults(func=cmd_gate)

    p = sub.add_parser("profiles", help="list builtin quantization profiles")
    p.set_defaults(func=cmd_profiles)

    p = sub.add_parser("make-fixtures", help="regenerate bundled manifest and reference logs")
    p.add_argument("dest")
    p.set_defaults(func=cmd_make_fixtures)

    p = sub.add_parser("stub-server", help="serve a scripted /infer endpoint")
    p.add_argument("--answer", default="Normal")
    p.add_argument("--delay", type=float, default=0.0)
    p.add_argument("--status", type=int, default=200)
    p.add_argument("--host", default="127.0.0.1")
    p.add_argument("--port", type=int, default=8765)
    p.set_defaults(func=cmd_stub_server)
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(
        level=logging.DEBUG if args.verbose else logging.ERROR,
        format="%(levelname)s %(name)s: %(message)s",
    )
    try:
        return args.func(args)
    except (SemobsError, OSError, ValueError) as exc:
        print(f"semobs: error: {type(exc).__name__}: {exc}", file=sys.stderr)
        return EXIT_ERROR


if __name__ == "__main__":
    sys.exit(main())
