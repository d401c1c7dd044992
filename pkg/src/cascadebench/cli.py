"""Command-line entry point.

Every subcommand reads ``--config FILE`` (TOML, one table per subcommand,
e.g. ``[run]``); explicit flags override the file, the file overrides
environment variables. ``CASCADEBENCH_CONFIG`` names a default config file.

Exit codes: 0 success, 1 validation/config error, 2 IO/network error.
"""

from __future__ import annotations

import argparse
import json
import logging
import os
import sys
from pathlib import Path
from typing import Any, Optional, Sequence

from . import __version__
from .calibration import (DEFAULT_QUALITY_FLOOR, DevPoint, RiskWeights, ThresholdTable,
                          freeze_thresholds, parse_grid)
from .domain import DEFAULT_FAMILY_MAP, SummaryReport, parse_family_mapping
from .errors import CascadeError, ConfigError, EmptyPool, EnvironmentFailure, IoFailure
from .external import (DEFAULT_JUDGE_MODEL, ENV_BASE, ENV_KEY, JudgeCache, JudgeConfig, JudgeResponse,
                       aggregate_baselines, probe_provider, rejudge)
from .fixtures import write_fixture
from .jsonl import load_pool, read_jsonl, write_jsonl
from .pipeline import (FrozenClock, GenerationParams, MockBackend, OpenAIChatBackend, PromptBank,
                       SystemConfig, WallClock, default_bank, run_split)
from .pipeline.cascade import SYSTEM_POLICIES
from .pipeline.runner import PREDICTIONS, TRACES
from .scoring import (ScoredRecord, breakdown_csv, compare_table, deltas_csv, frontier, frontier_csv,
                      load_traces, per_task_breakdown, quality_delta, rescore_archive, summarize)
from .splitkit import Split, freeze_assignment, load_assignment, stratified_split, subset

try:
    import tomllib
except ModuleNotFoundError:  # Python < 3.11
    import tomli as tomllib

logger = logging.getLogger("cascadebench")

ENV_CONFIG = "CASCADEBENCH_CONFIG"


class UsageError(CascadeError):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(1, f"{self.prog}: error: {message}\n")


class Options:
    """Flag > config file > environment > default."""

    def __init__(self, args: argparse.Namespace, section: dict, base_dir: Optional[Path], parser):
        self.args = args
        self.section = section
        self.base_dir = base_dir
        self.parser = parser

    def get(self, name: str, default: Any = None, env: Optional[str] = None, path: bool = False):
        value = getattr(self.args, name, None)
        if value is None or value == []:
            value = None
            for key in (name, name.replace("_", "-")):
                if key in self.section:
                    value = self.section[key]
                    if path and isinstance(value, str) and self.base_dir is not None and not Path(value).is_absolute():
                        value = str(self.base_dir / str(value))
                    break
        if value is None and env:
            value = os.environ.get(env)
        return default if value is None else value

    def require(self, name: str, **kw):
        value = self.get(name, **kw)
        if value is None:
            raise UsageError(f"--{name.replace('_', '-')} is required\n{self.parser.format_usage().strip()}")
        return value


def _load_config(path: Optional[str], command: str) -> tuple[dict, Optional[Path]]:
    path = path or os.environ.get(ENV_CONFIG)
    if not path:
        return {}, None
    p = Path(path)
    try:
        data = tomllib.loads(p.read_text(encoding="utf-8"))
    except OSError as exc:
        raise IoFailure(f"cannot read config {p}: {exc}") from exc
    except tomllib.TOMLDecodeError as exc:
        raise ConfigError(f"{p}: {exc}") from None
    section = dict(data.get("general", {}))
    section.update(data.get(command, {}))
    return section, p.parent


def _emit(opts: Options, payload: dict, text: Optional[str] = None) -> None:
    if opts.get("json", False):
        print(json.dumps(payload, ensure_ascii=False, sort_keys=True))
    elif text is not None:
        sys.stdout.write(text if text.endswith("\n") else text + "\n")
    else:
        for k, v in payload.items():
            print(f"{k}: {v}")


def _write(path: Optional[str], text: str) -> None:
    if not path:
        return
    try:
        Path(path).parent.mkdir(parents=True, exist_ok=True)
        Path(path).write_text(text, encoding="utf-8")
    except OSError as exc:
        raise IoFailure(f"cannot write {path}: {exc}") from exc


def cmd_split(opts: Options) -> int:
    pool = load_pool(opts.require("pool", path=True))
    seed = int(opts.get("seed", 42))
    frac = float(opts.get("dev_fraction", 0.1))
    out = opts.require("out", path=True)
    a = stratified_split(pool, seed, frac)
    freeze_assignment(a, out)
    _emit(opts, {"out": out, "seed": seed, "dev_fraction": frac, "dev": a.dev_count, "test": a.test_count})
    return 0


def _backend(opts: Options, role: str, seed: int):
    url = opts.get(f"{role}_url")
    if url:
        model = opts.require(f"{role}_model")
        return OpenAIChatBackend(f"{role}:{model}", url, model, opts.get("api_key", env=f"{role.upper()}_API_KEY"))
    script = opts.get(f"{role}_script", path=True)
    if script:
        return MockBackend.from_file(f"mock-{role}", script, role)
    return MockBackend(f"mock-{role}", {}, role)


def _system_config(opts: Options) -> SystemConfig:
    system = opts.get("system", "cascade_final")
    if system not in SYSTEM_POLICIES:
        raise ConfigError(f"unknown system {system!r}; choose from {', '.join(SYSTEM_POLICIES)}")
    thresholds_path = opts.get("thresholds", path=True)
    if SYSTEM_POLICIES[system] == "cascade" and not thresholds_path:
        raise ConfigError("threshold file required for cascade systems (--thresholds)")
    thresholds = ThresholdTable.load(thresholds_path) if thresholds_path else None
    weights = opts.get("weights")
    if isinstance(weights, list):
        weights = RiskWeights(*[float(w) for w in weights])
    elif weights:
        weights = RiskWeights.parse(str(weights))
    else:
        weights = RiskWeights()
    family_map = opts.get("family_map", path=True)
    if isinstance(family_map, str):
        try:
            family_map = json.loads(Path(family_map).read_text(encoding="utf-8"))
        except json.JSONDecodeError as exc:
            raise ConfigError(f"family map: {exc}") from None
    bank_dir = opts.get("prompt_bank", path=True)
    seed = int(opts.get("seed", 42))
    return SystemConfig(
        system_id=system,
        thresholds=thresholds,
        weights=weights,
        family_map=parse_family_mapping(family_map) if family_map else dict(DEFAULT_FAMILY_MAP),
        prompt_bank=PromptBank.from_dir(bank_dir) if bank_dir else default_bank(),
        router_params=GenerationParams(int(opts.get("router_max_tokens", 1024)),
                                       float(opts.get("temperature", 0.0)), seed),
        specialist_params=GenerationParams(int(opts.get("specialist_max_tokens", 2048)),
                                           float(opts.get("temperature", 0.0)), seed),
        retries=int(opts.get("retries", 1)),
        draft_conditioning=not opts.get("no_draft_conditioning", False),
        specialist_prompt=not opts.get("no_specialist_prompt", False),
    )


def cmd_run(opts: Options) -> int:
    config = _system_config(opts)
    pool = load_pool(opts.require("pool", path=True))
    split_file = opts.get("split", path=True)
    which = opts.get("subset", "test" if split_file else "all")
    if split_file and which != "all":
        pool = subset(pool, load_assignment(split_file), Split(which))
    if not pool:
        raise EmptyPool(f"no samples to run (subset {which!r})")
    seed = config.router_params.seed
    router = _backend(opts, "router", seed)
    specialist = _backend(opts, "specialist", seed)
    mocks = isinstance(router, MockBackend) and isinstance(specialist, MockBackend)
    clock = WallClock() if (opts.get("wall_clock", False) or not mocks) else FrozenClock()
    out = opts.require("out", path=True)
    manifest = run_split(pool, config, out, router, specialist, int(opts.get("workers", 4)), clock)
    _emit(opts, manifest.to_dict())
    return 0


def _run_paths(opts: Options) -> tuple[str, str]:
    run_dir = opts.get("run_dir", path=True)
    preds = opts.get("predictions", path=True) or (run_dir and str(Path(run_dir) / PREDICTIONS))
    traces = opts.get("traces", path=True) or (run_dir and str(Path(run_dir) / TRACES))
    if not preds or not traces:
        raise UsageError("give --run-dir or both --predictions and --traces")
    return preds, traces


def cmd_rescore(opts: Options) -> int:
    preds, traces = _run_paths(opts)
    pool = load_pool(opts.require("pool", path=True))
    records = rescore_archive(preds, traces, pool, workers=int(opts.get("workers", 1)))
    out = opts.require("out", path=True)
    write_jsonl(out, (r.to_dict() for r in records))
    summary = summarize(records) if records else None
    _emit(opts, {"out": out, "records": len(records),
                 "summary": summary.to_dict() if summary else None})
    return 0


def _load_scores(path) -> list[ScoredRecord]:
    return [ScoredRecord.from_dict(d) for d in read_jsonl(path)]


def cmd_summarize(opts: Options) -> int:
    records = _load_scores(opts.require("scores", path=True))
    summary = summarize(records, system_id=opts.get("system_id"))
    out = opts.get("out", path=True)
    _write(out, json.dumps(summary.to_dict(), indent=2) + "\n")
    breakdown = per_task_breakdown(records)
    _write(opts.get("breakdown", path=True), breakdown_csv(breakdown))
    _emit(opts, summary.to_dict())
    return 0


def _load_summary(path) -> SummaryReport:
    try:
        return SummaryReport.from_dict(json.loads(Path(path).read_text(encoding="utf-8")))
    except OSError as exc:
        raise IoFailure(f"cannot read {path}: {exc}") from exc
    except json.JSONDecodeError as exc:
        raise ConfigError(f"{path}: {exc}") from None


def cmd_compare(opts: Options) -> int:
    paths = opts.get("summaries") or []
    if len(paths) < 2:
        raise UsageError("compare needs at least two summary files")
    summaries = [_load_summary(p) for p in paths]
    fmt = opts.get("format", "text")
    table = compare_table(summaries, fmt)
    _write(opts.get("out", path=True), compare_table(summaries, "csv"))
    points = frontier(summaries)
    _write(opts.get("frontier", path=True), frontier_csv(points))
    payload = {"table": compare_table(summaries, "csv"),
               "frontier": [{"system": p.system_id, "latency_s": p.mean_latency_s, "quality": p.quality,
                             "dominated": p.dominated, "dominated_by": list(p.dominated_by)} for p in points]}
    _emit(opts, payload, table)
    return 0


def cmd_delta(opts: Options) -> int:
    system = _load_scores(opts.require("system_scores", path=True))
    baseline = _load_scores(opts.require("baseline_scores", path=True))
    deltas = quality_delta(system, baseline)
    text = deltas_csv(deltas)
    _write(opts.get("out", path=True), text)
    _emit(opts, {t.value: d for t, d in deltas.items()}, text)
    return 0


def cmd_freeze(opts: Options) -> int:
    preds, traces_path = _run_paths(opts)
    pool = load_pool(opts.require("pool", path=True))
    records = rescore_archive(preds, traces_path, pool)
    traces = load_traces(traces_path)
    points = [DevPoint(r.task, traces[r.sample_id].risk, r.q) for r in records
              if traces[r.sample_id].risk is not None]
    if not points:
        raise ConfigError("traces carry no risk scores; freeze from a 1b_only or cascade dev run")
    table = freeze_thresholds(points, float(opts.get("floor", DEFAULT_QUALITY_FLOOR)),
                              parse_grid(opts.get("grid")), dev_digest=_file_digest(preds),
                              created_at=WallClock().now_iso())
    out = opts.require("out", path=True)
    table.save(out)
    _emit(opts, table.to_dict())
    return 0


def _file_digest(path) -> str:
    import hashlib
    return hashlib.sha256(Path(path).read_bytes()).hexdigest()


def cmd_aggregate(opts: Options) -> int:
    table = aggregate_baselines(opts.require("csv", path=True))
    fmt = opts.get("format", "text")
    _write(opts.get("out", path=True), table.render("csv"))
    _emit(opts, table.to_dict(), table.render(fmt))
    return 0


def cmd_probe(opts: Options) -> int:
    base = opts.get("base_url", env=ENV_BASE)
    if not base:
        raise UsageError(f"--base-url is required (or set {ENV_BASE})")
    status = probe_provider(base, opts.get("api_key", env=ENV_KEY), opts.get("model", DEFAULT_JUDGE_MODEL),
                            timeout_s=float(opts.get("timeout", 10.0)))
    lines = [f"status: {status.state.value}"]
    lines += [f"  {p}: {c if c is not None else 'no response'}" for p, c in status.detail.items()]
    lines.append(f"key shape ok: {str(status.key_shape_ok).lower()}")
    if status.message:
        lines.append(status.message)
    _emit(opts, status.to_dict(), "\n".join(lines))
    return 0


def cmd_rejudge(opts: Options) -> int:
    responses = [JudgeResponse.from_dict(d) for d in read_jsonl(opts.require("responses", path=True))]
    config = JudgeConfig.from_env(opts.get("base_url"), opts.get("api_key"),
                                  model=opts.get("model", DEFAULT_JUDGE_MODEL),
                                  rubric_version=str(opts.get("rubric_version", "v1")),
                                  concurrency=int(opts.get("workers", 4)))
    cache = JudgeCache(opts.get("cache", "judge_cache.jsonl", path=True))
    result = rejudge(responses, config, cache, force=bool(opts.get("force", False)))
    out = opts.get("out", path=True)
    _write(out, result.csv())
    payload = {"rows": len(result.rows), "failures": [list(f) for f in result.failures],
               "network_calls": result.network_calls, "cache_hits": result.cache_hits, "out": out}
    _emit(opts, payload, None if out else result.csv())
    return 0


def cmd_make_fixture(opts: Options) -> int:
    paths = write_fixture(opts.require("out", path=True), int(opts.get("per_stratum", 5)))
    _emit(opts, paths)
    return 0


def _flag(p, name, **kw):
    kw.setdefault("default", None)
    p.add_argument(name, **kw)


def _bool(p, name, help=None):
    p.add_argument(name, action="store_const", const=True, default=None, help=help)


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="cascadebench", description="1B->7B cascade runner and offline evaluation harness")
    parser.add_argument("--version", action="version", version=__version__)
    sub = parser.add_subparsers(dest="command", metavar="COMMAND", parser_class=_Parser)

    def command(name, fn, help):
        p = sub.add_parser(name, help=help, description=help)
        p.set_defaults(func=fn)
        _flag(p, "--config", help="TOML config file; flags override it")
        _bool(p, "--json", help="print one JSON object")
        _flag(p, "--workers", type=int)
        return p

    p = command("split", cmd_split, "freeze a seeded stratified dev/test split")
    _flag(p, "--pool")
    _flag(p, "--seed", type=int)
    _flag(p, "--dev-fraction", type=float)
    _flag(p, "--out")

    p = command("run", cmd_run, "run a system over a pool and write predictions/traces")
    _flag(p, "--system", help=", ".join(SYSTEM_POLICIES))
    _flag(p, "--pool")
    _flag(p, "--split", help="frozen split file")
    _flag(p, "--subset", choices=("dev", "test", "all"))
    _flag(p, "--thresholds")
    _flag(p, "--weights", help="w_confidence,w_format,w_family_mismatch,w_parse_fail")
    _flag(p, "--family-map", help="JSON file mapping task -> family")
    _flag(p, "--prompt-bank")
    _flag(p, "--router-script")
    _flag(p, "--specialist-script")
    _flag(p, "--router-url")
    _flag(p, "--router-model")
    _flag(p, "--specialist-url")
    _flag(p, "--specialist-model")
    _flag(p, "--api-key")
    _flag(p, "--seed", type=int)
    _flag(p, "--temperature", type=float)
    _flag(p, "--router-max-tokens", type=int)
    _flag(p, "--specialist-max-tokens", type=int)
    _flag(p, "--retries", type=int)
    _bool(p, "--no-draft-conditioning")
    _bool(p, "--no-specialist-prompt")
    _bool(p, "--wall-clock", help="measure real time even with mock backends")
    _flag(p, "--out")

    for name, fn, help in (("rescore", cmd_rescore, "rescore saved artifacts against a gold pool"),
                           ("freeze-thresholds", cmd_freeze, "freeze per-task thresholds from a dev run")):
        p = command(name, fn, help)
        _flag(p, "--run-dir")
        _flag(p, "--predictions")
        _flag(p, "--traces")
        _flag(p, "--pool")
        _flag(p, "--out")
        if name == "freeze-thresholds":
            _flag(p, "--floor", type=float)
            _flag(p, "--grid", help="comma-separated thresholds")

    p = command("summarize", cmd_summarize, "summarize scored records")
    _flag(p, "--scores")
    _flag(p, "--system-id")
    _flag(p, "--out")
    _flag(p, "--breakdown", help="per-task breakdown CSV path")

    p = command("compare", cmd_compare, "compare two or more summaries")
    p.add_argument("summaries", nargs="*", default=None)
    _flag(p, "--format", choices=("csv", "text"))
    _flag(p, "--out")
    _flag(p, "--frontier", help="frontier CSV path")

    p = command("delta", cmd_delta, "per-task quality delta between two scored archives")
    _flag(p, "--system-scores")
    _flag(p, "--baseline-scores")
    _flag(p, "--out")

    p = command("aggregate-baselines", cmd_aggregate, "aggregate a sampled-baseline score CSV")
    _flag(p, "--csv")
    _flag(p, "--format", choices=("csv", "text"))
    _flag(p, "--out")

    p = command("probe", cmd_probe, "probe a judge provider endpoint")
    _flag(p, "--base-url")
    _flag(p, "--api-key")
    _flag(p, "--model")
    _flag(p, "--timeout", type=float)

    p = command("rejudge", cmd_rejudge, "re-judge sampled responses into a baseline CSV")
    _flag(p, "--responses")
    _flag(p, "--base-url")
    _flag(p, "--api-key")
    _flag(p, "--model")
    _flag(p, "--rubric-version")
    _flag(p, "--cache")
    _bool(p, "--force", help="skip the provider probe")
    _flag(p, "--out")

    p = command("make-fixture", cmd_make_fixture, "write the bundled mock fixture")
    _flag(p, "--out")
    _flag(p, "--per-stratum", type=int)
    return parser


def main(argv: Optional[Sequence[str]] = None) -> int:
    logging.basicConfig(level=os.environ.get("CASCADEBENCH_LOG", "WARNING"),
                        format="%(levelname)s %(name)s: %(message)s")
    parser = build_parser()
    try:
        args, extra = parser.parse_known_args(argv)
        if not getattr(args, "func", None):
            parser.print_usage(sys.stderr)
            return 1
        sub_parser = parser._subparsers._group_actions[0].choices[args.command]
        if extra:
            sub_parser.error(f"unrecognized arguments: {' '.join(extra)}")
    except SystemExit as exc:  # --help, --version and usage errors
        return exc.code if isinstance(exc.code, int) else 1
    try:
        section, base = _load_config(args.config, args.command)
        opts = Options(args, section, base, sub_parser)
        return args.func(opts)
    except UsageError as exc:
        print(f"{sub_parser.prog}: error: {exc}", file=sys.stderr)
        return 1
    except EnvironmentFailure as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    except CascadeError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    except OSError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
