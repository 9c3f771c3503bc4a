"""Command-line entry point.

Exit status: 0 success, 1 job or validation failure, 2 configuration error.
All files go under ``--out-dir``:

  config.json        effective job config
  input.manifest     written by ``generate``
  output.manifest    written by ``sort``
  run_report.txt     written by ``sort``
  events.jsonl       written by ``sort``
  summaries.txt      per-partition validation summaries
  validation.txt     written by ``validate``
  cost.tsv           written by ``cost``
  report.tsv, *.png  written by ``report``
"""
from __future__ import annotations

import argparse
import logging
import sys
from pathlib import Path
from typing import List, Optional

from .config import ConfigError, JobConfig, TRANSPORTS, default_config_path, desk_config, replace_config
from .costmodel import cost_from_counts, paper_cost_report
from .pipeline import GenerationError, Manifest, RunReport, generate_input, make_store, run_sort, validate_output
from .runtime import FaultInjector, JobFailed, read_events
from .storage import StorageError

EXIT_OK, EXIT_FAILED, EXIT_CONFIG = 0, 1, 2

log = logging.getLogger("exosort")


def _common(p: argparse.ArgumentParser) -> None:
    g = p.add_argument_group("job configuration")
    g.add_argument("--config", default=default_config_path(),
                   help="JSON job config (default: $EXOSORT_CONFIG, else the 1 GB desk config)")
    g.add_argument("--out-dir", default="exosort-out", type=Path)
    g.add_argument("--workers", type=int)
    g.add_argument("--partitions", type=int, help="number of input partitions (M)")
    g.add_argument("--reducers", type=int, help="number of output partitions (R)")
    g.add_argument("--partition-bytes", type=int, help="bytes per input partition")
    g.add_argument("--cores", type=int, help="cores per worker")
    g.add_argument("--seed", type=int)
    g.add_argument("--transport", choices=TRANSPORTS)
    g.add_argument("--storage-root", help="object store root (relative paths resolve under --out-dir)")
    g.add_argument("--threshold-blocks", type=int)
    g.add_argument("--threshold-bytes", type=int)
    g.add_argument("--max-retries", type=int)
    g.add_argument("--get-chunk-bytes", type=int)
    g.add_argument("--put-part-bytes", type=int)
    g.add_argument("--paper", action="store_true",
                   help="cost/report: use the 100 TB reference run and published prices")
    p.add_argument("-v", "--verbose", action="store_true")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="exosort", description="Distributed external sort over an object store.")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("generate", help="generate input partitions and the input manifest")
    _common(p)
    p.add_argument("--resume", action="store_true", help="skip partitions listed in a partial manifest")

    p = sub.add_parser("sort", help="run the map/shuffle and reduce stages")
    _common(p)
    p.add_argument("--inject", action="append", default=[], metavar="TASK[@ATTEMPT]",
                   help="fail one attempt of a task, e.g. map-3 or merge-0-2@1")
    p.add_argument("--merge-delay", type=float, default=0.0, help="sleep this long in every merge task")

    p = sub.add_parser("validate", help="check total order and checksum of the output")
    _common(p)

    p = sub.add_parser("cost", help="cost breakdown of a run, or of the 100 TB reference run")
    _common(p)

    p = sub.add_parser("report", help="summary table and figures for a run")
    _common(p)
    return parser


def load_config(args: argparse.Namespace) -> JobConfig:
    cfg = JobConfig.load(args.config) if args.config else desk_config()
    fields = {
        name: getattr(args, name)
        for name in ("seed", "transport", "threshold_blocks", "threshold_bytes", "max_retries",
                     "get_chunk_bytes", "put_part_bytes", "storage_root")
        if getattr(args, name) is not None
    }
    cfg = replace_config(cfg, workers=args.workers, partitions=args.partitions, reducers=args.reducers,
                         partition_bytes=args.partition_bytes, cores=args.cores, **fields)
    root = Path(cfg.storage_root)
    if not root.is_absolute():
        cfg = replace_config(cfg, storage_root=str((args.out_dir / root).resolve()))
    return cfg


def _need(path: Path) -> Path:
    if not path.exists():
        raise ConfigError(f"{path} not found; run the previous step first")
    return path


def cmd_generate(args, cfg: JobConfig) -> int:
    store = make_store(cfg.storage_root)
    path = args.out_dir / "input.manifest"
    try:
        m = generate_input(cfg.plan, cfg.buckets, cfg.seed, store, manifest_path=path, resume=args.resume)
    except GenerationError as exc:
        print(f"generate failed: {exc}; partial manifest at {path}", file=sys.stderr)
        return EXIT_FAILED
    print(f"generated {len(m.entries)} partitions, {m.total_records} records, checksum {m.total_checksum:032x}")
    print(f"manifest: {path}")
    return EXIT_OK


def cmd_sort(args, cfg: JobConfig) -> int:
    manifest = Manifest.load(_need(args.out_dir / "input.manifest"), cfg.plan)
    if not manifest.complete:
        raise ConfigError("input manifest is partial; rerun generate --resume")
    events = args.out_dir / "events.jsonl"
    try:
        out, report, _ = run_sort(manifest, cfg, args.out_dir / "work", store=make_store(cfg.storage_root),
                                  injector=FaultInjector.parse(args.inject), event_log=events,
                                  merge_delay_seconds=args.merge_delay)
    except (JobFailed, StorageError) as exc:
        print(f"sort failed: {exc}", file=sys.stderr)
        print(f"event log: {events}", file=sys.stderr)
        return EXIT_FAILED
    out.total_checksum = manifest.total_checksum
    out.save(args.out_dir / "output.manifest")
    report.save(args.out_dir / "run_report.txt")
    print(f"sorted {report.records} records into {len(out.entries)} partitions")
    print(f"map_shuffle_seconds {report.map_shuffle_seconds:.3f}")
    print(f"reduce_seconds {report.reduce_seconds:.3f}")
    print(f"total_seconds {report.total_seconds:.3f}")
    print(f"get_requests {report.get_requests}")
    print(f"put_requests {report.put_requests}")
    return EXIT_OK


def cmd_validate(args, cfg: JobConfig) -> int:
    inp = Manifest.load(_need(args.out_dir / "input.manifest"))
    out = Manifest.load(_need(args.out_dir / "output.manifest"))
    if inp.total_checksum is None:
        raise ConfigError("input manifest has no checksum trailer")
    v = validate_output(out, inp.total_checksum, make_store(cfg.storage_root),
                        summary_path=args.out_dir / "summaries.txt")
    (args.out_dir / "validation.txt").write_text(v.describe() + "\n")
    print(v.describe())
    return EXIT_OK if v.passed else EXIT_FAILED


def _run_cost(args, cfg: JobConfig):
    if args.paper:
        return paper_cost_report()
    rep = RunReport.load(_need(args.out_dir / "run_report.txt"))
    return cost_from_counts(cfg.pricing, rep.total_seconds / 3600, rep.reduce_seconds / 3600,
                            rep.bytes / 1e12, rep.get_requests, rep.put_requests)


def cmd_cost(args, cfg: JobConfig) -> int:
    report = _run_cost(args, cfg)
    print(report.format_table())
    print(f"rounded total: ${round(report.total)}")
    (args.out_dir / "cost.tsv").write_text(report.to_tsv())
    return EXIT_OK


def cmd_report(args, cfg: JobConfig) -> int:
    from . import plotting

    rep = RunReport.load(_need(args.out_dir / "run_report.txt"))
    events_path = args.out_dir / "events.jsonl"
    events = read_events(events_path) if events_path.exists() else []
    cost = _run_cost(args, cfg)
    rows = [(name, value) for name, value in (line.split(" ", 1) for line in rep.to_text().splitlines())
            if name not in RunReport._LISTS]
    rows += [(f"cost_{li.service.lower().replace(' ', '_').replace('(', '').replace(')', '')}", f"{li.total:.6f}")
             for li in cost.line_items()]
    rows.append(("cost_total", f"{cost.total:.6f}"))
    (args.out_dir / "report.tsv").write_text("field\tvalue\n" + "".join(f"{k}\t{v}\n" for k, v in rows))
    figs = [
        plotting.plot_concurrency(events, args.out_dir / "concurrency.png"),
        plotting.plot_durations({"map": rep.map_task_seconds, "reduce": rep.reduce_task_seconds},
                                args.out_dir / "durations.png"),
        plotting.plot_cost(cost, args.out_dir / "cost.png"),
    ]
    width = max(len(k) for k, _ in rows)
    for k, v in rows:
        print(f"{k.ljust(width)}  {v}")
    for f in figs:
        print(f"figure: {f}")
    return EXIT_OK


COMMANDS = {"generate": cmd_generate, "sort": cmd_sort, "validate": cmd_validate,
            "cost": cmd_cost, "report": cmd_report}


def main(argv: Optional[List[str]] = None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(asctime)s %(levelname)s %(name)s: %(message)s")
    try:
        cfg = load_config(args)
        args.out_dir.mkdir(parents=True, exist_ok=True)
        if args.command in ("generate", "sort"):
            cfg.save(args.out_dir / "config.json")
        return COMMANDS[args.command](args, cfg)
    except ConfigError as exc:
        print(f"configuration error: {exc}", file=sys.stderr)
        return EXIT_CONFIG


if __name__ == "__main__":
    sys.exit(main())
