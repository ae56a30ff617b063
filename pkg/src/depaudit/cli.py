"""Command-line surface.

Exit codes: 0 success, 1 partial failure (some releases failed or a retry
dead-lettered again), 2 fatal (bad usage, missing config, broken input).
Report files carry no timestamps; each reporting command refreshes
<out>/run_meta.json with the wall-clock metadata instead.
"""

from __future__ import annotations

import argparse
import json
import logging
import sys
from datetime import datetime, timezone
from pathlib import Path

from . import __version__, analytics, feeds, repominer
from ._native import backend_name
from .config import ConfigError, load_config
from .pipeline import Daemon, Pipeline, PipelineError, feed_source_from, write_scan_reports
from .store import EXPORTABLE_TABLES, Store, StoreError


def _utcnow() -> datetime:
    return datetime.now(timezone.utc)


def _write_run_meta(out_dir: str | Path, command: str) -> Path:
    doc = {
        "schema": "depaudit-report/run-meta/1",
        "generated_at": _utcnow().isoformat(),
        "command": command,
        "version": __version__,
        "backend": backend_name(),
    }
    path = Path(out_dir) / "run_meta.json"
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(json.dumps(doc, indent=2, sort_keys=True) + "\n",
                    encoding="utf-8")
    return path


def cmd_feeds_sync(args, config) -> int:
    store = Store(config.store_path)
    source = feed_source_from(config)
    if source is None:
        print("error: no feed source configured (set feeds.dir or feeds.url)",
              file=sys.stderr)
        return 2
    report = feeds.sync_nvd(store, source, now=_utcnow(),
                            years=config.nvd_years, force=args.force)
    epss = feeds.sync_epss(store, source, now=_utcnow())
    for result in [*report.feeds, epss]:
        print(f"feed={result.feed_key} ingested={result.entries}"
              f" replaced={result.changed} rejected={len(result.errors)}"
              f" skipped={str(result.skipped).lower()}")
    print(f"unmatched_cpes={report.unmatched_cpes}")
    return 0


def cmd_repo_add(args, config) -> int:
    store = Store(config.store_path)
    report = repominer.stage1_collect(
        store, args.locator, now=_utcnow(), repo_id=args.id)
    line = (f"repo={report.repo_id} releases_found={report.releases_found}"
            f" new={report.releases_new}")
    if report.rejected:
        line += f" rejected={report.reject_reason}"
    print(line)
    return 0


def cmd_scan(args, config) -> int:
    with Pipeline(config) as pipeline:
        summary = pipeline.scan(args.locator, repo_id=args.id)
        if summary.rejected:
            print(f"repo={summary.repo_id} rejected reason={summary.reject_reason}")
            return 0
        written = write_scan_reports(pipeline.store, config.out_dir,
                                     summary.repo_id)
    _write_run_meta(config.out_dir, "scan")
    print(f"repo={summary.repo_id} releases={summary.releases}"
          f" done={summary.done} failed={summary.failed}"
          f" reports={len(written)}")
    return summary.exit_code


def cmd_report(args, config) -> int:
    store = Store(config.store_path)
    if args.kind == "release":
        if not args.tag or not args.repo:
            print("error: report release needs a tag and --repo", file=sys.stderr)
            return 2
        doc = analytics.build_release_report(store, args.repo, args.tag)
        safe_tag = args.tag.replace("/", "-")
        paths = analytics.write_report(
            config.out_dir, args.repo, "release", doc, name=f"release-{safe_tag}")
    else:
        builders = {
            "timeline": lambda: analytics.build_timeline_report(
                store, args.granularity),
            "depth": lambda: analytics.build_depth_report(store),
            "correlation": lambda: analytics.build_correlation_report(store),
            "persistence": lambda: analytics.build_persistence_report(store),
        }
        paths = analytics.write_report(config.out_dir, "all", args.kind,
                                       builders[args.kind]())
    _write_run_meta(config.out_dir, f"report {args.kind}")
    for path in paths:
        print(path)
    return 0


def cmd_daemon_run(args, config) -> int:
    interval = args.interval if args.interval is not None else config.daemon_interval
    port = args.port if args.port is not None else config.liveness_port
    with Pipeline(config) as pipeline:
        daemon = Daemon(pipeline, interval=interval, liveness_port=port)
        if args.once:
            daemon.tick()
            daemon.liveness.stop()
            stamp = daemon.last_tick.isoformat() if daemon.last_tick else "never"
            print(f"tick complete last_tick={stamp}")
            return 0
        print(f"liveness on {daemon.liveness.host}:{daemon.liveness.port}",
              flush=True)
        try:
            daemon.run()
        except KeyboardInterrupt:
            pass
    return 0


def cmd_deadletter_list(args, config) -> int:
    store = Store(config.store_path)
    letters = store.list_dead_letters()
    for letter in letters:
        print(f"id={letter['id']} key={letter['routing_key']}"
              f" attempts={letter['attempts']} failed_at={letter['failed_at']}"
              f" error={letter['last_error']}")
    if not letters:
        print("no dead letters")
    return 0


def cmd_deadletter_retry(args, config) -> int:
    store = Store(config.store_path)
    letter = store.pop_dead_letter(args.letter_id)
    if letter is None:
        print(f"error: no dead letter {args.letter_id}", file=sys.stderr)
        return 2
    with Pipeline(config, store=store) as pipeline:
        before = pipeline.broker.dead_lettered
        pipeline.broker.dispatch(letter["routing_key"], letter["payload"])
        pipeline.broker.join()
        parked_again = pipeline.broker.dead_lettered - before
    outcome = "dead-lettered again" if parked_again else "done"
    print(f"retried id={args.letter_id} key={letter['routing_key']}"
          f" outcome={outcome}")
    return 1 if parked_again else 0


def cmd_export(args, config) -> int:
    store = Store(config.store_path)
    out = Path(args.out) if args.out else Path(config.out_dir) / "export"
    out.mkdir(parents=True, exist_ok=True)
    for table in args.table or sorted(EXPORTABLE_TABLES):
        count = store.export_csv(table, out / f"{table}.csv")
        print(f"{table}: {count} rows")
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="depaudit",
        description="Release-level dependency auditing over git histories.")
    parser.add_argument("--config", help="TOML config path"
                        " (default: $DEPAUDIT_CONFIG, then ./depaudit.toml)")
    parser.add_argument("-v", "--verbose", action="store_true",
                        help="log progress details")
    parser.add_argument("--version", action="version",
                        version=f"depaudit {__version__}")
    sub = parser.add_subparsers(dest="command", required=True)

    feeds_cmd = sub.add_parser("feeds", help="vulnerability feed mirror")
    feeds_sub = feeds_cmd.add_subparsers(dest="action", required=True)
    feeds_sync = feeds_sub.add_parser("sync", help="mirror NVD and EPSS data")
    feeds_sync.add_argument("--force", action="store_true",
                            help="re-ingest even when checksums match")
    feeds_sync.set_defaults(func=cmd_feeds_sync)

    repo_cmd = sub.add_parser("repo", help="repository registry")
    repo_sub = repo_cmd.add_subparsers(dest="action", required=True)
    repo_add = repo_sub.add_parser("add", help="register a repo and its tags")
    repo_add.add_argument("locator", help="path to a local git repository")
    repo_add.add_argument("--id", help="repository id (default: basename)")
    repo_add.set_defaults(func=cmd_repo_add)

    scan = sub.add_parser(
        "scan", help="mine, generate SBOMs, register, and analyze one repo")
    scan.add_argument("locator", help="repository path or known repo id")
    scan.add_argument("--id", help="repository id (default: basename)")
    scan.set_defaults(func=cmd_scan)

    report = sub.add_parser("report", help="write a JSON + CSV report")
    report.add_argument("kind", choices=[
        "timeline", "depth", "correlation", "persistence", "release"])
    report.add_argument("tag", nargs="?",
                        help="release tag (report release only)")
    report.add_argument("--repo", help="repository id (report release only)")
    report.add_argument("--granularity", choices=["month", "year"],
                        default="month")
    report.set_defaults(func=cmd_report)

    daemon_cmd = sub.add_parser("daemon", help="periodic sync and re-analysis")
    daemon_sub = daemon_cmd.add_subparsers(dest="action", required=True)
    daemon_run = daemon_sub.add_parser("run")
    daemon_run.add_argument("--once", action="store_true",
                            help="run a single tick and exit")
    daemon_run.add_argument("--interval", type=float,
                            help="seconds between ticks")
    daemon_run.add_argument("--port", type=int,
                            help="liveness port (0 picks a free one)")
    daemon_run.set_defaults(func=cmd_daemon_run)

    dead = sub.add_parser("deadletter", help="inspect or retry parked tasks")
    dead_sub = dead.add_subparsers(dest="action", required=True)
    dead_list = dead_sub.add_parser("list")
    dead_list.set_defaults(func=cmd_deadletter_list)
    dead_retry = dead_sub.add_parser("retry")
    dead_retry.add_argument("letter_id", type=int)
    dead_retry.set_defaults(func=cmd_deadletter_retry)

    export = sub.add_parser("export", help="dump store tables as CSV")
    export.add_argument("--out", help="target directory"
                        " (default: <out_dir>/export)")
    export.add_argument("--table", action="append",
                        help="table name; repeatable (default: all)")
    export.set_defaults(func=cmd_export)
    return parser


def main(argv: list[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(
        level=logging.INFO if args.verbose else logging.WARNING,
        format="%(levelname)s %(name)s: %(message)s")
    try:
        config = load_config(args.config)
        return args.func(args, config)
    except (ConfigError, StoreError, PipelineError, repominer.MiningError,
            feeds.FeedUnavailable, ValueError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    raise SystemExit(main())
