"""In-process orchestration: routed work queue, scan flow, and the daemon.

The broker keeps the messaging contract small: named routing keys, round
robin across the subscribers of a key, optional broadcast, bounded retries
with a dead-letter table behind them. Everything runs inside one process;
the store is the only state shared between workers, so the whole pipeline
behaves identically with every pool size set to one.
"""

from __future__ import annotations

import logging
import queue
import socket
import tempfile
import threading
from dataclasses import dataclass
from datetime import datetime, timezone
from pathlib import Path
from typing import Callable

import requests

from . import analytics, feeds, repominer
from .config import Config
from .genmachine import GenContext, GenOutcome, detect_ecosystem, generate_release
from .matcher import analyze_batch, match_offline, RemoteIndexClient
from .model import ReleaseState, TaskEnvelope
from .ratelimit import TokenBucket
from .sbom import depth_map, parse_sbom
from .store import Store, TransitionConflict

log = logging.getLogger(__name__)


def _utcnow() -> datetime:
    return datetime.now(timezone.utc)


class PipelineError(RuntimeError):
    """A fatal orchestration problem (bad locator, missing wiring)."""


def feed_source_from(config: Config):
    """Local mirror directory when configured, else the HTTP source, else None."""
    if config.feed_dir:
        return feeds.LocalFeedDirectory(config.feed_dir)
    if config.feed_url:
        return feeds.HttpFeedSource(config.feed_url, requests.Session())
    return None


class DispatchError(PipelineError):
    """A task was dispatched to a routing key nobody subscribed to."""


class Subscriber:
    """One delivery target: an inbox plus the handler that drains it."""

    def __init__(self, broker: "Broker", routing_key: str,
                 handler: Callable[[TaskEnvelope], None]):
        self.broker = broker
        self.routing_key = routing_key
        self.handler = handler
        self.inbox: queue.Queue[TaskEnvelope] = queue.Queue()
        self.delivered = 0

    def process_one(self, timeout: float | None = None) -> bool:
        """Run the next queued task; False when the inbox stayed empty."""
        try:
            if timeout is None:
                task = self.inbox.get_nowait()
            else:
                task = self.inbox.get(timeout=timeout)
        except queue.Empty:
            return False
        self.delivered += 1
        try:
            self.handler(task)
        except Exception as exc:
            try:
                self.broker._failed(task, exc)
            except Exception:
                log.exception("could not schedule retry for %s", task.routing_key)
        finally:
            self.broker._done()
        return True


class Broker:
    """Routing-keyed in-process queue with round-robin and broadcast delivery."""

    def __init__(self, store: Store | None = None, max_retries: int = 3):
        self.store = store
        self.max_retries = max_retries
        self._subscribers: dict[str, list[Subscriber]] = {}
        self._cursor: dict[str, int] = {}
        self._lock = threading.Lock()
        self._idle = threading.Condition(self._lock)
        self._pending = 0
        self.dead_lettered = 0

    def subscribe(self, routing_key: str,
                  handler: Callable[[TaskEnvelope], None]) -> Subscriber:
        sub = Subscriber(self, routing_key, handler)
        with self._lock:
            self._subscribers.setdefault(routing_key, []).append(sub)
            self._cursor.setdefault(routing_key, 0)
        return sub

    def dispatch(self, routing_key: str, payload: dict | None = None,
                 broadcast: bool = False, attempt: int = 0) -> int:
        """Queue one task; returns the number of deliveries made."""
        with self._lock:
            subs = self._subscribers.get(routing_key)
            if not subs:
                raise DispatchError(f"no subscriber for routing key {routing_key!r}")
            if broadcast:
                targets = list(subs)
            else:
                targets = [subs[self._cursor[routing_key] % len(subs)]]
                self._cursor[routing_key] += 1
            self._pending += len(targets)
        for target in targets:
            target.inbox.put(TaskEnvelope(
                routing_key=routing_key, payload=dict(payload or {}),
                attempt=attempt, enqueued_at=_utcnow()))
        return len(targets)

    def _done(self) -> None:
        with self._idle:
            self._pending -= 1
            if self._pending <= 0:
                self._idle.notify_all()

    def _failed(self, task: TaskEnvelope, exc: Exception) -> None:
        attempts = task.attempt + 1
        if attempts >= self.max_retries:
            log.warning("%s dead-lettered after %d attempts: %s",
                        task.routing_key, attempts, exc)
            self.dead_lettered += 1
            if self.store is not None:
                self.store.add_dead_letter(
                    task.routing_key, task.payload, attempts,
                    f"{type(exc).__name__}: {exc}", _utcnow())
        else:
            self.dispatch(task.routing_key, task.payload, attempt=attempts)

    def join(self, timeout: float | None = None) -> bool:
        """Block until every dispatched task has finished (or retried out)."""
        with self._idle:
            return self._idle.wait_for(lambda: self._pending == 0, timeout)

    def drain(self) -> None:
        """Process queued work on the calling thread until nothing moves.

        The serial twin of running worker pools; used by tests and one-shot
        commands that want no threads at all.
        """
        moved = True
        while moved:
            moved = False
            with self._lock:
                subs = [s for group in self._subscribers.values() for s in group]
            for sub in subs:
                while sub.process_one():
                    moved = True


class WorkerPool:
    """N worker threads, each its own subscriber on one routing key."""

    def __init__(self, broker: Broker, routing_key: str,
                 handler: Callable[[TaskEnvelope], None], size: int = 1):
        if size < 1:
            raise ValueError("pool size must be at least one")
        self.routing_key = routing_key
        self.subscribers = [broker.subscribe(routing_key, handler)
                            for _ in range(size)]
        self._stop = threading.Event()
        self._threads: list[threading.Thread] = []

    def start(self) -> None:
        for n, sub in enumerate(self.subscribers):
            thread = threading.Thread(
                target=self._serve, args=(sub,),
                name=f"{self.routing_key}#{n}", daemon=True)
            thread.start()
            self._threads.append(thread)

    def _serve(self, sub: Subscriber) -> None:
        while not self._stop.is_set():
            sub.process_one(timeout=0.05)

    def stop(self) -> None:
        self._stop.set()
        for thread in self._threads:
            thread.join()
        self._threads.clear()
        self._stop.clear()


@dataclass
class ScanSummary:
    repo_id: str
    rejected: bool = False
    reject_reason: str | None = None
    releases: int = 0
    done: int = 0
    failed: int = 0
    dead_letters: int = 0

    @property
    def exit_code(self) -> int:
        return 1 if self.failed or self.dead_letters else 0


# manifests that turn an external adapter on for a worktree
_ADAPTER_MANIFESTS = {
    "npm": ("package.json",),
    "maven": ("pom.xml",),
    "gem": ("Gemfile.lock", "Gemfile"),
    "composer": ("composer.json",),
    "pypi": ("requirements.txt", "pyproject.toml", "setup.py"),
}


def _pick_ecosystem(worktree: Path, adapters: dict[str, list[str]]) -> str | None:
    eco = detect_ecosystem(worktree)
    if eco:
        return eco
    for eco, names in _ADAPTER_MANIFESTS.items():
        if eco in adapters and any((worktree / n).is_file() for n in names):
            return eco
    return None


class Pipeline:
    """Wires the routing keys to their handlers with configured pool sizes."""

    def __init__(self, config: Config, store: Store | None = None,
                 remote_client: RemoteIndexClient | None = None):
        self.config = config
        self.store = store if store is not None else Store(config.store_path)
        self.broker = Broker(self.store, max_retries=config.max_retries)
        if remote_client is None and config.remote_index_url:
            remote_client = RemoteIndexClient(
                config.remote_index_url, requests.Session(),
                TokenBucket(rate_per_minute=config.requests_per_minute))
        self._remote_client = remote_client
        handlers = {
            "repo.mine": self._handle_mine,
            "sbom.generate": self._handle_generate,
            "components.analyze": self._handle_analyze,
            "feeds.sync": self._handle_feeds,
        }
        self.pools = [
            WorkerPool(self.broker, key, handler, config.workers.get(key, 1))
            for key, handler in handlers.items()
        ]

    def start(self) -> None:
        for pool in self.pools:
            pool.start()

    def stop(self) -> None:
        for pool in self.pools:
            pool.stop()

    def __enter__(self) -> "Pipeline":
        self.start()
        return self

    def __exit__(self, *exc_info) -> None:
        self.stop()

    # -- handlers ---------------------------------------------------------------

    def _handle_mine(self, task: TaskEnvelope) -> None:
        payload = task.payload
        repominer.mine_repository(
            self.store, payload["path"], now=_utcnow(),
            repo_id=payload.get("repo_id"))

    def _handle_generate(self, task: TaskEnvelope) -> None:
        repo_id = task.payload["repo_id"]
        tag = task.payload["tag"]
        repo = self.store.get_repo(repo_id)
        if repo is None:
            raise PipelineError(f"no repository {repo_id}")
        with tempfile.TemporaryDirectory(prefix="depaudit-gen-") as tmp:
            worktree = Path(tmp) / "tree"
            worktree.mkdir()
            for rel_path, data in repominer._tree_files(Path(repo["clone_url"]), tag):
                target = worktree / rel_path
                target.parent.mkdir(parents=True, exist_ok=True)
                target.write_bytes(data)
            ecosystem = _pick_ecosystem(worktree, self.config.adapters)
            ctx = GenContext(
                worktree=worktree, repo_id=repo_id, tag=tag,
                ecosystem=ecosystem or "", shared_dir=Path(self.config.shared_sbom_dir),
                timeout=self.config.generator_timeout,
                adapters=self.config.adapters)
            generate_release(ctx)
        if ctx.outcome is GenOutcome.DONE:
            bom = parse_sbom(ctx.output_path())
            self.store.register_components(list(bom.components))
            depths = depth_map(bom)
            roots = set(bom.roots)
            self.store.replace_release_components(
                repo_id, tag,
                [(purl, depth, purl in roots)
                 for purl, depth in sorted(depths.items())])
            self._transition(repo_id, tag, ReleaseState.DONE)
        else:
            reason = ctx.fail_reason.value if ctx.fail_reason else "GENERATOR_ERROR"
            log.warning("generation failed for %s@%s: %s %s",
                        repo_id, tag, reason, ctx.fail_detail)
            self._transition(repo_id, tag, ReleaseState.FAIL, reason)

    def _transition(self, repo_id: str, tag: str, dst: ReleaseState,
                    fail_reason: str | None = None) -> None:
        try:
            self.store.transition_release(
                repo_id, tag, ReleaseState.NEW, dst, fail_reason=fail_reason)
        except TransitionConflict:
            # someone else already settled this release; their word stands
            log.info("release %s@%s already settled", repo_id, tag)

    def _handle_analyze(self, task: TaskEnvelope) -> None:
        if self._remote_client is not None:
            while True:
                report = analyze_batch(
                    self.store, self._remote_client, now=_utcnow(),
                    cache_ttl=self.config.cache_ttl_seconds)
                if report.claimed == 0 or report.analyzed == 0:
                    break
        else:
            while match_offline(self.store, _utcnow()).claimed:
                pass

    def _handle_feeds(self, task: TaskEnvelope) -> None:
        source = self.feed_source()
        if source is None:
            log.info("no feed source configured; sync is a no-op")
            return
        feeds.sync_nvd(self.store, source, now=_utcnow(),
                       years=self.config.nvd_years)
        feeds.sync_epss(self.store, source, now=_utcnow())

    def feed_source(self):
        return feed_source_from(self.config)

    # -- orchestration ----------------------------------------------------------

    def _resolve_repo(self, locator: str, repo_id: str | None) -> tuple[str, str]:
        path = Path(locator)
        if path.is_dir():
            rid = repo_id or (path.name.removesuffix(".git") or path.name)
            return str(path), rid
        repo = self.store.get_repo(locator)
        if repo is None:
            raise PipelineError(
                f"{locator!r} is neither a directory nor a known repository id")
        return repo["clone_url"], repo["id"]

    def scan(self, locator: str, repo_id: str | None = None) -> ScanSummary:
        """Mine, generate, register, and analyze one repository."""
        path, rid = self._resolve_repo(locator, repo_id)
        before_dead = self.broker.dead_lettered
        self.broker.dispatch("repo.mine", {"path": path, "repo_id": rid})
        self.broker.join()
        repo = self.store.get_repo(rid)
        if repo is None:
            raise PipelineError(f"mining produced no repository row for {rid!r}")
        if repo["state"] == repominer.REJECTED_NO_RELEASES:
            return ScanSummary(repo_id=rid, rejected=True,
                               reject_reason=repo["reject_reason"])
        for rel in self.store.list_releases(rid):
            if rel["state"] == ReleaseState.FAIL.value:
                try:
                    self.store.transition_release(
                        rid, rel["tag"], ReleaseState.FAIL, ReleaseState.NEW)
                except TransitionConflict:
                    pass
        for rel in self.store.list_releases(rid):
            if rel["state"] == ReleaseState.NEW.value:
                self.broker.dispatch(
                    "sbom.generate", {"repo_id": rid, "tag": rel["tag"]})
        self.broker.join()
        self.broker.dispatch("components.analyze", {})
        self.broker.join()
        releases = self.store.list_releases(rid)
        return ScanSummary(
            repo_id=rid,
            releases=len(releases),
            done=sum(r["state"] == ReleaseState.DONE.value for r in releases),
            failed=sum(r["state"] == ReleaseState.FAIL.value for r in releases),
            dead_letters=self.broker.dead_lettered - before_dead,
        )


def write_scan_reports(store: Store, out_dir: str | Path, repo_id: str) -> list[Path]:
    """Scan summary plus one detail report per release."""
    written = []
    doc = analytics.build_scan_report(store, repo_id)
    written.extend(analytics.write_report(out_dir, repo_id, "scan", doc))
    for rel in store.list_releases(repo_id):
        detail = analytics.build_release_report(store, repo_id, rel["tag"])
        safe_tag = rel["tag"].replace("/", "-")
        written.extend(analytics.write_report(
            out_dir, repo_id, "release", detail, name=f"release-{safe_tag}"))
    return written


class LivenessServer:
    """Answers every TCP connection with one status line, then closes it."""

    def __init__(self, payload_fn: Callable[[], str],
                 host: str = "127.0.0.1", port: int = 0):
        self._payload_fn = payload_fn
        self._sock = socket.create_server((host, port))
        self._sock.settimeout(0.1)
        self.host, self.port = self._sock.getsockname()[:2]
        self._stop = threading.Event()
        self._thread: threading.Thread | None = None

    def start(self) -> None:
        self._thread = threading.Thread(
            target=self._serve, name="liveness", daemon=True)
        self._thread.start()

    def _serve(self) -> None:
        while not self._stop.is_set():
            try:
                conn, _ = self._sock.accept()
            except socket.timeout:
                continue
            except OSError:
                break
            with conn:
                try:
                    conn.sendall(self._payload_fn().encode("ascii") + b"\n")
                except OSError:
                    pass

    def stop(self) -> None:
        self._stop.set()
        if self._thread is not None:
            self._thread.join()
            self._thread = None
        self._sock.close()


class Daemon:
    """Periodic feed sync and re-analysis with a liveness socket."""

    def __init__(self, pipeline: Pipeline, interval: float = 3600.0,
                 liveness_port: int = 0):
        self.pipeline = pipeline
        self.interval = interval
        self.last_tick: datetime | None = None
        self.ticks = 0
        self.skipped_ticks = 0
        self._guard = threading.Lock()
        self.liveness = LivenessServer(self._status_line, port=liveness_port)

    def _status_line(self) -> str:
        stamp = self.last_tick.isoformat() if self.last_tick else "never"
        return f"ok {stamp}"

    def tick(self) -> bool:
        """One sync-then-reanalyze cycle; returns False when one was running."""
        if not self._guard.acquire(blocking=False):
            log.warning("previous tick still running; skipping this one")
            self.skipped_ticks += 1
            return False
        try:
            self.pipeline.broker.dispatch("feeds.sync", {})
            self.pipeline.broker.join()
            reset = self.pipeline.store.reset_analyzed_components()
            if reset:
                log.info("re-queued %d analyzed components", reset)
            self.pipeline.broker.dispatch("components.analyze", {})
            self.pipeline.broker.join()
            self.last_tick = _utcnow()
            self.ticks += 1
            return True
        finally:
            self._guard.release()

    def run(self, stop_event: threading.Event | None = None,
            max_ticks: int | None = None) -> None:
        stop = stop_event if stop_event is not None else threading.Event()
        self.liveness.start()
        try:
            while not stop.is_set():
                self.tick()
                if max_ticks is not None and self.ticks >= max_ticks:
                    break
                stop.wait(self.interval)
        finally:
            self.liveness.stop()
