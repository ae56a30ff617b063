"""Single-file sqlite persistence shared by every stage of the pipeline.

One connection guarded by an RLock serializes writers; sqlite's rollback
journal (DELETE mode, kept deliberately instead of WAL so an untouched
database stays byte-identical) provides crash consistency.  All writes go
through explicit BEGIN IMMEDIATE transactions, and every upsert skips
no-op updates so that re-ingesting unchanged data never dirties a page.

Schema versioning uses PRAGMA user_version; migrations run stepwise on
open so an old database upgrades in place.
"""

from __future__ import annotations

import csv
import json
import sqlite3
import threading
from contextlib import contextmanager
from datetime import datetime, timezone
from pathlib import Path

from .model import (
    RELEASE_TRANSITIONS,
    AffectedSpec,
    AnalysisState,
    Component,
    EpssEntry,
    RangeSourceForm,
    Release,
    ReleaseState,
    Repository,
    Severity,
    VersionRange,
    VulnMatch,
    Vulnerability,
)
from .purl import format_purl, product_key_for

SCHEMA_VERSION = 1


class StoreError(RuntimeError):
    pass


class TransitionConflict(StoreError):
    """A conditional state transition found the row in a different state."""


def utc_iso(dt: datetime | None) -> str | None:
    if dt is None:
        return None
    if dt.tzinfo is None:
        dt = dt.replace(tzinfo=timezone.utc)
    return dt.astimezone(timezone.utc).isoformat()


def from_iso(text: str | None) -> datetime | None:
    if not text:
        return None
    if text.endswith("Z"):
        text = text[:-1] + "+00:00"
    dt = datetime.fromisoformat(text)
    if dt.tzinfo is None:
        dt = dt.replace(tzinfo=timezone.utc)
    return dt


_SCHEMA = """
CREATE TABLE repos (
    id TEXT PRIMARY KEY,
    name TEXT NOT NULL,
    clone_url TEXT NOT NULL,
    primary_language TEXT NOT NULL,
    stargazers INTEGER NOT NULL DEFAULT 0,
    contributor_count INTEGER NOT NULL DEFAULT 0,
    first_seen TEXT,
    state TEXT NOT NULL DEFAULT 'NEW',
    reject_reason TEXT
);
CREATE TABLE releases (
    repo_id TEXT NOT NULL REFERENCES repos(id),
    tag TEXT NOT NULL,
    release_date TEXT NOT NULL,
    commit_count INTEGER NOT NULL DEFAULT 0,
    contributor_count INTEGER NOT NULL DEFAULT 0,
    file_count INTEGER NOT NULL DEFAULT 0,
    lines_of_code INTEGER NOT NULL DEFAULT 0,
    lines_of_comments INTEGER NOT NULL DEFAULT 0,
    state TEXT NOT NULL DEFAULT 'NEW',
    fail_reason TEXT,
    PRIMARY KEY (repo_id, tag)
);
CREATE TABLE components (
    purl TEXT PRIMARY KEY,
    ecosystem TEXT NOT NULL,
    namespace TEXT,
    name TEXT NOT NULL,
    version TEXT,
    product_key TEXT NOT NULL,
    display_name TEXT NOT NULL,
    group_name TEXT,
    analysis_state TEXT NOT NULL DEFAULT 'NEW',
    in_flight INTEGER NOT NULL DEFAULT 0,
    analyzed_at TEXT
);
CREATE INDEX idx_components_state ON components(analysis_state, in_flight);
CREATE INDEX idx_components_product ON components(product_key);
CREATE TABLE release_components (
    repo_id TEXT NOT NULL,
    tag TEXT NOT NULL,
    purl TEXT NOT NULL REFERENCES components(purl),
    depth INTEGER NOT NULL DEFAULT -1,
    is_root INTEGER NOT NULL DEFAULT 0,
    PRIMARY KEY (repo_id, tag, purl),
    FOREIGN KEY (repo_id, tag) REFERENCES releases(repo_id, tag)
);
CREATE INDEX idx_release_components_purl ON release_components(purl);
CREATE TABLE vulns (
    cve_id TEXT PRIMARY KEY,
    published TEXT,
    last_modified TEXT,
    severity TEXT NOT NULL,
    cvss_v3 REAL,
    cvss_v2 REAL,
    description TEXT NOT NULL DEFAULT ''
);
CREATE TABLE affected_specs (
    cve_id TEXT NOT NULL REFERENCES vulns(cve_id),
    product_key TEXT NOT NULL,
    spec_json TEXT NOT NULL,
    PRIMARY KEY (cve_id, product_key, spec_json)
);
CREATE INDEX idx_affected_product ON affected_specs(product_key);
CREATE TABLE epss (
    cve_id TEXT PRIMARY KEY,
    score REAL NOT NULL,
    percentile REAL NOT NULL,
    model_date TEXT
);
CREATE TABLE matches (
    purl TEXT NOT NULL,
    cve_id TEXT NOT NULL,
    source TEXT NOT NULL,
    matched_at TEXT NOT NULL,
    PRIMARY KEY (purl, cve_id)
);
CREATE TABLE feed_snapshots (
    feed_key TEXT PRIMARY KEY,
    checksum TEXT NOT NULL,
    fetched_at TEXT NOT NULL,
    entry_count INTEGER NOT NULL DEFAULT 0
);
CREATE TABLE unmatched_cpes (
    cpe23 TEXT PRIMARY KEY,
    vendor TEXT NOT NULL,
    product TEXT NOT NULL,
    first_seen TEXT NOT NULL
);
CREATE TABLE dead_letters (
    id INTEGER PRIMARY KEY AUTOINCREMENT,
    routing_key TEXT NOT NULL,
    payload_json TEXT NOT NULL,
    attempts INTEGER NOT NULL,
    last_error TEXT,
    failed_at TEXT NOT NULL
);
CREATE TABLE query_cache (
    purl TEXT PRIMARY KEY,
    response_json TEXT NOT NULL,
    fetched_at TEXT NOT NULL
);
CREATE TABLE kv (
    key TEXT PRIMARY KEY,
    value TEXT NOT NULL
);
"""

EXPORTABLE_TABLES = {
    "repos", "releases", "components", "release_components", "vulns",
    "affected_specs", "epss", "matches", "feed_snapshots", "unmatched_cpes",
    "dead_letters",
}


def _spec_to_json(spec: AffectedSpec) -> str:
    r = spec.range
    return json.dumps(
        {
            "start": list(r.start) if r.start else None,
            "end": list(r.end) if r.end else None,
            "exact": list(r.exact) if r.exact is not None else None,
            "form": spec.source_form.value,
        },
        sort_keys=True,
    )


def _spec_from_json(product_key: str, text: str) -> AffectedSpec:
    raw = json.loads(text)
    return AffectedSpec(
        product_key=product_key,
        range=VersionRange(
            start=tuple(raw["start"]) if raw.get("start") else None,
            end=tuple(raw["end"]) if raw.get("end") else None,
            exact=tuple(raw["exact"]) if raw.get("exact") is not None else None,
        ),
        source_form=RangeSourceForm(raw.get("form", "CPE")),
    )


class Store:
    def __init__(self, path: str | Path = ":memory:"):
        self.path = str(path)
        self._conn = sqlite3.connect(self.path, check_same_thread=False)
        self._conn.isolation_level = None  # transactions are managed explicitly
        self._conn.row_factory = sqlite3.Row
        self._lock = threading.RLock()
        self._conn.execute("PRAGMA journal_mode=DELETE")
        self._conn.execute("PRAGMA foreign_keys=ON")
        self._migrate()

    def close(self) -> None:
        with self._lock:
            self._conn.close()

    # -- schema -------------------------------------------------------------

    def _migrate(self) -> None:
        with self._lock:
            current = self._conn.execute("PRAGMA user_version").fetchone()[0]
            if current > SCHEMA_VERSION:
                raise StoreError(
                    f"database schema {current} is newer than supported {SCHEMA_VERSION}"
                )
            while current < SCHEMA_VERSION:
                self._conn.execute("BEGIN IMMEDIATE")
                try:
                    if current == 0:
                        for statement in _SCHEMA.split(";"):
                            if statement.strip():
                                self._conn.execute(statement)
                    current += 1
                    self._conn.execute(f"PRAGMA user_version = {current}")
                except Exception:
                    self._conn.execute("ROLLBACK")
                    raise
                self._conn.execute("COMMIT")

    @contextmanager
    def _tx(self):
        with self._lock:
            self._conn.execute("BEGIN IMMEDIATE")
            try:
                yield self._conn
            except Exception:
                self._conn.execute("ROLLBACK")
                raise
            self._conn.execute("COMMIT")

    def _read(self, sql: str, params: tuple = ()) -> list[sqlite3.Row]:
        with self._lock:
            return self._conn.execute(sql, params).fetchall()

    # -- repos ----------------------------------------------------------------

    def upsert_repo(self, repo: Repository) -> None:
        with self._tx() as conn:
            row = conn.execute("SELECT * FROM repos WHERE id = ?", (repo.id,)).fetchone()
            values = (
                repo.name, repo.clone_url, repo.primary_language.value,
                repo.stargazers, repo.contributor_count, utc_iso(repo.first_seen),
            )
            if row is None:
                conn.execute(
                    "INSERT INTO repos (id, name, clone_url, primary_language,"
                    " stargazers, contributor_count, first_seen) VALUES (?,?,?,?,?,?,?)",
                    (repo.id,) + values,
                )
            elif (
                row["name"], row["clone_url"], row["primary_language"],
                row["stargazers"], row["contributor_count"], row["first_seen"],
            ) != values:
                conn.execute(
                    "UPDATE repos SET name=?, clone_url=?, primary_language=?,"
                    " stargazers=?, contributor_count=?, first_seen=? WHERE id=?",
                    values + (repo.id,),
                )

    def set_repo_state(self, repo_id: str, state: str, reason: str | None = None) -> None:
        with self._tx() as conn:
            row = conn.execute(
                "SELECT state, reject_reason FROM repos WHERE id=?", (repo_id,)
            ).fetchone()
            if row and (row["state"], row["reject_reason"]) == (state, reason):
                return
            conn.execute(
                "UPDATE repos SET state=?, reject_reason=? WHERE id=?",
                (state, reason, repo_id),
            )

    def get_repo(self, repo_id: str) -> dict | None:
        rows = self._read("SELECT * FROM repos WHERE id=?", (repo_id,))
        return dict(rows[0]) if rows else None

    def list_repos(self) -> list[dict]:
        return [dict(r) for r in self._read("SELECT * FROM repos ORDER BY id")]

    # -- releases ---------------------------------------------------------------

    def upsert_release(self, release: Release) -> bool:
        """Insert if unseen; returns True when a new row was created."""
        with self._tx() as conn:
            cur = conn.execute(
                "INSERT OR IGNORE INTO releases (repo_id, tag, release_date, state)"
                " VALUES (?,?,?,?)",
                (
                    release.repo_id, release.tag, utc_iso(release.release_date),
                    release.state.value,
                ),
            )
            return cur.rowcount == 1

    def update_release_stats(self, repo_id: str, tag: str, **stats: int) -> None:
        allowed = {
            "commit_count", "contributor_count", "file_count",
            "lines_of_code", "lines_of_comments",
        }
        unknown = set(stats) - allowed
        if unknown:
            raise StoreError(f"unknown release stats: {sorted(unknown)}")
        if not stats:
            return
        with self._tx() as conn:
            row = conn.execute(
                "SELECT * FROM releases WHERE repo_id=? AND tag=?", (repo_id, tag)
            ).fetchone()
            if row is None:
                raise StoreError(f"no release {repo_id}@{tag}")
            if all(row[k] == v for k, v in stats.items()):
                return
            cols = ", ".join(f"{k}=?" for k in sorted(stats))
            conn.execute(
                f"UPDATE releases SET {cols} WHERE repo_id=? AND tag=?",
                tuple(stats[k] for k in sorted(stats)) + (repo_id, tag),
            )

    def get_release(self, repo_id: str, tag: str) -> dict | None:
        rows = self._read(
            "SELECT * FROM releases WHERE repo_id=? AND tag=?", (repo_id, tag)
        )
        return dict(rows[0]) if rows else None

    def list_releases(self, repo_id: str) -> list[dict]:
        return [
            dict(r)
            for r in self._read(
                "SELECT * FROM releases WHERE repo_id=? ORDER BY release_date, tag",
                (repo_id,),
            )
        ]

    def transition_release(
        self,
        repo_id: str,
        tag: str,
        src: ReleaseState,
        dst: ReleaseState,
        fail_reason: str | None = None,
    ) -> None:
        """Conditional state change; raises TransitionConflict when the row
        is not currently in ``src`` (or the edge is not a legal one)."""
        if (src, dst) not in RELEASE_TRANSITIONS:
            raise TransitionConflict(f"illegal transition {src.value} -> {dst.value}")
        with self._tx() as conn:
            cur = conn.execute(
                "UPDATE releases SET state=?, fail_reason=?"
                " WHERE repo_id=? AND tag=? AND state=?",
                (dst.value, fail_reason, repo_id, tag, src.value),
            )
            if cur.rowcount != 1:
                raise TransitionConflict(
                    f"{repo_id}@{tag}: not in state {src.value}"
                )

    # -- components -----------------------------------------------------------

    def register_components(self, components: list[Component]) -> tuple[int, int]:
        """Insert unseen components in state NEW; returns (new, already_known)."""
        new = 0
        with self._tx() as conn:
            for comp in components:
                canonical = format_purl(comp.purl)
                cur = conn.execute(
                    "INSERT OR IGNORE INTO components (purl, ecosystem, namespace,"
                    " name, version, product_key, display_name, group_name,"
                    " analysis_state) VALUES (?,?,?,?,?,?,?,?,?)",
                    (
                        canonical, comp.purl.ecosystem, comp.purl.namespace,
                        comp.purl.name, comp.purl.version,
                        product_key_for(comp.purl), comp.display_name,
                        comp.group, AnalysisState.NEW.value,
                    ),
                )
                new += cur.rowcount
        return new, len(components) - new

    def claim_new_components(self, limit: int) -> list[str]:
        """Atomically pick up to ``limit`` NEW components for analysis.

        Claimed rows keep state NEW but are flagged in-flight so concurrent
        workers never see the same purl twice.
        """
        with self._tx() as conn:
            rows = conn.execute(
                "SELECT purl FROM components WHERE analysis_state=? AND in_flight=0"
                " ORDER BY purl LIMIT ?",
                (AnalysisState.NEW.value, limit),
            ).fetchall()
            purls = [r["purl"] for r in rows]
            for purl in purls:
                conn.execute(
                    "UPDATE components SET in_flight=1 WHERE purl=?", (purl,)
                )
        return purls

    def finish_analysis(self, purls: list[str], analyzed: bool, when: datetime) -> None:
        state = AnalysisState.ANALYZED if analyzed else AnalysisState.NEW
        stamp = utc_iso(when) if analyzed else None
        with self._tx() as conn:
            for purl in purls:
                conn.execute(
                    "UPDATE components SET analysis_state=?, in_flight=0,"
                    " analyzed_at=? WHERE purl=?",
                    (state.value, stamp, purl),
                )

    def reset_analyzed_components(self) -> int:
        """ANALYZED -> NEW (the daemon's re-check cadence); clears stale claims."""
        with self._tx() as conn:
            cur = conn.execute(
                "UPDATE components SET analysis_state=?, in_flight=0, analyzed_at=NULL"
                " WHERE analysis_state=? OR in_flight=1",
                (AnalysisState.NEW.value, AnalysisState.ANALYZED.value),
            )
            return cur.rowcount

    def count_components(self, state: AnalysisState | None = None) -> int:
        if state is None:
            return self._read("SELECT COUNT(*) c FROM components")[0]["c"]
        return self._read(
            "SELECT COUNT(*) c FROM components WHERE analysis_state=?",
            (state.value,),
        )[0]["c"]

    def get_component(self, purl: str) -> dict | None:
        rows = self._read("SELECT * FROM components WHERE purl=?", (purl,))
        return dict(rows[0]) if rows else None

    def list_components(self) -> list[dict]:
        return [dict(r) for r in self._read("SELECT * FROM components ORDER BY purl")]

    # -- release <-> component links -------------------------------------------

    def replace_release_components(
        self, repo_id: str, tag: str, rows: list[tuple[str, int, bool]]
    ) -> None:
        """rows: (canonical purl, depth, is_root)."""
        with self._tx() as conn:
            conn.execute(
                "DELETE FROM release_components WHERE repo_id=? AND tag=?",
                (repo_id, tag),
            )
            for purl, depth, is_root in rows:
                conn.execute(
                    "INSERT INTO release_components (repo_id, tag, purl, depth,"
                    " is_root) VALUES (?,?,?,?,?)",
                    (repo_id, tag, purl, depth, 1 if is_root else 0),
                )

    def components_for_release(self, repo_id: str, tag: str) -> list[dict]:
        return [
            dict(r)
            for r in self._read(
                "SELECT rc.purl, rc.depth, rc.is_root, c.ecosystem, c.product_key,"
                " c.version, c.analysis_state"
                " FROM release_components rc JOIN components c ON c.purl = rc.purl"
                " WHERE rc.repo_id=? AND rc.tag=? ORDER BY rc.purl",
                (repo_id, tag),
            )
        ]

    # -- vulnerabilities --------------------------------------------------------

    def upsert_vulnerability(self, vuln: Vulnerability) -> bool:
        """Last writer by ``last_modified`` wins; unchanged rows are not touched.

        Returns True when the database changed.
        """
        with self._tx() as conn:
            row = conn.execute(
                "SELECT last_modified FROM vulns WHERE cve_id=?", (vuln.cve_id,)
            ).fetchone()
            new_mod = utc_iso(vuln.last_modified)
            if row is not None:
                old_mod = row["last_modified"]
                if new_mod is None:
                    return False  # a stub never overwrites an existing row
                if old_mod is not None and new_mod <= old_mod:
                    return False
                conn.execute(
                    "UPDATE vulns SET published=?, last_modified=?, severity=?,"
                    " cvss_v3=?, cvss_v2=?, description=? WHERE cve_id=?",
                    (
                        utc_iso(vuln.published), new_mod, vuln.severity.value,
                        vuln.cvss_v3_base, vuln.cvss_v2_base, vuln.description,
                        vuln.cve_id,
                    ),
                )
                conn.execute(
                    "DELETE FROM affected_specs WHERE cve_id=?", (vuln.cve_id,)
                )
            else:
                conn.execute(
                    "INSERT INTO vulns (cve_id, published, last_modified, severity,"
                    " cvss_v3, cvss_v2, description) VALUES (?,?,?,?,?,?,?)",
                    (
                        vuln.cve_id, utc_iso(vuln.published), new_mod,
                        vuln.severity.value, vuln.cvss_v3_base, vuln.cvss_v2_base,
                        vuln.description,
                    ),
                )
            for spec in vuln.affected:
                conn.execute(
                    "INSERT OR IGNORE INTO affected_specs (cve_id, product_key,"
                    " spec_json) VALUES (?,?,?)",
                    (vuln.cve_id, spec.product_key, _spec_to_json(spec)),
                )
            return True

    def get_vulnerability(self, cve_id: str) -> Vulnerability | None:
        rows = self._read("SELECT * FROM vulns WHERE cve_id=?", (cve_id,))
        if not rows:
            return None
        row = rows[0]
        specs = self._read(
            "SELECT product_key, spec_json FROM affected_specs WHERE cve_id=?"
            " ORDER BY product_key, spec_json",
            (cve_id,),
        )
        return Vulnerability(
            cve_id=row["cve_id"],
            published=from_iso(row["published"]),
            last_modified=from_iso(row["last_modified"]),
            severity=Severity(row["severity"]),
            cvss_v3_base=row["cvss_v3"],
            cvss_v2_base=row["cvss_v2"],
            description=row["description"],
            affected=tuple(
                _spec_from_json(s["product_key"], s["spec_json"]) for s in specs
            ),
        )

    def count_vulnerabilities(self) -> int:
        return self._read("SELECT COUNT(*) c FROM vulns")[0]["c"]

    def specs_for_product(self, product_key: str) -> list[tuple[str, AffectedSpec]]:
        rows = self._read(
            "SELECT cve_id, product_key, spec_json FROM affected_specs"
            " WHERE product_key=? ORDER BY cve_id",
            (product_key,),
        )
        return [
            (r["cve_id"], _spec_from_json(r["product_key"], r["spec_json"]))
            for r in rows
        ]

    # -- EPSS ---------------------------------------------------------------------

    def upsert_epss(self, entries: list[EpssEntry]) -> int:
        changed = 0
        with self._tx() as conn:
            for e in entries:
                row = conn.execute(
                    "SELECT score, percentile, model_date FROM epss WHERE cve_id=?",
                    (e.cve_id,),
                ).fetchone()
                values = (e.score, e.percentile, e.model_date)
                if row is None:
                    conn.execute(
                        "INSERT INTO epss (cve_id, score, percentile, model_date)"
                        " VALUES (?,?,?,?)",
                        (e.cve_id,) + values,
                    )
                    changed += 1
                elif (row["score"], row["percentile"], row["model_date"]) != values:
                    conn.execute(
                        "UPDATE epss SET score=?, percentile=?, model_date=?"
                        " WHERE cve_id=?",
                        values + (e.cve_id,),
                    )
                    changed += 1
        return changed

    def epss_for(self, cve_id: str) -> EpssEntry | None:
        rows = self._read("SELECT * FROM epss WHERE cve_id=?", (cve_id,))
        if not rows:
            return None
        r = rows[0]
        return EpssEntry(
            cve_id=r["cve_id"], score=r["score"], percentile=r["percentile"],
            model_date=r["model_date"],
        )

    # -- matches --------------------------------------------------------------------

    def record_matches(self, matches: list[VulnMatch]) -> int:
        added = 0
        with self._tx() as conn:
            for m in matches:
                cur = conn.execute(
                    "INSERT OR IGNORE INTO matches (purl, cve_id, source, matched_at)"
                    " VALUES (?,?,?,?)",
                    (m.purl, m.cve_id, m.source.value, utc_iso(m.matched_at)),
                )
                added += cur.rowcount
        return added

    def matches_for_purl(self, purl: str) -> list[dict]:
        return [
            dict(r)
            for r in self._read(
                "SELECT * FROM matches WHERE purl=? ORDER BY cve_id", (purl,)
            )
        ]

    def matches_for_release(self, repo_id: str, tag: str) -> list[dict]:
        return [
            dict(r)
            for r in self._read(
                "SELECT m.purl, m.cve_id, m.source, m.matched_at, rc.depth,"
                " rc.is_root, v.published, v.severity, v.cvss_v3"
                " FROM release_components rc"
                " JOIN matches m ON m.purl = rc.purl"
                " LEFT JOIN vulns v ON v.cve_id = m.cve_id"
                " WHERE rc.repo_id=? AND rc.tag=? ORDER BY m.purl, m.cve_id",
                (repo_id, tag),
            )
        ]

    # -- feed snapshots ----------------------------------------------------------

    def get_feed_snapshot(self, feed_key: str) -> dict | None:
        rows = self._read("SELECT * FROM feed_snapshots WHERE feed_key=?", (feed_key,))
        return dict(rows[0]) if rows else None

    def put_feed_snapshot(
        self, feed_key: str, checksum: str, fetched_at: datetime, entry_count: int
    ) -> None:
        with self._tx() as conn:
            row = conn.execute(
                "SELECT checksum FROM feed_snapshots WHERE feed_key=?", (feed_key,)
            ).fetchone()
            if row is None:
                conn.execute(
                    "INSERT INTO feed_snapshots (feed_key, checksum, fetched_at,"
                    " entry_count) VALUES (?,?,?,?)",
                    (feed_key, checksum, utc_iso(fetched_at), entry_count),
                )
            elif row["checksum"] != checksum:
                # fetched_at deliberately keeps the time the content changed
                conn.execute(
                    "UPDATE feed_snapshots SET checksum=?, fetched_at=?,"
                    " entry_count=? WHERE feed_key=?",
                    (checksum, utc_iso(fetched_at), entry_count, feed_key),
                )

    # -- unmatched CPEs -------------------------------------------------------------

    def record_unmatched_cpe(
        self, cpe23: str, vendor: str, product: str, when: datetime
    ) -> None:
        with self._tx() as conn:
            conn.execute(
                "INSERT OR IGNORE INTO unmatched_cpes (cpe23, vendor, product,"
                " first_seen) VALUES (?,?,?,?)",
                (cpe23, vendor, product, utc_iso(when)),
            )

    def list_unmatched_cpes(self) -> list[dict]:
        return [
            dict(r)
            for r in self._read("SELECT * FROM unmatched_cpes ORDER BY cpe23")
        ]

    # -- dead letters ------------------------------------------------------------------

    def add_dead_letter(
        self,
        routing_key: str,
        payload: dict,
        attempts: int,
        last_error: str,
        when: datetime,
    ) -> int:
        with self._tx() as conn:
            cur = conn.execute(
                "INSERT INTO dead_letters (routing_key, payload_json, attempts,"
                " last_error, failed_at) VALUES (?,?,?,?,?)",
                (
                    routing_key, json.dumps(payload, sort_keys=True), attempts,
                    last_error, utc_iso(when),
                ),
            )
            return cur.lastrowid

    def list_dead_letters(self) -> list[dict]:
        out = []
        for r in self._read("SELECT * FROM dead_letters ORDER BY id"):
            d = dict(r)
            d["payload"] = json.loads(d.pop("payload_json"))
            out.append(d)
        return out

    def pop_dead_letter(self, letter_id: int) -> dict | None:
        with self._tx() as conn:
            row = conn.execute(
                "SELECT * FROM dead_letters WHERE id=?", (letter_id,)
            ).fetchone()
            if row is None:
                return None
            conn.execute("DELETE FROM dead_letters WHERE id=?", (letter_id,))
            d = dict(row)
            d["payload"] = json.loads(d.pop("payload_json"))
            return d

    # -- remote query cache ----------------------------------------------------------

    def cache_get(self, purl: str, now: datetime, ttl_seconds: int) -> list | None:
        rows = self._read("SELECT * FROM query_cache WHERE purl=?", (purl,))
        if not rows:
            return None
        fetched = from_iso(rows[0]["fetched_at"])
        if fetched is None or (now - fetched).total_seconds() > ttl_seconds:
            return None
        return json.loads(rows[0]["response_json"])

    def cache_put(self, purl: str, response: list, now: datetime) -> None:
        with self._tx() as conn:
            conn.execute(
                "INSERT OR REPLACE INTO query_cache (purl, response_json, fetched_at)"
                " VALUES (?,?,?)",
                (purl, json.dumps(response, sort_keys=True), utc_iso(now)),
            )

    # -- misc ---------------------------------------------------------------------------

    def kv_get(self, key: str) -> str | None:
        rows = self._read("SELECT value FROM kv WHERE key=?", (key,))
        return rows[0]["value"] if rows else None

    def kv_set(self, key: str, value: str) -> None:
        with self._tx() as conn:
            row = conn.execute("SELECT value FROM kv WHERE key=?", (key,)).fetchone()
            if row is None:
                conn.execute("INSERT INTO kv (key, value) VALUES (?,?)", (key, value))
            elif row["value"] != value:
                conn.execute("UPDATE kv SET value=? WHERE key=?", (value, key))

    def export_csv(self, table: str, out_path: str | Path) -> int:
        if table not in EXPORTABLE_TABLES:
            raise StoreError(f"unknown table {table!r}")
        with self._lock:
            info = self._conn.execute(f"PRAGMA table_info({table})").fetchall()
            columns = [r["name"] for r in info]
            pk_cols = [r["name"] for r in info if r["pk"]] or columns
            rows = self._conn.execute(
                f"SELECT * FROM {table} ORDER BY {', '.join(pk_cols)}"
            ).fetchall()
        with open(out_path, "w", newline="", encoding="utf-8") as fh:
            writer = csv.writer(fh)
            writer.writerow(columns)
            for row in rows:
                writer.writerow([row[c] for c in columns])
        return len(rows)
