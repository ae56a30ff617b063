"""Longitudinal metrics over stored releases and their vulnerability matches.

Inputs come from the store in known-at-release mode: a vulnerability counts
against a release only when it was published on or before the release date,
so the numbers describe what a maintainer could have known at the time.
The all-time view stays available in the per-release report under its own
label.

Everything here is read-only over the store. Report documents are plain
dicts serialized deterministically (sorted keys, fixed separators, no
timestamps); wall-clock metadata lives in a separate run_meta.json so two
identical runs produce byte-identical report files.
"""

from __future__ import annotations

import csv
import json
import statistics
from collections import Counter, defaultdict
from datetime import date, datetime, timezone
from pathlib import Path
from typing import Iterable, Mapping

from .matcher import filter_known_at
from .model import PersistenceRecord, Severity
from .store import Store, from_iso

SCHEMA_VERSION = 1

PER_RELEASE = "per_release"
PER_REPO = "per_repo"

# Depth histogram buckets; everything five or more hops from a root lands in
# the last bucket, unreachable components (-1) are reported separately.
DEPTH_BUCKETS = ("0", "1", "2", "3", "4", "5+")


class _UndefinedCorrelation:
    """Sentinel returned when a correlation input has zero variance."""

    __slots__ = ()

    def __repr__(self) -> str:
        return "UNDEFINED_CORRELATION"


UNDEFINED_CORRELATION = _UndefinedCorrelation()


def pearson(xs: Iterable[float], ys: Iterable[float]):
    """Sample Pearson coefficient, or UNDEFINED_CORRELATION on constant input."""
    xs = list(xs)
    ys = list(ys)
    if len(xs) != len(ys):
        raise ValueError(f"length mismatch: {len(xs)} vs {len(ys)}")
    if len(xs) < 2:
        raise ValueError("correlation needs at least two observations")
    try:
        return statistics.correlation(xs, ys)
    except statistics.StatisticsError:
        return UNDEFINED_CORRELATION


def _utc_date(value) -> date:
    """Truncate a timestamp to its UTC calendar date."""
    if isinstance(value, str):
        value = from_iso(value)
    if isinstance(value, datetime):
        if value.tzinfo is not None:
            value = value.astimezone(timezone.utc)
        return value.date()
    if isinstance(value, date):
        return value
    raise TypeError(f"not a date: {value!r}")


# ---------------------------------------------------------------------------
# persistence
# ---------------------------------------------------------------------------

def persistence(
    repo_id: str,
    releases: Iterable[Mapping],
    matches_by_tag: Mapping[str, Iterable[str]],
) -> list[PersistenceRecord]:
    """Exposure windows per CVE across one repository's release sequence.

    A CVE that never disappears from the sequence yields no record: only
    disclosed-and-patched vulnerabilities have a measurable window. A CVE
    that comes back after clearing still yields one record, for its first
    window.
    """
    ordered = sorted(
        ((_utc_date(rel["release_date"]), rel["tag"]) for rel in releases)
    )
    sets = [frozenset(matches_by_tag.get(tag, ())) for _, tag in ordered]
    records = []
    for cve in sorted(set().union(*sets) if sets else ()):
        first = next(i for i, cves in enumerate(sets) if cve in cves)
        cleared = next(
            (j for j in range(first + 1, len(sets)) if cve not in sets[j]), None
        )
        if cleared is None:
            continue
        d0, t0 = ordered[first]
        d1, t1 = ordered[cleared]
        records.append(PersistenceRecord(repo_id, cve, t0, t1, (d1 - d0).days))
    return records


def _severity_value(raw) -> str:
    if raw is None:
        return Severity.NONE.value
    if isinstance(raw, Severity):
        return raw.value
    return Severity(str(raw)).value


def persistence_curves(
    records: Iterable[PersistenceRecord],
    severity_of: Mapping[str, object],
) -> dict[str, list[dict]]:
    """Per-severity persistence distribution over day thresholds.

    Each point carries the per-bin share (``percent``) and the running
    ``cumulative`` fraction; the cumulative column is monotone and reaches
    exactly 1.0 on non-empty partitions. Severities with no records map to
    empty lists.
    """
    days_by_severity: dict[str, list[int]] = {s.value: [] for s in Severity}
    for rec in records:
        days_by_severity[_severity_value(severity_of.get(rec.cve_id))].append(rec.days)
    curves: dict[str, list[dict]] = {}
    for severity, day_values in days_by_severity.items():
        total = len(day_values)
        points = []
        running = 0
        for day, count in sorted(Counter(day_values).items()):
            running += count
            points.append(
                {
                    "days": day,
                    "count": count,
                    "percent": round(100.0 * count / total, 2),
                    "cumulative": running / total,
                }
            )
        curves[severity] = points
    return curves


# ---------------------------------------------------------------------------
# correlations
# ---------------------------------------------------------------------------

def correlation_table(rows: Iterable[Mapping], unit: str = PER_RELEASE) -> list[dict]:
    """Per-language correlation of size metrics against vulnerability counts.

    ``unit`` selects the observation: every release, or each repository's
    latest release only. Languages with fewer than two observations are
    omitted; a zero-variance metric yields UNDEFINED_CORRELATION for that
    coefficient.
    """
    rows = list(rows)
    if unit == PER_REPO:
        latest: dict[str, tuple[tuple, Mapping]] = {}
        for row in rows:
            stamp = (_utc_date(row["release_date"]), row["tag"])
            held = latest.get(row["repo_id"])
            if held is None or stamp > held[0]:
                latest[row["repo_id"]] = (stamp, row)
        rows = [row for _, row in latest.values()]
    elif unit != PER_RELEASE:
        raise ValueError(f"unknown correlation unit: {unit!r}")

    by_language: dict[str, list[Mapping]] = defaultdict(list)
    for row in rows:
        by_language[str(row["language"])].append(row)

    table = []
    for language in sorted(by_language):
        group = by_language[language]
        if len(group) < 2:
            continue
        vulns = [float(r["vulnerability_count"]) for r in group]
        table.append(
            {
                "language": language,
                "unit": unit,
                "observations": len(group),
                "commits_vs_vulnerabilities": pearson(
                    [float(r["commit_count"]) for r in group], vulns
                ),
                "contributors_vs_vulnerabilities": pearson(
                    [float(r["contributor_count"]) for r in group], vulns
                ),
            }
        )
    return table


# ---------------------------------------------------------------------------
# timelines
# ---------------------------------------------------------------------------

def _period_key(day: date, granularity: str) -> str:
    if granularity == "year":
        return f"{day.year:04d}"
    return f"{day.year:04d}-{day.month:02d}"


def _iter_periods(first: date, last: date, granularity: str):
    if granularity == "year":
        for year in range(first.year, last.year + 1):
            yield f"{year:04d}"
        return
    year, month = first.year, first.month
    while (year, month) <= (last.year, last.month):
        yield f"{year:04d}-{month:02d}"
        month += 1
        if month == 13:
            year, month = year + 1, 1


def release_timelines(
    rows: Iterable[Mapping], granularity: str = "month"
) -> dict[str, list[dict]]:
    """Per-language release counts over calendar periods.

    A release is vulnerable when it has at least one known-at match. Every
    period between a language's first and last release is emitted, including
    empty ones, so the series plots without gaps.
    """
    if granularity not in ("month", "year"):
        raise ValueError(f"granularity must be month or year, got {granularity!r}")
    by_language: dict[str, list[tuple[date, bool]]] = defaultdict(list)
    for row in rows:
        by_language[str(row["language"])].append(
            (_utc_date(row["release_date"]), bool(row["vulnerable"]))
        )
    timelines: dict[str, list[dict]] = {}
    for language in sorted(by_language):
        dated = by_language[language]
        releases: Counter = Counter()
        vulnerable: Counter = Counter()
        for day, is_vulnerable in dated:
            key = _period_key(day, granularity)
            releases[key] += 1
            if is_vulnerable:
                vulnerable[key] += 1
        first = min(day for day, _ in dated)
        last = max(day for day, _ in dated)
        timelines[language] = [
            {
                "period": period,
                "releases": releases.get(period, 0),
                "vulnerable_releases": vulnerable.get(period, 0),
            }
            for period in _iter_periods(first, last, granularity)
        ]
    return timelines


# ---------------------------------------------------------------------------
# depth distributions
# ---------------------------------------------------------------------------

def _depth_bucket(depth: int) -> str | None:
    if depth < 0:
        return None
    return "5+" if depth >= 5 else str(depth)


def _histogram(depths: list[int]) -> dict:
    counts = {bucket: 0 for bucket in DEPTH_BUCKETS}
    unreachable = 0
    for depth in depths:
        bucket = _depth_bucket(depth)
        if bucket is None:
            unreachable += 1
        else:
            counts[bucket] += 1
    total = sum(counts.values())
    percent = {
        bucket: (round(100.0 * count / total, 2) if total else 0.0)
        for bucket, count in counts.items()
    }
    return {
        "counts": counts,
        "percent": percent,
        "total": total,
        "unreachable": unreachable,
    }


def depth_report(rows: Iterable[Mapping]) -> dict[str, dict]:
    """Per-language depth histograms for all and for vulnerable dependencies."""
    by_language: dict[str, tuple[list[int], list[int]]] = defaultdict(
        lambda: ([], [])
    )
    for row in rows:
        all_depths, vulnerable_depths = by_language[str(row["language"])]
        all_depths.append(int(row["depth"]))
        if row["vulnerable"]:
            vulnerable_depths.append(int(row["depth"]))
    return {
        language: {
            "all": _histogram(all_depths),
            "vulnerable": _histogram(vulnerable_depths),
        }
        for language, (all_depths, vulnerable_depths) in sorted(by_language.items())
    }


# ---------------------------------------------------------------------------
# store readers
# ---------------------------------------------------------------------------

def _known_at(store: Store, repo_id: str, tag: str, release_date: datetime) -> list[dict]:
    return filter_known_at(store.matches_for_release(repo_id, tag), release_date)


def release_observations(store: Store) -> list[dict]:
    """One row per stored release: size metrics plus known-at vulnerability data.

    Vulnerability counts are deduplicated by CVE id, so one CVE hitting two
    components of the same release counts once.
    """
    rows = []
    for repo in store.list_repos():
        for rel in store.list_releases(repo["id"]):
            release_date = from_iso(rel["release_date"])
            cves = {m["cve_id"] for m in _known_at(store, repo["id"], rel["tag"], release_date)}
            rows.append(
                {
                    "repo_id": repo["id"],
                    "language": repo["primary_language"],
                    "tag": rel["tag"],
                    "release_date": rel["release_date"],
                    "commit_count": rel["commit_count"],
                    "contributor_count": rel["contributor_count"],
                    "vulnerability_count": len(cves),
                    "vulnerable": bool(cves),
                }
            )
    return rows


def depth_observations(store: Store) -> list[dict]:
    """One row per (release, component) with depth and known-at vulnerability flag."""
    rows = []
    for repo in store.list_repos():
        for rel in store.list_releases(repo["id"]):
            release_date = from_iso(rel["release_date"])
            vulnerable_purls = {
                m["purl"] for m in _known_at(store, repo["id"], rel["tag"], release_date)
            }
            for comp in store.components_for_release(repo["id"], rel["tag"]):
                rows.append(
                    {
                        "language": repo["primary_language"],
                        "depth": comp["depth"],
                        "vulnerable": comp["purl"] in vulnerable_purls,
                    }
                )
    return rows


def persistence_records(store: Store) -> list[PersistenceRecord]:
    records = []
    for repo in store.list_repos():
        releases = store.list_releases(repo["id"])
        matches_by_tag = {}
        for rel in releases:
            release_date = from_iso(rel["release_date"])
            matches_by_tag[rel["tag"]] = {
                m["cve_id"] for m in _known_at(store, repo["id"], rel["tag"], release_date)
            }
        records.extend(persistence(repo["id"], releases, matches_by_tag))
    return records


def severity_lookup(store: Store, cve_ids: Iterable[str]) -> dict[str, str]:
    lookup = {}
    for cve_id in sorted(set(cve_ids)):
        vuln = store.get_vulnerability(cve_id)
        lookup[cve_id] = vuln.severity.value if vuln else Severity.NONE.value
    return lookup


# ---------------------------------------------------------------------------
# report documents
# ---------------------------------------------------------------------------

def _schema(kind: str) -> str:
    return f"depaudit-report/{kind}/{SCHEMA_VERSION}"


def build_timeline_report(store: Store, granularity: str = "month") -> dict:
    rows = release_observations(store)
    return {
        "schema": _schema("timeline"),
        "granularity": granularity,
        "languages": release_timelines(rows, granularity),
    }


def build_depth_report(store: Store) -> dict:
    return {
        "schema": _schema("depth"),
        "languages": depth_report(depth_observations(store)),
    }


def build_correlation_report(store: Store) -> dict:
    rows = release_observations(store)
    return {
        "schema": _schema("correlation"),
        "units": {
            PER_RELEASE: correlation_table(rows, PER_RELEASE),
            PER_REPO: correlation_table(rows, PER_REPO),
        },
    }


def build_persistence_report(store: Store) -> dict:
    records = persistence_records(store)
    severities = severity_lookup(store, (rec.cve_id for rec in records))
    return {
        "schema": _schema("persistence"),
        "records": [
            {
                "repo_id": rec.repo_id,
                "cve_id": rec.cve_id,
                "severity": severities.get(rec.cve_id, Severity.NONE.value),
                "first_vulnerable_tag": rec.first_vulnerable_tag,
                "first_clean_tag": rec.first_clean_tag,
                "days": rec.days,
            }
            for rec in sorted(records, key=lambda r: (r.repo_id, r.cve_id))
        ],
        "curves": persistence_curves(records, severities),
    }


def build_release_report(store: Store, repo_id: str, tag: str) -> dict:
    """Detail view for one release, with both match views labeled."""
    rel = store.get_release(repo_id, tag)
    if rel is None:
        raise ValueError(f"no release {repo_id}@{tag}")
    release_date = from_iso(rel["release_date"])
    match_rows = store.matches_for_release(repo_id, tag)
    known_pairs = {
        (m["purl"], m["cve_id"]) for m in filter_known_at(match_rows, release_date)
    }
    matches = []
    for m in match_rows:
        epss = store.epss_for(m["cve_id"])
        matches.append(
            {
                "purl": m["purl"],
                "cve_id": m["cve_id"],
                "severity": m["severity"] or Severity.NONE.value,
                "cvss_v3": m["cvss_v3"],
                "epss_score": epss.score if epss else None,
                "source": m["source"],
                "known_at_release": (m["purl"], m["cve_id"]) in known_pairs,
                "depth": m["depth"],
                "is_root": bool(m["is_root"]),
            }
        )
    components = store.components_for_release(repo_id, tag)
    return {
        "schema": _schema("release"),
        "repo_id": repo_id,
        "tag": tag,
        "release_date": rel["release_date"],
        "state": rel["state"],
        "component_count": len(components),
        "root_count": sum(1 for c in components if c["is_root"]),
        "vulnerabilities_known_at": len({cve for _, cve in known_pairs}),
        "vulnerabilities_all_time": len({m["cve_id"] for m in match_rows}),
        "matches": matches,
    }


def build_scan_report(store: Store, repo_id: str) -> dict:
    """Per-release summary for one repository, written after a scan."""
    repo = store.get_repo(repo_id)
    if repo is None:
        raise ValueError(f"no repository {repo_id}")
    releases = []
    for rel in store.list_releases(repo_id):
        release_date = from_iso(rel["release_date"])
        match_rows = store.matches_for_release(repo_id, rel["tag"])
        known = {m["cve_id"] for m in filter_known_at(match_rows, release_date)}
        releases.append(
            {
                "tag": rel["tag"],
                "release_date": rel["release_date"],
                "state": rel["state"],
                "fail_reason": rel["fail_reason"],
                "components": len(store.components_for_release(repo_id, rel["tag"])),
                "vulnerabilities_known_at": len(known),
                "vulnerabilities_all_time": len({m["cve_id"] for m in match_rows}),
            }
        )
    return {
        "schema": _schema("scan"),
        "repo_id": repo_id,
        "repo_state": repo["state"],
        "primary_language": repo["primary_language"],
        "releases": releases,
    }


# ---------------------------------------------------------------------------
# serialization
# ---------------------------------------------------------------------------

def _jsonable(value):
    if value is UNDEFINED_CORRELATION:
        return "UNDEFINED_CORRELATION"
    raise TypeError(f"not JSON serializable: {value!r}")


def _correlation_cell(value) -> str:
    return "UNDEFINED_CORRELATION" if value is UNDEFINED_CORRELATION else repr(value)


def csv_table(kind: str, doc: dict) -> tuple[list[str], list[list]]:
    """Flatten a report document into one CSV table."""
    if kind == "timeline":
        header = ["language", "period", "releases", "vulnerable_releases"]
        rows = [
            [language, p["period"], p["releases"], p["vulnerable_releases"]]
            for language, points in sorted(doc["languages"].items())
            for p in points
        ]
    elif kind == "depth":
        header = ["language", "view", "depth", "count", "percent"]
        rows = []
        for language, views in sorted(doc["languages"].items()):
            for view in ("all", "vulnerable"):
                hist = views[view]
                for bucket in DEPTH_BUCKETS:
                    rows.append(
                        [language, view, bucket, hist["counts"][bucket],
                         hist["percent"][bucket]]
                    )
                rows.append([language, view, "unreachable", hist["unreachable"], ""])
    elif kind == "correlation":
        header = [
            "unit", "language", "observations",
            "commits_vs_vulnerabilities", "contributors_vs_vulnerabilities",
        ]
        rows = [
            [
                unit, entry["language"], entry["observations"],
                _correlation_cell(entry["commits_vs_vulnerabilities"]),
                _correlation_cell(entry["contributors_vs_vulnerabilities"]),
            ]
            for unit in (PER_RELEASE, PER_REPO)
            for entry in doc["units"][unit]
        ]
    elif kind == "persistence":
        header = ["severity", "days", "count", "percent", "cumulative"]
        rows = [
            [severity, p["days"], p["count"], p["percent"], repr(p["cumulative"])]
            for severity, points in sorted(doc["curves"].items())
            for p in points
        ]
    elif kind == "release":
        header = [
            "purl", "cve_id", "severity", "cvss_v3", "epss_score", "source",
            "known_at_release",
        ]
        rows = [
            [
                m["purl"], m["cve_id"], m["severity"],
                "" if m["cvss_v3"] is None else m["cvss_v3"],
                "" if m["epss_score"] is None else m["epss_score"],
                m["source"], m["known_at_release"],
            ]
            for m in doc["matches"]
        ]
    elif kind == "scan":
        header = [
            "tag", "release_date", "state", "fail_reason", "components",
            "vulnerabilities_known_at", "vulnerabilities_all_time",
        ]
        rows = [
            [
                r["tag"], r["release_date"], r["state"], r["fail_reason"] or "",
                r["components"], r["vulnerabilities_known_at"],
                r["vulnerabilities_all_time"],
            ]
            for r in doc["releases"]
        ]
    else:
        raise ValueError(f"unknown report kind: {kind!r}")
    return header, rows


def write_json(path: Path, doc: dict) -> None:
    path.parent.mkdir(parents=True, exist_ok=True)
    text = json.dumps(
        doc, indent=2, sort_keys=True, ensure_ascii=False, default=_jsonable
    )
    path.write_text(text + "\n", encoding="utf-8")


def write_csv(path: Path, header: list[str], rows: list[list]) -> None:
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w", encoding="utf-8", newline="") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(header)
        writer.writerows(rows)


def write_report(
    out_dir: str | Path, scope: str, kind: str, doc: dict, name: str | None = None
) -> tuple[Path, Path]:
    """Write one report as <out>/<scope>/<name>.json plus .csv; returns both paths.

    ``name`` defaults to the kind; per-release reports pass "release-<tag>"
    so tags do not overwrite each other.
    """
    base = Path(out_dir) / scope
    name = name or kind
    json_path = base / f"{name}.json"
    csv_path = base / f"{name}.csv"
    write_json(json_path, doc)
    header, rows = csv_table(kind, doc)
    write_csv(csv_path, header, rows)
    return json_path, csv_path
