"""Vulnerability feed mirroring: NVD 1.1 JSON feeds and EPSS scores.

Annual NVD feeds are immutable once published, so a matching checksum
skips the whole file.  The modified feed is always merged; the store's
last-writer-wins upsert (keyed on lastModifiedDate) makes that merge
idempotent, which keeps a re-sync with unchanged inputs byte-identical
on disk.

CPE applicability statements are mapped to ecosystem product keys
through an explicit alias table.  Anything the table does not cover is
recorded as an unmatched CPE instead of being guessed at; the ingestion
report surfaces those so the table can be extended deliberately.
"""

from __future__ import annotations

import csv
import gzip
import hashlib
import io
import json
import logging
import re
from dataclasses import dataclass, field
from datetime import datetime
from pathlib import Path

import requests

from .model import (
    AffectedSpec,
    RangeSourceForm,
    Severity,
    ValidationError,
    VersionRange,
    Vulnerability,
    severity_bucket,
    severity_bucket_v2,
)
from .store import Store, from_iso

log = logging.getLogger(__name__)

NVD_FIRST_YEAR = 2002
NVD_MODIFIED = "nvd-modified"

# (vendor, product) from a cpe23 -> ecosystem product key.  Deliberately
# conservative: no fuzzy matching, unknown pairs are reported instead.
DEFAULT_CPE_ALIASES: dict[tuple[str, str], str] = {
    ("apache", "log4j"): "maven:org.apache.logging.log4j/log4j-core",
    ("apache", "log4j2"): "maven:org.apache.logging.log4j/log4j-core",
    ("prometheus", "client_golang"): "golang:github.com/prometheus/client_golang",
}


class FeedUnavailable(RuntimeError):
    pass


class LocalFeedDirectory:
    """Feed source backed by already-downloaded files."""

    def __init__(self, root: str | Path):
        self.root = Path(root)

    def fetch(self, filename: str) -> bytes:
        path = self.root / filename
        if not path.exists():
            raise FeedUnavailable(f"{path} does not exist")
        return path.read_bytes()


class HttpFeedSource:
    def __init__(self, base_url: str, session: requests.Session | None = None,
                 timeout: float = 60.0):
        self.base_url = base_url.rstrip("/")
        self.session = session or requests.Session()
        self.timeout = timeout

    def fetch(self, filename: str) -> bytes:
        url = f"{self.base_url}/{filename}"
        try:
            resp = self.session.get(url, timeout=self.timeout)
            resp.raise_for_status()
        except requests.RequestException as exc:
            raise FeedUnavailable(f"{url}: {exc}") from exc
        return resp.content


def _maybe_gunzip(payload: bytes) -> bytes:
    if payload[:2] == b"\x1f\x8b":
        return gzip.decompress(payload)
    return payload


@dataclass
class FeedResult:
    feed_key: str
    skipped: bool = False
    entries: int = 0
    changed: int = 0
    errors: list[str] = field(default_factory=list)


@dataclass
class IngestReport:
    feeds: list[FeedResult] = field(default_factory=list)
    unmatched_cpes: int = 0

    def to_dict(self) -> dict:
        return {
            "feeds": [
                {
                    "feed": f.feed_key,
                    "skipped": f.skipped,
                    "entries": f.entries,
                    "changed": f.changed,
                    "errors": f.errors,
                }
                for f in self.feeds
            ],
            "unmatched_cpes": self.unmatched_cpes,
        }


# ---------------------------------------------------------------------------
# NVD entry parsing
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class UnmatchedCpe:
    cpe23: str
    vendor: str
    product: str


def _cpe_fields(cpe23: str) -> tuple[str, str, str] | None:
    # cpe:2.3:part:vendor:product:version:... -- escaped colons are rare
    # enough in practice that a plain split is acceptable here
    parts = cpe23.split(":")
    if len(parts) < 6 or parts[0] != "cpe" or parts[1] != "2.3":
        return None
    return parts[3], parts[4], parts[5]


def _walk_nodes(nodes: list) -> list[dict]:
    matches: list[dict] = []
    for node in nodes or []:
        matches.extend(node.get("cpe_match") or [])
        matches.extend(_walk_nodes(node.get("children") or []))
    return matches


def _range_from_match(match: dict, version_field: str) -> VersionRange:
    start = end = None
    if match.get("versionStartIncluding") is not None:
        start = (str(match["versionStartIncluding"]), True)
    elif match.get("versionStartExcluding") is not None:
        start = (str(match["versionStartExcluding"]), False)
    if match.get("versionEndIncluding") is not None:
        end = (str(match["versionEndIncluding"]), True)
    elif match.get("versionEndExcluding") is not None:
        end = (str(match["versionEndExcluding"]), False)
    if start is None and end is None and version_field not in ("*", "-", ""):
        return VersionRange(exact=(version_field,))
    return VersionRange(start=start, end=end)


def parse_nvd_entry(
    item: dict,
    aliases: dict[tuple[str, str], str] | None = None,
) -> tuple[Vulnerability | None, list[UnmatchedCpe]]:
    """One CVE_Items element -> a Vulnerability plus unmapped CPEs.

    Returns (None, []) for malformed entries (reported by the caller).
    """
    aliases = DEFAULT_CPE_ALIASES if aliases is None else aliases
    try:
        cve_id = item["cve"]["CVE_data_meta"]["ID"]
    except (KeyError, TypeError):
        return None, []

    description = ""
    for entry in item.get("cve", {}).get("description", {}).get("description_data", []):
        if entry.get("value"):
            description = entry["value"]
            if entry.get("lang") == "en":
                break

    impact = item.get("impact") or {}
    cvss_v3 = cvss_v2 = None
    try:
        cvss_v3 = float(impact["baseMetricV3"]["cvssV3"]["baseScore"])
    except (KeyError, TypeError, ValueError):
        pass
    try:
        cvss_v2 = float(impact["baseMetricV2"]["cvssV2"]["baseScore"])
    except (KeyError, TypeError, ValueError):
        pass
    if cvss_v3 is not None:
        severity = severity_bucket(cvss_v3)
    elif cvss_v2 is not None:
        # older entries only carry v2; the coarser scale is flagged in reports
        severity = severity_bucket_v2(cvss_v2)
    else:
        severity = Severity.NONE

    published = from_iso(item.get("publishedDate"))
    last_modified = from_iso(item.get("lastModifiedDate")) or published

    affected: list[AffectedSpec] = []
    unmatched: list[UnmatchedCpe] = []
    seen_specs: set[tuple] = set()
    seen_unmatched: set[str] = set()
    nodes = (item.get("configurations") or {}).get("nodes") or []
    for match in _walk_nodes(nodes):
        if not match.get("vulnerable", True):
            continue
        cpe23 = match.get("cpe23Uri") or ""
        fields = _cpe_fields(cpe23)
        if fields is None:
            continue
        vendor, product, version_field = fields
        product_key = aliases.get((vendor.lower(), product.lower()))
        if product_key is None:
            if cpe23 not in seen_unmatched:
                seen_unmatched.add(cpe23)
                unmatched.append(UnmatchedCpe(cpe23, vendor, product))
            continue
        rng = _range_from_match(match, version_field)
        key = (product_key, rng.start, rng.end, rng.exact)
        if key not in seen_specs:
            seen_specs.add(key)
            affected.append(AffectedSpec(
                product_key=product_key, range=rng,
                source_form=RangeSourceForm.CPE,
            ))

    try:
        vuln = Vulnerability(
            cve_id=cve_id,
            published=published,
            last_modified=last_modified,
            severity=severity,
            cvss_v3_base=cvss_v3,
            cvss_v2_base=cvss_v2,
            affected=tuple(affected),
            description=description,
        )
    except ValidationError:
        return None, unmatched
    return vuln, unmatched


# ---------------------------------------------------------------------------
# sync
# ---------------------------------------------------------------------------

def _nvd_filename(feed_key: str) -> str:
    if feed_key == NVD_MODIFIED:
        return "nvdcve-1.1-modified.json.gz"
    year = feed_key.split("-", 1)[1]
    return f"nvdcve-1.1-{year}.json.gz"


def _ingest_nvd_payload(
    store: Store,
    payload: bytes,
    result: FeedResult,
    aliases: dict[tuple[str, str], str] | None,
    now: datetime,
) -> None:
    try:
        data = json.loads(_maybe_gunzip(payload))
        items = data["CVE_Items"]
    except (ValueError, KeyError) as exc:
        result.errors.append(f"unparseable feed: {exc}")
        return
    for item in items:
        vuln, unmatched = parse_nvd_entry(item, aliases)
        for u in unmatched:
            store.record_unmatched_cpe(u.cpe23, u.vendor, u.product, now)
        if vuln is None:
            result.errors.append("malformed entry skipped")
            continue
        result.entries += 1
        if store.upsert_vulnerability(vuln):
            result.changed += 1


def sync_nvd(
    store: Store,
    source,
    now: datetime,
    years: tuple[int, int] = (NVD_FIRST_YEAR, 2023),
    aliases: dict[tuple[str, str], str] | None = None,
    force: bool = False,
) -> IngestReport:
    """Mirror annual feeds (checksum-skipped) then merge the modified feed."""
    report = IngestReport()
    feed_keys = [f"nvd-{y}" for y in range(years[0], years[1] + 1)]
    for feed_key in feed_keys:
        result = FeedResult(feed_key=feed_key)
        report.feeds.append(result)
        try:
            payload = source.fetch(_nvd_filename(feed_key))
        except FeedUnavailable as exc:
            result.errors.append(str(exc))
            continue
        checksum = hashlib.sha256(payload).hexdigest()
        snapshot = store.get_feed_snapshot(feed_key)
        if snapshot and snapshot["checksum"] == checksum and not force:
            result.skipped = True
            continue
        _ingest_nvd_payload(store, payload, result, aliases, now)
        store.put_feed_snapshot(feed_key, checksum, now, result.entries)

    # the modified feed is merged unconditionally; per-entry timestamps
    # decide what actually changes
    result = FeedResult(feed_key=NVD_MODIFIED)
    report.feeds.append(result)
    try:
        payload = source.fetch(_nvd_filename(NVD_MODIFIED))
    except FeedUnavailable as exc:
        result.errors.append(str(exc))
    else:
        checksum = hashlib.sha256(payload).hexdigest()
        _ingest_nvd_payload(store, payload, result, aliases, now)
        store.put_feed_snapshot(NVD_MODIFIED, checksum, now, result.entries)

    report.unmatched_cpes = len(store.list_unmatched_cpes())
    return report


_EPSS_DATE = re.compile(r"score_date:(\d{4}-\d{2}-\d{2})")


def sync_epss(
    store: Store,
    source,
    now: datetime,
    filename: str = "epss_scores-current.csv.gz",
) -> FeedResult:
    """Ingest the EPSS CSV (cve, epss, percentile with # comment headers)."""
    from .model import EpssEntry

    result = FeedResult(feed_key="epss")
    try:
        payload = source.fetch(filename)
    except FeedUnavailable as exc:
        result.errors.append(str(exc))
        return result
    checksum = hashlib.sha256(payload).hexdigest()
    snapshot = store.get_feed_snapshot("epss")
    if snapshot and snapshot["checksum"] == checksum:
        result.skipped = True
        return result

    text = _maybe_gunzip(payload).decode("utf-8", errors="replace")
    model_date = None
    rows: list[str] = []
    for line in text.splitlines():
        if line.startswith("#"):
            m = _EPSS_DATE.search(line)
            if m:
                model_date = m.group(1)
            continue
        if line.strip():
            rows.append(line)

    entries = []
    for record in csv.DictReader(io.StringIO("\n".join(rows))):
        cve = (record.get("cve") or "").strip()
        if not cve:
            continue
        try:
            entry = EpssEntry(
                cve_id=cve,
                score=float(record.get("epss", "")),
                percentile=float(record.get("percentile", "")),
                model_date=model_date,
            )
        except (ValueError, ValidationError) as exc:
            result.errors.append(f"{cve}: {exc}")
            continue
        entries.append(entry)
    result.entries = len(entries)
    result.changed = store.upsert_epss(entries)
    store.put_feed_snapshot("epss", checksum, now, result.entries)
    return result
