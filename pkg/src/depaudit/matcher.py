"""Component-to-vulnerability matching.

Two interchangeable lookup paths: the offline index walks affected-version
specs already mirrored into the local store, while the remote client batches
canonical purls against an HTTP index.  Both funnel into the same two-state
component lifecycle; a component that cannot be resolved stays NEW so the
next run picks it up again.
"""

from __future__ import annotations

import logging
import time
from dataclasses import dataclass, field
from datetime import datetime

import requests

from .model import (
    MatchSource,
    Severity,
    VulnMatch,
    Vulnerability,
    severity_bucket,
)
from .purl import PackageUrl, normalized_ecosystem, parse_purl, version_in_range
from .ratelimit import TokenBucket
from .store import Store, from_iso

log = logging.getLogger(__name__)

BATCH_LIMIT = 500
CHUNK_SIZE = 25
CACHE_TTL_SECONDS = 24 * 3600
DEFAULT_REQUESTS_PER_MINUTE = 120.0


class RemoteIndexError(RuntimeError):
    pass


@dataclass
class BatchReport:
    claimed: int = 0
    analyzed: int = 0
    returned_to_new: int = 0
    requests_made: int = 0
    matches_added: int = 0
    errors: list[str] = field(default_factory=list)


class OfflineIndex:
    """Match purls against affected-version specs in the local store."""

    def __init__(self, store: Store):
        self.store = store

    def vulnerabilities_for(self, purl: PackageUrl, product_key: str) -> list[str]:
        if purl.version is None:
            return []
        eco = normalized_ecosystem(purl.ecosystem)
        hits = set()
        for cve_id, spec in self.store.specs_for_product(product_key):
            if version_in_range(eco, purl.version, spec.range):
                hits.add(cve_id)
        return sorted(hits)


def match_offline(
    store: Store, now: datetime, limit: int = BATCH_LIMIT
) -> BatchReport:
    """Analyze NEW components against the mirrored feeds, no network."""
    report = BatchReport()
    index = OfflineIndex(store)
    claimed = store.claim_new_components(limit)
    report.claimed = len(claimed)
    matches: list[VulnMatch] = []
    for purl_str in claimed:
        row = store.get_component(purl_str)
        purl = parse_purl(purl_str)
        for cve_id in index.vulnerabilities_for(purl, row["product_key"]):
            matches.append(VulnMatch(
                purl=purl_str, cve_id=cve_id,
                source=MatchSource.OFFLINE_FEED, matched_at=now,
            ))
    report.matches_added = store.record_matches(matches)
    store.finish_analysis(claimed, analyzed=True, when=now)
    report.analyzed = len(claimed)
    return report


def _retry_after_seconds(response) -> float | None:
    value = response.headers.get("Retry-After")
    if value is None:
        return None
    try:
        return max(float(value), 0.0)
    except ValueError:
        return None


class RemoteIndexClient:
    """Batched purl lookups against ``POST {base}/v1/purls``.

    Requests are paced by a token bucket; 429 responses honor Retry-After,
    transport and server errors back off exponentially.  A chunk that still
    fails after ``max_retries`` extra attempts raises, leaving its
    components NEW for a later run.
    """

    def __init__(
        self,
        base_url: str,
        session: requests.Session | None = None,
        bucket: TokenBucket | None = None,
        max_retries: int = 3,
        timeout: float = 30.0,
        sleep=time.sleep,
        backoff_base: float = 1.0,
    ):
        self.base_url = base_url.rstrip("/")
        self.session = session or requests.Session()
        self.bucket = bucket or TokenBucket(DEFAULT_REQUESTS_PER_MINUTE)
        self.max_retries = max_retries
        self.timeout = timeout
        self._sleep = sleep
        self.backoff_base = backoff_base
        self.requests_made = 0

    def query(self, purls: list[str]) -> dict[str, list[dict]]:
        url = f"{self.base_url}/v1/purls"
        delay = self.backoff_base
        last_error = "no attempts made"
        for attempt in range(self.max_retries + 1):
            self.bucket.acquire()
            self.requests_made += 1
            try:
                resp = self.session.post(
                    url, json={"purls": list(purls)}, timeout=self.timeout
                )
            except requests.RequestException as exc:
                last_error = str(exc)
            else:
                if resp.status_code == 429:
                    wait = _retry_after_seconds(resp)
                    last_error = "rate limited (429)"
                    if attempt < self.max_retries:
                        self._sleep(wait if wait is not None else delay)
                        delay *= 2
                    continue
                if resp.status_code >= 500:
                    last_error = f"server error {resp.status_code}"
                elif resp.status_code >= 400:
                    raise RemoteIndexError(
                        f"{url} rejected the request: {resp.status_code}"
                    )
                else:
                    try:
                        data = resp.json()
                        results = data["results"]
                    except (ValueError, KeyError) as exc:
                        raise RemoteIndexError(f"malformed response: {exc}") from exc
                    return {
                        r["purl"]: r.get("vulnerabilities", []) for r in results
                    }
            if attempt < self.max_retries:
                self._sleep(delay)
                delay *= 2
        raise RemoteIndexError(last_error)


def _ensure_vulnerability(store: Store, vuln: dict, now: datetime) -> None:
    cve_id = vuln.get("id")
    if not cve_id or store.get_vulnerability(cve_id) is not None:
        return
    cvss = vuln.get("cvss_v3")
    severity = severity_bucket(float(cvss)) if cvss is not None else Severity.NONE
    # remote hits carry no timeline, so the record stays a stub until a
    # feed sync fills it in
    store.upsert_vulnerability(Vulnerability(
        cve_id=cve_id, published=None, last_modified=None,
        severity=severity, cvss_v3_base=float(cvss) if cvss is not None else None,
    ))


def analyze_batch(
    store: Store,
    client: RemoteIndexClient,
    now: datetime,
    limit: int = BATCH_LIMIT,
    chunk_size: int = CHUNK_SIZE,
    cache_ttl: int = CACHE_TTL_SECONDS,
) -> BatchReport:
    """Resolve up to ``limit`` NEW components through the remote index.

    Purls answered by the query cache within its TTL never reach the wire.
    """
    report = BatchReport()
    before = client.requests_made
    claimed = store.claim_new_components(limit)
    report.claimed = len(claimed)
    analyzed: list[str] = []
    returned: list[str] = []
    matches: list[VulnMatch] = []

    for start in range(0, len(claimed), chunk_size):
        chunk = claimed[start:start + chunk_size]
        results: dict[str, list[dict]] = {}
        pending: list[str] = []
        for purl in chunk:
            cached = store.cache_get(purl, now, cache_ttl)
            if cached is not None:
                results[purl] = cached
            else:
                pending.append(purl)
        if pending:
            try:
                fetched = client.query(pending)
            except RemoteIndexError as exc:
                report.errors.append(f"chunk of {len(pending)}: {exc}")
                returned.extend(pending)
                fetched = {}
            else:
                for purl in pending:
                    vulns = fetched.get(purl, [])
                    store.cache_put(purl, vulns, now)
                    results[purl] = vulns
        for purl, vulns in results.items():
            for vuln in vulns:
                _ensure_vulnerability(store, vuln, now)
                if vuln.get("id"):
                    matches.append(VulnMatch(
                        purl=purl, cve_id=vuln["id"],
                        source=MatchSource.REMOTE_INDEX, matched_at=now,
                    ))
            analyzed.append(purl)

    report.matches_added = store.record_matches(matches)
    store.finish_analysis(analyzed, analyzed=True, when=now)
    store.finish_analysis(returned, analyzed=False, when=now)
    report.analyzed = len(analyzed)
    report.returned_to_new = len(returned)
    report.requests_made = client.requests_made - before
    return report


def filter_known_at(match_rows: list[dict], release_date: datetime) -> list[dict]:
    """Keep matches whose vulnerability was published on or before the release.

    Rows without a published date (remote-index stubs) cannot be placed on
    the timeline and are excluded from the known-at view.
    """
    kept = []
    for row in match_rows:
        published = row.get("published")
        if isinstance(published, str):
            published = from_iso(published)
        if published is not None and published <= release_date:
            kept.append(row)
    return kept
