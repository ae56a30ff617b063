"""Core domain types shared across the pipeline.

Everything here is an immutable value object: construction validates the
cheap invariants and instances are safe to share between worker threads.
Ecosystem-aware checks (version range ordering) live in :mod:`depaudit.purl`
because they need the version comparators.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from datetime import datetime
from enum import Enum


class ValidationError(ValueError):
    """A domain value violated one of its invariants."""


class Language(str, Enum):
    JAVA = "Java"
    GO = "Go"
    RUST = "Rust"
    RUBY = "Ruby"
    PYTHON = "Python"
    PHP = "PHP"
    JAVASCRIPT = "JavaScript"
    OTHER = "Other"


class ReleaseState(str, Enum):
    NEW = "NEW"
    DONE = "DONE"
    FAIL = "FAIL"


# Legal release-state transitions; FAIL -> NEW is the explicit retry path.
# There is no way out of DONE.
RELEASE_TRANSITIONS = {
    (ReleaseState.NEW, ReleaseState.DONE),
    (ReleaseState.NEW, ReleaseState.FAIL),
    (ReleaseState.FAIL, ReleaseState.NEW),
}


class AnalysisState(str, Enum):
    NEW = "NEW"
    ANALYZED = "ANALYZED"


class Severity(str, Enum):
    NONE = "NONE"
    LOW = "LOW"
    MEDIUM = "MEDIUM"
    HIGH = "HIGH"
    CRITICAL = "CRITICAL"


class MatchSource(str, Enum):
    OFFLINE_FEED = "OFFLINE_FEED"
    REMOTE_INDEX = "REMOTE_INDEX"


class RangeSourceForm(str, Enum):
    CPE = "CPE"
    PURL = "PURL"


def severity_bucket(cvss_v3_base: float) -> Severity:
    """Bucket a CVSS v3 base score into its qualitative severity.

    0.0 is NONE; (0, 4) LOW; [4, 7) MEDIUM; [7, 9) HIGH; [9, 10] CRITICAL.
    """
    if not 0.0 <= cvss_v3_base <= 10.0:
        raise ValidationError(f"CVSS v3 base score out of range: {cvss_v3_base!r}")
    if cvss_v3_base == 0.0:
        return Severity.NONE
    if cvss_v3_base < 4.0:
        return Severity.LOW
    if cvss_v3_base < 7.0:
        return Severity.MEDIUM
    if cvss_v3_base < 9.0:
        return Severity.HIGH
    return Severity.CRITICAL


def severity_bucket_v2(cvss_v2_base: float) -> Severity:
    """Severity fallback for entries carrying only a CVSS v2 base score.

    v2 has no CRITICAL tier: 0.0 is NONE; (0, 4) LOW; [4, 7) MEDIUM;
    [7, 10] HIGH.
    """
    if not 0.0 <= cvss_v2_base <= 10.0:
        raise ValidationError(f"CVSS v2 base score out of range: {cvss_v2_base!r}")
    if cvss_v2_base == 0.0:
        return Severity.NONE
    if cvss_v2_base < 4.0:
        return Severity.LOW
    if cvss_v2_base < 7.0:
        return Severity.MEDIUM
    return Severity.HIGH


@dataclass(frozen=True)
class Repository:
    id: str
    name: str
    clone_url: str
    primary_language: Language
    stargazers: int = 0
    contributor_count: int = 0
    first_seen: datetime | None = None

    def __post_init__(self) -> None:
        if not self.id:
            raise ValidationError("repository id must be non-empty")
        if self.stargazers < 0 or self.contributor_count < 0:
            raise ValidationError(f"negative counters on repository {self.id}")


@dataclass(frozen=True)
class Release:
    repo_id: str
    tag: str
    release_date: datetime
    commit_count: int = 0
    contributor_count: int = 0
    file_count: int = 0
    lines_of_code: int = 0
    lines_of_comments: int = 0
    state: ReleaseState = ReleaseState.NEW

    def __post_init__(self) -> None:
        for name in ("commit_count", "contributor_count", "file_count",
                     "lines_of_code", "lines_of_comments"):
            if getattr(self, name) < 0:
                raise ValidationError(f"negative {name} on {self.repo_id}@{self.tag}")


@dataclass(frozen=True)
class PackageUrl:
    ecosystem: str
    name: str
    namespace: str | None = None
    version: str | None = None
    qualifiers: tuple[tuple[str, str], ...] = ()
    subpath: str | None = None

    def __post_init__(self) -> None:
        if not self.ecosystem:
            raise ValidationError("purl ecosystem must be non-empty")
        if not self.name:
            raise ValidationError("purl name must be non-empty")


@dataclass(frozen=True)
class Component:
    purl: PackageUrl
    display_name: str
    version: str
    group: str | None = None
    hashes: tuple[tuple[str, str], ...] = ()
    analysis_state: AnalysisState = AnalysisState.NEW

    def __post_init__(self) -> None:
        if self.purl.version and self.version and self.purl.version != self.version:
            raise ValidationError(
                f"component version {self.version!r} disagrees with purl "
                f"version {self.purl.version!r}"
            )


@dataclass(frozen=True)
class VersionRange:
    """Applicability window: either inclusive/exclusive bounds or an exact list."""

    start: tuple[str, bool] | None = None  # (version, inclusive)
    end: tuple[str, bool] | None = None
    exact: tuple[str, ...] | None = None

    def __post_init__(self) -> None:
        if self.exact is not None and (self.start or self.end):
            raise ValidationError("exact version list excludes range bounds")


@dataclass(frozen=True)
class AffectedSpec:
    product_key: str
    range: VersionRange
    source_form: RangeSourceForm = RangeSourceForm.CPE


@dataclass(frozen=True)
class Vulnerability:
    cve_id: str
    # both timestamps may be unknown for ids first seen via a remote index
    published: datetime | None
    last_modified: datetime | None
    severity: Severity
    cvss_v3_base: float | None = None
    cvss_v2_base: float | None = None
    affected: tuple[AffectedSpec, ...] = ()
    description: str = ""

    def __post_init__(self) -> None:
        if (
            self.published is not None
            and self.last_modified is not None
            and self.last_modified < self.published
        ):
            raise ValidationError(f"{self.cve_id}: last_modified precedes published")
        if self.cvss_v3_base is not None:
            expected = severity_bucket(self.cvss_v3_base)
            if expected is not self.severity:
                raise ValidationError(
                    f"{self.cve_id}: severity {self.severity.value} inconsistent "
                    f"with CVSS v3 {self.cvss_v3_base}"
                )


@dataclass(frozen=True)
class EpssEntry:
    cve_id: str
    score: float
    percentile: float
    model_date: str | None = None  # ISO date of the scoring model run

    def __post_init__(self) -> None:
        if not 0.0 <= self.score <= 1.0:
            raise ValidationError(f"{self.cve_id}: EPSS score out of [0,1]")
        if not 0.0 <= self.percentile <= 1.0:
            raise ValidationError(f"{self.cve_id}: EPSS percentile out of [0,1]")


@dataclass(frozen=True)
class VulnMatch:
    purl: str  # canonical purl of the matched component
    cve_id: str
    source: MatchSource
    matched_at: datetime


@dataclass(frozen=True)
class PersistenceRecord:
    repo_id: str
    cve_id: str
    first_vulnerable_tag: str
    first_clean_tag: str
    days: int

    def __post_init__(self) -> None:
        if self.days < 0:
            raise ValidationError(
                f"{self.repo_id}/{self.cve_id}: negative persistence window"
            )


@dataclass(frozen=True)
class FeedSnapshot:
    feed_key: str
    checksum: str
    fetched_at: datetime
    entry_count: int = 0


@dataclass
class TaskEnvelope:
    routing_key: str
    payload: dict = field(default_factory=dict)
    attempt: int = 0
    enqueued_at: datetime | None = None
