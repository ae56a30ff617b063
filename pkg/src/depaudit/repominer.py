"""Two-stage git repository mining.

Stage 1 records identity (name, clone URL, release tags) and rejects
repositories without a single tag.  Stage 2 reads each tagged tree and
extracts the per-release metrics: commits, contributors, files, and a
line classification into code and comments.

The line classifier is deliberately simple and fully documented here:
blank lines count as neither; a line whose first non-blank characters
open a line comment (or that sits inside a block comment) counts as a
comment; everything else, trailing comments included, counts as code.
Rules exist for Java, Go, Rust, Ruby, Python, PHP, and JavaScript;
files of any other text type count every non-blank line as code, and
files carrying NUL bytes are skipped as binary.
"""

from __future__ import annotations

import io
import logging
import subprocess
import tarfile
from collections import Counter
from dataclasses import dataclass
from datetime import datetime
from pathlib import Path

from .model import Language, Release, ReleaseState, Repository
from .store import Store, from_iso

log = logging.getLogger(__name__)

REJECTED_NO_RELEASES = "REJECTED_NO_RELEASES"
NOT_ENOUGH_RELEASES = "NOT_ENOUGH_RELEASES"
FAIL_CHECKOUT = "CHECKOUT"


class MiningError(RuntimeError):
    pass


class NotEnoughReleases(MiningError):
    pass


@dataclass(frozen=True)
class CommentRules:
    language: Language
    line_prefixes: tuple[str, ...]
    block_open: str | None = None
    block_close: str | None = None


_C_STYLE = ("//",)
_RULES: dict[str, CommentRules] = {}
for _ext in (".java",):
    _RULES[_ext] = CommentRules(Language.JAVA, _C_STYLE, "/*", "*/")
for _ext in (".go",):
    _RULES[_ext] = CommentRules(Language.GO, _C_STYLE, "/*", "*/")
for _ext in (".rs",):
    _RULES[_ext] = CommentRules(Language.RUST, _C_STYLE, "/*", "*/")
for _ext in (".py",):
    _RULES[_ext] = CommentRules(Language.PYTHON, ("#",))
for _ext in (".rb",):
    _RULES[_ext] = CommentRules(Language.RUBY, ("#",), "=begin", "=end")
for _ext in (".php",):
    _RULES[_ext] = CommentRules(Language.PHP, ("//", "#"), "/*", "*/")
for _ext in (".js", ".jsx", ".ts", ".tsx"):
    _RULES[_ext] = CommentRules(Language.JAVASCRIPT, _C_STYLE, "/*", "*/")


def classify_lines(text: str, rules: CommentRules | None) -> tuple[int, int]:
    """Count (code, comment) lines under the documented rules."""
    code = comments = 0
    in_block = False
    for raw in text.splitlines():
        line = raw.strip()
        if in_block:
            comments += 1
            if rules.block_close in line:
                in_block = False
            continue
        if not line:
            continue
        if rules is None:
            code += 1
            continue
        if any(line.startswith(p) for p in rules.line_prefixes):
            comments += 1
            continue
        if rules.block_open and line.startswith(rules.block_open):
            comments += 1
            if rules.block_close not in line[len(rules.block_open):]:
                in_block = True
            continue
        code += 1
        if rules.block_open and rules.block_open in line:
            # code line that opens a block comment it does not close
            tail = line[line.index(rules.block_open) + len(rules.block_open):]
            if rules.block_close not in tail:
                in_block = True
    return code, comments


# ---------------------------------------------------------------------------
# git plumbing
# ---------------------------------------------------------------------------

def _git(repo: Path, *args: str) -> str:
    proc = subprocess.run(
        ["git", "-C", str(repo), *args], capture_output=True, text=True
    )
    if proc.returncode != 0:
        raise MiningError(
            f"git {' '.join(args)}: {proc.stderr.strip()[:300] or 'failed'}"
        )
    return proc.stdout


def _git_bytes(repo: Path, *args: str) -> bytes:
    proc = subprocess.run(["git", "-C", str(repo), *args], capture_output=True)
    if proc.returncode != 0:
        raise MiningError(
            f"git {' '.join(args)}:"
            f" {proc.stderr.decode(errors='replace').strip()[:300] or 'failed'}"
        )
    return proc.stdout


def list_tags(repo_path: Path) -> list[tuple[str, datetime]]:
    """Tags with the committer timestamp of the commit they point at."""
    out = _git(
        repo_path, "for-each-ref", "refs/tags",
        "--format=%(refname:short)\t%(committerdate:iso-strict)"
        "\t%(*committerdate:iso-strict)",
    )
    tags = []
    for line in out.splitlines():
        name, direct, peeled = (line.split("\t") + ["", ""])[:3]
        stamp = peeled or direct  # annotated tags only fill the peeled field
        if not stamp:
            continue
        tags.append((name, from_iso(stamp)))
    tags.sort(key=lambda t: (t[1], t[0]))
    return tags


# ---------------------------------------------------------------------------
# stage 1
# ---------------------------------------------------------------------------

@dataclass
class MiningReport:
    repo_id: str
    rejected: bool = False
    reject_reason: str | None = None
    releases_found: int = 0
    releases_new: int = 0
    enriched: int = 0
    failed: int = 0

    def to_dict(self) -> dict:
        return {
            "repo": self.repo_id,
            "rejected": self.rejected,
            "reject_reason": self.reject_reason,
            "releases_found": self.releases_found,
            "releases_new": self.releases_new,
            "enriched": self.enriched,
            "failed": self.failed,
        }


def _primary_language(repo_path: Path, ref: str) -> Language:
    try:
        listing = _git(repo_path, "ls-tree", "-r", "--name-only", ref)
    except MiningError:
        return Language.OTHER
    counts: Counter[Language] = Counter()
    for name in listing.splitlines():
        rules = _RULES.get(Path(name).suffix.lower())
        if rules:
            counts[rules.language] += 1
    if not counts:
        return Language.OTHER
    # highest file count wins; name breaks ties deterministically
    return sorted(counts.items(), key=lambda kv: (-kv[1], kv[0].value))[0][0]


def stage1_collect(
    store: Store,
    repo_path: str | Path,
    now: datetime,
    repo_id: str | None = None,
    stargazers: int = 0,
) -> MiningReport:
    repo_path = Path(repo_path)
    name = repo_path.name.removesuffix(".git") or repo_path.name
    rid = repo_id or name
    report = MiningReport(repo_id=rid)

    tags = list_tags(repo_path)
    ref = tags[-1][0] if tags else "HEAD"
    existing = store.get_repo(rid)
    first_seen = from_iso(existing["first_seen"]) if existing else now
    store.upsert_repo(Repository(
        id=rid, name=name, clone_url=str(repo_path),
        primary_language=_primary_language(repo_path, ref),
        stargazers=stargazers, first_seen=first_seen,
    ))
    if not tags:
        store.set_repo_state(rid, REJECTED_NO_RELEASES,
                             "repository has no release tags")
        report.rejected = True
        report.reject_reason = REJECTED_NO_RELEASES
        return report
    store.set_repo_state(rid, "NEW", None)
    for tag, date in tags:
        if store.upsert_release(Release(repo_id=rid, tag=tag, release_date=date)):
            report.releases_new += 1
    report.releases_found = len(tags)
    return report


# ---------------------------------------------------------------------------
# stage 2
# ---------------------------------------------------------------------------

def _tree_files(repo_path: Path, tag: str) -> list[tuple[str, bytes]]:
    payload = _git_bytes(repo_path, "archive", "--format=tar", tag)
    files = []
    try:
        with tarfile.open(fileobj=io.BytesIO(payload)) as tar:
            for member in tar.getmembers():
                if not member.isfile():
                    continue
                handle = tar.extractfile(member)
                if handle is not None:
                    files.append((member.name, handle.read()))
    except tarfile.ReadError:
        # an empty tree archives to a lone pax header that tarfile rejects
        if files:
            raise
    files.sort()
    return files


def measure_tree(files: list[tuple[str, bytes]]) -> dict[str, int]:
    loc = comments = 0
    for name, data in files:
        if b"\x00" in data[:8000]:
            continue
        rules = _RULES.get(Path(name).suffix.lower())
        file_code, file_comments = classify_lines(
            data.decode("utf-8", errors="replace"), rules)
        loc += file_code
        comments += file_comments
    return {
        "file_count": len(files),
        "lines_of_code": loc,
        "lines_of_comments": comments,
    }


def stage2_enrich(
    store: Store, repo_path: str | Path, repo_id: str, tag: str
) -> dict[str, int]:
    """Extract and persist per-release metrics for one tagged tree."""
    repo_path = Path(repo_path)
    try:
        commit_count = int(_git(repo_path, "rev-list", "--count", tag).strip())
        authors = {
            line.strip().lower()
            for line in _git(repo_path, "log", "--format=%ae", tag).splitlines()
            if line.strip()
        }
        stats = measure_tree(_tree_files(repo_path, tag))
    except MiningError as exc:
        release = store.get_release(repo_id, tag)
        if release and release["state"] == ReleaseState.NEW.value:
            store.transition_release(repo_id, tag, ReleaseState.NEW,
                                     ReleaseState.FAIL,
                                     fail_reason=FAIL_CHECKOUT)
        raise MiningError(f"{repo_id}@{tag}: {exc}") from exc
    stats["commit_count"] = commit_count
    stats["contributor_count"] = len(authors)
    store.update_release_stats(repo_id, tag, **stats)
    return stats


def mine_repository(
    store: Store,
    repo_path: str | Path,
    now: datetime,
    repo_id: str | None = None,
    stargazers: int = 0,
) -> MiningReport:
    """Stage 1 plus stage 2 over every release, with a per-repo report."""
    report = stage1_collect(store, repo_path, now, repo_id=repo_id,
                            stargazers=stargazers)
    if report.rejected:
        return report
    contributor_total = 0
    for release in store.list_releases(report.repo_id):
        try:
            stats = stage2_enrich(store, repo_path, report.repo_id,
                                  release["tag"])
        except MiningError as exc:
            log.warning("enrich failed: %s", exc)
            report.failed += 1
            continue
        contributor_total = max(contributor_total, stats["contributor_count"])
        report.enriched += 1
    repo = store.get_repo(report.repo_id)
    if repo and repo["contributor_count"] != contributor_total:
        store.upsert_repo(Repository(
            id=repo["id"], name=repo["name"], clone_url=repo["clone_url"],
            primary_language=Language(repo["primary_language"]),
            stargazers=repo["stargazers"],
            contributor_count=contributor_total,
            first_seen=from_iso(repo["first_seen"]),
        ))
    return report


# ---------------------------------------------------------------------------
# release cycle stats
# ---------------------------------------------------------------------------

def release_cycle_stats(store: Store, repo_id: str) -> tuple[float, float]:
    """(mean days between releases, mean new commits per release).

    Commit counts are stored cumulative at each tag, so consecutive
    deltas give the per-release figure.
    """
    releases = [
        r for r in store.list_releases(repo_id) if r["release_date"]
    ]
    if len(releases) < 2:
        raise NotEnoughReleases(NOT_ENOUGH_RELEASES)
    releases.sort(key=lambda r: (r["release_date"], r["tag"]))
    day_gaps = []
    commit_deltas = []
    for prev, cur in zip(releases, releases[1:]):
        gap = from_iso(cur["release_date"]) - from_iso(prev["release_date"])
        day_gaps.append(gap.total_seconds() / 86400.0)
        commit_deltas.append(cur["commit_count"] - prev["commit_count"])
    avg_days = sum(day_gaps) / len(day_gaps)
    avg_commits = sum(commit_deltas) / len(commit_deltas)
    return avg_days, avg_commits
