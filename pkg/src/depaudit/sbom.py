"""CycloneDX SBOM reading, canonical merging and dependency depths.

Documents are plain dicts in CycloneDX JSON shape (1.4 and 1.5 are
accepted).  Merged output is fully deterministic: components are keyed
and sorted by canonical purl, bom-refs are rewritten to the canonical
purl, and no serial numbers or timestamps are emitted, so the same
inputs always produce the same bytes on disk.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path

from ._native import bfs_depths
from .model import AnalysisState, Component, PackageUrl
from .purl import PurlParseError, format_purl, parse_purl

SPEC_VERSIONS = ("1.4", "1.5")


class SbomError(ValueError):
    """Raised for documents that are not usable CycloneDX JSON."""


@dataclass(frozen=True)
class ParsedBom:
    """Normalized view of one document: components plus purl-level edges."""

    subject_name: str
    subject_version: str
    components: tuple[Component, ...]
    edges: tuple[tuple[str, str], ...]  # (dependent purl, dependency purl)
    roots: tuple[str, ...]  # purls the subject depends on directly
    warnings: tuple[str, ...] = field(default=())


def _load(source: dict | str | Path) -> dict:
    if isinstance(source, dict):
        return source
    text = Path(source).read_text(encoding="utf-8")
    try:
        doc = json.loads(text)
    except json.JSONDecodeError as exc:
        raise SbomError(f"{source}: not valid JSON ({exc})") from exc
    if not isinstance(doc, dict):
        raise SbomError(f"{source}: top level is not an object")
    return doc


def parse_sbom(source: dict | str | Path) -> ParsedBom:
    doc = _load(source)
    if doc.get("bomFormat") != "CycloneDX":
        raise SbomError(f"unsupported bomFormat {doc.get('bomFormat')!r}")
    warnings: list[str] = []
    version = str(doc.get("specVersion", ""))
    if version not in SPEC_VERSIONS:
        warnings.append(f"unexpected specVersion {version!r}, parsing anyway")

    meta = doc.get("metadata") or {}
    subject = meta.get("component") or {}
    subject_name = subject.get("name") or "unknown"
    subject_version = subject.get("version") or ""
    subject_ref = subject.get("bom-ref") or subject_name

    ref_to_purl: dict[str, str] = {}
    components: dict[str, Component] = {}
    for raw in doc.get("components") or []:
        raw_purl = raw.get("purl")
        if not raw_purl:
            warnings.append(f"component {raw.get('name')!r} has no purl, skipped")
            continue
        try:
            purl = parse_purl(raw_purl)
        except PurlParseError as exc:
            warnings.append(f"component {raw.get('name')!r}: {exc}")
            continue
        canonical = format_purl(purl)
        hashes = tuple(
            sorted(
                (h.get("alg", ""), h.get("content", ""))
                for h in raw.get("hashes") or []
                if h.get("content")
            )
        )
        if canonical not in components:
            components[canonical] = Component(
                purl=purl,
                display_name=raw.get("name") or purl.name,
                version=raw.get("version") or (purl.version or ""),
                group=raw.get("group") or purl.namespace,
                hashes=hashes,
                analysis_state=AnalysisState.NEW,
            )
        ref = raw.get("bom-ref") or canonical
        ref_to_purl[ref] = canonical
        ref_to_purl.setdefault(canonical, canonical)

    edges: list[tuple[str, str]] = []
    roots: list[str] = []
    for entry in doc.get("dependencies") or []:
        ref = entry.get("ref")
        deps = entry.get("dependsOn") or []
        if ref == subject_ref:
            for d in deps:
                target = ref_to_purl.get(d)
                if target is None:
                    warnings.append(f"dependency ref {d!r} not among components")
                else:
                    roots.append(target)
            continue
        src = ref_to_purl.get(ref)
        if src is None:
            warnings.append(f"dependency ref {ref!r} not among components")
            continue
        for d in deps:
            target = ref_to_purl.get(d)
            if target is None:
                warnings.append(f"dependency ref {d!r} not among components")
            else:
                edges.append((src, target))

    return ParsedBom(
        subject_name=subject_name,
        subject_version=subject_version,
        components=tuple(components[k] for k in sorted(components)),
        edges=tuple(sorted(set(edges))),
        roots=tuple(sorted(set(roots))),
        warnings=tuple(warnings),
    )


def merge_parsed(
    boms: list[ParsedBom],
    subject_name: str,
    subject_version: str,
) -> dict:
    """Union several parsed documents into one canonical CycloneDX dict.

    Idempotent and insensitive to input order: components are deduplicated
    by canonical purl and every list in the output is sorted.
    """
    components: dict[str, Component] = {}
    edges: set[tuple[str, str]] = set()
    roots: set[str] = set()
    for bom in boms:
        for comp in bom.components:
            key = format_purl(comp.purl)
            if key in components:
                old = components[key]
                merged_hashes = tuple(sorted(set(old.hashes) | set(comp.hashes)))
                if merged_hashes != old.hashes:
                    components[key] = Component(
                        purl=old.purl,
                        display_name=old.display_name,
                        version=old.version,
                        group=old.group,
                        hashes=merged_hashes,
                        analysis_state=old.analysis_state,
                    )
            else:
                components[key] = comp
        edges.update(bom.edges)
        roots.update(bom.roots)

    subject_ref = f"{subject_name}@{subject_version}"
    out_components = []
    for key in sorted(components):
        comp = components[key]
        entry: dict = {
            "bom-ref": key,
            "type": "library",
            "name": comp.display_name,
            "version": comp.version,
            "purl": key,
        }
        if comp.group:
            entry["group"] = comp.group
        if comp.hashes:
            entry["hashes"] = [
                {"alg": alg, "content": content} for alg, content in comp.hashes
            ]
        out_components.append(entry)

    by_ref: dict[str, set[str]] = {}
    for src, dst in edges:
        by_ref.setdefault(src, set()).add(dst)
    out_dependencies = [{"ref": subject_ref, "dependsOn": sorted(roots)}]
    for ref in sorted(by_ref):
        out_dependencies.append({"ref": ref, "dependsOn": sorted(by_ref[ref])})

    return {
        "bomFormat": "CycloneDX",
        "specVersion": "1.5",
        "version": 1,
        "metadata": {
            "component": {
                "bom-ref": subject_ref,
                "type": "application",
                "name": subject_name,
                "version": subject_version,
            }
        },
        "components": out_components,
        "dependencies": out_dependencies,
    }


def write_sbom(doc: dict, path: str | Path) -> None:
    Path(path).write_text(
        json.dumps(doc, indent=2, ensure_ascii=False) + "\n", encoding="utf-8"
    )


def depth_map(bom: ParsedBom) -> dict[str, int]:
    """Shortest edge distance from the direct dependencies (depth 0).

    Components that no path reaches get -1; they still exist for matching
    but are excluded from depth statistics.
    """
    purls = [format_purl(c.purl) for c in bom.components]
    index = {p: i for i, p in enumerate(purls)}
    adj: list[list[int]] = [[] for _ in purls]
    for src, dst in bom.edges:
        si, di = index.get(src), index.get(dst)
        if si is not None and di is not None:
            adj[si].append(di)
    offsets = [0]
    targets: list[int] = []
    for row in adj:
        targets.extend(row)
        offsets.append(len(targets))
    roots = [index[r] for r in bom.roots if r in index]
    depths = bfs_depths(len(purls), offsets, targets, roots)
    return dict(zip(purls, depths))


MAX_DEPTH_BUCKET = 5


def depth_histogram(depths: list[int]) -> dict:
    """Bucket counts 0..5 (5 collects everything deeper) plus percentages."""
    buckets = [0] * (MAX_DEPTH_BUCKET + 1)
    unreachable = 0
    for d in depths:
        if d < 0:
            unreachable += 1
        else:
            buckets[min(d, MAX_DEPTH_BUCKET)] += 1
    total = sum(buckets)
    if total:
        percent = [round(100.0 * c / total, 2) for c in buckets]
    else:
        percent = [0.0] * (MAX_DEPTH_BUCKET + 1)
    return {
        "buckets": buckets,
        "percent": percent,
        "total": total,
        "unreachable": unreachable,
    }
