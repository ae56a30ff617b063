"""Per-release SBOM generation as a small state machine.

Every run walks Init -> (language-specific states) -> BOM Generation ->
Cleanup.  Init probes for the ecosystem's manifest and may synthesize a
minimal one; Cleanup always runs, deletes anything Init created, and is
the only state that writes the merged output document.  The worktree is
snapshotted before the machine starts and restored afterwards, so a
release run never leaves residue regardless of outcome.
"""

from __future__ import annotations

import hashlib
import logging
import subprocess
import time
from dataclasses import dataclass, field
from enum import Enum
from pathlib import Path
from typing import Callable

from .lockfiles import LockfileParseError, generate_from_lockfile
from .sbom import ParsedBom, SbomError, merge_parsed, parse_sbom, write_sbom

log = logging.getLogger(__name__)

S_INIT = "Init"
S_GO_SYNTH = "Go Manifest Synthesis"
S_BOM = "BOM Generation"
S_CLEANUP = "Cleanup"
S_HALT = "Halt"

DEFAULT_TIMEOUT = 300.0


class GenOutcome(str, Enum):
    PENDING = "PENDING"
    DONE = "DONE"
    FAIL = "FAIL"


class FailReason(str, Enum):
    UNSUPPORTED = "UNSUPPORTED"
    GENERATOR_ERROR = "GENERATOR_ERROR"
    TIMEOUT = "TIMEOUT"
    PARTIAL = "PARTIAL"


class GenMachineError(RuntimeError):
    pass


@dataclass
class GenContext:
    worktree: Path
    repo_id: str
    tag: str
    ecosystem: str
    shared_dir: Path
    timeout: float = DEFAULT_TIMEOUT
    # ecosystem -> argv template for external generators; {worktree} and
    # {tag} are substituted per run
    adapters: dict[str, list[str]] = field(default_factory=dict)
    synthesized_files: list[Path] = field(default_factory=list)
    outcome: GenOutcome = GenOutcome.PENDING
    fail_reason: FailReason | None = None
    fail_detail: str = ""
    sbom_output: Path | None = None
    skipped: bool = False
    trace: list[str] = field(default_factory=list)
    _boms: list[ParsedBom] = field(default_factory=list)
    _deadline: float | None = None

    def output_path(self) -> Path:
        return Path(self.shared_dir) / self.repo_id / f"{self.tag}.cdx.json"

    def fail(self, reason: FailReason, detail: str = "") -> str:
        self.outcome = GenOutcome.FAIL
        self.fail_reason = reason
        self.fail_detail = detail
        return S_CLEANUP


class Machine:
    def __init__(self, handlers: dict[str, Callable[[GenContext], str]]):
        self.handlers = handlers

    def run(self, ctx: GenContext) -> GenOutcome:
        state = S_INIT
        while state != S_HALT:
            ctx.trace.append(state)
            if (
                state != S_CLEANUP
                and ctx._deadline is not None
                and time.monotonic() > ctx._deadline
            ):
                state = ctx.fail(FailReason.TIMEOUT,
                                 f"release exceeded {ctx.timeout:.0f}s")
                continue
            handler = self.handlers[state]
            try:
                state = handler(ctx)
            except Exception as exc:  # noqa: BLE001 - cleanup must still run
                if state == S_CLEANUP:
                    raise
                log.exception("%s state failed for %s@%s", state,
                              ctx.repo_id, ctx.tag)
                state = ctx.fail(FailReason.GENERATOR_ERROR,
                                 f"unhandled error in {state}: {exc!r}")
        if ctx.outcome is GenOutcome.PENDING:
            raise GenMachineError("machine halted without an outcome")
        return ctx.outcome


# ---------------------------------------------------------------------------
# states
# ---------------------------------------------------------------------------

def _unsupported_init(ctx: GenContext) -> str:
    return ctx.fail(FailReason.UNSUPPORTED,
                    f"no generator for ecosystem {ctx.ecosystem!r}")


def _go_init(ctx: GenContext) -> str:
    if (ctx.worktree / "go.mod").is_file():
        return S_BOM
    return S_GO_SYNTH


def _go_synthesize(ctx: GenContext) -> str:
    has_sources = any(
        ".git" not in p.parts for p in ctx.worktree.rglob("*.go")
    )
    if not has_sources:
        return ctx.fail(FailReason.GENERATOR_ERROR,
                        "no go.mod and no Go sources to synthesize one from")
    path = ctx.worktree / "go.mod"
    path.write_text(f"module {ctx.repo_id}\n\ngo 1.19\n", encoding="utf-8")
    ctx.synthesized_files.append(path)
    return S_BOM


def _discover_go_mods(root: Path) -> list[Path]:
    return sorted(
        p for p in root.rglob("go.mod")
        if ".git" not in p.parts and "vendor" not in p.relative_to(root).parts
    )


def _collect_boms(ctx: GenContext, boms: list[ParsedBom],
                  errors: list[str]) -> str:
    if errors and boms:
        return ctx.fail(FailReason.PARTIAL, "; ".join(errors))
    if errors:
        return ctx.fail(FailReason.GENERATOR_ERROR, "; ".join(errors))
    if not boms:
        return ctx.fail(FailReason.GENERATOR_ERROR, "no BOMs were produced")
    ctx._boms = boms
    return S_CLEANUP


def _go_generate(ctx: GenContext) -> str:
    boms: list[ParsedBom] = []
    errors: list[str] = []
    for mod_path in _discover_go_mods(ctx.worktree):
        data = mod_path.read_bytes()
        try:
            doc = generate_from_lockfile("go", data, data, ctx.tag)
            boms.append(parse_sbom(doc))
        except (LockfileParseError, SbomError) as exc:
            errors.append(f"{mod_path.relative_to(ctx.worktree)}: {exc}")
    return _collect_boms(ctx, boms, errors)


def _cargo_init(ctx: GenContext) -> str:
    if not (ctx.worktree / "Cargo.toml").is_file():
        return ctx.fail(FailReason.GENERATOR_ERROR, "Cargo.toml missing")
    if not (ctx.worktree / "Cargo.lock").is_file():
        return ctx.fail(
            FailReason.GENERATOR_ERROR,
            "Cargo.lock missing; resolving one needs the cargo toolchain")
    return S_BOM


def _cargo_generate(ctx: GenContext) -> str:
    try:
        doc = generate_from_lockfile(
            "cargo",
            (ctx.worktree / "Cargo.lock").read_bytes(),
            (ctx.worktree / "Cargo.toml").read_bytes(),
            ctx.tag,
        )
        return _collect_boms(ctx, [parse_sbom(doc)], [])
    except (LockfileParseError, SbomError) as exc:
        return ctx.fail(FailReason.GENERATOR_ERROR, str(exc))


def _adapter_generate(ctx: GenContext) -> str:
    template = ctx.adapters[ctx.ecosystem]
    argv = [arg.format(worktree=str(ctx.worktree), tag=ctx.tag)
            for arg in template]
    remaining = ctx.timeout
    if ctx._deadline is not None:
        remaining = ctx._deadline - time.monotonic()
    if remaining <= 0:
        return ctx.fail(FailReason.TIMEOUT,
                        f"release exceeded {ctx.timeout:.0f}s")
    try:
        proc = subprocess.run(
            argv, cwd=ctx.worktree, capture_output=True, text=True,
            timeout=remaining,
        )
    except subprocess.TimeoutExpired:
        return ctx.fail(FailReason.TIMEOUT,
                        f"generator ran past {remaining:.0f}s")
    except OSError as exc:
        return ctx.fail(FailReason.GENERATOR_ERROR, str(exc))
    if proc.returncode != 0:
        detail = proc.stderr.strip()[:500] or f"exit code {proc.returncode}"
        return ctx.fail(FailReason.GENERATOR_ERROR, detail)
    paths = [line.strip() for line in proc.stdout.splitlines() if line.strip()]
    if not paths:
        return ctx.fail(FailReason.GENERATOR_ERROR,
                        "generator printed no BOM paths")
    boms: list[ParsedBom] = []
    errors: list[str] = []
    for raw in paths:
        path = Path(raw)
        if not path.is_absolute():
            path = ctx.worktree / path
        try:
            boms.append(parse_sbom(path))
        except (SbomError, OSError, ValueError) as exc:
            errors.append(f"{raw}: {exc}")
    return _collect_boms(ctx, boms, errors)


def _cleanup(ctx: GenContext) -> str:
    for path in ctx.synthesized_files:
        try:
            path.unlink()
        except FileNotFoundError:
            pass
    if ctx.outcome is GenOutcome.PENDING:
        out = ctx.output_path()
        out.parent.mkdir(parents=True, exist_ok=True)
        doc = merge_parsed(ctx._boms, subject_name=ctx.repo_id,
                           subject_version=ctx.tag)
        write_sbom(doc, out)
        ctx.sbom_output = out
        ctx.outcome = GenOutcome.DONE
    return S_HALT


def build_machine(ecosystem: str, ctx: GenContext) -> Machine:
    handlers: dict[str, Callable[[GenContext], str]] = {S_CLEANUP: _cleanup}
    if ecosystem == "go":
        handlers[S_INIT] = _go_init
        handlers[S_GO_SYNTH] = _go_synthesize
        handlers[S_BOM] = _go_generate
    elif ecosystem == "cargo":
        handlers[S_INIT] = _cargo_init
        handlers[S_BOM] = _cargo_generate
    elif ecosystem in ctx.adapters:
        handlers[S_INIT] = lambda _ctx: S_BOM
        handlers[S_BOM] = _adapter_generate
    else:
        handlers[S_INIT] = _unsupported_init
    return Machine(handlers)


# ---------------------------------------------------------------------------
# worktree snapshot/restore
# ---------------------------------------------------------------------------

def _iter_files(root: Path):
    for path in sorted(root.rglob("*")):
        rel_parts = path.relative_to(root).parts
        if ".git" in rel_parts:
            continue
        yield path, "/".join(rel_parts)


def worktree_digest(root: Path) -> str:
    """Content hash over every file outside .git (names and bytes)."""
    digest = hashlib.sha256()
    for path, rel in _iter_files(root):
        if path.is_file():
            digest.update(rel.encode())
            digest.update(b"\x00")
            digest.update(hashlib.sha256(path.read_bytes()).digest())
            digest.update(b"\x01")
    return digest.hexdigest()


def _snapshot_worktree(root: Path) -> dict[str, bytes]:
    return {
        rel: path.read_bytes()
        for path, rel in _iter_files(root)
        if path.is_file()
    }


def _restore_worktree(root: Path, snapshot: dict[str, bytes]) -> None:
    seen: set[str] = set()
    entries = sorted(_iter_files(root), key=lambda e: e[1], reverse=True)
    for path, rel in entries:
        if path.is_file():
            if rel not in snapshot:
                path.unlink()
            else:
                seen.add(rel)
                if path.read_bytes() != snapshot[rel]:
                    path.write_bytes(snapshot[rel])
        elif path.is_dir():
            try:
                path.rmdir()  # drops directories the generator left behind
            except OSError:
                pass
    for rel, data in snapshot.items():
        if rel not in seen:
            target = root.joinpath(*rel.split("/"))
            target.parent.mkdir(parents=True, exist_ok=True)
            target.write_bytes(data)


# ---------------------------------------------------------------------------
# entry points
# ---------------------------------------------------------------------------

def run_release(machine: Machine, ctx: GenContext) -> GenOutcome:
    """Drive one release through the machine with worktree protection.

    An existing output document short-circuits to DONE without touching
    the worktree at all.
    """
    existing = ctx.output_path()
    if existing.is_file():
        ctx.outcome = GenOutcome.DONE
        ctx.sbom_output = existing
        ctx.skipped = True
        return ctx.outcome
    snapshot = _snapshot_worktree(ctx.worktree)
    ctx._deadline = time.monotonic() + ctx.timeout
    try:
        return machine.run(ctx)
    finally:
        _restore_worktree(ctx.worktree, snapshot)


def generate_release(ctx: GenContext) -> GenOutcome:
    return run_release(build_machine(ctx.ecosystem, ctx), ctx)


def detect_ecosystem(worktree: Path) -> str | None:
    """Best-effort ecosystem probe used when a repo declares no language."""
    if (worktree / "go.mod").is_file():
        return "go"
    if (worktree / "Cargo.toml").is_file():
        return "cargo"
    if any(".git" not in p.parts for p in worktree.rglob("*.go")):
        return "go"
    if any(".git" not in p.parts for p in worktree.rglob("*.rs")):
        return "cargo"
    return None
