"""Helpers for building small git repositories in tests."""

from __future__ import annotations

import os
import subprocess
from pathlib import Path

DEFAULT_AUTHOR = ("Alex Doe", "alex@example.test")


def git(repo: Path, *args: str, author=DEFAULT_AUTHOR, date: str | None = None):
    env = {
        **os.environ,
        "GIT_CONFIG_GLOBAL": "/dev/null",
        "GIT_CONFIG_SYSTEM": "/dev/null",
        "GIT_AUTHOR_NAME": author[0],
        "GIT_AUTHOR_EMAIL": author[1],
        "GIT_COMMITTER_NAME": author[0],
        "GIT_COMMITTER_EMAIL": author[1],
    }
    if date:
        env["GIT_AUTHOR_DATE"] = date
        env["GIT_COMMITTER_DATE"] = date
    proc = subprocess.run(
        ["git", "-C", str(repo), *args],
        capture_output=True, text=True, env=env,
    )
    if proc.returncode != 0:
        raise RuntimeError(f"git {' '.join(args)} failed: {proc.stderr}")
    return proc.stdout


def init_repo(path: Path) -> Path:
    path.mkdir(parents=True, exist_ok=True)
    subprocess.run(["git", "init", "-q", "-b", "main", str(path)],
                   capture_output=True, check=True)
    return path


def commit(repo: Path, files: dict[str, str | bytes], message: str,
           author=DEFAULT_AUTHOR, date: str | None = None,
           tag: str | None = None, annotated: bool = False):
    """Write files, commit, optionally tag; removes files mapped to None."""
    for rel, content in files.items():
        target = repo / rel
        if content is None:
            target.unlink()
            continue
        target.parent.mkdir(parents=True, exist_ok=True)
        if isinstance(content, bytes):
            target.write_bytes(content)
        else:
            target.write_text(content)
    git(repo, "add", "-A", author=author, date=date)
    git(repo, "commit", "-q", "--allow-empty", "-m", message,
        author=author, date=date)
    if tag:
        if annotated:
            git(repo, "tag", "-a", tag, "-m", f"release {tag}",
                author=author, date=date)
        else:
            git(repo, "tag", tag, author=author, date=date)
