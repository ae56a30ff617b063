"""Lockfile generator tests with a line-oriented re-parse as the oracle."""

from __future__ import annotations

import pytest

from depaudit.lockfiles import (
    LockfileParseError,
    generate_from_lockfile,
    parse_go_mod,
)
from depaudit.sbom import depth_map, parse_sbom

GO_MOD = b"""\
module example.test/app

go 1.19

require (
\tgithub.com/prometheus/client_golang v1.11.0
\tgolang.org/x/sys v0.1.0 // indirect
)

require github.com/pkg/errors v0.9.1
"""

CARGO_LOCK = b"""\
version = 3

[[package]]
name = "myapp"
version = "0.1.0"
dependencies = ["a", "b"]

[[package]]
name = "a"
version = "1.0.0"
dependencies = ["c", "d"]

[[package]]
name = "b"
version = "1.1.0"
dependencies = ["d", "e"]

[[package]]
name = "c"
version = "2.0.0"
dependencies = ["f"]

[[package]]
name = "d"
version = "0.4.2"
dependencies = ["f", "g"]

[[package]]
name = "e"
version = "3.3.0"
dependencies = ["g", "h"]

[[package]]
name = "f"
version = "1.0.1"
dependencies = ["i"]

[[package]]
name = "g"
version = "0.2.0"
dependencies = ["i", "j"]

[[package]]
name = "h"
version = "5.0.0"
dependencies = ["j"]

[[package]]
name = "i"
version = "0.1.0"
dependencies = ["j"]

[[package]]
name = "j"
version = "2.2.2"
"""

CARGO_TOML = b"""\
[package]
name = "myapp"
version = "0.1.0"

[dependencies]
a = "1"
b = "1.1"
"""


class TestGoMod:
    def test_module_and_requires(self):
        parsed = parse_go_mod(GO_MOD)
        assert parsed["module"] == "example.test/app"
        assert parsed["requires"] == [
            ("github.com/prometheus/client_golang", "v1.11.0", False),
            ("golang.org/x/sys", "v0.1.0", True),
            ("github.com/pkg/errors", "v0.9.1", False),
        ]

    def test_single_require_single_component_at_depth_zero(self):
        mod = b"module m\n\nrequire github.com/pkg/errors v0.9.1\n"
        bom = parse_sbom(generate_from_lockfile("go", mod, mod, "v1.0.0"))
        assert len(bom.components) == 1
        assert depth_map(bom) == {"pkg:golang/github.com/pkg/errors@v0.9.1": 0}

    def test_indirect_requires_have_no_depth(self):
        bom = parse_sbom(generate_from_lockfile("go", GO_MOD, GO_MOD, "v1.0.0"))
        depths = depth_map(bom)
        assert depths["pkg:golang/github.com/prometheus/client_golang@v1.11.0"] == 0
        assert depths["pkg:golang/github.com/pkg/errors@v0.9.1"] == 0
        # go.mod records no edges, so the indirect module is unplaceable
        assert depths["pkg:golang/golang.org/x/sys@v0.1.0"] == -1

    def test_namespace_split_in_purl(self):
        bom = parse_sbom(generate_from_lockfile("go", GO_MOD, GO_MOD, "v1"))
        comp = {c.purl.name: c for c in bom.components}["client_golang"]
        assert comp.purl.namespace == "github.com/prometheus"

    def test_missing_module_directive_names_line(self):
        with pytest.raises(LockfileParseError, match="line 1"):
            parse_go_mod(b"require github.com/pkg/errors v0.9.1\n")

    def test_malformed_require_names_line(self):
        bad = b"module m\n\nrequire (\n\tgithub.com/pkg/errors\n)\n"
        with pytest.raises(LockfileParseError, match="line 4"):
            parse_go_mod(bad)

    def test_unterminated_block_rejected(self):
        with pytest.raises(LockfileParseError, match="unterminated"):
            parse_go_mod(b"module m\nrequire (\n\tx v1\n")


def _lock_counts(text: str, root_name: str) -> tuple[int, int]:
    """Independent line-oriented count of packages and dependency entries."""
    packages = 0
    edges = 0
    current = None
    in_deps = False
    for line in text.splitlines():
        line = line.strip()
        if line.startswith("name = "):
            current = line.split('"')[1]
            if current != root_name:
                packages += 1
        elif line.startswith("dependencies = ["):
            entries = line[line.index("[") + 1:line.rindex("]")]
            if current != root_name:
                edges += sum(1 for e in entries.split(",") if e.strip())
        elif line == "dependencies = [":
            in_deps = True
        elif in_deps:
            if line == "]":
                in_deps = False
            elif current != root_name and line.strip('",'):
                edges += 1
    return packages, edges


class TestCargoLock:
    def test_counts_match_line_oriented_reparse(self):
        bom = parse_sbom(
            generate_from_lockfile("cargo", CARGO_LOCK, CARGO_TOML, "v0.1.0"))
        packages, edges = _lock_counts(CARGO_LOCK.decode(), "myapp")
        assert (packages, edges) == (10, 14)
        assert len(bom.components) == packages
        assert len(bom.edges) == edges

    def test_roots_come_from_manifest(self):
        bom = parse_sbom(
            generate_from_lockfile("cargo", CARGO_LOCK, CARGO_TOML, "v0.1.0"))
        assert bom.roots == ("pkg:cargo/a@1.0.0", "pkg:cargo/b@1.1.0")
        depths = depth_map(bom)
        assert depths["pkg:cargo/a@1.0.0"] == 0
        assert depths["pkg:cargo/j@2.2.2"] == 3

    def test_missing_package_reference_rejected(self):
        lock = (b"version = 3\n\n[[package]]\nname = \"a\"\nversion = \"1.0.0\"\n"
                b"dependencies = [\"ghost\"]\n")
        toml = b"[package]\nname = \"app\"\n\n[dependencies]\na = \"1\"\n"
        with pytest.raises(LockfileParseError, match="ghost"):
            generate_from_lockfile("cargo", lock, toml, "v1")

    def test_ambiguous_unversioned_dependency_rejected(self):
        lock = (b"[[package]]\nname = \"app\"\nversion = \"0.1.0\"\n\n"
                b"[[package]]\nname = \"x\"\nversion = \"1.0.0\"\n"
                b"dependencies = [\"dual\"]\n\n"
                b"[[package]]\nname = \"dual\"\nversion = \"1.0.0\"\n\n"
                b"[[package]]\nname = \"dual\"\nversion = \"2.0.0\"\n")
        toml = b"[package]\nname = \"app\"\n"
        with pytest.raises(LockfileParseError, match="ambiguous"):
            generate_from_lockfile("cargo", lock, toml, "v1")

    def test_versioned_dependency_disambiguates(self):
        lock = (b"[[package]]\nname = \"app\"\nversion = \"0.1.0\"\n\n"
                b"[[package]]\nname = \"x\"\nversion = \"1.0.0\"\n"
                b"dependencies = [\"dual 2.0.0\"]\n\n"
                b"[[package]]\nname = \"dual\"\nversion = \"1.0.0\"\n\n"
                b"[[package]]\nname = \"dual\"\nversion = \"2.0.0\"\n")
        toml = b"[package]\nname = \"app\"\n\n[dependencies]\nx = \"1\"\n"
        bom = parse_sbom(generate_from_lockfile("cargo", lock, toml, "v1"))
        assert ("pkg:cargo/x@1.0.0", "pkg:cargo/dual@2.0.0") in bom.edges

    def test_renamed_manifest_dependency_resolved(self):
        lock = (b"[[package]]\nname = \"app\"\nversion = \"0.1.0\"\n\n"
                b"[[package]]\nname = \"real-crate\"\nversion = \"1.0.0\"\n")
        toml = (b"[package]\nname = \"app\"\n\n[dependencies]\n"
                b"alias = { package = \"real-crate\", version = \"1\" }\n")
        bom = parse_sbom(generate_from_lockfile("cargo", lock, toml, "v1"))
        assert bom.roots == ("pkg:cargo/real-crate@1.0.0",)

    def test_toml_syntax_error_carries_location(self):
        with pytest.raises(LockfileParseError, match="line"):
            generate_from_lockfile("cargo", b"[[package\n", CARGO_TOML, "v1")


def test_unsupported_ecosystem_rejected():
    with pytest.raises(LockfileParseError, match="npm"):
        generate_from_lockfile("npm", b"", b"", "v1")
