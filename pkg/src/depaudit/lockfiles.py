"""Internal BOM generators for go and cargo lockfiles.

These stand in for ecosystem SBOM plugins so that generation works
offline: a lockfile pins exact versions and (for cargo) records the
dependency lists, which is the same graph a plugin would emit.
"""

from __future__ import annotations

try:
    import tomllib
except ImportError:  # pragma: no cover - 3.10 fallback
    import tomli as tomllib


class LockfileParseError(ValueError):
    pass


def _golang_purl(module_path: str, version: str | None) -> str:
    segments = module_path.strip("/").split("/")
    name = segments[-1]
    namespace = "/".join(segments[:-1])
    base = f"pkg:golang/{namespace}/{name}" if namespace else f"pkg:golang/{name}"
    return f"{base}@{version}" if version else base


def _component_entry(purl: str, name: str, version: str,
                     group: str | None = None) -> dict:
    entry = {
        "type": "library",
        "bom-ref": purl,
        "name": name,
        "version": version,
        "purl": purl,
    }
    if group:
        entry["group"] = group
    return entry


# ---------------------------------------------------------------------------
# go.mod
# ---------------------------------------------------------------------------

def parse_go_mod(data: bytes) -> dict:
    """Extract the module path and require directives from a go.mod.

    Returns {"module": str, "requires": [(path, version, indirect)]}.
    """
    module = None
    requires: list[tuple[str, str, bool]] = []
    in_block = False
    for lineno, raw in enumerate(data.decode("utf-8", errors="replace").splitlines(), 1):
        line, _, comment = raw.partition("//")
        indirect = "indirect" in comment
        line = line.strip()
        if not line:
            continue
        if in_block:
            if line == ")":
                in_block = False
                continue
            parts = line.split()
            if len(parts) != 2:
                raise LockfileParseError(
                    f"go.mod line {lineno}: malformed require entry {raw.strip()!r}")
            requires.append((parts[0], parts[1], indirect))
            continue
        if line.startswith("module "):
            module = line.split(None, 1)[1].strip().strip('"')
        elif line == "require (":
            in_block = True
        elif line.startswith("require "):
            parts = line.split()
            if len(parts) != 3:
                raise LockfileParseError(
                    f"go.mod line {lineno}: malformed require directive")
            requires.append((parts[1], parts[2], indirect))
        # exclude/replace/go/toolchain directives carry no component info
    if in_block:
        raise LockfileParseError("go.mod: unterminated require block")
    if module is None:
        raise LockfileParseError("go.mod line 1: missing module directive")
    return {"module": module, "requires": requires}


def _go_bom(manifest: bytes, subject_version: str) -> dict:
    parsed = parse_go_mod(manifest)
    subject_name = parsed["module"]
    subject_ref = f"{subject_name}@{subject_version}"
    components = []
    roots = []
    for path, version, indirect in parsed["requires"]:
        purl = _golang_purl(path, version)
        segments = path.strip("/").split("/")
        group = "/".join(segments[:-1]) or None
        components.append(_component_entry(purl, segments[-1], version, group))
        if not indirect:
            roots.append(purl)
    # go.mod records no inter-module edges, so indirect requires surface as
    # components without a resolvable depth
    dependencies = [{"ref": subject_ref, "dependsOn": sorted(roots)}]
    dependencies += [{"ref": c["bom-ref"], "dependsOn": []} for c in components]
    return {
        "bomFormat": "CycloneDX",
        "specVersion": "1.5",
        "version": 1,
        "metadata": {"component": {
            "type": "application", "bom-ref": subject_ref,
            "name": subject_name, "version": subject_version,
        }},
        "components": components,
        "dependencies": dependencies,
    }


# ---------------------------------------------------------------------------
# Cargo.lock
# ---------------------------------------------------------------------------

def _parse_toml(data: bytes, label: str) -> dict:
    try:
        return tomllib.loads(data.decode("utf-8", errors="replace"))
    except tomllib.TOMLDecodeError as exc:
        # tomllib errors already carry "at line N, column M"
        raise LockfileParseError(f"{label}: {exc}") from exc


def _resolve_cargo_dep(entry: str, by_name: dict[str, list[dict]]) -> dict:
    parts = entry.split()
    name = parts[0]
    candidates = by_name.get(name)
    if not candidates:
        raise LockfileParseError(
            f"Cargo.lock: dependency {name!r} is not in the package table")
    if len(parts) > 1:
        version = parts[1]
        for pkg in candidates:
            if pkg.get("version") == version:
                return pkg
        raise LockfileParseError(
            f"Cargo.lock: dependency {name!r} version {version} is not in the"
            " package table")
    if len(candidates) > 1:
        raise LockfileParseError(
            f"Cargo.lock: dependency {name!r} is ambiguous without a version")
    return candidates[0]


def _cargo_bom(lockfile: bytes, manifest: bytes, subject_version: str) -> dict:
    lock = _parse_toml(lockfile, "Cargo.lock")
    mani = _parse_toml(manifest, "Cargo.toml")
    packages = lock.get("package") or []
    root_name = (mani.get("package") or {}).get("name")
    subject_name = root_name or "crate"

    by_name: dict[str, list[dict]] = {}
    for pkg in packages:
        if "name" not in pkg or "version" not in pkg:
            raise LockfileParseError("Cargo.lock: package entry without name/version")
        by_name.setdefault(pkg["name"], []).append(pkg)

    def purl_of(pkg: dict) -> str:
        return f"pkg:cargo/{pkg['name']}@{pkg['version']}"

    components = []
    dependencies = []
    for pkg in packages:
        if pkg["name"] == root_name:
            continue
        components.append(_component_entry(purl_of(pkg), pkg["name"], pkg["version"]))
        deps = []
        for entry in pkg.get("dependencies") or []:
            target = _resolve_cargo_dep(entry, by_name)
            if target["name"] == root_name:
                continue
            deps.append(purl_of(target))
        dependencies.append({"ref": purl_of(pkg), "dependsOn": sorted(deps)})

    roots = []
    declared = mani.get("dependencies") or {}
    for dep_name, spec in declared.items():
        # a renamed dependency points at the real crate via `package = ...`
        real = spec.get("package", dep_name) if isinstance(spec, dict) else dep_name
        if real not in by_name:
            raise LockfileParseError(
                f"Cargo.lock: manifest dependency {real!r} is not in the"
                " package table")
        roots.append(purl_of(_resolve_cargo_dep(real, by_name)))
    subject_ref = f"{subject_name}@{subject_version}"
    dependencies.insert(0, {"ref": subject_ref, "dependsOn": sorted(set(roots))})

    return {
        "bomFormat": "CycloneDX",
        "specVersion": "1.5",
        "version": 1,
        "metadata": {"component": {
            "type": "application", "bom-ref": subject_ref,
            "name": subject_name, "version": subject_version,
        }},
        "components": components,
        "dependencies": dependencies,
    }


def generate_from_lockfile(
    ecosystem: str,
    lockfile: bytes,
    manifest: bytes,
    subject_version: str,
) -> dict:
    """Lockfile + manifest -> CycloneDX dict (parseable by parse_sbom).

    For go the two inputs are the same go.mod (it pins versions itself);
    for cargo they are Cargo.lock and Cargo.toml.
    """
    if ecosystem == "go":
        return _go_bom(manifest, subject_version)
    if ecosystem == "cargo":
        return _cargo_bom(lockfile, manifest, subject_version)
    raise LockfileParseError(f"no internal generator for ecosystem {ecosystem!r}")
