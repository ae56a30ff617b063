"""Package URL parsing/formatting and ecosystem-aware version ordering.

Matching correctness rests on two things this module owns: a canonical
purl form that round-trips exactly (``parse_purl(format_purl(p)) == p``)
and a total version order per ecosystem family so NVD applicability
ranges can be evaluated:

* cargo / golang / npm -- semver rules (leading ``v`` stripped for golang,
  build metadata ignored, numeric prerelease identifiers before
  alphanumeric ones);
* maven -- the published Maven ordering rules (dash/dot distinction,
  qualifier ranks alpha < beta < milestone < rc < snapshot < release < sp,
  trailing null-token trimming);
* pypi -- normalized dotted-numeric with pre/post/dev phases;
* gem / composer -- dotted-numeric with alphanumeric segments, string
  segments sorting below numeric ones;
* anything else -- a documented total fallback: segment-wise numeric
  comparison, lexicographic when either side is non-numeric.

The tokenizer behind all of these is the hot kernel selected by
:mod:`depaudit._native`.
"""

from __future__ import annotations

from functools import lru_cache
from urllib.parse import quote, unquote

from ._native import segment_version
from .model import PackageUrl, VersionRange

LT, EQ, GT = -1, 0, 1


class PurlParseError(ValueError):
    """Raised when a purl string violates the grammar; names the segment."""


# ---------------------------------------------------------------------------
# purl parse / format
# ---------------------------------------------------------------------------

def parse_purl(text: str) -> PackageUrl:
    if not text.lower().startswith("pkg:"):
        raise PurlParseError(f"missing 'pkg:' scheme in {text!r}")
    rest = text[4:].lstrip("/")

    subpath = None
    if "#" in rest:
        rest, raw = rest.rsplit("#", 1)
        parts = [unquote(seg) for seg in raw.split("/") if seg not in ("", ".", "..")]
        subpath = "/".join(parts) or None

    qualifiers: list[tuple[str, str]] = []
    if "?" in rest:
        rest, raw = rest.rsplit("?", 1)
        seen = set()
        for pair in raw.split("&"):
            if not pair:
                continue
            if "=" not in pair:
                raise PurlParseError(f"malformed qualifier {pair!r} (no '=')")
            key, value = pair.split("=", 1)
            key = unquote(key).lower()
            if not key:
                raise PurlParseError(f"malformed qualifier {pair!r} (empty key)")
            if key in seen:
                raise PurlParseError(f"duplicate qualifier key {key!r}")
            seen.add(key)
            value = unquote(value)
            if value:
                qualifiers.append((key, value))

    version = None
    if "@" in rest:
        rest, raw = rest.rsplit("@", 1)
        version = unquote(raw) or None

    if "/" not in rest:
        raise PurlParseError(f"missing name segment in {text!r}")
    ecosystem, remainder = rest.split("/", 1)
    ecosystem = unquote(ecosystem).lower()
    if not ecosystem:
        raise PurlParseError(f"empty type segment in {text!r}")

    pieces = [unquote(seg) for seg in remainder.split("/") if seg]
    if not pieces:
        raise PurlParseError(f"empty name segment in {text!r}")
    name = pieces[-1]
    namespace = "/".join(pieces[:-1]) or None
    if not name:
        raise PurlParseError(f"empty name segment in {text!r}")

    return PackageUrl(
        ecosystem=ecosystem,
        namespace=namespace,
        name=name,
        version=version,
        qualifiers=tuple(sorted(qualifiers)),
        subpath=subpath,
    )


def format_purl(p: PackageUrl) -> str:
    out = ["pkg:", p.ecosystem.lower(), "/"]
    ns_segments = [seg for seg in (p.namespace or "").split("/") if seg]
    if ns_segments:
        out.append("/".join(quote(seg, safe="") for seg in ns_segments))
        out.append("/")
    out.append(quote(p.name, safe=""))
    if p.version:
        out.append("@")
        out.append(quote(p.version, safe=""))
    if p.qualifiers:
        pairs = sorted((k.lower(), v) for k, v in p.qualifiers if v)
        out.append("?")
        out.append("&".join(f"{quote(k, safe='')}={quote(v, safe='')}" for k, v in pairs))
    if p.subpath:
        out.append("#")
        out.append("/".join(quote(seg, safe="") for seg in p.subpath.split("/")))
    return "".join(out)


def canonical_purl(value: str | PackageUrl) -> str:
    """Canonical string form; accepts either a purl string or a PackageUrl."""
    if isinstance(value, PackageUrl):
        return format_purl(value)
    return format_purl(parse_purl(value))


_ECOSYSTEM_ALIASES = {
    "go": "golang",
    "crates": "cargo",
    "rubygems": "gem",
    "packagist": "composer",
    "pip": "pypi",
}


def normalized_ecosystem(ecosystem: str) -> str:
    eco = ecosystem.lower()
    return _ECOSYSTEM_ALIASES.get(eco, eco)


def normalized_product_key(ecosystem: str, namespace: str | None, name: str) -> str:
    """Stable ecosystem-qualified key used to join components and advisories."""
    eco = normalized_ecosystem(ecosystem)
    name = name.lower()
    namespace = namespace.lower() if namespace else None
    if eco == "pypi":
        name = _pypi_name(name)
    if namespace:
        return f"{eco}:{namespace}/{name}"
    return f"{eco}:{name}"


def product_key_for(p: PackageUrl) -> str:
    return normalized_product_key(p.ecosystem, p.namespace, p.name)


def _pypi_name(name: str) -> str:
    out = []
    prev_dash = False
    for ch in name:
        if ch in "-_.":
            if not prev_dash:
                out.append("-")
            prev_dash = True
        else:
            out.append(ch)
            prev_dash = False
    return "".join(out)


# ---------------------------------------------------------------------------
# version ordering
# ---------------------------------------------------------------------------

_SEMVER_ECOSYSTEMS = {"cargo", "golang", "npm"}
_GEMLIKE_ECOSYSTEMS = {"gem", "composer"}


def compare_versions(ecosystem: str, a: str, b: str) -> int:
    """Total order on version strings: -1 (LT), 0 (EQ) or 1 (GT)."""
    eco = normalized_ecosystem(ecosystem)
    if eco == "maven":
        return _cmp_maven_items(_maven_items(a), _maven_items(b))
    if eco in _SEMVER_ECOSYSTEMS:
        ka, kb = _semver_key(a, eco), _semver_key(b, eco)
    elif eco == "pypi":
        ka, kb = _pypi_key(a), _pypi_key(b)
    elif eco in _GEMLIKE_ECOSYSTEMS:
        return _cmp_padded(_gem_cells(a), _gem_cells(b))
    else:
        return _cmp_fallback(_fallback_cells(a), _fallback_cells(b))
    return (ka > kb) - (ka < kb)


def version_in_range(ecosystem: str, version: str, r: VersionRange) -> bool:
    """True when ``version`` satisfies the range under the ecosystem order.

    A range with neither bounds nor exact list matches every version.
    """
    if r.exact is not None:
        return any(compare_versions(ecosystem, version, e) == EQ for e in r.exact)
    if r.start is not None:
        bound, inclusive = r.start
        c = compare_versions(ecosystem, version, bound)
        if c < 0 or (c == 0 and not inclusive):
            return False
    if r.end is not None:
        bound, inclusive = r.end
        c = compare_versions(ecosystem, version, bound)
        if c > 0 or (c == 0 and not inclusive):
            return False
    return True


def range_is_well_formed(ecosystem: str, r: VersionRange) -> bool:
    if r.exact is not None:
        return len(r.exact) > 0
    if r.start is not None and r.end is not None:
        return compare_versions(ecosystem, r.start[0], r.end[0]) <= 0
    return True


# -- semver family ----------------------------------------------------------

@lru_cache(maxsize=8192)
def _semver_key(version: str, eco: str) -> tuple:
    text = version
    if eco == "golang" and text[:1] in ("v", "V"):
        text = text[1:]
    release: list[int] = []
    pre: list[tuple[int, int, str]] = []
    in_release = True
    for sep, kind, num, alpha in segment_version(text):
        if sep == "+":
            break  # build metadata never affects precedence
        if in_release and kind == 0 and sep in ("", "."):
            release.append(num)
            continue
        in_release = False
        if kind == 0:
            pre.append((0, num, ""))
        elif alpha:
            pre.append((1, 0, alpha))
    while release and release[-1] == 0:
        release.pop()
    return (tuple(release), 0 if pre else 1, tuple(pre))


# -- maven ------------------------------------------------------------------

_MAVEN_QUALIFIERS = {
    "alpha": 1, "beta": 2, "milestone": 3, "rc": 4, "cr": 4,
    "snapshot": 5, "": 6, "ga": 6, "final": 6, "release": 6, "sp": 7,
}
_MAVEN_SHORT = {"a": "alpha", "b": "beta", "m": "milestone"}
_UNKNOWN_QUALIFIER = 8

# item encodings: int | "NN:text" qualifier string | tuple (sublist); the
# "NN:" rank prefix makes plain string comparison equal rank-then-text order
_RELEASE_CELL = "06:"


def _qualifier_cell(rank: int, text: str) -> str:
    return f"{rank:02d}:{text}"


@lru_cache(maxsize=8192)
def _maven_items(version: str) -> tuple:
    cells = segment_version(version.lower())
    root: list = []
    current = root
    for idx, (sep, kind, num, alpha) in enumerate(cells):
        if idx > 0 and sep != ".":
            # '-', '_', '+' and digit/letter transitions open a sibling sublist
            current = []
            root.append(current)
        if kind == 0:
            current.append(num)
        else:
            followed_by_digit = (
                idx + 1 < len(cells) and cells[idx + 1][0] == "" and cells[idx + 1][1] == 0
            )
            token = _MAVEN_SHORT.get(alpha, alpha) if followed_by_digit else alpha
            rank = _MAVEN_QUALIFIERS.get(token)
            if rank is None:
                current.append(_qualifier_cell(_UNKNOWN_QUALIFIER, token))
            else:
                current.append(_qualifier_cell(rank, ""))
    _maven_normalize(root)
    return _freeze(root)


def _maven_normalize(items: list) -> None:
    for item in items:
        if isinstance(item, list):
            _maven_normalize(item)
    i = len(items) - 1
    while i >= 0:
        item = items[i]
        if _maven_is_null(item):
            items.pop(i)
        elif not isinstance(item, list):
            break  # scanning continues past sublists, stops at a live scalar
        i -= 1


def _maven_is_null(item) -> bool:
    if isinstance(item, int):
        return item == 0
    if isinstance(item, str):
        return item == _RELEASE_CELL
    return not item


def _freeze(items: list) -> tuple:
    return tuple(_freeze(i) if isinstance(i, list) else i for i in items)


def _maven_type_rank(item) -> int:
    # qualifier strings sort below sublists, sublists below numbers
    if isinstance(item, int):
        return 2
    if isinstance(item, str):
        return 0
    return 1


def _cmp_maven_items(a, b) -> int:
    ra, rb = _maven_type_rank(a), _maven_type_rank(b)
    if ra != rb:
        return (ra > rb) - (ra < rb)
    if ra != 1:
        return (a > b) - (a < b)
    for k in range(max(len(a), len(b))):
        if k >= len(a):
            c = -_cmp_maven_null(b[k])
        elif k >= len(b):
            c = _cmp_maven_null(a[k])
        else:
            c = _cmp_maven_items(a[k], b[k])
        if c:
            return c
    return 0


def _cmp_maven_null(item) -> int:
    """Sign of comparing ``item`` against an absent (release-valued) slot."""
    if isinstance(item, int):
        return (item > 0) - (item < 0)
    if isinstance(item, str):
        return (item > _RELEASE_CELL) - (item < _RELEASE_CELL)
    for sub in item:
        c = _cmp_maven_null(sub)
        if c:
            return c
    return 0


# -- pypi -------------------------------------------------------------------

_PYPI_PRE = {"a": 0, "alpha": 0, "b": 1, "beta": 1, "c": 2, "pre": 2, "preview": 2, "rc": 2}
_PYPI_POST = {"post", "rev", "r"}


@lru_cache(maxsize=8192)
def _pypi_key(version: str) -> tuple:
    text = version.lower().strip()
    epoch = 0
    if "!" in text:
        head, _, text = text.partition("!")
        if head.isdigit():
            epoch = int(head)
    if text[:1] == "v":
        text = text[1:]
    cells = segment_version(text)
    release: list[int] = []
    i = 0
    while i < len(cells) and cells[i][1] == 0 and cells[i][0] in ("", "."):
        release.append(cells[i][2])
        i += 1
    while release and release[-1] == 0:
        release.pop()

    pre = post = dev = None
    leftovers: list[str] = []
    while i < len(cells):
        sep, kind, num, alpha = cells[i]
        if kind == 0:
            # bare "-N" is an implicit post release
            if post is None and sep == "-":
                post = num
            else:
                leftovers.append(str(num))
            i += 1
            continue
        has_number = i + 1 < len(cells) and cells[i + 1][1] == 0
        trailing = cells[i + 1][2] if has_number else 0
        step = 2 if has_number else 1
        if alpha in _PYPI_PRE and pre is None and post is None and dev is None:
            pre = (_PYPI_PRE[alpha], trailing)
            i += step
        elif alpha in _PYPI_POST and post is None and dev is None:
            post = trailing
            i += step
        elif alpha == "dev" and dev is None:
            dev = trailing
            i += step
        else:
            if alpha:
                leftovers.append(alpha)
            i += 1

    if pre is not None:
        pre_cell = (1, pre[0], "", pre[1])
    elif post is None and dev is not None:
        pre_cell = (0, 0, "", 0)  # dev-only sorts before any pre-release
    elif leftovers:
        pre_cell = (1, 99, ".".join(leftovers), 0)  # unrecognized suffix
    else:
        pre_cell = (2, 0, "", 0)
    post_cell = (0, 0) if post is None else (1, post)
    dev_cell = (1, 0) if dev is None else (0, dev)
    return (epoch, tuple(release), pre_cell, post_cell, dev_cell)


# -- gem / composer / fallback ----------------------------------------------

@lru_cache(maxsize=8192)
def _gem_cells(version: str) -> tuple:
    # alphabetic segments sort below numeric ones ("1.0.a" < "1.0.0")
    cells = []
    for _sep, kind, num, alpha in segment_version(version.lower()):
        if kind == 0:
            cells.append((1, num, ""))
        elif alpha:
            cells.append((0, 0, alpha))
    return tuple(cells)


_ZERO_CELL = (1, 0, "")


def _cmp_padded(a: tuple, b: tuple) -> int:
    for k in range(max(len(a), len(b))):
        ca = a[k] if k < len(a) else _ZERO_CELL
        cb = b[k] if k < len(b) else _ZERO_CELL
        if ca != cb:
            return (ca > cb) - (ca < cb)
    return 0


@lru_cache(maxsize=8192)
def _fallback_cells(version: str) -> tuple:
    cells = []
    for _sep, kind, num, alpha in segment_version(version.lower()):
        if kind == 0:
            cells.append((True, num, str(num)))
        elif alpha:
            cells.append((False, 0, alpha))
    return tuple(cells)


_FALLBACK_ZERO = (True, 0, "0")


def _cmp_fallback(a: tuple, b: tuple) -> int:
    # numeric segments compare numerically; any other pairing compares the
    # literal tokens lexicographically, so the order stays total
    for k in range(max(len(a), len(b))):
        ca = a[k] if k < len(a) else _FALLBACK_ZERO
        cb = b[k] if k < len(b) else _FALLBACK_ZERO
        if ca[0] and cb[0]:
            if ca[1] != cb[1]:
                return (ca[1] > cb[1]) - (ca[1] < cb[1])
        elif ca[2] != cb[2]:
            return (ca[2] > cb[2]) - (ca[2] < cb[2])
    return 0
