"""purl grammar and the per-ecosystem version orderings."""

from __future__ import annotations

import random

import pytest

from depaudit.model import PackageUrl, VersionRange
from depaudit.purl import (
    PurlParseError,
    canonical_purl,
    compare_versions,
    format_purl,
    normalized_product_key,
    parse_purl,
    product_key_for,
    range_is_well_formed,
    version_in_range,
)
from oracles import ORACLE_CMPS, VERSION_GENS, gen_purl_fields


# ---------------------------------------------------------------------------
# parsing and formatting
# ---------------------------------------------------------------------------

def test_parse_full_purl():
    p = parse_purl("pkg:maven/org.apache.logging.log4j/log4j-core@2.14.1?type=jar#sub/dir")
    assert p.ecosystem == "maven"
    assert p.namespace == "org.apache.logging.log4j"
    assert p.name == "log4j-core"
    assert p.version == "2.14.1"
    assert p.qualifiers == (("type", "jar"),)
    assert p.subpath == "sub/dir"


def test_format_multi_segment_namespace():
    p = PackageUrl(ecosystem="golang", namespace="github.com/prometheus",
                   name="client_golang", version="v1.11.0")
    assert format_purl(p) == "pkg:golang/github.com/prometheus/client_golang@v1.11.0"


def test_parse_decodes_and_format_reencodes():
    text = "pkg:npm/%40scope/some%20pkg@1.0.0"
    p = parse_purl(text)
    assert p.namespace == "@scope"
    assert p.name == "some pkg"
    assert parse_purl(format_purl(p)) == p


def test_qualifiers_sorted_and_lowercased():
    p = parse_purl("pkg:npm/x@1.0.0?ZZ=9&aa=1")
    assert p.qualifiers == (("aa", "1"), ("zz", "9"))
    assert format_purl(p) == "pkg:npm/x@1.0.0?aa=1&zz=9"


def test_empty_qualifier_value_dropped():
    p = parse_purl("pkg:npm/x@1.0.0?a=&b=2")
    assert p.qualifiers == (("b", "2"),)


def test_subpath_dot_segments_dropped():
    p = parse_purl("pkg:npm/x@1#./a/../b")
    assert p.subpath == "a/b"


def test_scheme_case_and_leading_slashes_tolerated():
    assert parse_purl("PKG://npm/x@1").name == "x"


def test_parse_errors_name_the_segment():
    with pytest.raises(PurlParseError, match="scheme"):
        parse_purl("npm/x@1")
    with pytest.raises(PurlParseError, match="name"):
        parse_purl("pkg:npm")
    with pytest.raises(PurlParseError, match="name"):
        parse_purl("pkg:npm/")
    with pytest.raises(PurlParseError, match="qualifier"):
        parse_purl("pkg:npm/x@1?novalue")
    with pytest.raises(PurlParseError, match="duplicate"):
        parse_purl("pkg:npm/x@1?a=1&a=2")


def test_round_trip_random_objects():
    rng = random.Random(4004)
    for _ in range(300):
        p = PackageUrl(**gen_purl_fields(rng))
        assert parse_purl(format_purl(p)) == p


def test_canonical_is_idempotent_on_strings():
    rng = random.Random(5005)
    for _ in range(300):
        s = format_purl(PackageUrl(**gen_purl_fields(rng)))
        assert canonical_purl(canonical_purl(s)) == canonical_purl(s)


# ---------------------------------------------------------------------------
# product keys
# ---------------------------------------------------------------------------

def test_product_key_normalizes_ecosystem_aliases():
    assert normalized_product_key("go", "github.com/Prometheus", "Client_Golang") == \
        "golang:github.com/prometheus/client_golang"
    assert normalized_product_key("rubygems", None, "rails") == "gem:rails"


def test_product_key_pypi_name_folding():
    assert normalized_product_key("pypi", None, "Foo_Bar.baz") == "pypi:foo-bar-baz"


def test_product_key_from_purl():
    p = parse_purl("pkg:maven/org.apache.logging.log4j/log4j-core@2.14.1")
    assert product_key_for(p) == "maven:org.apache.logging.log4j/log4j-core"


# ---------------------------------------------------------------------------
# version ordering: documented fixed points
# ---------------------------------------------------------------------------

def _chain(eco: str, versions: list[str]):
    for a, b in zip(versions, versions[1:]):
        assert compare_versions(eco, a, b) == -1, (a, b)
        assert compare_versions(eco, b, a) == 1, (b, a)


def test_semver_precedence_chain():
    _chain("npm", [
        "1.0.0-alpha", "1.0.0-alpha.1", "1.0.0-alpha.beta", "1.0.0-beta",
        "1.0.0-beta.2", "1.0.0-beta.11", "1.0.0-rc.1", "1.0.0", "2.0.0",
        "2.1.0", "2.1.1",
    ])


def test_semver_build_metadata_ignored():
    assert compare_versions("cargo", "1.0.0+build1", "1.0.0+build9") == 0
    assert compare_versions("cargo", "1.0.0+build1", "1.0.0") == 0


def test_golang_leading_v_stripped():
    assert compare_versions("golang", "v1.11.0", "1.11.0") == 0
    assert compare_versions("golang", "v0.0.0-20190812154241-14fe0d1b01d4", "v0.0.1") == -1


def test_maven_documented_order():
    _chain("maven", ["1", "1.1"])
    _chain("maven", ["1-snapshot", "1", "1-sp"])
    _chain("maven", ["1-foo2", "1-foo10"])
    _chain("maven", ["1.foo", "1-foo", "1-1", "1.1"])
    for alias in ["1.ga", "1-ga", "1-0", "1.0"]:
        assert compare_versions("maven", alias, "1") == 0, alias
    assert compare_versions("maven", "1-sp", "1-ga") == 1
    assert compare_versions("maven", "1-sp.1", "1-ga.1") == 1
    assert compare_versions("maven", "1-sp-1", "1-ga-1") == -1
    assert compare_versions("maven", "1-ga-1", "1-1") == 0
    assert compare_versions("maven", "1-a1", "1-alpha-1") == 0
    assert compare_versions("maven", "1.0-alpha", "1.0") == -1
    assert compare_versions("maven", "1.0-ALPHA", "1.0-alpha") == 0
    assert compare_versions("maven", "2.0-SNAPSHOT", "2.0") == -1


def test_pypi_phase_order():
    _chain("pypi", ["1.0.dev1", "1.0a1", "1.0b2", "1.0rc1", "1.0", "1.0.post1", "1.1"])
    assert compare_versions("pypi", "1.0.post1", "1.0") == 1
    assert compare_versions("pypi", "1.0-1", "1.0.post1") == 0
    assert compare_versions("pypi", "1!0.5", "2.0") == 1
    assert compare_versions("pypi", "v1.0", "1.0") == 0
    assert compare_versions("pypi", "1.0.0", "1.0") == 0


def test_gem_string_segments_rank_below_numeric():
    _chain("gem", ["1.0.a", "1.0", "1.0.1"])
    assert compare_versions("gem", "1.0", "1.0.0") == 0
    _chain("composer", ["1.0.alpha", "1.0", "1.0.1"])


def test_fallback_is_numeric_then_lexicographic():
    _chain("generic", ["1.2", "1.10"])
    assert compare_versions("generic", "1.2", "1.2.0") == 0
    # '2' sorts before 'b' by byte value, so numeric-vs-text stays lexicographic
    _chain("unknown-eco", ["1.2", "1.b"])
    assert compare_versions("x", "3.el7", "3.el7") == 0


# ---------------------------------------------------------------------------
# version ordering: randomized agreement with the reference comparators
# ---------------------------------------------------------------------------

_SUFFIXES = {
    # appending to an arbitrary pypi version can leave the reference
    # parser's grammar, so pypi pairs only mutate digits in place
    "pypi": [""],
    None: ["", ".1", "-1", "-alpha", ".0"],
}


def _mutate(rng: random.Random, eco: str, v: str) -> str:
    roll = rng.random()
    if roll < 0.3:
        return v + rng.choice(_SUFFIXES.get(eco, _SUFFIXES[None]))
    if roll < 0.5 and any(c.isdigit() for c in v):
        digits = [i for i, c in enumerate(v) if c.isdigit()]
        i = rng.choice(digits)
        return v[:i] + str((int(v[i]) + 1) % 10) + v[i + 1:]
    return VERSION_GENS[eco](rng)


def _seed(eco: str, salt: int = 0) -> int:
    return sum(ord(c) for c in eco) * 7919 + salt


@pytest.mark.parametrize("eco", sorted(ORACLE_CMPS))
def test_ordering_matches_reference(eco):
    rng = random.Random(_seed(eco))
    gen = VERSION_GENS[eco]
    oracle = ORACLE_CMPS[eco]
    for _ in range(250):
        a = gen(rng)
        b = _mutate(rng, eco, a) if rng.random() < 0.5 else gen(rng)
        expected = oracle(a, b)
        assert compare_versions(eco, a, b) == expected, (a, b)
        assert compare_versions(eco, b, a) == -expected, (b, a)
        assert compare_versions(eco, a, a) == 0
        assert compare_versions(eco, b, b) == 0


@pytest.mark.parametrize("eco", sorted(ORACLE_CMPS))
def test_ordering_is_transitive(eco):
    rng = random.Random(_seed(eco, salt=0xABC))
    gen = VERSION_GENS[eco]
    for _ in range(150):
        trio = sorted(
            [gen(rng) for _ in range(3)],
            key=lambda v: _SortKey(eco, v),
        )
        a, b, c = trio
        assert compare_versions(eco, a, b) <= 0
        assert compare_versions(eco, b, c) <= 0
        assert compare_versions(eco, a, c) <= 0


class _SortKey:
    def __init__(self, eco: str, v: str):
        self.eco = eco
        self.v = v

    def __lt__(self, other: "_SortKey") -> bool:
        return compare_versions(self.eco, self.v, other.v) < 0


# ---------------------------------------------------------------------------
# range containment
# ---------------------------------------------------------------------------

def test_range_bounds_inclusive_exclusive():
    r = VersionRange(start=("2.0", True), end=("2.15.0", False))
    assert version_in_range("maven", "2.0", r)
    assert version_in_range("maven", "2.14.1", r)
    assert not version_in_range("maven", "2.15.0", r)
    assert not version_in_range("maven", "1.9", r)

    r2 = VersionRange(start=("1.0", False), end=("2.0", True))
    assert not version_in_range("npm", "1.0.0", r2)
    assert version_in_range("npm", "1.0.1", r2)
    assert version_in_range("npm", "2.0.0", r2)


def test_range_exact_membership():
    r = VersionRange(exact=("1.2.3", "2.0.0"))
    assert version_in_range("npm", "1.2.3", r)
    assert not version_in_range("npm", "1.2.4", r)


def test_range_without_bounds_matches_everything():
    r = VersionRange()
    assert version_in_range("npm", "0.0.1", r)
    assert version_in_range("maven", "99", r)


def test_range_well_formedness():
    assert range_is_well_formed("npm", VersionRange(start=("1.0", True), end=("2.0", True)))
    assert not range_is_well_formed("npm", VersionRange(start=("3.0", True), end=("2.0", True)))
    assert range_is_well_formed("npm", VersionRange())
    assert not range_is_well_formed("npm", VersionRange(exact=()))
