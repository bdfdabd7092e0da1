"""WordPress identification and version fingerprinting (step one of the scan).

Evidence comes from five locally collected surfaces instead of any external
lookup service, so the scanner works offline and against the bundled mock
fleet: the homepage meta generator tag, the RSS feed generator element, the
readme.html version line, ``?ver=`` query values on core asset URLs, and the
``/wp-json/`` index fingerprint.
"""
from __future__ import annotations

import re
from dataclasses import dataclass, field
from enum import Enum
from urllib.parse import urlsplit

from .http import TransportError

AFFECTED_VERSIONS = ((4, 7, 0), (4, 7, 1))


class MalformedUrl(ValueError):
    pass


class NoVersionFound(ValueError):
    pass


class AllProbesFailed(Exception):
    """Every fingerprint fetch failed at the transport layer."""


_SCHEME_RE = re.compile(r"^[a-zA-Z][a-zA-Z0-9+.-]*://")
_DEFAULT_PORTS = {"http": 80, "https": 443}


@dataclass(frozen=True)
class TargetUrl:
    scheme: str
    host: str
    port: int
    base_path: str

    @property
    def base_url(self) -> str:
        netloc = self.host
        if self.port != _DEFAULT_PORTS[self.scheme]:
            netloc += f":{self.port}"
        return f"{self.scheme}://{netloc}{self.base_path}"

    def __str__(self) -> str:
        return self.base_url


def normalize_target(raw: str) -> TargetUrl:
    """Parse free-form URL text into a canonical TargetUrl.

    Missing scheme defaults to http, host is lowercased, trailing slashes are
    stripped from the path (the empty path stays empty, not "/"). Query and
    fragment parts are discarded. Idempotent: normalizing the rendered form
    of a TargetUrl yields the same TargetUrl.
    """
    text = raw.strip()
    if not text:
        raise MalformedUrl("empty URL")
    if not _SCHEME_RE.match(text):
        text = "http://" + text
    parts = urlsplit(text)
    scheme = parts.scheme.lower()
    if scheme not in _DEFAULT_PORTS:
        raise MalformedUrl(f"unsupported scheme {scheme!r} in {raw!r}")
    host = parts.hostname
    if not host:
        raise MalformedUrl(f"no host in {raw!r}")
    try:
        port = parts.port
    except ValueError as exc:
        raise MalformedUrl(f"bad port in {raw!r}") from exc
    if port is None:
        port = _DEFAULT_PORTS[scheme]
    base_path = parts.path.rstrip("/")
    return TargetUrl(scheme=scheme, host=host, port=port, base_path=base_path)


@dataclass(frozen=True, order=False)
class WpVersion:
    """Dotted version triple; patch is absent when the source had only two
    components ("4.7"), which is not the same thing as patch zero."""

    major: int
    minor: int
    patch: int | None = None

    def sort_key(self) -> tuple[int, int, int]:
        # absent patch orders before .0 so the order is total
        return (self.major, self.minor, -1 if self.patch is None else self.patch)

    def __lt__(self, other: "WpVersion") -> bool:
        return self.sort_key() < other.sort_key()

    def __str__(self) -> str:
        if self.patch is None:
            return f"{self.major}.{self.minor}"
        return f"{self.major}.{self.minor}.{self.patch}"


_VERSION_RE = re.compile(r"(\d+)\.(\d+)(?:\.(\d+))?")


def parse_version(raw: str) -> WpVersion:
    """Extract the first dotted numeric sequence of two or three components."""
    m = _VERSION_RE.search(raw)
    if not m:
        raise NoVersionFound(f"no version in {raw!r}")
    major, minor, patch = m.groups()
    return WpVersion(int(major), int(minor), None if patch is None else int(patch))


def is_affected_version(v: WpVersion) -> bool:
    """True only for the exact releases 4.7.0 and 4.7.1; "4.7" is not enough
    on its own and gets resolved by the detector's coercion probe instead."""
    return (v.major, v.minor, v.patch) in AFFECTED_VERSIONS


class EvidenceSource(str, Enum):
    META_GENERATOR = "meta_generator"
    FEED_GENERATOR = "feed_generator"
    README_PAGE = "readme_page"
    ASSET_QUERY_VERSION = "asset_query_version"
    REST_HEADER = "rest_header"


# Most to least trusted. readme and asset versions carry patch precision;
# the meta generator commonly truncates to major.minor.
SOURCE_PRIORITY = {
    EvidenceSource.README_PAGE: 0,
    EvidenceSource.ASSET_QUERY_VERSION: 1,
    EvidenceSource.FEED_GENERATOR: 2,
    EvidenceSource.META_GENERATOR: 3,
    EvidenceSource.REST_HEADER: 4,
}


@dataclass(frozen=True)
class FingerprintEvidence:
    source: EvidenceSource
    raw_text: str
    parsed_version: WpVersion | None = None
    priority: int = -1

    def __post_init__(self):
        if self.priority < 0:
            object.__setattr__(self, "priority", SOURCE_PRIORITY[self.source])


@dataclass(frozen=True)
class FingerprintResult:
    is_wordpress: bool
    version: WpVersion | None
    evidence: tuple[FingerprintEvidence, ...]
    fetch_errors: tuple[tuple[str, str], ...] = ()


def choose_version(evidence) -> WpVersion | None:
    """Pick the version of the most trusted evidence that carries one.

    Ties inside one priority rank break on the rendered version then the raw
    text, so the result depends only on the evidence multiset, never on
    collection order.
    """
    carriers = [e for e in evidence if e.parsed_version is not None]
    if not carriers:
        return None
    best = min(carriers, key=lambda e: (e.priority, str(e.parsed_version), e.raw_text))
    return best.parsed_version


_META_GENERATOR_RES = (
    re.compile(r'<meta[^>]*name=["\']generator["\'][^>]*content=["\']([^"\']*)["\']', re.I),
    re.compile(r'<meta[^>]*content=["\']([^"\']*)["\'][^>]*name=["\']generator["\']', re.I),
)
_FEED_GENERATOR_RE = re.compile(r"<generator[^>]*>([^<]+)</generator>", re.I)
_README_VERSION_RE = re.compile(r"[Vv]ersion\s+(\d+\.\d+(?:\.\d+)?)")
_ASSET_VER_RE = re.compile(
    r"""(?:wp-content|wp-includes)/[^"'\s<>]*\?ver=(\d+\.\d+(?:\.\d+)?)"""
)


def _meta_generator_evidence(body: str) -> list[FingerprintEvidence]:
    out = []
    for rx in _META_GENERATOR_RES:
        for content in rx.findall(body):
            if "wordpress" in content.lower():
                try:
                    parsed = parse_version(content)
                except NoVersionFound:
                    parsed = None
                out.append(FingerprintEvidence(EvidenceSource.META_GENERATOR, content, parsed))
    return out


def _asset_evidence(body: str) -> list[FingerprintEvidence]:
    out = []
    seen = set()
    for m in _ASSET_VER_RE.finditer(body):
        raw = m.group(0)
        if raw in seen:
            continue
        seen.add(raw)
        out.append(FingerprintEvidence(
            EvidenceSource.ASSET_QUERY_VERSION, raw, parse_version(m.group(1))))
    return out


def _feed_evidence(body: str) -> list[FingerprintEvidence]:
    out = []
    for text in _FEED_GENERATOR_RE.findall(body):
        if "wordpress" in text.lower():
            try:
                parsed = parse_version(text)
            except NoVersionFound:
                parsed = None
            out.append(FingerprintEvidence(EvidenceSource.FEED_GENERATOR, text.strip(), parsed))
    return out


def _readme_evidence(body: str) -> list[FingerprintEvidence]:
    if "wordpress" not in body.lower():
        return []
    m = _README_VERSION_RE.search(body)
    if not m:
        return []
    return [FingerprintEvidence(
        EvidenceSource.README_PAGE, m.group(0), parse_version(m.group(1)))]


def _rest_evidence(resp) -> list[FingerprintEvidence]:
    link = resp.header("link") or ""
    if "api.w.org" in link:
        return [FingerprintEvidence(EvidenceSource.REST_HEADER, link, None)]
    if resp.status == 200 and b'"namespaces"' in resp.body and b"wp/v2" in resp.body:
        return [FingerprintEvidence(EvidenceSource.REST_HEADER, "wp/v2", None)]
    return []


def fingerprint(target: TargetUrl, http) -> FingerprintResult:
    """Collect WordPress markers from the five local evidence surfaces.

    Individual fetch failures are recorded and do not abort the remaining
    probes; only a clean sweep of transport failures raises AllProbesFailed.
    """
    base = target.base_url
    evidence: list[FingerprintEvidence] = []
    fetch_errors: list[tuple[str, str]] = []
    fetches = 0
    failures = 0

    def fetch(url):
        nonlocal fetches, failures
        fetches += 1
        try:
            return http.get(url, headers={"Accept": "*/*"})
        except TransportError as exc:
            failures += 1
            fetch_errors.append((url, exc.__class__.__name__))
            return None

    homepage = fetch(base + "/")
    if homepage is not None:
        evidence.extend(_meta_generator_evidence(homepage.text))

    feed = fetch(base + "/feed/")
    if feed is not None and feed.status == 200:
        evidence.extend(_feed_evidence(feed.text))

    readme = fetch(base + "/readme.html")
    if readme is not None and readme.status == 200:
        evidence.extend(_readme_evidence(readme.text))

    # asset evidence reuses the homepage body already on hand
    if homepage is not None:
        evidence.extend(_asset_evidence(homepage.text))

    rest = fetch(base + "/wp-json/")
    if rest is not None:
        evidence.extend(_rest_evidence(rest))

    if failures == fetches:
        raise AllProbesFailed(f"all {fetches} fingerprint probes failed for {base}")

    return FingerprintResult(
        is_wordpress=bool(evidence),
        version=choose_version(evidence),
        evidence=tuple(evidence),
        fetch_errors=tuple(fetch_errors),
    )
