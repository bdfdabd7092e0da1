"""Locating and parsing the default REST posts collection of a target.

WordPress exposes the same collection under three routes depending on
permalink configuration, so the probe walks all three before giving up:
the pretty path, the index.php-prefixed path, and the ?rest_route= query
form.
"""
from __future__ import annotations

import json
import logging
from dataclasses import dataclass
from enum import Enum

from .fingerprint import TargetUrl
from .http import TransportError

log = logging.getLogger(__name__)


class NotJsonArray(ValueError):
    """Body was not a JSON array: the endpoint is absent or protected."""


class NetworkUnreachable(Exception):
    """Every route variant failed at the transport layer."""


class EndpointVariant(str, Enum):
    PLAIN_PATH = "plain_path"
    INDEX_PHP_PATH = "index_php_path"
    REST_ROUTE_QUERY = "rest_route_query"


VARIANT_ORDER = (
    EndpointVariant.PLAIN_PATH,
    EndpointVariant.INDEX_PHP_PATH,
    EndpointVariant.REST_ROUTE_QUERY,
)


@dataclass(frozen=True)
class PostRecord:
    """One disclosed post, fields verbatim from the response."""

    id: int
    date: str = ""
    date_gmt: str = ""
    guid_rendered: str = ""
    modified: str = ""
    slug: str = ""


@dataclass(frozen=True)
class ProbeResult:
    endpoint_url: str
    http_status: int
    posts: tuple[PostRecord, ...]
    parse_error: str | None
    variant: EndpointVariant

    @property
    def endpoint_present(self) -> bool:
        return self.http_status == 200 and self.parse_error is None


def build_endpoint_url(target: TargetUrl, variant: EndpointVariant) -> str:
    base = target.base_url
    if variant is EndpointVariant.PLAIN_PATH:
        return f"{base}/wp-json/wp/v2/posts/"
    if variant is EndpointVariant.INDEX_PHP_PATH:
        return f"{base}/index.php/wp-json/wp/v2/posts/"
    return f"{base}/?rest_route=/wp/v2/posts"


def parse_posts(body: bytes) -> list[PostRecord]:
    """Parse a posts collection body into records.

    Elements without an "id" are skipped (reported via the module logger);
    anything that is not a top-level JSON array raises NotJsonArray.
    """
    try:
        data = json.loads(body)
    except (ValueError, UnicodeDecodeError) as exc:
        raise NotJsonArray(f"body is not JSON: {exc}") from exc
    if not isinstance(data, list):
        raise NotJsonArray(f"body is JSON but not an array (got {type(data).__name__})")
    records = []
    skipped = 0
    for element in data:
        if not isinstance(element, dict) or "id" not in element:
            skipped += 1
            continue
        guid = element.get("guid")
        records.append(PostRecord(
            id=element["id"],
            date=element.get("date", ""),
            date_gmt=element.get("date_gmt", ""),
            guid_rendered=guid.get("rendered", "") if isinstance(guid, dict) else "",
            modified=element.get("modified", ""),
            slug=element.get("slug", ""),
        ))
    if skipped:
        log.debug("parse_posts skipped %d elements without an id", skipped)
    return records


def probe_posts_endpoint(target: TargetUrl, http) -> ProbeResult:
    """Try the route variants in fixed order and return the first that serves
    a JSON array with status 200.

    If no variant succeeds, the last attempt that produced an HTTP response
    is returned with its status and parse error; NetworkUnreachable is raised
    only when every variant failed before getting a response at all, which
    the detector reports as inconclusive rather than safe.
    """
    last_result: ProbeResult | None = None
    for variant in VARIANT_ORDER:
        url = build_endpoint_url(target, variant)
        try:
            resp = http.get(url, headers={"Accept": "application/json"})
        except TransportError:
            continue
        parse_error = None
        posts: tuple[PostRecord, ...] = ()
        if resp.status == 200:
            try:
                posts = tuple(parse_posts(resp.body))
            except NotJsonArray as exc:
                parse_error = str(exc)
        else:
            parse_error = f"HTTP {resp.status}"
        result = ProbeResult(url, resp.status, posts, parse_error, variant)
        if result.endpoint_present:
            return result
        last_result = result
    if last_result is None:
        raise NetworkUnreachable(f"all posts endpoint variants unreachable for {target}")
    return last_result
