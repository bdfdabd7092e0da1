"""Offline WordPress emulation: an HTTP server hosting a fleet of mock sites
with known ground truth, so the scanner is testable end to end and the active
check has a target that is legal to inject.

Per-site behavior:

* ``vulnerable``  - 4.7.0/4.7.1 REST semantics: the posts update route takes
  the ``id`` query value over the path id, casts alphanumeric ids to their
  leading integer, and applies unauthenticated edits (the permission bypass).
* ``patched``     - non-numeric ids are rejected with a REST 404 error object
  and unauthenticated numeric updates get a 401.
* ``routes_disabled`` - fingerprint surfaces exist but every REST form 404s.
* ``not_wordpress``   - no WordPress markers anywhere.

Sites are addressed by path prefix ``/site/{site_id}`` by default, or by the
Host header in host mode.
"""
from __future__ import annotations

import hashlib
import json
import re
import threading
import time
from dataclasses import dataclass
from enum import Enum
from http.server import BaseHTTPRequestHandler, ThreadingHTTPServer
from urllib.parse import parse_qs, urlsplit

from .fingerprint import NoVersionFound, parse_version
from .report import SectorLabel


class BindFailure(OSError):
    pass


class UnknownSite(KeyError):
    pass


class ConfigParseError(ValueError):
    pass


class Behavior(str, Enum):
    VULNERABLE = "vulnerable"
    PATCHED = "patched"
    ROUTES_DISABLED = "routes_disabled"
    NOT_WORDPRESS = "not_wordpress"


class PermalinkVariant(str, Enum):
    PLAIN_PATH = "plain_path"
    INDEX_PHP_PATH = "index_php_path"
    REST_ROUTE_QUERY = "rest_route_query"
    ALL = "all"


@dataclass(frozen=True)
class SeedPost:
    id: int
    title: str = "Hello world"
    content: str = "Welcome to this site."
    slug: str = "hello-world"
    date: str = "2017-03-29T13:52:56"
    date_gmt: str = "2017-03-29T20:52:56"
    modified: str = "2017-03-29T13:53:12"
    modified_gmt: str = "2017-03-29T20:53:12"


@dataclass(frozen=True)
class MockSiteSpec:
    site_id: str
    version_string: str
    behavior: Behavior
    permalink_variant: PermalinkVariant = PermalinkVariant.ALL
    posts_seed: tuple[SeedPost, ...] = ()
    sector: SectorLabel = SectorLabel.UNKNOWN
    latency_ms: int = 0

    def __post_init__(self):
        if self.latency_ms < 0:
            raise ConfigParseError(f"site {self.site_id}: latency_ms must be >= 0")
        ids = [p.id for p in self.posts_seed]
        if len(ids) != len(set(ids)):
            raise ConfigParseError(f"site {self.site_id}: duplicate seed post ids")
        if self.behavior is Behavior.VULNERABLE:
            try:
                v = parse_version(self.version_string)
            except NoVersionFound:
                v = None
            if v is None or (v.major, v.minor, v.patch) not in ((4, 7, 0), (4, 7, 1)):
                raise ConfigParseError(
                    f"site {self.site_id}: vulnerable behavior requires a "
                    f"4.7.0/4.7.1 version string, got {self.version_string!r}")

    @classmethod
    def from_dict(cls, data: dict) -> "MockSiteSpec":
        try:
            seeds = tuple(SeedPost(**p) for p in data.get("posts_seed", []))
            return cls(
                site_id=data["site_id"],
                version_string=data["version_string"],
                behavior=Behavior(data["behavior"]),
                permalink_variant=PermalinkVariant(data.get("permalink_variant", "all")),
                posts_seed=seeds,
                sector=SectorLabel(data.get("sector", "unknown")),
                latency_ms=int(data.get("latency_ms", 0)),
            )
        except (KeyError, TypeError, ValueError) as exc:
            if isinstance(exc, ConfigParseError):
                raise
            raise ConfigParseError(f"bad site spec {data.get('site_id', '?')!r}: {exc}") from exc

    def to_dict(self) -> dict:
        return {
            "site_id": self.site_id,
            "version_string": self.version_string,
            "behavior": self.behavior.value,
            "permalink_variant": self.permalink_variant.value,
            "posts_seed": [vars(p).copy() for p in self.posts_seed],
            "sector": self.sector.value,
            "latency_ms": self.latency_ms,
        }


def load_fleet(text: str) -> list[MockSiteSpec]:
    """Parse a fleet JSON document (an array of site spec objects)."""
    try:
        data = json.loads(text)
    except json.JSONDecodeError as exc:
        raise ConfigParseError(
            f"fleet JSON invalid at line {exc.lineno} column {exc.colno}: {exc.msg}") from exc
    if not isinstance(data, list) or not data:
        raise ConfigParseError("fleet JSON must be a non-empty array of site specs")
    specs = [MockSiteSpec.from_dict(item) for item in data]
    ids = [s.site_id for s in specs]
    if len(ids) != len(set(ids)):
        raise ConfigParseError("duplicate site_id in fleet")
    return specs


def _leading_int(text: str) -> int:
    digits = re.match(r"\d*", text).group()
    return int(digits) if digits else 0


class PostStore:
    """Mutable per-site post records, guarded for concurrent updates."""

    def __init__(self, seeds: tuple[SeedPost, ...]):
        self._lock = threading.Lock()
        self._posts: dict[int, dict] = {}
        self._order: list[int] = []
        for seed in seeds:
            self._posts[seed.id] = {
                "title": seed.title, "content": seed.content, "slug": seed.slug,
                "date": seed.date, "date_gmt": seed.date_gmt,
                "modified": seed.modified, "modified_gmt": seed.modified_gmt,
            }
            self._order.append(seed.id)

    def ids(self) -> list[int]:
        return list(self._order)

    def get(self, post_id: int) -> dict | None:
        with self._lock:
            rec = self._posts.get(post_id)
            return dict(rec) if rec is not None else None

    def update(self, post_id: int, title: str | None, content: str | None) -> dict | None:
        with self._lock:
            rec = self._posts.get(post_id)
            if rec is None:
                return None
            if title is not None:
                rec["title"] = title
            if content is not None:
                rec["content"] = content
            return dict(rec)

    def content_hash(self) -> str:
        with self._lock:
            triples = sorted((pid, rec["title"], rec["content"])
                             for pid, rec in self._posts.items())
        return hashlib.sha256(json.dumps(triples).encode()).hexdigest()


@dataclass
class _Site:
    spec: MockSiteSpec
    store: PostStore


@dataclass(frozen=True)
class RequestLogEntry:
    site_id: str | None
    method: str
    path: str


_REST_ERRORS = {
    "rest_no_route": (404, "No route was found matching the URL and request method"),
    "rest_post_invalid_id": (404, "Invalid post ID."),
    "rest_cannot_edit": (401, "Sorry, you are not allowed to edit this post."),
}


class _FleetHandler(BaseHTTPRequestHandler):
    protocol_version = "HTTP/1.1"
    server_version = "nginx"  # stay quiet about the stack, like a real host

    def log_message(self, fmt, *args):
        pass

    def do_GET(self):
        self._handle("GET")

    def do_POST(self):
        self._handle("POST")

    # -- dispatch ----------------------------------------------------------

    def _handle(self, method: str) -> None:
        fleet: "FleetServer" = self.server.fleet  # type: ignore[attr-defined]
        parts = urlsplit(self.path)
        query = parse_qs(parts.query, keep_blank_values=True)
        site, rel_path, prefix = self._resolve_site(fleet, parts.path)
        fleet._log(RequestLogEntry(site.spec.site_id if site else None, method, self.path))
        if site is None:
            self._send(404, "text/html", b"<html><body>No such site</body></html>")
            return
        if site.spec.latency_ms:
            time.sleep(site.spec.latency_ms / 1000.0)
        body = b""
        if method == "POST":
            length = int(self.headers.get("Content-Length") or 0)
            body = self.rfile.read(length) if length else b""
        self._route(site, prefix, method, rel_path, query, body)

    def _resolve_site(self, fleet, path: str):
        if fleet.addressing == "host":
            host = (self.headers.get("Host") or "").split(":")[0]
            site = fleet._sites.get(host)
            return site, path, ""
        m = re.match(r"^/site/([^/]+)(/.*)?$", path)
        if not m:
            return None, path, ""
        site = fleet._sites.get(m.group(1))
        prefix = f"/site/{m.group(1)}"
        return site, m.group(2) or "/", prefix

    def _route(self, site: _Site, prefix: str, method: str, path: str,
               query: dict, body: bytes) -> None:
        spec = site.spec
        rest_path = self._rest_path(spec, path, query)
        if rest_path is not None:
            if spec.behavior is Behavior.NOT_WORDPRESS:
                self._send(404, "text/html", b"<html><body>Not Found</body></html>")
            elif spec.behavior is Behavior.ROUTES_DISABLED:
                self._rest_error("rest_no_route")
            else:
                self._rest(site, prefix, method, rest_path, query, body)
            return

        if method == "POST":
            self._send(404, "text/html", b"<html><body>Not Found</body></html>")
            return
        if path in ("", "/"):
            self._send(200, "text/html", self._homepage(spec, prefix))
        elif path == "/feed/" and spec.behavior is not Behavior.NOT_WORDPRESS:
            self._send(200, "application/rss+xml", self._feed(spec))
        elif path == "/readme.html" and spec.behavior is not Behavior.NOT_WORDPRESS:
            self._send(200, "text/html", self._readme(spec))
        elif (path.startswith(("/wp-content/", "/wp-includes/"))
              and spec.behavior is not Behavior.NOT_WORDPRESS):
            self._send(200, "text/css", b"/* asset */")
        else:
            self._send(404, "text/html", b"<html><body>Not Found</body></html>")

    def _rest_path(self, spec: MockSiteSpec, path: str, query: dict) -> str | None:
        """Map the request onto a REST route path, honoring the permalink
        variant; unmatched variants still return a path so WordPress-like
        sites can answer them with a REST 404."""
        variant = spec.permalink_variant
        if "rest_route" in query:
            if variant in (PermalinkVariant.REST_ROUTE_QUERY, PermalinkVariant.ALL):
                return query["rest_route"][0]
            return "/__variant_disabled__"
        for head, allowed in (
            ("/index.php/wp-json", PermalinkVariant.INDEX_PHP_PATH),
            ("/wp-json", PermalinkVariant.PLAIN_PATH),
        ):
            if path == head or path.startswith(head + "/"):
                if variant in (allowed, PermalinkVariant.ALL):
                    return path[len(head):] or "/"
                return "/__variant_disabled__"
        return None

    # -- REST routes -------------------------------------------------------

    def _rest(self, site: _Site, prefix: str, method: str, rest_path: str,
              query: dict, body: bytes) -> None:
        path = rest_path.rstrip("/") or "/"
        if path == "/":
            self._api_index(site, prefix)
            return
        if path == "/wp/v2/posts":
            if method == "GET":
                self._send_json(200, self._post_list(site, prefix))
            else:
                self._rest_error("rest_cannot_edit")
            return
        m = re.match(r"^/wp/v2/posts/([^/]+)$", path)
        if m:
            query_id = query.get("id", [None])[0]
            self._post_item(site, prefix, method, m.group(1), query_id, body)
            return
        self._rest_error("rest_no_route")

    def _api_index(self, site: _Site, prefix: str) -> None:
        base = f"http://{self.headers.get('Host', '')}{prefix}"
        self._send_json(200, {
            "name": site.spec.site_id,
            "description": "Just another site",
            "url": base,
            "home": base,
            "namespaces": ["oembed/1.0", "wp/v2"],
        })

    def _post_json(self, site: _Site, prefix: str, post_id: int, rec: dict) -> dict:
        guid = f"http://{self.headers.get('Host', '')}{prefix}/?p={post_id}"
        return {
            "id": post_id,
            "date": rec["date"],
            "date_gmt": rec["date_gmt"],
            "guid": {"rendered": guid},
            "modified": rec["modified"],
            "modified_gmt": rec["modified_gmt"],
            "slug": rec["slug"],
            "title": {"rendered": rec["title"]},
            "content": {"rendered": rec["content"]},
        }

    def _post_list(self, site: _Site, prefix: str) -> list:
        out = []
        for pid in site.store.ids():
            rec = site.store.get(pid)
            if rec is not None:
                out.append(self._post_json(site, prefix, pid, rec))
        return out

    def _post_item(self, site: _Site, prefix: str, method: str, path_id: str,
                   query_id: str | None, body: bytes) -> None:
        effective = query_id if query_id is not None else path_id
        if site.spec.behavior is Behavior.PATCHED:
            if not effective.isdigit():
                self._rest_error("rest_post_invalid_id")
                return
            if method == "POST":
                self._rest_error("rest_cannot_edit")
                return
            rec = site.store.get(int(effective))
            if rec is None:
                self._rest_error("rest_post_invalid_id")
            else:
                self._send_json(200, self._post_json(site, prefix, int(effective), rec))
            return

        # vulnerable: alphanumeric ids are cast to their leading integer and
        # updates go through with no permission check at all
        cast = _leading_int(effective)
        if method == "GET":
            rec = site.store.get(cast)
            if rec is None:
                self._rest_error("rest_post_invalid_id")
            else:
                self._send_json(200, self._post_json(site, prefix, cast, rec))
            return
        try:
            payload = json.loads(body) if body else {}
            if not isinstance(payload, dict):
                raise ValueError("body must be a JSON object")
        except ValueError:
            self._send_json(400, {"code": "rest_invalid_json",
                                  "message": "Invalid JSON body.",
                                  "data": {"status": 400}})
            return
        rec = site.store.update(cast, payload.get("title"), payload.get("content"))
        if rec is None:
            self._rest_error("rest_post_invalid_id")
        else:
            self._send_json(200, self._post_json(site, prefix, cast, rec))

    # -- fingerprint surfaces ----------------------------------------------

    def _site_version(self, spec: MockSiteSpec) -> str:
        try:
            return str(parse_version(spec.version_string))
        except NoVersionFound:
            return ""

    def _homepage(self, spec: MockSiteSpec, prefix: str) -> bytes:
        if spec.behavior is Behavior.NOT_WORDPRESS:
            return (f"<!DOCTYPE html><html><head><title>{spec.site_id}</title></head>"
                    f"<body><h1>{spec.site_id}</h1><p>A hand-rolled page.</p>"
                    f"</body></html>").encode()
        ver = self._site_version(spec)
        ver_q = f"?ver={ver}" if ver else ""
        return (
            "<!DOCTYPE html><html><head>"
            f"<title>{spec.site_id}</title>"
            f'<meta name="generator" content="{spec.version_string}" />'
            f'<link rel="stylesheet" href="{prefix}/wp-content/themes/default/style.css{ver_q}" />'
            f'<script src="{prefix}/wp-includes/js/wp-embed.min.js{ver_q}"></script>'
            f'<link rel="https://api.w.org/" href="{prefix}/wp-json/" />'
            f"</head><body><h1>{spec.site_id}</h1></body></html>"
        ).encode()

    def _feed(self, spec: MockSiteSpec) -> bytes:
        ver = self._site_version(spec)
        return (
            '<?xml version="1.0" encoding="UTF-8"?><rss version="2.0"><channel>'
            f"<title>{spec.site_id}</title>"
            f"<generator>https://wordpress.org/?v={ver}</generator>"
            "</channel></rss>"
        ).encode()

    def _readme(self, spec: MockSiteSpec) -> bytes:
        ver = self._site_version(spec)
        return (
            "<!DOCTYPE html><html><head><title>Readme</title></head><body>"
            f'<h1 id="logo"><img alt="WordPress" src="{spec.site_id}" /><br />'
            f" Version {ver}</h1>"
            "<p>Semantic personal publishing platform.</p></body></html>"
        ).encode()

    # -- response helpers ----------------------------------------------------

    def _rest_error(self, code: str) -> None:
        status, message = _REST_ERRORS[code]
        self._send_json(status, {"code": code, "message": message,
                                 "data": {"status": status}})

    def _send_json(self, status: int, payload) -> None:
        self._send(status, "application/json; charset=UTF-8",
                   json.dumps(payload).encode())

    def _send(self, status: int, content_type: str, body: bytes) -> None:
        self.send_response(status)
        self.send_header("Content-Type", content_type)
        self.send_header("Content-Length", str(len(body)))
        self.end_headers()
        if self.command != "HEAD":
            self.wfile.write(body)


class FleetServer:
    """Running mock fleet; use as a context manager or call shutdown()."""

    def __init__(self, specs, bind_address=("127.0.0.1", 0), addressing: str = "path"):
        if isinstance(bind_address, str):
            host, _, port = bind_address.rpartition(":")
            bind_address = (host or "127.0.0.1", int(port))
        if not specs:
            raise ConfigParseError("fleet must contain at least one site")
        self.addressing = addressing
        self._sites = {s.site_id: _Site(s, PostStore(s.posts_seed)) for s in specs}
        self._log_lock = threading.Lock()
        self._requests: list[RequestLogEntry] = []
        try:
            self._httpd = ThreadingHTTPServer(bind_address, _FleetHandler)
        except OSError as exc:
            raise BindFailure(f"cannot bind {bind_address[0]}:{bind_address[1]}: {exc}") from exc
        self._httpd.daemon_threads = True
        self._httpd.block_on_close = False
        self._httpd.fleet = self  # type: ignore[attr-defined]
        self._thread = threading.Thread(target=self._httpd.serve_forever, daemon=True)
        self._thread.start()

    # -- addressing ----------------------------------------------------------

    @property
    def address(self) -> tuple[str, int]:
        return self._httpd.server_address[:2]

    def base_url(self, site_id: str) -> str:
        if site_id not in self._sites:
            raise UnknownSite(site_id)
        host, port = self.address
        if self.addressing == "host":
            return f"http://{site_id}:{port}"
        return f"http://{host}:{port}/site/{site_id}"

    def site_ids(self) -> list[str]:
        return list(self._sites)

    # -- observation ---------------------------------------------------------

    def store_hash(self, site_id: str) -> str:
        if site_id not in self._sites:
            raise UnknownSite(site_id)
        return self._sites[site_id].store.content_hash()

    def store_hashes(self) -> dict[str, str]:
        return {sid: site.store.content_hash() for sid, site in self._sites.items()}

    def spec(self, site_id: str) -> MockSiteSpec:
        if site_id not in self._sites:
            raise UnknownSite(site_id)
        return self._sites[site_id].spec

    def _log(self, entry: RequestLogEntry) -> None:
        with self._log_lock:
            self._requests.append(entry)

    def requests_seen(self, site_id: str | None = None,
                      method: str | None = None) -> list[RequestLogEntry]:
        with self._log_lock:
            entries = list(self._requests)
        if site_id is not None:
            entries = [e for e in entries if e.site_id == site_id]
        if method is not None:
            entries = [e for e in entries if e.method == method]
        return entries

    # -- lifecycle -----------------------------------------------------------

    def shutdown(self) -> None:
        self._httpd.shutdown()
        self._httpd.server_close()

    def __enter__(self) -> "FleetServer":
        return self

    def __exit__(self, *exc) -> None:
        self.shutdown()


def serve_fleet(specs, bind_address=("127.0.0.1", 0), addressing: str = "path") -> FleetServer:
    """Start serving the given site specs; returns the running server handle."""
    return FleetServer(specs, bind_address, addressing)


def handle_get_posts(server: FleetServer, site_id: str) -> list[dict]:
    """Render the posts collection for one site exactly as the wire would."""
    site = server._sites.get(site_id)
    if site is None:
        raise UnknownSite(site_id)
    out = []
    for pid in site.store.ids():
        rec = site.store.get(pid)
        out.append({
            "id": pid, "date": rec["date"], "date_gmt": rec["date_gmt"],
            "guid": {"rendered": f"?p={pid}"}, "modified": rec["modified"],
            "modified_gmt": rec["modified_gmt"], "slug": rec["slug"],
            "title": {"rendered": rec["title"]},
            "content": {"rendered": rec["content"]},
        })
    return out


def store_hash(server: FleetServer, site_id: str) -> str:
    return server.store_hash(site_id)
