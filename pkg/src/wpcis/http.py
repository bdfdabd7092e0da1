"""HTTP plumbing shared by the scanner modules.

Every network-touching operation takes an injected client exposing
``get(url, headers)`` and ``post(url, body, headers)`` returning an
:class:`HttpResponse`. Tests substitute in-memory stubs; production use goes
through :class:`RequestsClient`.
"""
from __future__ import annotations

import threading
from collections import defaultdict
from contextlib import contextmanager
from dataclasses import dataclass, field
from urllib.parse import urljoin, urlsplit

import requests

USER_AGENT = "wpcis-scanner/1.0"
DEFAULT_TIMEOUT_MS = 10_000
MAX_REDIRECTS = 5
PER_HOST_IN_FLIGHT = 2


class TransportError(Exception):
    """Request never produced an HTTP response (DNS, refused, timeout)."""


@dataclass(frozen=True)
class HttpResponse:
    status: int
    headers: dict[str, str]
    body: bytes

    def header(self, name: str) -> str | None:
        return self.headers.get(name.lower())

    @property
    def text(self) -> str:
        return self.body.decode("utf-8", errors="replace")


def _lower_headers(headers) -> dict[str, str]:
    return {k.lower(): v for k, v in headers.items()}


class HostLimiter:
    """Caps in-flight requests per distinct host, shared across scan workers."""

    def __init__(self, per_host: int = PER_HOST_IN_FLIGHT):
        self._per_host = per_host
        self._lock = threading.Lock()
        self._sems: dict[str, threading.BoundedSemaphore] = defaultdict(
            lambda: threading.BoundedSemaphore(self._per_host)
        )

    @contextmanager
    def slot(self, host: str):
        with self._lock:
            sem = self._sems[host]
        with sem:
            yield


class RequestsClient:
    """requests-backed client with fixed identification and redirect policy.

    Follows at most MAX_REDIRECTS redirects and only within the starting
    host; a cross-host redirect is returned as-is so the caller never leaves
    the target it was pointed at.
    """

    def __init__(self, timeout_ms: int = DEFAULT_TIMEOUT_MS, limiter: HostLimiter | None = None):
        self.timeout = timeout_ms / 1000.0
        self.limiter = limiter
        self._session = requests.Session()
        self._session.headers["User-Agent"] = USER_AGENT

    def close(self) -> None:
        self._session.close()

    def __enter__(self) -> "RequestsClient":
        return self

    def __exit__(self, *exc) -> None:
        self.close()

    def get(self, url: str, headers: dict[str, str] | None = None) -> HttpResponse:
        return self._request("GET", url, None, headers)

    def post(self, url: str, body: bytes, headers: dict[str, str] | None = None) -> HttpResponse:
        return self._request("POST", url, body, headers)

    def _request(self, method: str, url: str, body: bytes | None,
                 headers: dict[str, str] | None) -> HttpResponse:
        start_host = urlsplit(url).hostname
        current = url
        for _ in range(MAX_REDIRECTS + 1):
            resp = self._send(method, current, body, headers)
            if resp.status in (301, 302, 303, 307, 308) and resp.header("location"):
                target = urljoin(current, resp.header("location"))
                if urlsplit(target).hostname != start_host:
                    return resp
                current = target
                if resp.status == 303:
                    method, body = "GET", None
                continue
            return resp
        return resp

    def _send(self, method: str, url: str, body: bytes | None,
              headers: dict[str, str] | None) -> HttpResponse:
        host = urlsplit(url).hostname or ""
        try:
            if self.limiter is not None:
                with self.limiter.slot(host):
                    raw = self._session.request(
                        method, url, data=body, headers=headers,
                        timeout=self.timeout, allow_redirects=False,
                    )
            else:
                raw = self._session.request(
                    method, url, data=body, headers=headers,
                    timeout=self.timeout, allow_redirects=False,
                )
        except requests.RequestException as exc:
            raise TransportError(f"{method} {url}: {exc.__class__.__name__}: {exc}") from exc
        return HttpResponse(raw.status_code, _lower_headers(raw.headers), raw.content)


@dataclass
class StubClient:
    """In-memory client for unit tests: maps exact URLs to canned responses."""

    responses: dict[str, HttpResponse] = field(default_factory=dict)
    requests_seen: list[tuple[str, str]] = field(default_factory=list)

    def add(self, url: str, status: int = 200, body: bytes = b"",
            headers: dict[str, str] | None = None) -> None:
        self.responses[url] = HttpResponse(status, _lower_headers(headers or {}), body)

    def get(self, url: str, headers: dict[str, str] | None = None) -> HttpResponse:
        self.requests_seen.append(("GET", url))
        if url not in self.responses:
            raise TransportError(f"GET {url}: no canned response")
        return self.responses[url]

    def post(self, url: str, body: bytes, headers: dict[str, str] | None = None) -> HttpResponse:
        self.requests_seen.append(("POST", url))
        if url not in self.responses:
            raise TransportError(f"POST {url}: no canned response")
        return self.responses[url]
