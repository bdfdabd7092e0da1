"""wpcis: a black-box scanner for the WordPress 4.7.0/4.7.1 REST API
content-injection vulnerability, with a mock target fleet and report
aggregation for offline, reproducible studies."""
from .detector import (
    COERCION_SUFFIX,
    CONSENT_TOKEN,
    CoercionMode,
    CoercionOutcome,
    CoercionResult,
    ConsentRequired,
    DetectOptions,
    InjectionRequestSpec,
    InvalidSuffix,
    Verdict,
    VerdictKind,
    build_injection_request,
    coerced_id,
    coercion_check,
    detect,
    render_verdict,
)
from .fingerprint import (
    AllProbesFailed,
    EvidenceSource,
    FingerprintEvidence,
    FingerprintResult,
    MalformedUrl,
    NoVersionFound,
    TargetUrl,
    WpVersion,
    choose_version,
    fingerprint,
    is_affected_version,
    normalize_target,
    parse_version,
)
from .http import HostLimiter, HttpResponse, RequestsClient, StubClient, TransportError
from .mock_target import (
    Behavior,
    BindFailure,
    ConfigParseError,
    FleetServer,
    MockSiteSpec,
    PermalinkVariant,
    PostStore,
    SeedPost,
    UnknownSite,
    load_fleet,
    serve_fleet,
)
from .probe import (
    EndpointVariant,
    NetworkUnreachable,
    NotJsonArray,
    PostRecord,
    ProbeResult,
    build_endpoint_url,
    parse_posts,
    probe_posts_endpoint,
)
from .report import (
    AggregateReport,
    EmptyInput,
    MissingLabels,
    ScanRecord,
    SectorLabel,
    accuracy,
    aggregate,
    emit,
    percent_round_half_up,
    report_from_json,
)

__version__ = "0.1.0"

__all__ = [name for name in dir() if not name.startswith("_")]
