"""Operator-facing command surface.

Commands:
  wpcis scan <url>                 scan one target, print the verdict block
  wpcis scan-file <path>           scan many targets, emit an aggregate report
  wpcis mock serve --fleet <json>  serve a mock fleet for testing/demo
  wpcis report --in <json>         re-emit a stored JSON report

Exit codes: 0 not vulnerable / completed, 1 vulnerable, 2 indeterminate,
64 usage error, 69 could not bind.
"""
from __future__ import annotations

import argparse
import csv
import os
import sys
import threading
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass

from .detector import (CONSENT_TOKEN, ConsentRequired, DetectOptions, VerdictKind,
                       detect, render_verdict)
from .fingerprint import MalformedUrl, normalize_target
from .http import DEFAULT_TIMEOUT_MS, HostLimiter, RequestsClient
from .mock_target import BindFailure, ConfigParseError, load_fleet, serve_fleet
from .report import (LABEL_VALUES, ScanRecord, SectorLabel, aggregate, emit,
                     report_from_json)

EXIT_NOT_VULNERABLE = 0
EXIT_VULNERABLE = 1
EXIT_INDETERMINATE = 2
EXIT_USAGE = 64
EXIT_BIND_FAILURE = 69

TIMEOUT_ENV_VAR = "WPCIS_TIMEOUT_MS"

BANNER = (
    "wpcis - WordPress REST API content injection scanner\n"
    "Targets the 4.7.0/4.7.1 unauthenticated post-update flaw "
    "(credit for the public disclosure: Sucuri Labs, January 2017).\n"
    "Scan only hosts you own or are authorized to test.\n"
    "---\n"
)

_EXIT_BY_KIND = {
    VerdictKind.NOT_VULNERABLE: EXIT_NOT_VULNERABLE,
    VerdictKind.VULNERABLE: EXIT_VULNERABLE,
    VerdictKind.INDETERMINATE: EXIT_INDETERMINATE,
}


class UsageError(Exception):
    pass


class LabelJoinError(UsageError):
    def __init__(self, unmatched: list[str]):
        self.unmatched = list(unmatched)
        super().__init__("label rows match no scanned target: " + ", ".join(self.unmatched))


@dataclass(frozen=True)
class ScanOptions:
    timeout_ms: int = DEFAULT_TIMEOUT_MS
    concurrency: int = 8
    coercion_mode: str = "passive"  # off | passive | active
    consent_token: str | None = None
    output_format: str = "text"  # json | csv | text
    output_path: str | None = None

    def __post_init__(self):
        if self.timeout_ms <= 0:
            raise UsageError("--timeout-ms must be a positive integer")
        if self.concurrency < 1:
            raise UsageError("--concurrency must be >= 1")
        if self.coercion_mode == "active" and self.consent_token != CONSENT_TOKEN:
            raise UsageError(
                f"--coercion active requires --consent {CONSENT_TOKEN}")


class _Parser(argparse.ArgumentParser):
    def error(self, message):  # argparse would exit(2); we map to exit 64
        raise UsageError(message)


def _add_scan_flags(p: argparse.ArgumentParser) -> None:
    p.add_argument("--timeout-ms", type=int, default=None,
                   help=f"per-request timeout (default {DEFAULT_TIMEOUT_MS}, "
                        f"or ${TIMEOUT_ENV_VAR})")
    p.add_argument("--concurrency", type=int, default=8,
                   help="worker pool size for batch scans (default 8)")
    p.add_argument("--coercion", choices=("off", "passive", "active"),
                   default="passive",
                   help="id-coercion check mode (default passive; off = "
                        "version+endpoint evidence only)")
    p.add_argument("--consent", default=None, metavar="TOKEN",
                   help="consent token required for active mode")
    p.add_argument("--format", choices=("json", "csv", "text"), default="text",
                   help="report format for batch scans (default text)")
    p.add_argument("--output", default=None, metavar="PATH",
                   help="write the report to a file instead of stdout")


def build_parser() -> _Parser:
    parser = _Parser(prog="wpcis",
                     description="WordPress REST API content injection scanner")
    sub = parser.add_subparsers(dest="command", required=True)

    p_scan = sub.add_parser("scan", help="scan a single target URL")
    p_scan.add_argument("url")
    _add_scan_flags(p_scan)

    p_file = sub.add_parser("scan-file", help="scan every URL listed in a file")
    p_file.add_argument("path")
    p_file.add_argument("--labels", default=None, metavar="CSV",
                        help="CSV with header url,sector,manual_label")
    _add_scan_flags(p_file)

    p_mock = sub.add_parser("mock", help="mock WordPress fleet")
    mock_sub = p_mock.add_subparsers(dest="mock_command", required=True)
    p_serve = mock_sub.add_parser("serve", help="serve a mock fleet")
    p_serve.add_argument("--fleet", required=True, metavar="JSON")
    p_serve.add_argument("--bind", default="127.0.0.1:8080", metavar="HOST:PORT")

    p_report = sub.add_parser("report", help="re-emit a stored JSON report")
    p_report.add_argument("--in", dest="in_path", required=True, metavar="JSON")
    p_report.add_argument("--format", choices=("json", "csv", "text"),
                          default="text")
    p_report.add_argument("--output", default=None, metavar="PATH")

    return parser


def _resolve_timeout(flag_value: int | None) -> int:
    if flag_value is not None:
        return flag_value
    env = os.environ.get(TIMEOUT_ENV_VAR)
    if env is not None:
        try:
            return int(env)
        except ValueError:
            raise UsageError(f"{TIMEOUT_ENV_VAR} must be an integer, got {env!r}")
    return DEFAULT_TIMEOUT_MS


def _scan_options(args) -> ScanOptions:
    return ScanOptions(
        timeout_ms=_resolve_timeout(args.timeout_ms),
        concurrency=args.concurrency,
        coercion_mode=args.coercion,
        consent_token=args.consent,
        output_format=args.format,
        output_path=args.output,
    )


def _detect_options(options: ScanOptions) -> DetectOptions:
    return DetectOptions(coercion=options.coercion_mode,
                         consent_token=options.consent_token)


# -- scan ---------------------------------------------------------------------

def cmd_scan(args) -> int:
    options = _scan_options(args)
    try:
        target = normalize_target(args.url)
    except MalformedUrl as exc:
        raise UsageError(str(exc))
    sys.stdout.write(BANNER)
    with RequestsClient(options.timeout_ms, HostLimiter()) as client:
        verdict = detect(target, _detect_options(options), client)
    sys.stdout.write(render_verdict(verdict))
    sys.stdout.flush()
    return _EXIT_BY_KIND[verdict.kind]


# -- scan-file ------------------------------------------------------------------

def _read_target_list(path: str) -> list[str]:
    try:
        with open(path, encoding="utf-8") as fh:
            lines = fh.read().splitlines()
    except OSError as exc:
        raise UsageError(f"cannot read target list: {exc}")
    urls = [ln.strip() for ln in lines]
    return [u for u in urls if u and not u.startswith("#")]


def _read_labels(path: str) -> dict[str, tuple[SectorLabel, str | None]]:
    """Parse the labels CSV into {normalized url: (sector, manual_label)}."""
    try:
        with open(path, encoding="utf-8", newline="") as fh:
            reader = csv.DictReader(fh)
            if reader.fieldnames is None or "url" not in reader.fieldnames:
                raise UsageError("labels CSV needs a header with a url column")
            out: dict[str, tuple[SectorLabel, str | None]] = {}
            for row in reader:
                url = str(normalize_target(row["url"]))
                sector_text = (row.get("sector") or "").strip()
                sector = SectorLabel(sector_text) if sector_text else SectorLabel.UNKNOWN
                label = (row.get("manual_label") or "").strip() or None
                if label is not None and label not in LABEL_VALUES:
                    raise UsageError(
                        f"labels CSV: manual_label must be one of {LABEL_VALUES}, "
                        f"got {label!r}")
                out[url] = (sector, label)
            return out
    except OSError as exc:
        raise UsageError(f"cannot read labels CSV: {exc}")
    except (MalformedUrl, ValueError) as exc:
        if isinstance(exc, UsageError):
            raise
        raise UsageError(f"labels CSV invalid: {exc}")


def cmd_scan_file(args) -> int:
    options = _scan_options(args)
    raw_urls = _read_target_list(args.path)
    if not raw_urls:
        raise UsageError(f"no targets found in {args.path}")
    try:
        targets = [normalize_target(u) for u in raw_urls]
    except MalformedUrl as exc:
        raise UsageError(str(exc))

    labels = _read_labels(args.labels) if args.labels else {}
    target_keys = {str(t) for t in targets}
    unmatched = sorted(set(labels) - target_keys)
    if unmatched:
        raise LabelJoinError(unmatched)

    limiter = HostLimiter()
    detect_options = _detect_options(options)
    local = threading.local()
    clients: list[RequestsClient] = []
    clients_lock = threading.Lock()

    def client_for_worker() -> RequestsClient:
        client = getattr(local, "client", None)
        if client is None:
            client = RequestsClient(options.timeout_ms, limiter)
            local.client = client
            with clients_lock:
                clients.append(client)
        return client

    def scan_one(target) -> ScanRecord:
        started = time.monotonic()
        verdict = detect(target, detect_options, client_for_worker())
        duration_ms = int((time.monotonic() - started) * 1000)
        sector, label = labels.get(str(target), (SectorLabel.UNKNOWN, None))
        return ScanRecord(url=str(target), verdict=verdict, sector=sector,
                          manual_label=label, duration_ms=duration_ms)

    try:
        with ThreadPoolExecutor(max_workers=options.concurrency) as pool:
            records = list(pool.map(scan_one, targets))
    finally:
        for client in clients:
            client.close()

    rep = aggregate(records)
    _write_output(emit(rep, options.output_format), options.output_path)
    return EXIT_INDETERMINATE if rep.indeterminate else EXIT_NOT_VULNERABLE


def _write_output(data: bytes, output_path: str | None) -> None:
    if output_path:
        with open(output_path, "wb") as fh:
            fh.write(data)
    else:
        sys.stdout.write(data.decode("utf-8"))
        sys.stdout.flush()


# -- mock serve -----------------------------------------------------------------

def _wait_for_interrupt(server) -> None:
    try:
        threading.Event().wait()
    except KeyboardInterrupt:
        pass


def cmd_mock_serve(args) -> int:
    try:
        with open(args.fleet, encoding="utf-8") as fh:
            specs = load_fleet(fh.read())
    except OSError as exc:
        raise UsageError(f"cannot read fleet JSON: {exc}")
    server = serve_fleet(specs, args.bind)
    try:
        for site_id in server.site_ids():
            print(server.base_url(site_id))
        sys.stdout.flush()
        _wait_for_interrupt(server)
    finally:
        server.shutdown()
    return 0


# -- report ---------------------------------------------------------------------

def cmd_report(args) -> int:
    try:
        with open(args.in_path, encoding="utf-8") as fh:
            text = fh.read()
    except OSError as exc:
        raise UsageError(f"cannot read report JSON: {exc}")
    try:
        rep = report_from_json(text)
    except ValueError as exc:
        raise UsageError(str(exc))
    _write_output(emit(rep, args.format), args.output)
    return 0


# -- entry point ------------------------------------------------------------------

def main(argv: list[str] | None = None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
        if args.command == "scan":
            return cmd_scan(args)
        if args.command == "scan-file":
            return cmd_scan_file(args)
        if args.command == "mock":
            return cmd_mock_serve(args)
        if args.command == "report":
            return cmd_report(args)
        raise UsageError(f"unknown command {args.command!r}")
    except (UsageError, ConfigParseError, ConsentRequired) as exc:
        print(f"wpcis: error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except BindFailure as exc:
        print(f"wpcis: error: {exc}", file=sys.stderr)
        return EXIT_BIND_FAILURE


if __name__ == "__main__":
    sys.exit(main())
