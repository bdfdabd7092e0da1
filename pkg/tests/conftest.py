from __future__ import annotations

import csv
import json
import time
from pathlib import Path

import pytest

from wpcis import (
    Behavior,
    MockSiteSpec,
    PermalinkVariant,
    SectorLabel,
    SeedPost,
    serve_fleet,
)
from wpcis import cli

# Study fleet composition: 176 sites, 59 vulnerable. Among the vulnerable:
# 35 on 4.7.0 / 24 on 4.7.1, sectors education 30 / blog 15 / online_portal 9
# / medical 5 / financial 0. The remaining 117 mix patched, routes_disabled
# and not_wordpress behaviors across all five sectors.
VULNERABLE_SECTOR_PLAN = (
    (SectorLabel.EDUCATION, 30),
    (SectorLabel.BLOG, 15),
    (SectorLabel.ONLINE_PORTAL, 9),
    (SectorLabel.MEDICAL, 5),
)
N_TOTAL = 176
N_VULNERABLE = 59
N_ON_470 = 35
LABEL_FLIPS = 14  # 176 - 14 = 162 agreements

_VARIANTS = (
    PermalinkVariant.PLAIN_PATH,
    PermalinkVariant.INDEX_PHP_PATH,
    PermalinkVariant.REST_ROUTE_QUERY,
    PermalinkVariant.ALL,
)
_SAFE_BEHAVIORS = (Behavior.PATCHED, Behavior.ROUTES_DISABLED, Behavior.NOT_WORDPRESS)
_PATCHED_VERSIONS = ("WordPress 4.7.2", "WordPress 4.8", "WordPress 4.9.8",
                     "WordPress 4.7.1")  # the last one is a stale fingerprint
_ALL_SECTORS = (SectorLabel.EDUCATION, SectorLabel.FINANCIAL, SectorLabel.MEDICAL,
                SectorLabel.ONLINE_PORTAL, SectorLabel.BLOG)


def build_study_fleet() -> list[MockSiteSpec]:
    specs: list[MockSiteSpec] = []
    idx = 0
    for sector, count in VULNERABLE_SECTOR_PLAN:
        for _ in range(count):
            specs.append(MockSiteSpec(
                site_id=f"vuln-{idx:03d}",
                version_string="WordPress 4.7.0" if idx < N_ON_470 else "WordPress 4.7.1",
                behavior=Behavior.VULNERABLE,
                permalink_variant=_VARIANTS[idx % len(_VARIANTS)],
                posts_seed=(SeedPost(id=1000 + idx),),
                sector=sector,
            ))
            idx += 1
    assert idx == N_VULNERABLE
    n_patched = 0
    for i in range(N_TOTAL - N_VULNERABLE):
        behavior = _SAFE_BEHAVIORS[i % len(_SAFE_BEHAVIORS)]
        if behavior is Behavior.PATCHED:
            version = _PATCHED_VERSIONS[n_patched % len(_PATCHED_VERSIONS)]
            n_patched += 1
        elif behavior is Behavior.ROUTES_DISABLED:
            version = "WordPress 4.7.0"
        else:
            version = "hand-rolled html"
        seeds = () if behavior is Behavior.NOT_WORDPRESS else (SeedPost(id=2000 + i),)
        specs.append(MockSiteSpec(
            site_id=f"safe-{i:03d}",
            version_string=version,
            behavior=behavior,
            permalink_variant=_VARIANTS[i % len(_VARIANTS)],
            posts_seed=seeds,
            sector=_ALL_SECTORS[i % len(_ALL_SECTORS)],
        ))
    assert len(specs) == N_TOTAL
    return specs


def ground_truth_label(spec: MockSiteSpec) -> str:
    return "vulnerable" if spec.behavior is Behavior.VULNERABLE else "not_vulnerable"


def write_targets_file(path: Path, server, specs) -> None:
    lines = ["# generated fleet targets"]
    lines += [server.base_url(s.site_id) for s in specs]
    path.write_text("\n".join(lines) + "\n", encoding="utf-8")


def write_labels_csv(path: Path, server, specs, flips: int = 0) -> None:
    """Labels CSV with ground-truth sectors; the last `flips` rows carry a
    deliberately wrong manual label."""
    flip_ids = {s.site_id for s in specs[len(specs) - flips:]} if flips else set()
    with path.open("w", encoding="utf-8", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["url", "sector", "manual_label"])
        for s in specs:
            label = ground_truth_label(s)
            if s.site_id in flip_ids:
                label = "vulnerable" if label == "not_vulnerable" else "not_vulnerable"
            writer.writerow([server.base_url(s.site_id), s.sector.value, label])


@pytest.fixture(scope="session")
def study_scan(tmp_path_factory):
    """Serve the 176-site fleet, batch-scan it once through the CLI at
    concurrency 16 with default (passive) coercion, and expose everything the
    acceptance checks need."""
    workdir = tmp_path_factory.mktemp("study")
    specs = build_study_fleet()
    with serve_fleet(specs) as server:
        hashes_before = server.store_hashes()
        targets = workdir / "targets.txt"
        labels = workdir / "labels.csv"
        out = workdir / "report.json"
        write_targets_file(targets, server, specs)
        write_labels_csv(labels, server, specs, flips=LABEL_FLIPS)
        started = time.monotonic()
        exit_code = cli.main([
            "scan-file", str(targets), "--labels", str(labels),
            "--concurrency", "16", "--format", "json", "--output", str(out),
        ])
        elapsed = time.monotonic() - started
        report = json.loads(out.read_text(encoding="utf-8"))
        hashes_after = server.store_hashes()
        post_requests = server.requests_seen(method="POST")
    return {
        "specs": specs,
        "exit_code": exit_code,
        "elapsed_s": elapsed,
        "report": report,
        "report_path": out,
        "hashes_before": hashes_before,
        "hashes_after": hashes_after,
        "post_requests": post_requests,
    }


@pytest.fixture()
def small_fleet():
    """A handful of sites covering every behavior, for integration tests."""
    specs = [
        MockSiteSpec("vuln-a", "WordPress 4.7.0", Behavior.VULNERABLE,
                     PermalinkVariant.INDEX_PHP_PATH, (SeedPost(id=123907),),
                     SectorLabel.EDUCATION),
        MockSiteSpec("vuln-b", "WordPress 4.7.1", Behavior.VULNERABLE,
                     PermalinkVariant.REST_ROUTE_QUERY, (SeedPost(id=41),),
                     SectorLabel.BLOG),
        MockSiteSpec("patched-a", "WordPress 4.7.2", Behavior.PATCHED,
                     PermalinkVariant.PLAIN_PATH, (SeedPost(id=7),)),
        MockSiteSpec("stale-a", "WordPress 4.7.0", Behavior.PATCHED,
                     PermalinkVariant.PLAIN_PATH, (SeedPost(id=9),)),
        MockSiteSpec("disabled-a", "WordPress 4.7.0", Behavior.ROUTES_DISABLED,
                     PermalinkVariant.ALL, (SeedPost(id=3),)),
        MockSiteSpec("plain-a", "static site", Behavior.NOT_WORDPRESS),
    ]
    with serve_fleet(specs) as server:
        yield server
