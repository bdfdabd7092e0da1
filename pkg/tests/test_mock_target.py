from __future__ import annotations

import json
import threading
import time

import pytest

from wpcis.fingerprint import fingerprint, normalize_target, parse_version
from wpcis.http import RequestsClient
from wpcis.mock_target import (
    Behavior,
    BindFailure,
    ConfigParseError,
    MockSiteSpec,
    PermalinkVariant,
    SeedPost,
    UnknownSite,
    _leading_int,
    load_fleet,
    serve_fleet,
)
from wpcis.report import SectorLabel


@pytest.fixture(scope="module")
def client():
    with RequestsClient(5000) as c:
        yield c


def _vuln_spec(site_id="v", variant=PermalinkVariant.ALL, seeds=(SeedPost(id=123907),)):
    return MockSiteSpec(site_id, "WordPress 4.7.0", Behavior.VULNERABLE, variant, seeds)


class TestSpecValidation:
    def test_vulnerable_requires_affected_version(self):
        for bad in ("WordPress 4.7.2", "WordPress 4.7", "WordPress 4.8", "no version"):
            with pytest.raises(ConfigParseError):
                MockSiteSpec("x", bad, Behavior.VULNERABLE)

    def test_patched_may_carry_any_version(self):
        MockSiteSpec("x", "WordPress 4.7.0", Behavior.PATCHED)  # stale fingerprint ok
        MockSiteSpec("x", "WordPress 4.7", Behavior.PATCHED)

    def test_duplicate_seed_ids_rejected(self):
        with pytest.raises(ConfigParseError):
            _vuln_spec(seeds=(SeedPost(id=1), SeedPost(id=1)))

    def test_negative_latency_rejected(self):
        with pytest.raises(ConfigParseError):
            MockSiteSpec("x", "WordPress 4.8", Behavior.PATCHED, latency_ms=-1)

    def test_dict_round_trip(self):
        spec = _vuln_spec(variant=PermalinkVariant.REST_ROUTE_QUERY)
        assert MockSiteSpec.from_dict(spec.to_dict()) == spec

    def test_from_dict_rejects_unknown_enum(self):
        data = _vuln_spec().to_dict()
        data["behavior"] = "haunted"
        with pytest.raises(ConfigParseError):
            MockSiteSpec.from_dict(data)


class TestLoadFleet:
    def test_valid_fleet(self):
        text = json.dumps([_vuln_spec("a").to_dict(), _vuln_spec("b").to_dict()])
        assert [s.site_id for s in load_fleet(text)] == ["a", "b"]

    def test_invalid_json_reports_position(self):
        with pytest.raises(ConfigParseError, match=r"line \d+ column \d+"):
            load_fleet('[{"site_id": }]')

    @pytest.mark.parametrize("text", ["{}", "[]", '"nope"'])
    def test_non_array_or_empty_rejected(self, text):
        with pytest.raises(ConfigParseError):
            load_fleet(text)

    def test_duplicate_site_ids_rejected(self):
        text = json.dumps([_vuln_spec("a").to_dict(), _vuln_spec("a").to_dict()])
        with pytest.raises(ConfigParseError, match="duplicate site_id"):
            load_fleet(text)


class TestLeadingInt:
    @pytest.mark.parametrize("text,expected", [
        ("123907Test", 123907), ("123907", 123907), ("Test", 0), ("", 0),
        ("0x41", 0), ("12a34", 12),
    ])
    def test_cast(self, text, expected):
        assert _leading_int(text) == expected


@pytest.fixture(scope="module")
def fleet():
    specs = [
        _vuln_spec("vuln", seeds=(SeedPost(id=123907, title="hello", content="world"),
                                  SeedPost(id=41, title="other", content="post"))),
        MockSiteSpec("patched", "WordPress 4.7.2", Behavior.PATCHED,
                     PermalinkVariant.ALL, (SeedPost(id=123907),)),
        MockSiteSpec("disabled", "WordPress 4.7.0", Behavior.ROUTES_DISABLED,
                     PermalinkVariant.ALL, (SeedPost(id=5),)),
        MockSiteSpec("plain", "static", Behavior.NOT_WORDPRESS),
        MockSiteSpec("pretty", "WordPress 4.7.1", Behavior.VULNERABLE,
                     PermalinkVariant.PLAIN_PATH, (SeedPost(id=8),)),
        MockSiteSpec("slow", "WordPress 4.8", Behavior.PATCHED,
                     PermalinkVariant.ALL, (SeedPost(id=9),), SectorLabel.BLOG, 150),
    ]
    with serve_fleet(specs) as server:
        yield server


def _get_json(client, url):
    resp = client.get(url, headers={"Accept": "application/json"})
    return resp.status, json.loads(resp.body)


class TestFingerprintSurfaces:
    def test_homepage_markers(self, fleet, client):
        resp = client.get(fleet.base_url("vuln") + "/")
        body = resp.text
        assert 'name="generator" content="WordPress 4.7.0"' in body
        assert "wp-content" in body and "?ver=4.7.0" in body

    def test_feed_and_readme(self, fleet, client):
        feed = client.get(fleet.base_url("vuln") + "/feed/")
        assert b"wordpress.org/?v=4.7.0" in feed.body
        readme = client.get(fleet.base_url("vuln") + "/readme.html")
        assert b"Version 4.7.0" in readme.body

    def test_not_wordpress_has_no_markers(self, fleet, client):
        resp = client.get(fleet.base_url("plain") + "/")
        assert b"generator" not in resp.body and b"wp-content" not in resp.body
        assert client.get(fleet.base_url("plain") + "/wp-json/").status == 404
        assert client.get(fleet.base_url("plain") + "/readme.html").status == 404

    @pytest.mark.parametrize("site_id,version", [("vuln", "4.7.0"), ("patched", "4.7.2"),
                                                 ("pretty", "4.7.1")])
    def test_all_surfaces_agree_with_spec_version(self, fleet, client, site_id, version):
        result = fingerprint(normalize_target(fleet.base_url(site_id)), client)
        assert result.is_wordpress
        assert result.version == parse_version(version)
        for evidence in result.evidence:
            if evidence.parsed_version is not None:
                assert str(evidence.parsed_version) == version


class TestGetPosts:
    def test_collection_shape_matches_contract(self, fleet, client):
        status, data = _get_json(client, fleet.base_url("vuln") + "/wp-json/wp/v2/posts/")
        assert status == 200
        assert [p["id"] for p in data] == [123907, 41]  # seed order preserved
        first = data[0]
        for key in ("id", "date", "date_gmt", "guid", "modified", "slug"):
            assert key in first
        assert "?p=123907" in first["guid"]["rendered"]

    def test_empty_collection(self, client):
        spec = MockSiteSpec("lonely", "WordPress 4.7.0", Behavior.VULNERABLE,
                            PermalinkVariant.ALL, ())
        with serve_fleet([spec]) as server:
            status, data = _get_json(client, server.base_url("lonely") + "/wp-json/wp/v2/posts/")
        assert status == 200 and data == []

    def test_routes_disabled_is_never_200(self, fleet, client):
        base = fleet.base_url("disabled")
        for path in ("/wp-json/", "/wp-json/wp/v2/posts/", "/wp-json/wp/v2/posts/5",
                     "/index.php/wp-json/wp/v2/posts/", "/?rest_route=/wp/v2/posts"):
            resp = client.get(base + path)
            assert resp.status == 404
            assert json.loads(resp.body)["code"] == "rest_no_route"

    def test_variant_gating(self, fleet, client):
        base = fleet.base_url("pretty")  # plain_path only
        assert client.get(base + "/wp-json/wp/v2/posts/").status == 200
        assert client.get(base + "/index.php/wp-json/wp/v2/posts/").status == 404
        assert client.get(base + "/?rest_route=/wp/v2/posts").status == 404


class TestBehaviorDichotomy:
    SUFFIXES = ("Test", "wpcisX", "abc123")

    def test_vulnerable_accepts_alphanumeric_ids(self, fleet, client):
        base = fleet.base_url("vuln")
        for post_id in (123907, 41):
            for suffix in self.SUFFIXES:
                status, data = _get_json(
                    client, f"{base}/wp-json/wp/v2/posts/{post_id}?id={post_id}{suffix}")
                assert status == 200 and data["id"] == post_id

    def test_patched_rejects_alphanumeric_ids(self, fleet, client):
        base = fleet.base_url("patched")
        for suffix in self.SUFFIXES:
            status, data = _get_json(
                client, f"{base}/wp-json/wp/v2/posts/123907?id=123907{suffix}")
            assert 400 <= status < 500 and "code" in data

    def test_patched_serves_numeric_reads(self, fleet, client):
        status, data = _get_json(
            client, fleet.base_url("patched") + "/wp-json/wp/v2/posts/123907")
        assert status == 200 and data["id"] == 123907


class TestUpdatePost:
    @pytest.fixture()
    def site(self):
        seeds = (SeedPost(id=123907, title="hello", content="world"),
                 SeedPost(id=2, title="bystander", content="untouched"))
        specs = [_vuln_spec("v", seeds=seeds),
                 MockSiteSpec("p", "WordPress 4.7.2", Behavior.PATCHED,
                              PermalinkVariant.ALL, seeds)]
        with serve_fleet(specs) as server:
            yield server

    def _post(self, client, url, payload) -> tuple[int, bytes]:
        resp = client.post(url, json.dumps(payload).encode(),
                           headers={"Content-Type": "application/json"})
        return resp.status, resp.body

    def test_vulnerable_coerced_update_mutates_store(self, site, client):
        url = site.base_url("v") + "/wp-json/wp/v2/posts/123907?id=123907Test"
        before = site.store_hash("v")
        status, body = self._post(client, url, {"id": "123907Test", "title": "X",
                                                "content": "X"})
        assert status == 200
        assert json.loads(body)["title"]["rendered"] == "X"
        assert site.store_hash("v") != before
        _, data = _get_json(client, site.base_url("v") + "/wp-json/wp/v2/posts/123907")
        assert data["content"]["rendered"] == "X"

    def test_mutation_hits_only_the_cast_target(self, site, client):
        url = site.base_url("v") + "/wp-json/wp/v2/posts/123907?id=123907Test"
        self._post(client, url, {"id": "123907Test", "title": "X", "content": "X"})
        _, other = _get_json(client, site.base_url("v") + "/wp-json/wp/v2/posts/2")
        assert other["title"]["rendered"] == "bystander"

    def test_vulnerable_unknown_cast_id_404s(self, site, client):
        url = site.base_url("v") + "/wp-json/wp/v2/posts/999?id=999Test"
        status, body = self._post(client, url, {"id": "999Test", "title": "X",
                                                "content": "X"})
        assert status == 404 and json.loads(body)["code"] == "rest_post_invalid_id"

    def test_vulnerable_bad_json_body_400s(self, site, client):
        url = site.base_url("v") + "/wp-json/wp/v2/posts/123907?id=123907Test"
        resp = client.post(url, b"{not json", headers={"Content-Type": "application/json"})
        assert resp.status == 400

    def test_patched_alphanumeric_update_404s_and_preserves_store(self, site, client):
        before = site.store_hash("p")
        url = site.base_url("p") + "/wp-json/wp/v2/posts/123907?id=123907Test"
        status, body = self._post(client, url, {"id": "123907Test", "title": "X",
                                                "content": "X"})
        assert status == 404 and json.loads(body)["code"] == "rest_post_invalid_id"
        assert site.store_hash("p") == before

    def test_patched_numeric_unauthenticated_update_401s(self, site, client):
        url = site.base_url("p") + "/wp-json/wp/v2/posts/123907"
        status, body = self._post(client, url, {"title": "X", "content": "X"})
        assert status == 401 and json.loads(body)["code"] == "rest_cannot_edit"

    def test_concurrent_updates_serialize(self, site, client):
        url = site.base_url("v") + "/wp-json/wp/v2/posts/123907?id=123907Test"
        errors = []

        def worker(n):
            try:
                status, _ = self._post(client, url, {"id": "123907Test",
                                                     "title": f"t{n}", "content": f"c{n}"})
                assert status == 200
            except Exception as exc:  # pragma: no cover - diagnostic
                errors.append(exc)

        threads = [threading.Thread(target=worker, args=(n,)) for n in range(8)]
        for t in threads:
            t.start()
        for t in threads:
            t.join()
        assert not errors
        _, data = _get_json(client, site.base_url("v") + "/wp-json/wp/v2/posts/123907")
        assert data["title"]["rendered"] in {f"t{n}" for n in range(8)}


class TestStoreHash:
    def test_deterministic(self, fleet):
        assert fleet.store_hash("vuln") == fleet.store_hash("vuln")

    def test_passive_traffic_leaves_hash_unchanged(self, fleet, client):
        before = fleet.store_hash("vuln")
        base = fleet.base_url("vuln")
        client.get(base + "/wp-json/wp/v2/posts/")
        client.get(base + "/wp-json/wp/v2/posts/123907?id=123907Test")
        client.get(base + "/")
        assert fleet.store_hash("vuln") == before

    def test_unknown_site_raises(self, fleet):
        with pytest.raises(UnknownSite):
            fleet.store_hash("nope")
        with pytest.raises(UnknownSite):
            fleet.base_url("nope")


class TestServerPlumbing:
    def test_bind_failure_raises(self, fleet):
        host, port = fleet.address
        with pytest.raises(BindFailure):
            serve_fleet([_vuln_spec()], f"{host}:{port}")

    def test_request_log_records_methods(self, client):
        with serve_fleet([_vuln_spec("v")]) as server:
            client.get(server.base_url("v") + "/")
            client.post(server.base_url("v") + "/wp-json/wp/v2/posts/123907",
                        b"{}", headers={"Content-Type": "application/json"})
            assert len(server.requests_seen("v")) == 2
            assert len(server.requests_seen("v", method="POST")) == 1

    def test_latency_is_applied(self, fleet, client):
        started = time.monotonic()
        client.get(fleet.base_url("slow") + "/")
        assert time.monotonic() - started >= 0.15

    def test_host_header_addressing(self, client):
        specs = [MockSiteSpec("alpha.test", "WordPress 4.7.0", Behavior.VULNERABLE,
                              PermalinkVariant.ALL, (SeedPost(id=1),)),
                 MockSiteSpec("beta.test", "WordPress 4.8", Behavior.PATCHED,
                              PermalinkVariant.ALL, (SeedPost(id=2),))]
        with serve_fleet(specs, addressing="host") as server:
            host, port = server.address
            resp = client.get(f"http://{host}:{port}/",
                              headers={"Host": "alpha.test"})
            assert b"WordPress 4.7.0" in resp.body
            resp = client.get(f"http://{host}:{port}/",
                              headers={"Host": "beta.test"})
            assert b"WordPress 4.8" in resp.body
            assert client.get(f"http://{host}:{port}/",
                              headers={"Host": "gamma.test"}).status == 404
