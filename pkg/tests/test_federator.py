"""Tests for the OAI-PMH Federator."""

import pytest
from lxml import etree

from didl_repo.didl import canonicalize, parse_didl
from didl_repo.dip import DipError, method_bindings
from didl_repo.environment import Environment
from didl_repo.oaipmh import OAI, BadResumptionToken
from didl_repo.repo_index import repo_set_spec
from didl_repo.transforms import DC_NS, METS_NS
from tests.helpers import error_code, oai_get, synthetic_manifest

PREFIXES = ["DIDL", "identifiers", "DIDL:completed", "mets", "oai_dc"]


@pytest.fixture
def located(env, federation):
    """The federation with its locator populated."""
    stats = env.populate_locator()
    assert stats.failures == {}
    return federation


def all_ids(holdings):
    return [pid for ids in holdings.values() for pid in ids]


def stored_bytes(env, repo_url, package_id):
    tape_name = repo_url.rsplit("/", 1)[-1]
    return env.tapes[tape_name].get(package_id).didl_bytes


class TestIdentify:
    def test_identify(self, env, web, federation):
        root = etree.fromstring(oai_get(web, "/federator", verb="Identify"))
        ident = root.find(OAI + "Identify")
        assert ident.findtext(OAI + "repositoryName") == "OAI-PMH Federator"
        assert ident.findtext(OAI + "baseURL") == env.config.federator_endpoint
        earliest = min(env.tapes[f"tape-{t}"].stats()["earliest"] for t in range(3))
        assert ident.findtext(OAI + "earliestDatestamp") == earliest

    def test_metadata_formats(self, env, located):
        assert env.client.list_metadata_formats(env.config.federator_endpoint) == PREFIXES
        package_id = all_ids(located)[0]
        assert env.client.list_metadata_formats(env.config.federator_endpoint, package_id) == PREFIXES

    def test_metadata_formats_for_unknown_identifier(self, web, located):
        body = oai_get(web, "/federator", verb="ListMetadataFormats", identifier="info:x/none")
        assert error_code(body) == "idDoesNotExist"

    def test_sets_are_repositories(self, env, federation):
        sets = env.client.list_sets(env.config.federator_endpoint)
        assert [(s.spec, s.name) for s in sets] == [(repo_set_spec(url), url) for url in federation]


class TestGetRecord:
    def test_didl_is_the_stored_document(self, env, located):
        repo_url, package_ids = list(located.items())[1]
        record = env.client.get_record(env.config.federator_endpoint, package_ids[3], "DIDL")
        assert record.identifier == package_ids[3]
        assert record.sets == (repo_set_spec(repo_url),)
        assert canonicalize(record.metadata) == canonicalize(stored_bytes(env, repo_url, package_ids[3]))

    def test_by_content_identifier(self, env, located):
        repo_url, package_ids = list(located.items())[2]
        record = env.client.get_record(env.config.federator_endpoint, "info:doi/10.999/201", "DIDL")
        assert record.identifier == package_ids[1]

    def test_completed(self, env, located):
        package_id = all_ids(located)[0]
        record = env.client.get_record(env.config.federator_endpoint, package_id, "DIDL:completed")
        doc = parse_didl(record.metadata)
        assert doc.package_id == package_id
        assert [b.transform_ref for b in method_bindings(doc)] == ["table_of_contents", "marcxml_to_mods"]

    def test_oai_dc(self, env, web, paper):
        env.populate_locator()
        body = oai_get(web, "/federator", verb="GetRecord", identifier=paper.package_id, metadataPrefix="oai_dc")
        root = etree.fromstring(body)
        assert [t.text for t in root.iter("{%s}title" % DC_NS)] == ["Los Alamos science"]

    def test_mets(self, env, located):
        package_id = all_ids(located)[0]
        record = env.client.get_record(env.config.federator_endpoint, package_id, "mets")
        root = etree.fromstring(record.metadata)
        assert root.tag == "{%s}mets" % METS_NS
        assert root.get("OBJID") == package_id

    def test_unknown_identifier(self, web, located):
        body = oai_get(web, "/federator", verb="GetRecord", identifier="info:x/none", metadataPrefix="DIDL")
        assert error_code(body) == "idDoesNotExist"

    def test_unknown_prefix(self, web, located):
        package_id = all_ids(located)[0]
        body = oai_get(web, "/federator", verb="GetRecord", identifier=package_id, metadataPrefix="marc")
        assert error_code(body) == "cannotDisseminateFormat"

    def test_disabled_transform_prefix(self, env, web, located):
        env.registry.disable("record_to_dc")
        package_id = all_ids(located)[0]
        body = oai_get(web, "/federator", verb="GetRecord", identifier=package_id, metadataPrefix="oai_dc")
        assert error_code(body) == "cannotDisseminateFormat"


class TestListRecords:
    def test_union_of_repositories(self, env, federation):
        env.config.page_size = 2
        run = env.client.harvest(env.config.federator_endpoint, "DIDL")
        records = list(run)
        assert [r.identifier for r in records] == all_ids(federation)
        assert run.pages == 9
        for record in records:
            (spec,) = record.sets
            url = next(u for u in federation if repo_set_spec(u) == spec)
            assert canonicalize(record.metadata) == canonicalize(stored_bytes(env, url, record.identifier))

    def test_one_page_per_repository(self, env, federation):
        run = env.client.harvest(env.config.federator_endpoint, "DIDL", verb="ListIdentifiers")
        assert [r.identifier for r in run] == all_ids(federation)
        assert run.pages == 3

    def test_final_token_is_empty(self, env, web, federation):
        env.config.page_size = 100
        root = etree.fromstring(oai_get(web, "/federator", verb="ListIdentifiers", metadataPrefix="DIDL"))
        token = root.findtext(f"{OAI}ListIdentifiers/{OAI}resumptionToken")
        for _ in range(2):
            root = etree.fromstring(oai_get(web, "/federator", verb="ListIdentifiers", resumptionToken=token))
            token = root.findtext(f"{OAI}ListIdentifiers/{OAI}resumptionToken")
        assert token == ""
        assert root.find(f"{OAI}ListIdentifiers/{OAI}resumptionToken").get("cursor") == "10"

    def test_set_restricts_to_one_repository(self, env, federation):
        url, package_ids = list(federation.items())[1]
        run = env.client.harvest(env.config.federator_endpoint, "DIDL", set_spec=repo_set_spec(url))
        assert [r.identifier for r in run] == package_ids

    def test_unknown_set(self, web, federation):
        body = oai_get(
            web, "/federator", verb="ListRecords", metadataPrefix="DIDL", set=repo_set_spec("http://elsewhere/oai")
        )
        assert error_code(body) == "noRecordsMatch"

    def test_transformed_prefix(self, env, federation):
        records = list(env.client.harvest(env.config.federator_endpoint, "oai_dc"))
        assert len(records) == 15
        root = etree.fromstring(records[0].metadata)
        assert [t.text for t in root.iter("{%s}title" % DC_NS)] == ["Synthetic record 0"]

    def test_empty_window(self, web, federation):
        body = oai_get(web, "/federator", verb="ListRecords", metadataPrefix="DIDL", from_="2030-01-01")
        assert error_code(body) == "noRecordsMatch"

    def test_no_repositories(self, web):
        assert error_code(oai_get(web, "/federator", verb="ListRecords", metadataPrefix="DIDL")) == "noRecordsMatch"

    @pytest.mark.parametrize(
        "cursor",
        ["not json", "null", "[1]", '[3, "x"]', "[4, null]", "[-1, null]", '[0, 5]', '["a", null]'],
    )
    def test_bad_cursor(self, env, federation, cursor):
        with pytest.raises(BadResumptionToken, match="federated cursor"):
            env.federator.list_records("DIDL", None, None, None, cursor, 10)

    def test_undisseminable_record_fails_the_list(self, env, web, federation, monkeypatch):
        def broken(didl, prefix):
            raise DipError("no service for the root container")

        monkeypatch.setattr(env.federator, "disseminate", broken)
        body = oai_get(web, "/federator", verb="ListRecords", metadataPrefix="oai_dc")
        assert error_code(body) == "cannotDisseminateFormat"
        assert error_code(oai_get(web, "/federator", verb="ListIdentifiers", metadataPrefix="oai_dc")) is None


class TestRepositoryCache:
    def test_index_is_cached_until_invalidated(self, env, federation):
        env.federator.index_ttl = 3600
        assert len(env.federator.repositories()) == 3
        env.index.register_repository("http://repo9.example.org/oai")
        assert len(env.federator.repositories()) == 3
        env.federator.invalidate()
        assert env.federator.repositories()[-1] == "http://repo9.example.org/oai"

    def test_ingest_invalidates(self, env, federation):
        env.federator.index_ttl = 3600
        assert len(env.federator.repositories()) == 3
        env.ingest_batch([synthetic_manifest(900)], tape_name="tape-9")
        assert env.federator.repositories()[-1] == env.config.repo_url("tape-9")


class TestUnavailable:
    def test_without_a_locator(self, config, clock, located):
        partial = Environment(config, clock=clock, services=("repo", "index", "federator"))
        try:
            response = partial.app.test_client().get(
                "/federator",
                query_string={"verb": "GetRecord", "identifier": all_ids(located)[0], "metadataPrefix": "DIDL"},
            )
        finally:
            partial.close()
        assert response.status_code == 503
        assert response.headers["Retry-After"] == "30"
