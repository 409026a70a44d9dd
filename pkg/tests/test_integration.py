"""Integration tests over a complete in-process deployment."""

import hashlib
import random
from collections import Counter
from datetime import timedelta

import pytest
from lxml import etree

from didl_repo.arc import ArcStore
from didl_repo.clock import SteppingClock, format_datestamp
from didl_repo.config import RepositoryConfig
from didl_repo.didl import DIDL_NS, canonicalize
from didl_repo.environment import Environment
from didl_repo.tape import XMLTape
from tests.helpers import NAMESPACE, START, error_code, minutes, oai_get, synthetic_manifest, tiny_doc

pytestmark = pytest.mark.integration


def make_env(data_dir, page_size, clock=None):
    config = RepositoryConfig(
        namespace=NAMESPACE,
        data_dir=str(data_dir),
        page_size=page_size,
        index_ttl=0.0,
    )
    return Environment(config, clock=clock or SteppingClock(START))


def digest(path):
    return hashlib.sha256(path.read_bytes()).hexdigest()


def harvested(env, base_url, prefix="DIDL", **kwargs):
    """{identifier: canonical metadata} of a full harvest, failing on any duplicate."""
    records = list(env.client.harvest(base_url, prefix, **kwargs))
    counts = Counter(r.identifier for r in records)
    assert max(counts.values(), default=1) == 1, counts.most_common(3)
    return {r.identifier: canonicalize(r.metadata) for r in records}


class TestFederationTransparency:
    """Three repositories of a hundred packages each, seen through the Federator."""

    @pytest.fixture
    def federation(self, tmp_path):
        env = make_env(tmp_path / "data", page_size=25)
        for t in range(3):
            manifests = [synthetic_manifest(t * 1000 + n, binary=(n % 3 == 0)) for n in range(100)]
            report = env.ingest_batch(manifests, tape_name=f"tape-{t}")
            assert report.ok, report.failures
        yield env
        env.close()

    def test_list_records_is_the_union_of_direct_harvests(self, federation):
        direct = {}
        for base_url in federation.repository_urls():
            direct.update(harvested(federation, base_url))

        run = federation.client.harvest(federation.config.federator_endpoint, "DIDL")
        federated = {}
        for record in run:
            assert record.identifier not in federated
            federated[record.identifier] = canonicalize(record.metadata)

        assert len(direct) == 300
        assert federated == direct
        assert run.pages == 12

    def test_list_identifiers_matches_list_records(self, federation):
        headers = list(
            federation.client.harvest(federation.config.federator_endpoint, "DIDL", verb="ListIdentifiers")
        )
        assert len({h.identifier for h in headers}) == len(headers) == 300


class TestIncrementalHarvest:
    def test_only_new_packages_after_the_last_datestamp(self, tmp_path):
        env = make_env(tmp_path / "data", page_size=10)
        try:
            env.ingest_batch([synthetic_manifest(n) for n in range(20)], tape_name="tape-a")
            first = env.client.harvest(env.config.federator_endpoint, "DIDL")
            before = {r.identifier: canonicalize(r.metadata) for r in first}
            tape_digest = digest(env.tapes["tape-a"].path)
            arc_digests = {name: digest(env.config.arc_dir / name) for name in env.arc.files()}

            report = env.ingest_batch([synthetic_manifest(100 + n) for n in range(10)], tape_name="tape-b")
            since = first.max_datestamp + timedelta(seconds=1)
            update = list(env.client.harvest(env.config.federator_endpoint, "DIDL", from_=since))

            assert sorted(r.identifier for r in update) == sorted(report.package_ids)
            assert digest(env.tapes["tape-a"].path) == tape_digest
            assert {name: digest(env.config.arc_dir / name) for name in arc_digests} == arc_digests
            assert harvested(env, env.config.repo_url("tape-a")) == before
        finally:
            env.close()


@pytest.mark.slow
class TestStorage:
    def test_thousand_record_tape(self, tmp_path):
        tape = XMLTape.create(tmp_path / "big.xmltape")
        for n in range(1000):
            tape.append(tiny_doc(n, created=minutes(n)))
        tape.seal()

        root = etree.parse(str(tape.path)).getroot()
        assert len(list(root.iter("{%s}DIDL" % DIDL_NS))) == 1000

        reopened = XMLTape(tape.path)
        scanned = list(reopened.scan())
        assert len(scanned) == len(reopened) == 1000
        for record in scanned:
            stored = reopened.get(record.package_id)
            assert stored.datestamp == record.datestamp
            assert canonicalize(stored.didl_bytes) == canonicalize(record.didl_bytes)

    def test_arc_round_trips(self, tmp_path):
        rng = random.Random(7)
        store = ArcStore(tmp_path / "arc", NAMESPACE, clock=SteppingClock(START))
        payloads = {}
        for n in range(200):
            if n % 50 == 0:
                store.start_file()
            data = rng.randbytes(rng.randint(1, 8192))
            payloads[store.write(data, "application/octet-stream")] = data

        reopened = ArcStore(tmp_path / "arc", NAMESPACE, clock=SteppingClock(START))
        assert len(reopened.files()) == 4
        for key, data in payloads.items():
            assert reopened.read(key) == (data, "application/octet-stream")


class TestProtocolConformance:
    """Error codes, date windows and resumption over every record source."""

    SOURCES = ["repo", "index", "federator"]

    @pytest.fixture
    def sources(self, env, federation):
        return {
            "repo": (env.config.repo_url("tape-0"), "/repo/tape-0", "DIDL"),
            "index": (env.config.index_endpoint, "/index", "INDEX"),
            "federator": (env.config.federator_endpoint, "/federator", "DIDL"),
        }

    @pytest.mark.parametrize("source", SOURCES)
    @pytest.mark.parametrize(
        "params,expected",
        [
            ({"verb": "Explode"}, "badVerb"),
            ({"verb": "ListRecords"}, "badArgument"),
            ({"verb": "Identify", "identifier": "x"}, "badArgument"),
            ({"verb": "ListRecords", "resumptionToken": "not-a-token"}, "badResumptionToken"),
            ({"verb": "ListRecords", "metadataPrefix": "no_such_format"}, "cannotDisseminateFormat"),
            ({"verb": "ListIdentifiers", "metadataPrefix": None, "from": "2030-01-01"}, "noRecordsMatch"),
            ({"verb": "GetRecord", "metadataPrefix": None, "identifier": "info:lanl-repo/i/none"}, "idDoesNotExist"),
        ],
    )
    def test_error_codes(self, web, sources, source, params, expected):
        _, path, prefix = sources[source]
        query = {k: (prefix if v is None else v) for k, v in params.items()}
        assert error_code(oai_get(web, path, **query)) == expected

    @pytest.mark.parametrize("source", SOURCES)
    def test_date_bounds_are_inclusive(self, env, sources, source):
        base_url, _, prefix = sources[source]
        records = list(env.client.harvest(base_url, prefix))
        stamps = sorted(r.datestamp for r in records)
        first, last = stamps[0], stamps[-1]

        from_first = list(env.client.harvest(base_url, prefix, from_=first))
        until_last = list(env.client.harvest(base_url, prefix, until=last))
        only_first = list(env.client.harvest(base_url, prefix, from_=first, until=first))

        assert len(from_first) == len(until_last) == len(records)
        assert len(only_first) == stamps.count(first) >= 1

    @pytest.mark.parametrize("source", SOURCES)
    def test_resumption_union(self, env, sources, source):
        base_url, _, prefix = sources[source]
        run = env.client.harvest(base_url, prefix, verb="ListIdentifiers")
        identifiers = [r.identifier for r in run]

        assert len(identifiers) == len(set(identifiers))
        assert set(identifiers) == set(harvested(env, base_url, prefix))

    def test_repository_pages(self, env, federation):
        big = env.ingest_batch([synthetic_manifest(500 + n) for n in range(25)], tape_name="tape-big")
        run = env.client.harvest(env.config.repo_url(big.tape_name), "DIDL")
        assert sorted(r.identifier for r in run) == sorted(big.package_ids)
        assert run.pages == 3


class TestLocatorRebuild:
    def test_repopulated_locator_resolves_identically(self, config, clock, federation, env):
        env.populate_locator()
        ids = [f"info:doi/10.999/{n}" for n in (0, 101, 204)] + [f"info:pmid/9{n:07d}" for n in (3, 102)]
        ids += [package_id for packages in federation.values() for package_id in packages[:2]]
        before = {i: [p.to_dict() for p in env.locator.resolve(i)] for i in ids}
        env.close()

        config.locator_db.unlink()
        rebuilt = Environment(config, clock=clock)
        try:
            stats = rebuilt.populate_locator()
            after = {i: [p.to_dict() for p in rebuilt.locator.resolve(i)] for i in ids}
        finally:
            rebuilt.close()

        assert stats.repositories == 3
        assert stats.failures == {}
        assert after == before


class TestHttpWalkthrough:
    """The federator and resolver walkthrough requests, all answered over the HTTP surface."""

    def test_walkthrough(self, env, web, paper, pdf_bytes):
        env.populate_locator()
        federator = "/federator"

        listed = oai_get(web, federator, verb="ListIdentifiers", metadataPrefix="DIDL")
        assert paper.package_id.encode() in listed
        for prefix in ("DIDL", "DIDL:completed", "identifiers"):
            body = oai_get(web, federator, verb="GetRecord", identifier=paper.package_id, metadataPrefix=prefix)
            assert error_code(body) is None
        assert error_code(
            oai_get(web, federator, verb="GetRecord", identifier=paper.package_id, metadataPrefix="nope")
        ) == "cannotDisseminateFormat"

        pdf_id = paper.root_container.items[0].components[0].xml_id
        response = web.get(
            "/openurl",
            query_string={"url_ver": "Z39.88-2004", "rft_id": f"{paper.package_id}#{pdf_id}"},
        )
        assert response.status_code == 200
        assert response.data == pdf_bytes


@pytest.mark.slow
class TestDeskScale:
    def test_ten_thousand_objects(self, tmp_path):
        env = make_env(tmp_path / "data", page_size=500)
        try:
            manifests = [synthetic_manifest(n, binary=(n % 2 == 0)) for n in range(10_000)]
            report = env.ingest_batch(manifests, tape_name="tape-desk")
            assert report.ok
            assert len(env.tapes["tape-desk"]) == 10_000

            stats = env.populate_locator()
            assert stats.records == 10_000
            assert stats.failures == {}

            rng = random.Random(0)
            ids = []
            for n in rng.sample(range(10_000), 1000):
                ids.append(rng.choice([f"info:doi/10.999/{n}", f"info:pmid/9{n:07d}", report.package_ids[n]]))
            unresolved = [i for i in ids if not env.locator.resolve(i)]
            assert unresolved == []
            assert format_datestamp(env.locator.resolve(ids[0])[0].created).endswith("Z")
        finally:
            env.close()
