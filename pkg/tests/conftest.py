"""Pytest configuration and fixtures."""

import os
import shutil

import pytest

from didl_repo.clock import SteppingClock
from didl_repo.config import RepositoryConfig
from didl_repo.didl import parse_didl
from didl_repo.dip import DipTable
from didl_repo.environment import Environment
from tests.helpers import FIXTURES, MANIFEST, NAMESPACE, START, synthetic_manifest


@pytest.fixture
def clock():
    """Deterministic clock starting at the sample package's creation second."""
    return SteppingClock(START)


@pytest.fixture
def aip_bytes():
    return (FIXTURES / "sample_aip.xml").read_bytes()


@pytest.fixture
def aip(aip_bytes):
    """The sample archival package, parsed."""
    return parse_didl(aip_bytes)


@pytest.fixture
def completed_bytes():
    return (FIXTURES / "sample_completed.xml").read_bytes()


@pytest.fixture
def dip_table():
    """The three-row sample DIP Table."""
    return DipTable.load(FIXTURES / "dip_table.tsv")


@pytest.fixture
def pdf_bytes():
    return (FIXTURES / "manifest" / "paper.pdf").read_bytes()


@pytest.fixture
def data_dir(tmp_path):
    """Storage directory seeded with the sample DIP Table."""
    root = tmp_path / "data"
    root.mkdir()
    shutil.copy(FIXTURES / "dip_table.tsv", root / "dip_table.tsv")
    return root


@pytest.fixture
def config(data_dir):
    return RepositoryConfig(
        namespace=NAMESPACE,
        data_dir=str(data_dir),
        base_url="http://localhost:8080",
        page_size=10,
        index_ttl=0.0,
    )


@pytest.fixture
def env(config, clock):
    """A complete in-process deployment."""
    environment = Environment(config, clock=clock)
    yield environment
    environment.close()


@pytest.fixture
def web(env):
    """Flask test client for the deployment."""
    return env.app.test_client()


@pytest.fixture
def paper(env):
    """The sample paper ingested into tape-0001, as stored."""
    report = env.ingest_batch([MANIFEST], tape_name="tape-0001")
    assert report.ok, report.failures
    return env.tapes["tape-0001"].get(report.package_ids[0]).document()


@pytest.fixture
def federation(env):
    """Three repositories of five synthetic papers each: {repository baseURL: package ids}."""
    holdings = {}
    for t in range(3):
        manifests = [synthetic_manifest(t * 100 + n, binary=(n % 2 == 0)) for n in range(5)]
        report = env.ingest_batch(manifests, tape_name=f"tape-{t}")
        assert report.ok, report.failures
        holdings[env.config.repo_url(report.tape_name)] = report.package_ids
    return holdings


@pytest.fixture
def clean_env():
    """Remove DIDL_REPO_* variables for the duration of a test."""
    saved = {k: v for k, v in os.environ.items() if k.startswith("DIDL_REPO_")}
    for key in saved:
        del os.environ[key]
    yield
    for key in [k for k in os.environ if k.startswith("DIDL_REPO_")]:
        del os.environ[key]
    os.environ.update(saved)
