"""Tests for main CLI module."""

import json
import os
import runpy
import shutil
from pathlib import Path
from unittest.mock import Mock, patch

import pytest
from lxml import etree

from didl_repo import main as cli
from didl_repo.main import build_parser, main
from didl_repo.transforms import MODS_NS
from tests.helpers import FIXTURES

SCRIPTS = Path(__file__).parents[1] / "scripts"
MODS = "info:lanl-repo/service/marc_2_mods"
TOC = "info:lanl-repo/service/table_of_contents"
KEV = f"url_ver=Z39.88-2004&rft_id=info:pmid/2225887&svc_id={MODS}"


@pytest.fixture
def workdir(tmp_path, monkeypatch, clean_env):
    """A checkout-like working directory configured the way the README does it."""
    shutil.copytree(FIXTURES, tmp_path / "tests" / "fixtures")
    monkeypatch.chdir(tmp_path)
    os.environ["DIDL_REPO_DATA_DIR"] = "./data"
    os.environ["DIDL_REPO_NAMESPACE"] = "info:lanl-repo"
    return tmp_path


@pytest.fixture
def bound(workdir):
    """DIP Table rows bound as in the README."""
    assert main(["dip-table", "add", MODS, "info:lanl-repo/fmt/3", "marcxml_to_mods",
                 "--description", "Convert a MARCXML record to MODS"]) == 0
    assert main(["dip-table", "add", TOC, "info:lanl-repo/pro/paper", "table_of_contents"]) == 0
    return workdir


@pytest.fixture
def ingested(bound):
    assert main(["ingest", "tests/fixtures/manifest/paper.ini", "--tape-name", "tape-0001"]) == 0
    return bound


@pytest.fixture
def populated(ingested):
    assert main(["populate"]) == 0
    return ingested


class TestMainCLI:
    """Test the main CLI interface."""

    def test_help(self, capsys):
        """Test --help exits cleanly."""
        with pytest.raises(SystemExit) as exc_info:
            main(["--help"])

        assert exc_info.value.code == 0
        assert "didl-repo" in capsys.readouterr().out

    def test_command_required(self):
        with pytest.raises(SystemExit) as exc_info:
            main([])
        assert exc_info.value.code == 2

    def test_parser_defaults(self):
        """Test argument parser defaults."""
        parsed = build_parser().parse_args(["harvest", "http://localhost:8080/federator"])

        assert parsed.prefix == "DIDL"
        assert parsed.log_level == "WARNING"
        assert parsed.headers_only is False
        assert parsed.into_locator is False

    def test_error_exit_code(self, workdir, capsys):
        """Test failures print an error and exit with 1."""
        exit_code = main(["locate", "info:doi/10.0/none"])

        assert exit_code == 1
        assert capsys.readouterr().out.startswith("Error: ")

    def test_invalid_config(self, workdir, capsys):
        assert main(["transforms", "--namespace", "lanl"]) == 1
        assert "Namespace must be a URI prefix" in capsys.readouterr().out

    def test_config_file(self, workdir, capsys):
        path = workdir / "config.json"
        path.write_text(json.dumps({"disabled_transforms": ["record_to_dc"]}))

        assert main(["transforms", "--config", str(path)]) == 0

        rows = dict(line.split("\t")[0::4] for line in capsys.readouterr().out.splitlines())
        assert rows["record_to_dc"] == "disabled"
        assert rows["raw_bytes"] == "enabled"

    def test_keyboard_interrupt(self, workdir, capsys):
        """Test keyboard interrupt handling."""
        with patch.dict(cli.COMMANDS, {"transforms": Mock(side_effect=KeyboardInterrupt())}):
            exit_code = main(["transforms"])

        assert exit_code == 1
        assert "Interrupted by user" in capsys.readouterr().out


class TestDipTableCommand:
    def test_add_and_list(self, bound, capsys):
        capsys.readouterr()
        assert main(["dip-table", "list"]) == 0

        rows = [line.split("\t") for line in capsys.readouterr().out.splitlines()]
        assert rows == [
            [MODS, "info:lanl-repo/fmt/3", "marcxml_to_mods", "Convert a MARCXML record to MODS"],
            [TOC, "info:lanl-repo/pro/paper", "table_of_contents", ""],
        ]
        assert (bound / "data" / "dip_table.tsv").exists()

    def test_list_sample_table(self, workdir, capsys):
        os.environ["DIDL_REPO_DIP_TABLE"] = "tests/fixtures/dip_table.tsv"

        assert main(["dip-table", "list"]) == 0

        services = [line.split("\t")[0] for line in capsys.readouterr().out.splitlines()]
        assert services == [TOC, TOC, MODS]

    def test_duplicate_binding(self, bound, capsys):
        assert main(["dip-table", "add", TOC, "info:lanl-repo/pro/paper", "table_of_contents"]) == 1
        assert "already bound" in capsys.readouterr().out

    def test_remove(self, bound, capsys):
        assert main(["dip-table", "remove", TOC]) == 0
        assert "Removed 1 rows" in capsys.readouterr().out
        assert main(["dip-table", "remove", TOC]) == 1


class TestIngestCommand:
    def test_single_manifest(self, bound, capsys):
        exit_code = main(["ingest", "tests/fixtures/manifest/paper.ini", "--tape-name", "tape-0001"])

        out = capsys.readouterr().out
        assert exit_code == 0
        assert out.splitlines()[0].startswith("info:lanl-repo/i/")
        assert "Tape tape-0001: 1 ingested, 0 failed" in out
        assert "Repository http://localhost:8080/repo/tape-0001" in out
        assert (bound / "data" / "tapes" / "tape-0001.xml").exists()

    def test_failures_exit_with_one(self, bound, capsys):
        listing = bound / "batch.txt"
        listing.write_text("tests/fixtures/manifest/paper.ini\nmissing.ini\n")

        assert main(["ingest", str(listing)]) == 1
        assert "1 ingested, 1 failed" in capsys.readouterr().out

    def test_generated_batch(self, bound, capsys):
        generate = runpy.run_path(str(SCRIPTS / "generate_batch.py"), run_name="generate_batch")
        assert generate["main"](["20", "batch"]) == 0

        assert main(["ingest", "batch", "--tape-name", "tape-synthetic"]) == 0
        assert "Tape tape-synthetic: 20 ingested, 0 failed" in capsys.readouterr().out


class TestLocatorCommands:
    def test_populate(self, ingested, capsys):
        capsys.readouterr()
        assert main(["populate"]) == 0

        stats = json.loads(capsys.readouterr().out)
        assert stats["repositories"] == 1
        assert stats["failures"] == {}

    def test_locate(self, populated, capsys):
        capsys.readouterr()
        assert main(["locate", "info:pmid/2225887"]) == 0

        (line,) = capsys.readouterr().out.splitlines()
        repo, package_id, xml_id, created = line.split("\t")
        assert repo == "http://localhost:8080/repo/tape-0001"
        assert package_id.startswith("info:lanl-repo/i/")
        assert xml_id.startswith("uuid-")
        assert created.endswith("Z")

    def test_load_locator(self, populated, capsys):
        capsys.readouterr()
        assert main(["load-locator", "tests/fixtures/locator_rows.tsv"]) == 0
        assert "Loaded 3 package rows, 4 content rows" in capsys.readouterr().out

        assert main(["locate", "info:pmid/2225887"]) == 0
        assert len(capsys.readouterr().out.splitlines()) == 3


class TestHarvestCommand:
    def test_repository_to_files(self, ingested, capsys):
        capsys.readouterr()
        assert main(["harvest", "http://localhost:8080/repo/tape-0001", "--output", "harvested"]) == 0

        out = capsys.readouterr().out
        assert "Harvested 1 records in 1 pages" in out
        (record,) = (ingested / "harvested").iterdir()
        assert record.suffix == ".xml"
        assert etree.fromstring(record.read_bytes()).tag.endswith("DIDL")

    def test_headers_only(self, ingested, capsys):
        capsys.readouterr()
        assert main(["harvest", "http://localhost:8080/repo/tape-0001", "--headers-only"]) == 0
        assert "Harvested 1 records" in capsys.readouterr().out

    def test_federator_into_locator(self, ingested, capsys):
        capsys.readouterr()
        exit_code = main(
            ["harvest", "http://localhost:8080/federator", "--prefix", "identifiers", "--into-locator"]
        )

        assert exit_code == 0
        assert "Loaded 1 package rows, 2 content rows" in capsys.readouterr().out
        assert main(["locate", "info:doi/10.123/44455"]) == 0


class TestOtherCommands:
    def test_transforms(self, workdir, capsys):
        assert main(["transforms"]) == 0

        names = [line.split("\t")[0] for line in capsys.readouterr().out.splitlines()]
        assert names == [
            "raw_bytes",
            "identifiers_only",
            "didl_completed",
            "format_crosswalk",
            "record_to_dc",
            "marcxml_to_mods",
            "table_of_contents",
        ]

    def test_inspect_tape(self, ingested, capsys):
        capsys.readouterr()
        assert main(["inspect-tape", "tape-0001", "--scan"]) == 0

        stats = json.loads(capsys.readouterr().out)
        assert stats["records"] == stats["scanned"] == 1
        assert stats["sealed"] is True

    def test_openurl(self, populated, capsys):
        capsys.readouterr()
        assert main(["openurl", KEV, "--output", "mods.xml"]) == 0

        assert "application/mods+xml" in capsys.readouterr().out
        root = etree.parse(str(populated / "mods.xml")).getroot()
        assert root.findtext(f"{{{MODS_NS}}}titleInfo/{{{MODS_NS}}}title") == "Los Alamos science"

    @patch("flask.Flask.run")
    def test_serve(self, mock_run, ingested, capsys):
        assert main(["serve"]) == 0

        mock_run.assert_called_once_with(host="127.0.0.1", port=8080, threaded=True)
        assert "Serving repo, index, locator, federator, openurl" in capsys.readouterr().out

    @patch("flask.Flask.run")
    def test_serve_only_locator(self, mock_run, workdir, capsys):
        assert main(["serve", "--only", "locator", "--port", "8081"]) == 0

        mock_run.assert_called_once_with(host="127.0.0.1", port=8081, threaded=True)
        assert "Serving locator on 127.0.0.1:8081" in capsys.readouterr().out
