"""Tests for XMLtape storage."""

import os
from datetime import timedelta

import pytest
from lxml import etree

from didl_repo.didl import parse_didl
from didl_repo.tape import BadRange, DuplicatePackageId, TapeSealed, UnknownPackageId, XMLTape
from tests.helpers import START, minutes, tiny_doc


@pytest.fixture
def tape(tmp_path):
    return XMLTape.create(tmp_path / "tapes" / "t1.xml")


@pytest.fixture
def filled(tape):
    docs = [tiny_doc(n, minutes(n)) for n in range(5)]
    for doc in docs:
        tape.append(doc)
    return tape, docs


class TestAppendAndGet:
    """Appending and random access."""

    def test_get_returns_stored_document(self, filled):
        tape, docs = filled
        for doc in docs:
            record = tape.get(doc.package_id)
            assert record.datestamp == doc.created
            assert parse_didl(record.didl_bytes) == doc
            assert record.document() == doc

    def test_sample_package(self, tape, aip):
        tape.append(aip)
        assert tape.get(aip.package_id).document() == aip

    def test_duplicate_package_id(self, filled):
        tape, docs = filled
        with pytest.raises(DuplicatePackageId):
            tape.append(docs[0])

    def test_unknown_package_id(self, tape):
        with pytest.raises(UnknownPackageId):
            tape.get("info:lanl-repo/i/none")

    def test_stored_bytes_have_no_declaration(self, filled):
        tape, docs = filled
        assert tape.get(docs[0].package_id).didl_bytes.startswith(b"<didl:DIDL")

    def test_name_and_len(self, filled):
        tape, docs = filled
        assert tape.name == "t1"
        assert len(tape) == 5
        assert docs[2].package_id in tape


class TestSealing:
    """Sealed tapes are complete XML documents and never change."""

    def test_sealed_tape_is_well_formed(self, filled):
        tape, docs = filled
        tape.seal()
        root = etree.parse(str(tape.path)).getroot()
        assert root.tag == "tape"
        assert len(root.findall("tape-record")) == len(docs)

    def test_append_after_seal(self, filled):
        tape, _ = filled
        tape.seal()
        with pytest.raises(TapeSealed):
            tape.append(tiny_doc(99))

    def test_seal_twice(self, tape):
        tape.seal()
        with pytest.raises(TapeSealed):
            tape.seal()

    def test_reopened_tape_knows_it_is_sealed(self, filled):
        tape, _ = filled
        tape.seal()
        again = XMLTape(tape.path)
        assert again.sealed
        assert len(again) == 5

    def test_unsealed_tape_reopens_for_append(self, filled):
        tape, _ = filled
        again = XMLTape(tape.path)
        assert not again.sealed
        again.append(tiny_doc(42))
        assert len(again) == 6


class TestRanges:
    """Datestamp windows over the index."""

    def test_bounds_are_inclusive(self, filled):
        tape, docs = filled
        entries = tape.entries(minutes(1), minutes(3))
        assert [e.package_id for e in entries] == [d.package_id for d in docs[1:4]]

    def test_open_bounds(self, filled):
        tape, docs = filled
        assert len(tape.entries()) == 5
        assert len(tape.entries(from_=minutes(4))) == 1
        assert len(tape.entries(until=minutes(0))) == 1

    def test_empty_window(self, filled):
        tape, _ = filled
        assert tape.entries(minutes(10), minutes(20)) == []

    def test_inverted_window(self, filled):
        tape, _ = filled
        with pytest.raises(BadRange):
            tape.entries(minutes(3), minutes(1))

    def test_ties_keep_append_order(self, tape):
        docs = [tiny_doc(n, START) for n in range(3)]
        for doc in reversed(docs):
            tape.append(doc)
        assert [e.package_id for e in tape.entries()] == [d.package_id for d in reversed(docs)]

    def test_out_of_order_datestamps_sort(self, tape):
        tape.append(tiny_doc(1, minutes(5)))
        tape.append(tiny_doc(2, minutes(1)))
        assert [e.datestamp for e in tape.entries()] == [minutes(1), minutes(5)]

    def test_list_yields_records(self, filled):
        tape, docs = filled
        records = list(tape.list(minutes(2)))
        assert [r.package_id for r in records] == [d.package_id for d in docs[2:]]


class TestScanAndRebuild:
    """Streaming reads and index recovery."""

    @pytest.mark.parametrize("sealed", [True, False])
    def test_scan_equals_indexed_access(self, filled, sealed):
        tape, docs = filled
        if sealed:
            tape.seal()
        scanned = list(tape.scan())
        assert [r.package_id for r in scanned] == [d.package_id for d in docs]
        for record in scanned:
            assert parse_didl(record.didl_bytes) == tape.get(record.package_id).document()
            assert record.datestamp == tape.get(record.package_id).datestamp

    def test_missing_index_is_rebuilt(self, filled):
        tape, docs = filled
        tape.seal()
        expected = tape.entries()
        os.remove(tape.index_path)
        again = XMLTape(tape.path)
        assert again.entries() == expected
        assert again.index_path.exists()

    def test_rebuild_index_count(self, filled):
        tape, _ = filled
        assert tape.rebuild_index() == 5

    def test_stats(self, filled):
        tape, _ = filled
        tape.seal()
        stats = tape.stats()
        assert stats["records"] == 5
        assert stats["sealed"] is True
        assert stats["earliest"] == "2004-06-22T18:07:18Z"
        assert stats["latest"] == (START + timedelta(minutes=4)).strftime("%Y-%m-%dT%H:%M:%SZ")
        assert stats["size_bytes"] == tape.path.stat().st_size

    def test_open_missing_tape(self, tmp_path):
        with pytest.raises(FileNotFoundError):
            XMLTape(tmp_path / "absent.xml")
