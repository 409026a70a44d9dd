"""XMLtape: one well-formed XML file concatenating a batch of DIDL documents.

Layout::

    <?xml version="1.0" encoding="UTF-8"?>
    <tape>
    <tape-record><tape-admin><identifier/><datestamp/><length/></tape-admin><DIDL .../></tape-record>
    ...
    </tape>

``length`` is the byte length of the embedded DIDL, which frames every record so the sidecar
index (``<tape>.idx``, one ``package_id<TAB>offset<TAB>length<TAB>datestamp`` line per record)
can be rebuilt from the tape alone. A tape is sealed once the closing ``</tape>`` tag is
written; after that it never changes.
"""

import bisect
import logging
import threading
from dataclasses import dataclass
from datetime import datetime
from pathlib import Path
from typing import Dict, Iterator, List, Optional

from lxml import etree

from .clock import format_datestamp, parse_datestamp
from .didl import DidlDocument, parse_didl, serialize_didl

logger = logging.getLogger(__name__)

TAPE_SUFFIX = ".xml"
INDEX_SUFFIX = ".idx"
TAPE_HEADER = b'<?xml version="1.0" encoding="UTF-8"?>\n<tape>\n'
TAPE_TRAILER = b"</tape>\n"
RECORD_OPEN = b"<tape-record>"
RECORD_CLOSE = b"</tape-record>\n"
ADMIN_CLOSE = b"</tape-admin>"
READ_CHUNK = 64 * 1024


class TapeError(Exception):
    """Base class for XMLtape errors."""


class DuplicatePackageId(TapeError):
    pass


class TapeSealed(TapeError):
    pass


class UnknownPackageId(TapeError):
    pass


class BadRange(TapeError):
    pass


class IoFailure(TapeError):
    pass


@dataclass(frozen=True)
class TapeRecord:
    package_id: str
    datestamp: datetime
    didl_bytes: bytes

    def document(self) -> DidlDocument:
        return parse_didl(self.didl_bytes)


@dataclass(frozen=True)
class TapeIndexEntry:
    package_id: str
    byte_offset: int
    length: int
    datestamp: datetime


def _admin_bytes(package_id: str, datestamp: datetime, length: int) -> bytes:
    admin = etree.Element("tape-admin")
    etree.SubElement(admin, "identifier").text = package_id
    etree.SubElement(admin, "datestamp").text = format_datestamp(datestamp)
    etree.SubElement(admin, "length").text = str(length)
    return etree.tostring(admin)


class XMLTape:
    """An append-only tape with an in-memory index mirrored to its sidecar file.

    One writer appends until the tape is sealed; readers may run concurrently on every
    record the index already lists.
    """

    def __init__(self, path: Path):
        self.path = Path(path)
        self.index_path = self.path.with_name(self.path.name + INDEX_SUFFIX)
        self._by_id: Dict[str, TapeIndexEntry] = {}
        self._by_date: List[TapeIndexEntry] = []
        self._lock = threading.Lock()
        self.sealed = False
        if not self.path.exists():
            raise FileNotFoundError(f"No tape at {self.path}")
        self.sealed = self._ends_sealed()
        if self.index_path.exists():
            self._load_index()
        else:
            logger.warning(f"Index missing for tape {self.name}, rebuilding from tape")
            self.rebuild_index()

    @classmethod
    def create(cls, path: Path) -> "XMLTape":
        path = Path(path)
        path.parent.mkdir(parents=True, exist_ok=True)
        try:
            with open(path, "xb") as f:
                f.write(TAPE_HEADER)
            path.with_name(path.name + INDEX_SUFFIX).touch()
        except OSError as e:
            raise IoFailure(f"cannot create tape {path}: {e}") from e
        logger.info(f"Created tape {path.name}")
        return cls(path)

    @property
    def name(self) -> str:
        return self.path.name[: -len(TAPE_SUFFIX)] if self.path.name.endswith(TAPE_SUFFIX) else self.path.name

    def __len__(self) -> int:
        return len(self._by_id)

    def __contains__(self, package_id: str) -> bool:
        return package_id in self._by_id

    def _ends_sealed(self) -> bool:
        size = self.path.stat().st_size
        with open(self.path, "rb") as f:
            f.seek(max(0, size - len(TAPE_TRAILER)))
            return f.read() == TAPE_TRAILER

    def _add_entry(self, entry: TapeIndexEntry) -> None:
        self._by_id[entry.package_id] = entry
        bisect.insort_right(self._by_date, entry, key=lambda e: e.datestamp)

    def _load_index(self) -> None:
        for line in self.index_path.read_text(encoding="utf-8").splitlines():
            if not line.strip():
                continue
            package_id, offset, length, datestamp = line.split("\t")
            self._add_entry(
                TapeIndexEntry(package_id, int(offset), int(length), parse_datestamp(datestamp))
            )

    def append(self, doc: DidlDocument) -> TapeIndexEntry:
        didl = serialize_didl(doc, xml_declaration=False)
        with self._lock:
            if self.sealed:
                raise TapeSealed(f"tape {self.name} is sealed")
            if doc.package_id in self._by_id:
                raise DuplicatePackageId(doc.package_id)
            prefix = RECORD_OPEN + _admin_bytes(doc.package_id, doc.created, len(didl))
            try:
                with open(self.path, "ab") as f:
                    start = f.seek(0, 2)
                    f.write(prefix + didl + RECORD_CLOSE)
                    f.flush()
                entry = TapeIndexEntry(doc.package_id, start + len(prefix), len(didl), doc.created)
                with open(self.index_path, "a", encoding="utf-8") as f:
                    f.write(
                        f"{entry.package_id}\t{entry.byte_offset}\t{entry.length}\t"
                        f"{format_datestamp(entry.datestamp)}\n"
                    )
            except OSError as e:
                raise IoFailure(f"cannot append to tape {self.name}: {e}") from e
            self._add_entry(entry)
        logger.debug(f"Appended {doc.package_id} to tape {self.name}")
        return entry

    def seal(self) -> None:
        with self._lock:
            if self.sealed:
                raise TapeSealed(f"tape {self.name} is already sealed")
            try:
                with open(self.path, "ab") as f:
                    f.write(TAPE_TRAILER)
            except OSError as e:
                raise IoFailure(f"cannot seal tape {self.name}: {e}") from e
            self.sealed = True
        logger.info(f"Sealed tape {self.name} with {len(self)} records")

    def _read(self, entry: TapeIndexEntry) -> TapeRecord:
        with open(self.path, "rb") as f:
            f.seek(entry.byte_offset)
            data = f.read(entry.length)
        return TapeRecord(entry.package_id, entry.datestamp, data)

    def get(self, package_id: str) -> TapeRecord:
        entry = self._by_id.get(package_id)
        if entry is None:
            raise UnknownPackageId(package_id)
        return self._read(entry)

    def entries(
        self, from_: Optional[datetime] = None, until: Optional[datetime] = None
    ) -> List[TapeIndexEntry]:
        """Index entries with from_ <= datestamp <= until, ascending, ties in append order."""
        if from_ is not None and until is not None and from_ > until:
            raise BadRange(f"from {format_datestamp(from_)} is after until {format_datestamp(until)}")
        key = lambda e: e.datestamp  # noqa: E731
        lo = 0 if from_ is None else bisect.bisect_left(self._by_date, from_, key=key)
        hi = len(self._by_date) if until is None else bisect.bisect_right(self._by_date, until, key=key)
        return self._by_date[lo:hi]

    def list(
        self, from_: Optional[datetime] = None, until: Optional[datetime] = None
    ) -> Iterator[TapeRecord]:
        for entry in self.entries(from_, until):
            yield self._read(entry)

    def scan(self) -> Iterator[TapeRecord]:
        """Stream every record with a pull parser, in file order.

        An unsealed tape is parsed as if its closing tag were present.
        """
        parser = etree.XMLPullParser(events=("end",), tag="tape-record", no_network=True)
        with open(self.path, "rb") as f:
            while True:
                chunk = f.read(READ_CHUNK)
                if not chunk:
                    break
                parser.feed(chunk)
                yield from self._drain(parser)
        if not self.sealed:
            parser.feed(TAPE_TRAILER)
        yield from self._drain(parser)
        parser.close()

    @staticmethod
    def _drain(parser: etree.XMLPullParser) -> Iterator[TapeRecord]:
        for _, element in parser.read_events():
            admin = element.find("tape-admin")
            didl = admin.getnext()
            yield TapeRecord(
                package_id=admin.findtext("identifier"),
                datestamp=parse_datestamp(admin.findtext("datestamp")),
                didl_bytes=etree.tostring(didl, with_tail=False),
            )
            element.clear()
            while element.getprevious() is not None:
                del element.getparent()[0]

    def rebuild_index(self) -> int:
        """Recreate the sidecar index by walking the record framing of the tape file."""
        data = self.path.read_bytes()
        entries = []
        pos = data.find(RECORD_OPEN)
        while pos != -1:
            admin_start = pos + len(RECORD_OPEN)
            admin_end = data.find(ADMIN_CLOSE, admin_start)
            if admin_end == -1:
                raise TapeError(f"tape {self.name}: unterminated tape-admin at byte {pos}")
            admin_end += len(ADMIN_CLOSE)
            admin = etree.fromstring(data[admin_start:admin_end])
            length = int(admin.findtext("length"))
            entries.append(
                TapeIndexEntry(
                    package_id=admin.findtext("identifier"),
                    byte_offset=admin_end,
                    length=length,
                    datestamp=parse_datestamp(admin.findtext("datestamp")),
                )
            )
            end = admin_end + length
            if data[end : end + len(RECORD_CLOSE)] != RECORD_CLOSE:
                raise TapeError(f"tape {self.name}: record framing broken at byte {end}")
            pos = data.find(RECORD_OPEN, end)

        with self._lock:
            self._by_id, self._by_date = {}, []
            for entry in entries:
                self._add_entry(entry)
            self.index_path.write_text(
                "".join(
                    f"{e.package_id}\t{e.byte_offset}\t{e.length}\t{format_datestamp(e.datestamp)}\n"
                    for e in entries
                ),
                encoding="utf-8",
            )
        logger.info(f"Rebuilt index for tape {self.name}: {len(entries)} records")
        return len(entries)

    def stats(self) -> dict:
        dates = [e.datestamp for e in self._by_date]
        return {
            "tape": self.name,
            "records": len(self),
            "sealed": self.sealed,
            "size_bytes": self.path.stat().st_size,
            "earliest": format_datestamp(dates[0]) if dates else None,
            "latest": format_datestamp(dates[-1]) if dates else None,
        }
