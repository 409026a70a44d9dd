"""ARC v1 container files for binary datastreams, with a per-file offset index.

File layout::

    filedesc://<file name> 0.0.0.0 <date14> text/plain <len>
    1 0 <organization>
    URL IP-address Archive-date Content-type Archive-length

    <url key> 0.0.0.0 <date14> <mime> <len>
    <payload>

Every record is a header line, ``len`` payload bytes and one newline. The sidecar index
``<file name>.idx`` holds one ``url_key<TAB>offset<TAB>record_length`` line per record and
can always be rebuilt by scanning the ARC file.
"""

import logging
import os
import re
import threading
import uuid
from dataclasses import dataclass
from pathlib import Path
from typing import Dict, Iterator, List, Optional, Tuple

from .clock import Clock, SystemClock, format_arc_date

logger = logging.getLogger(__name__)

ARC_IP = "0.0.0.0"
ARC_SUFFIX = ".arc"
INDEX_SUFFIX = ".idx"
FIELD_HEADER = "URL IP-address Archive-date Content-type Archive-length"


class ArcError(Exception):
    """Base class for ARC storage errors."""


class UnknownKey(ArcError):
    pass


class CorruptRecord(ArcError):
    pass


class IoFailure(ArcError):
    pass


@dataclass(frozen=True)
class ArcRecord:
    url_key: str
    ip: str
    archive_date: str
    content_type: str
    length: int
    payload: bytes


@dataclass(frozen=True)
class ArcIndexEntry:
    url_key: str
    file_name: str
    byte_offset: int
    record_length: int


def _header_line(url: str, date14: str, mime: str, length: int) -> bytes:
    mime = re.sub(r"\s+", "", mime) or "application/octet-stream"
    return f"{url} {ARC_IP} {date14} {mime} {length}\n".encode("utf-8")


def _parse_header(line: bytes) -> Tuple[str, str, str, str, int]:
    if not line.endswith(b"\n"):
        raise CorruptRecord("truncated record header")
    fields = line.decode("utf-8", errors="replace").rstrip("\n").split(" ")
    if len(fields) != 5:
        raise CorruptRecord(f"record header has {len(fields)} fields: {line!r}")
    url, ip, date14, mime, length = fields
    try:
        size = int(length)
    except ValueError as e:
        raise CorruptRecord(f"bad record length {length!r}") from e
    return url, ip, date14, mime, size


def _read_record_at(handle, offset: int) -> Tuple[ArcRecord, int]:
    """Read one record starting at offset; returns it with its total byte length."""
    handle.seek(offset)
    line = handle.readline()
    url, ip, date14, mime, size = _parse_header(line)
    payload = handle.read(size)
    if len(payload) != size:
        raise CorruptRecord(f"{url}: declared {size} bytes, found {len(payload)}")
    if handle.read(1) != b"\n":
        raise CorruptRecord(f"{url}: missing record separator")
    record = ArcRecord(
        url_key=url,
        ip=ip,
        archive_date=date14,
        content_type=mime,
        length=size,
        payload=payload,
    )
    return record, len(line) + size + 1


class ArcStore:
    """A directory of ARC files keyed by locally minted URL keys.

    One file is open for appending at a time. Reads go through the merged index of all
    files in the directory and are safe to run concurrently with the appender.
    """

    def __init__(
        self,
        directory: Path,
        namespace: str,
        organization: str = "didl-repo",
        clock: Optional[Clock] = None,
    ):
        self.directory = Path(directory)
        self.namespace = namespace.rstrip("/")
        self.organization = organization
        self.clock = clock or SystemClock()
        self.current_file: Optional[str] = None
        self._index: Dict[str, ArcIndexEntry] = {}
        self._lock = threading.Lock()
        self.directory.mkdir(parents=True, exist_ok=True)
        self._load_indexes()

    def _load_indexes(self) -> None:
        for arc_path in sorted(self.directory.glob(f"*{ARC_SUFFIX}")):
            idx_path = arc_path.with_name(arc_path.name + INDEX_SUFFIX)
            if not idx_path.exists():
                logger.warning(f"Index missing for {arc_path.name}, rebuilding by scan")
                self.rebuild_index(arc_path.name)
                continue
            for line in idx_path.read_text(encoding="utf-8").splitlines():
                if not line.strip():
                    continue
                url, offset, length = line.split("\t")
                self._index[url] = ArcIndexEntry(url, arc_path.name, int(offset), int(length))

    def mint_key(self) -> str:
        return f"{self.namespace}/ds/{uuid.uuid4()}"

    def files(self) -> List[str]:
        return sorted(p.name for p in self.directory.glob(f"*{ARC_SUFFIX}"))

    def start_file(self, name: Optional[str] = None) -> str:
        """Create a new ARC file with its version block and make it the append target."""
        now = self.clock.now()
        if name is None:
            name = f"{format_arc_date(now)}-{uuid.uuid4().hex[:8]}{ARC_SUFFIX}"
        path = self.directory / name
        block = f"1 0 {self.organization}\n{FIELD_HEADER}\n".encode("utf-8")
        header = _header_line(f"filedesc://{name}", format_arc_date(now), "text/plain", len(block))
        try:
            with open(path, "xb") as f:
                f.write(header + block + b"\n")
            (self.directory / (name + INDEX_SUFFIX)).touch()
        except OSError as e:
            raise IoFailure(f"cannot create {path}: {e}") from e
        self.current_file = name
        logger.info(f"Started ARC file {name}")
        return name

    def write(self, payload: bytes, mime: str) -> str:
        """Append one record to the current file and return its URL key."""
        with self._lock:
            if self.current_file is None:
                self.start_file()
            url_key = self.mint_key()
            path = self.directory / self.current_file
            record = (
                _header_line(url_key, format_arc_date(self.clock.now()), mime, len(payload))
                + payload
                + b"\n"
            )
            try:
                with open(path, "ab") as f:
                    offset = f.seek(0, os.SEEK_END)
                    f.write(record)
                    f.flush()
                with open(path.with_name(path.name + INDEX_SUFFIX), "a", encoding="utf-8") as f:
                    f.write(f"{url_key}\t{offset}\t{len(record)}\n")
            except OSError as e:
                raise IoFailure(f"cannot append to {path}: {e}") from e
            self._index[url_key] = ArcIndexEntry(url_key, self.current_file, offset, len(record))
        logger.debug(f"ARC write {url_key} ({len(payload)} bytes, {mime})")
        return url_key

    def entry(self, url_key: str) -> ArcIndexEntry:
        try:
            return self._index[url_key]
        except KeyError:
            raise UnknownKey(url_key) from None

    def read(self, url_key: str) -> Tuple[bytes, str]:
        entry = self.entry(url_key)
        path = self.directory / entry.file_name
        try:
            with open(path, "rb") as f:
                record, _ = _read_record_at(f, entry.byte_offset)
        except OSError as e:
            raise IoFailure(f"cannot read {path}: {e}") from e
        if record.url_key != url_key:
            raise CorruptRecord(f"index points {url_key} at a record for {record.url_key}")
        return record.payload, record.content_type

    def __contains__(self, url_key: str) -> bool:
        return url_key in self._index

    def __len__(self) -> int:
        return len(self._index)

    def _records(self, file_name: str) -> Iterator[Tuple[int, int, ArcRecord]]:
        path = self.directory / file_name
        size = path.stat().st_size
        with open(path, "rb") as f:
            offset = 0
            while offset < size:
                record, length = _read_record_at(f, offset)
                if not record.url_key.startswith("filedesc://"):
                    yield offset, length, record
                offset += length

    def scan(self, file_name: str) -> Iterator[ArcRecord]:
        """Sequentially read every datastream record of one file, skipping the filedesc record."""
        for _, _, record in self._records(file_name):
            yield record

    def rebuild_index(self, file_name: str) -> int:
        lines = []
        with self._lock:
            for url_key in [k for k, e in self._index.items() if e.file_name == file_name]:
                del self._index[url_key]
            for offset, length, record in self._records(file_name):
                self._index[record.url_key] = ArcIndexEntry(record.url_key, file_name, offset, length)
                lines.append(f"{record.url_key}\t{offset}\t{length}\n")
            (self.directory / (file_name + INDEX_SUFFIX)).write_text("".join(lines), encoding="utf-8")
        logger.info(f"Rebuilt index for {file_name}: {len(lines)} records")
        return len(lines)

    def file_entries(self, file_name: str) -> List[ArcIndexEntry]:
        return sorted(
            (e for e in self._index.values() if e.file_name == file_name),
            key=lambda e: e.byte_offset,
        )
