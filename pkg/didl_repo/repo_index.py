"""Repository Index: the registry of autonomous repositories, itself an OAI-PMH repository.

Each entry is keyed by the repository's baseURL, which doubles as the OAI identifier; the
entry's datestamp is the registration second and never changes. Entries live in an
append-only JSON-lines journal, replayed whenever another writer has changed it.
"""

import base64
import json
import logging
import threading
from dataclasses import dataclass
from datetime import datetime
from pathlib import Path
from typing import Dict, List, Optional, Tuple

from lxml import etree

from .clock import Clock, SystemClock, format_datestamp, parse_datestamp
from .oaipmh import (
    CannotDisseminateFormat,
    IdDoesNotExist,
    IdentifyInfo,
    MetadataFormat,
    NoSetHierarchy,
    OaiRecord,
    RecordPage,
    SetInfo,
    page_slice,
)
from .repository import EPOCH

logger = logging.getLogger(__name__)

INDEX_PREFIX = "INDEX"
INDEX_NS = "info:didl-repo/ns/repository-index"
INDEX_FORMAT = MetadataFormat(
    prefix=INDEX_PREFIX, schema=f"{INDEX_NS}/index.xsd", namespace=INDEX_NS
)
_I = "{%s}" % INDEX_NS


class RepoIndexError(Exception):
    """Base class for Repository Index errors."""


class DuplicateBaseUrl(RepoIndexError):
    pass


@dataclass(frozen=True)
class RepoEntry:
    base_url: str
    created: datetime
    description: str = ""

    def to_xml(self) -> bytes:
        root = etree.Element(_I + "index", nsmap={None: INDEX_NS})
        etree.SubElement(root, _I + "baseURL").text = self.base_url
        etree.SubElement(root, _I + "created").text = format_datestamp(self.created)
        etree.SubElement(root, _I + "description").text = self.description
        return etree.tostring(root)

    @classmethod
    def from_xml(cls, data: bytes) -> "RepoEntry":
        root = etree.fromstring(data)
        return cls(
            base_url=root.findtext(_I + "baseURL").strip(),
            created=parse_datestamp(root.findtext(_I + "created")),
            description=root.findtext(_I + "description") or "",
        )


class RepositoryIndex:
    """Repositories in registration order, journaled to one JSONL file.

    Other processes may append to the journal; every read replays it again once its size or
    modification time has changed.
    """

    def __init__(self, journal_path: Path, clock: Optional[Clock] = None):
        self.journal_path = Path(journal_path)
        self.clock = clock or SystemClock()
        self._entries: List[RepoEntry] = []
        self._by_url: Dict[str, RepoEntry] = {}
        self._stamp: Optional[Tuple[int, int]] = None
        self._lock = threading.Lock()
        self.journal_path.parent.mkdir(parents=True, exist_ok=True)
        with self._lock:
            self._refresh()

    def _journal_stamp(self) -> Optional[Tuple[int, int]]:
        try:
            stat = self.journal_path.stat()
        except FileNotFoundError:
            return None
        return stat.st_mtime_ns, stat.st_size

    def _refresh(self) -> None:
        """Replay the journal if it changed since the last replay. Caller holds the lock."""
        stamp = self._journal_stamp()
        if stamp == self._stamp:
            return
        entries: List[RepoEntry] = []
        by_url: Dict[str, RepoEntry] = {}
        if stamp is not None:
            with open(self.journal_path, encoding="utf-8") as f:
                for line in f:
                    if not line.strip():
                        continue
                    row = json.loads(line)
                    entry = RepoEntry(row["base_url"], parse_datestamp(row["created"]), row.get("description", ""))
                    if entry.base_url not in by_url:
                        entries.append(entry)
                        by_url[entry.base_url] = entry
        self._entries, self._by_url, self._stamp = entries, by_url, stamp
        logger.debug(f"Replayed {len(entries)} repository index entries")

    def register_repository(self, base_url: str, description: str = "") -> RepoEntry:
        with self._lock:
            self._refresh()
            if base_url in self._by_url:
                raise DuplicateBaseUrl(base_url)
            entry = RepoEntry(base_url, self.clock.now(), description)
            row = {"base_url": base_url, "created": format_datestamp(entry.created), "description": description}
            with open(self.journal_path, "a", encoding="utf-8") as f:
                f.write(json.dumps(row) + "\n")
            self._entries.append(entry)
            self._by_url[base_url] = entry
        logger.info(f"Registered repository {base_url}", extra={"base_url": base_url})
        return entry

    def get(self, base_url: str) -> Optional[RepoEntry]:
        with self._lock:
            self._refresh()
            return self._by_url.get(base_url)

    def repositories(self) -> List[RepoEntry]:
        with self._lock:
            self._refresh()
            return list(self._entries)

    def __len__(self) -> int:
        return len(self.repositories())


class IndexRecordSource:
    """OAI-PMH view of the index: one INDEX record per repository, in registration order."""

    def __init__(self, index: RepositoryIndex, base_url: str, admin_email: str = "admin@localhost"):
        self.index = index
        self.base_url = base_url
        self.admin_email = admin_email

    def identify(self) -> IdentifyInfo:
        entries = self.index.repositories()
        return IdentifyInfo(
            repository_name="Repository Index",
            base_url=self.base_url,
            earliest_datestamp=min((e.created for e in entries), default=EPOCH),
            admin_emails=(self.admin_email,),
        )

    def metadata_formats(self, identifier: Optional[str] = None) -> List[MetadataFormat]:
        if identifier is not None and self.index.get(identifier) is None:
            raise IdDoesNotExist(identifier)
        return [INDEX_FORMAT]

    def list_sets(self) -> List[SetInfo]:
        raise NoSetHierarchy("the repository index has no sets")

    @staticmethod
    def _record(entry: RepoEntry, headers_only: bool = False) -> OaiRecord:
        return OaiRecord(entry.base_url, entry.created, (), None if headers_only else entry.to_xml())

    def get_record(self, identifier: str, prefix: str) -> OaiRecord:
        entry = self.index.get(identifier)
        if entry is None:
            raise IdDoesNotExist(identifier)
        if prefix != INDEX_PREFIX:
            raise CannotDisseminateFormat(prefix)
        return self._record(entry)

    def list_records(self, prefix, from_, until, set_spec, cursor, page_size, headers_only=False) -> RecordPage:
        if set_spec is not None:
            raise NoSetHierarchy("the repository index has no sets")
        if prefix != INDEX_PREFIX:
            raise CannotDisseminateFormat(prefix)
        matching = [
            e
            for e in self.index.repositories()
            if (from_ is None or e.created >= from_) and (until is None or e.created <= until)
        ]
        start, stop, next_cursor = page_slice(len(matching), cursor, page_size)
        records = [self._record(e, headers_only) for e in matching[start:stop]]
        return RecordPage(records, next_cursor, len(matching))


def repo_set_spec(base_url: str) -> str:
    """Federated set spec for one repository: ``repo:`` + unpadded url-safe base64 of its baseURL."""
    token = base64.urlsafe_b64encode(base_url.encode("utf-8")).decode("ascii").rstrip("=")
    return f"repo:{token}"


def base_url_from_set_spec(spec: str) -> Optional[str]:
    if not spec.startswith("repo:"):
        return None
    token = spec[len("repo:"):]
    try:
        return base64.urlsafe_b64decode(token + "=" * (-len(token) % 4)).decode("utf-8")
    except (ValueError, UnicodeError):
        return None
