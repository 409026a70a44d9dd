"""Identifier Locator: Package Identifier -> repository, Content Identifier -> package + XML ID.

Two tables mirror the two lookup modules. ``package_rows`` places every AIP in exactly one
repository; ``content_rows`` maps each Content Identifier to every AIP (version) that holds it
and to the XML ID of the element carrying it. The tables are filled by harvesting the
repositories named in the Repository Index, or by batch load, and can always be rebuilt by a
fresh harvest.
"""

import json
import logging
import sqlite3
import threading
from dataclasses import asdict, dataclass, field
from datetime import datetime
from pathlib import Path
from typing import Dict, Iterable, List, Optional, Union

from lxml import etree

from .clock import format_datestamp, parse_datestamp
from .client import HarvestError, OaiClient, Transport, TransportFailure
from .didl import DidlError, PackageIdentifier, extract_identifiers, parse_didl
from .oaipmh import OaiRecord
from .repo_index import INDEX_PREFIX, RepoEntry, base_url_from_set_spec
from .repository import DIDL_PREFIX

logger = logging.getLogger(__name__)

IDENTIFIERS_NS = "info:didl-repo/ns/identifiers"
FLUSH_EVERY = 500

SCHEMA = """
CREATE TABLE IF NOT EXISTS package_rows (
    package_id TEXT PRIMARY KEY,
    repo_base_url TEXT NOT NULL,
    created TEXT
);
CREATE TABLE IF NOT EXISTS content_rows (
    seq INTEGER PRIMARY KEY AUTOINCREMENT,
    content_id TEXT NOT NULL,
    package_id TEXT NOT NULL,
    xml_id TEXT NOT NULL,
    UNIQUE (content_id, package_id)
);
CREATE INDEX IF NOT EXISTS content_rows_by_id ON content_rows (content_id);
CREATE TABLE IF NOT EXISTS harvest_state (
    base_url TEXT PRIMARY KEY,
    kind TEXT NOT NULL,
    last_datestamp TEXT
);
"""


class LocatorError(Exception):
    """Base class for Identifier Locator errors."""


class ConflictingPackageRow(LocatorError):
    pass


class ConflictingContentRow(LocatorError):
    pass


class NotFound(LocatorError):
    pass


class LocatorUnavailable(LocatorError):
    pass


@dataclass(frozen=True)
class PackageRow:
    package_id: str
    repo_base_url: str
    created: Optional[datetime] = None


@dataclass(frozen=True)
class ContentRow:
    content_id: str
    package_id: str
    xml_id: str


LocatorRow = Union[PackageRow, ContentRow]


@dataclass(frozen=True)
class FetchPlan:
    """Where to GetRecord an AIP, and which element of it was asked for."""

    repo_base_url: str
    package_id: str
    xml_id: Optional[str] = None
    created: Optional[datetime] = None

    def to_dict(self) -> dict:
        data = asdict(self)
        data["created"] = format_datestamp(self.created) if self.created else None
        return data

    @classmethod
    def from_dict(cls, data: dict) -> "FetchPlan":
        created = data.get("created")
        return cls(
            repo_base_url=data["repo_base_url"],
            package_id=data["package_id"],
            xml_id=data.get("xml_id"),
            created=parse_datestamp(created) if created else None,
        )


@dataclass
class PopulateStats:
    repositories: int = 0
    records: int = 0
    package_rows: int = 0
    content_rows: int = 0
    failures: Dict[str, str] = field(default_factory=dict)

    def to_dict(self) -> dict:
        return asdict(self)


def rows_from_listing(metadata: bytes, repo_base_url: str) -> List[LocatorRow]:
    """Locator rows from one identifiers-only listing record."""
    root = etree.fromstring(metadata)
    if root.tag != "{%s}identifiers" % IDENTIFIERS_NS:
        raise LocatorError(f"not an identifier listing: {root.tag}")
    package_id = root.get("package")
    created = root.get("created")
    rows: List[LocatorRow] = [
        PackageRow(package_id, repo_base_url, parse_datestamp(created) if created else None)
    ]
    for content in root.iter("{%s}content" % IDENTIFIERS_NS):
        rows.append(ContentRow(content.get("id"), package_id, content.get("xmlId")))
    return rows


class IdentifierLocator:
    def __init__(self, db_path: Union[str, Path] = ":memory:"):
        self.db_path = str(db_path)
        if self.db_path != ":memory:":
            Path(self.db_path).parent.mkdir(parents=True, exist_ok=True)
        self._conn = sqlite3.connect(self.db_path, check_same_thread=False)
        self._lock = threading.RLock()
        with self._lock:
            self._conn.executescript(SCHEMA)
            self._conn.commit()

    def close(self) -> None:
        with self._lock:
            self._conn.close()

    # -- writes --------------------------------------------------------------

    def _put_package(self, cur: sqlite3.Cursor, row: PackageRow) -> bool:
        existing = cur.execute(
            "SELECT repo_base_url, created FROM package_rows WHERE package_id = ?", (row.package_id,)
        ).fetchone()
        created = format_datestamp(row.created) if row.created else None
        if existing is None:
            cur.execute(
                "INSERT INTO package_rows (package_id, repo_base_url, created) VALUES (?, ?, ?)",
                (row.package_id, row.repo_base_url, created),
            )
            return True
        if existing[0] != row.repo_base_url:
            raise ConflictingPackageRow(
                f"{row.package_id} is in {existing[0]}, not {row.repo_base_url}"
            )
        if existing[1] is None and created is not None:
            cur.execute("UPDATE package_rows SET created = ? WHERE package_id = ?", (created, row.package_id))
        return False

    def _put_content(self, cur: sqlite3.Cursor, row: ContentRow) -> bool:
        existing = cur.execute(
            "SELECT xml_id FROM content_rows WHERE content_id = ? AND package_id = ?",
            (row.content_id, row.package_id),
        ).fetchone()
        if existing is None:
            cur.execute(
                "INSERT INTO content_rows (content_id, package_id, xml_id) VALUES (?, ?, ?)",
                (row.content_id, row.package_id, row.xml_id),
            )
            return True
        if existing[0] != row.xml_id:
            raise ConflictingContentRow(
                f"{row.content_id} in {row.package_id} is at {existing[0]}, not {row.xml_id}"
            )
        return False

    def put(self, rows: Iterable[LocatorRow]) -> Dict[str, int]:
        """Idempotent upsert of a batch of rows; the batch is applied atomically."""
        counts = {"package_rows": 0, "content_rows": 0}
        with self._lock:
            cur = self._conn.cursor()
            try:
                for row in rows:
                    if isinstance(row, PackageRow):
                        counts["package_rows"] += self._put_package(cur, row)
                    else:
                        counts["content_rows"] += self._put_content(cur, row)
            except Exception:
                self._conn.rollback()
                raise
            self._conn.commit()
        return counts

    def load_batch_file(self, path: Union[str, Path]) -> Dict[str, int]:
        """Load delimited rows: ``P<TAB>package<TAB>repo[<TAB>created]`` and
        ``C<TAB>content<TAB>package<TAB>xmlId``. Blank lines and ``#`` comments are skipped."""
        rows: List[LocatorRow] = []
        with open(path, encoding="utf-8") as f:
            for number, line in enumerate(f, start=1):
                line = line.rstrip("\n")
                if not line.strip() or line.startswith("#"):
                    continue
                fields = line.split("\t")
                if fields[0] == "P" and len(fields) in (3, 4):
                    created = parse_datestamp(fields[3]) if len(fields) == 4 and fields[3] else None
                    rows.append(PackageRow(fields[1], fields[2], created))
                elif fields[0] == "C" and len(fields) == 4:
                    rows.append(ContentRow(fields[1], fields[2], fields[3]))
                else:
                    raise LocatorError(f"{path}:{number}: cannot read row {line!r}")
        counts = self.put(rows)
        logger.info(f"Loaded {len(rows)} rows from {path}", extra=counts)
        return counts

    def load_identifier_listing(self, records: Iterable[OaiRecord], repo_base_url: Optional[str] = None) -> Dict[str, int]:
        """Load records disseminated with the ``identifiers`` prefix.

        The hosting repository comes from the record's ``repo:`` set unless given.
        """
        rows: List[LocatorRow] = []
        for record in records:
            repo = repo_base_url
            for spec in record.sets:
                repo = repo or base_url_from_set_spec(spec)
            if repo is None:
                raise LocatorError(f"no repository known for {record.identifier}")
            rows.extend(rows_from_listing(record.metadata, repo))
        return self.put(rows)

    # -- harvest state -------------------------------------------------------

    def _state(self, base_url: str) -> Optional[datetime]:
        with self._lock:
            row = self._conn.execute(
                "SELECT last_datestamp FROM harvest_state WHERE base_url = ?", (base_url,)
            ).fetchone()
        return parse_datestamp(row[0]) if row and row[0] else None

    def _set_state(self, base_url: str, kind: str, last: Optional[datetime]) -> None:
        with self._lock:
            self._conn.execute(
                "INSERT INTO harvest_state (base_url, kind, last_datestamp) VALUES (?, ?, ?) "
                "ON CONFLICT(base_url) DO UPDATE SET last_datestamp = "
                "COALESCE(excluded.last_datestamp, harvest_state.last_datestamp)",
                (base_url, kind, format_datestamp(last) if last else None),
            )
            self._conn.commit()

    def known_repositories(self) -> List[str]:
        with self._lock:
            rows = self._conn.execute(
                "SELECT base_url FROM harvest_state WHERE kind = 'repository' ORDER BY rowid"
            ).fetchall()
        return [r[0] for r in rows]

    def populate_from_harvest(self, client: OaiClient, index_base_url: str) -> PopulateStats:
        """Harvest the index for repositories, then every repository for AIPs.

        Both harvests are incremental: each resumes from the newest datestamp it saw last time,
        inclusive, so records stamped in that same second are not missed. Rows seen again are
        absorbed by the idempotent put. A failing repository is reported and skipped; rows
        already harvested from it stay committed and its harvest state is not advanced.
        """
        stats = PopulateStats()
        run = client.harvest(index_base_url, INDEX_PREFIX, from_=self._state(index_base_url))
        for record in run:
            entry = RepoEntry.from_xml(record.metadata)
            self._set_state(entry.base_url, "repository", None)
        if run.max_datestamp is not None:
            self._set_state(index_base_url, "index", run.max_datestamp)

        for base_url in self.known_repositories():
            stats.repositories += 1
            try:
                self._harvest_repository(client, base_url, stats)
            except (HarvestError, DidlError, LocatorError) as e:
                stats.failures[base_url] = str(e)
                logger.warning(f"Locator harvest of {base_url} failed: {e}", extra={"base_url": base_url})
        logger.info(
            f"Locator populated: {stats.records} records, {stats.package_rows} package rows, "
            f"{stats.content_rows} content rows, {len(stats.failures)} failures",
            extra={"pipeline_step": "populate"},
        )
        return stats

    def _harvest_repository(self, client: OaiClient, base_url: str, stats: PopulateStats) -> None:
        run = client.harvest(base_url, DIDL_PREFIX, from_=self._state(base_url))
        pending: List[LocatorRow] = []

        def flush():
            counts = self.put(pending)
            stats.package_rows += counts["package_rows"]
            stats.content_rows += counts["content_rows"]
            pending.clear()

        for record in run:
            stats.records += 1
            doc = parse_didl(record.metadata)
            pending.append(PackageRow(doc.package_id, base_url, record.datestamp))
            for entry in extract_identifiers(doc):
                pending.append(ContentRow(entry.content_id, doc.package_id, entry.xml_id))
            if len(pending) >= FLUSH_EVERY:
                flush()
        flush()
        if run.max_datestamp is not None:
            self._set_state(base_url, "repository", run.max_datestamp)

    # -- reads ---------------------------------------------------------------

    def resolve(self, identifier: str) -> List[FetchPlan]:
        """Plans for a Package Identifier (with optional fragment) or a Content Identifier.

        Content Identifiers held by several AIPs give one plan per AIP, newest first.
        """
        pid = PackageIdentifier.parse(identifier)
        with self._lock:
            row = self._conn.execute(
                "SELECT repo_base_url, created FROM package_rows WHERE package_id = ?", (pid.base,)
            ).fetchone()
            if row is not None:
                created = parse_datestamp(row[1]) if row[1] else None
                return [FetchPlan(row[0], pid.base, pid.fragment, created)]
            rows = self._conn.execute(
                "SELECT p.repo_base_url, c.package_id, c.xml_id, p.created "
                "FROM content_rows c JOIN package_rows p ON p.package_id = c.package_id "
                "WHERE c.content_id = ? "
                "ORDER BY p.created IS NULL, p.created DESC, c.seq ASC",
                (identifier.strip(),),
            ).fetchall()
        if not rows:
            raise NotFound(identifier)
        return [
            FetchPlan(repo, package_id, xml_id, parse_datestamp(created) if created else None)
            for repo, package_id, xml_id, created in rows
        ]

    def counts(self) -> Dict[str, int]:
        with self._lock:
            packages = self._conn.execute("SELECT COUNT(*) FROM package_rows").fetchone()[0]
            contents = self._conn.execute("SELECT COUNT(*) FROM content_rows").fetchone()[0]
        return {"package_rows": packages, "content_rows": contents}


class RemoteLocator:
    """Resolves through a locator's HTTP lookup endpoint."""

    def __init__(self, transport: Transport, locator_url: str):
        self.transport = transport
        self.locator_url = locator_url

    def resolve(self, identifier: str) -> List[FetchPlan]:
        try:
            response = self.transport.get(self.locator_url, [("id", identifier)])
        except TransportFailure as e:
            raise LocatorUnavailable(str(e)) from e
        if response.status == 404 and response.content_type.startswith("application/json"):
            raise NotFound(identifier)
        if response.status != 200:
            raise LocatorUnavailable(f"{self.locator_url} answered HTTP {response.status}")
        try:
            payload = json.loads(response.body)
            return [FetchPlan.from_dict(p) for p in payload["plans"]]
        except (ValueError, KeyError, TypeError) as e:
            raise LocatorUnavailable(f"unreadable lookup response: {e}") from e

