"""Autonomous OAI-PMH repository over one XMLtape: DIDL only, no sets, seconds granularity."""

import logging
from datetime import datetime, timezone
from typing import List, Optional

from .didl import DIDL_NS
from .oaipmh import (
    BadArgument,
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
from .tape import BadRange, UnknownPackageId, XMLTape

logger = logging.getLogger(__name__)

DIDL_PREFIX = "DIDL"
DIDL_FORMAT = MetadataFormat(
    prefix=DIDL_PREFIX,
    schema="http://standards.iso.org/ittf/PubliclyAvailableStandards/MPEG-21_schema_files/did/didl.xsd",
    namespace=DIDL_NS,
)
EPOCH = datetime(1970, 1, 1, tzinfo=timezone.utc)


class TapeRepository:
    def __init__(
        self,
        tape: XMLTape,
        base_url: str,
        repository_name: Optional[str] = None,
        admin_email: str = "admin@localhost",
    ):
        self.tape = tape
        self.base_url = base_url
        self.repository_name = repository_name or f"XMLtape {tape.name}"
        self.admin_email = admin_email

    def identify(self) -> IdentifyInfo:
        entries = self.tape.entries()
        return IdentifyInfo(
            repository_name=self.repository_name,
            base_url=self.base_url,
            earliest_datestamp=entries[0].datestamp if entries else EPOCH,
            admin_emails=(self.admin_email,),
        )

    def metadata_formats(self, identifier: Optional[str] = None) -> List[MetadataFormat]:
        if identifier is not None and identifier not in self.tape:
            raise IdDoesNotExist(identifier)
        return [DIDL_FORMAT]

    def list_sets(self) -> List[SetInfo]:
        raise NoSetHierarchy("autonomous repositories have no sets")

    def get_record(self, identifier: str, prefix: str) -> OaiRecord:
        try:
            record = self.tape.get(identifier)
        except UnknownPackageId:
            raise IdDoesNotExist(identifier) from None
        if prefix != DIDL_PREFIX:
            raise CannotDisseminateFormat(f"{prefix!r} is not disseminated by {self.base_url}")
        return OaiRecord(record.package_id, record.datestamp, (), record.didl_bytes)

    def list_records(
        self,
        prefix: str,
        from_: Optional[datetime],
        until: Optional[datetime],
        set_spec: Optional[str],
        cursor: Optional[str],
        page_size: int,
        headers_only: bool = False,
    ) -> RecordPage:
        if set_spec is not None:
            raise NoSetHierarchy("autonomous repositories have no sets")
        if prefix != DIDL_PREFIX:
            raise CannotDisseminateFormat(prefix)
        try:
            entries = self.tape.entries(from_, until)
        except BadRange as e:
            raise BadArgument(str(e)) from None
        start, stop, next_cursor = page_slice(len(entries), cursor, page_size)
        records = []
        for entry in entries[start:stop]:
            metadata = None if headers_only else self.tape.get(entry.package_id).didl_bytes
            records.append(OaiRecord(entry.package_id, entry.datestamp, (), metadata))
        return RecordPage(records, next_cursor, len(entries))
