"""OAI-PMH Federator: one repository view over every repository in the Repository Index.

GetRecord goes through the Identifier Locator to the repository holding the AIP. Lists walk
the indexed repositories in registration order, one upstream page per federated page, so a
federated resumption cursor is just (repository position, upstream token). Prefixes other than
``DIDL`` are served by document transforms bound at container level and run by the DIP engine.
"""

import json
import logging
import threading
import time
from concurrent.futures import ThreadPoolExecutor
from datetime import datetime
from typing import List, Optional, Tuple

from .clock import parse_datestamp
from .client import HarvestError, OaiClient, ProtocolError
from .didl import DidlError, PackageIdentifier, parse_didl
from .dip import DipEngine, DipError, bind_container_service, insert_dims
from .locator import LocatorUnavailable, NotFound
from .oaipmh import (
    BadResumptionToken,
    CannotDisseminateFormat,
    IdDoesNotExist,
    IdentifyInfo,
    MetadataFormat,
    NoRecordsMatch,
    OaiRecord,
    RecordPage,
    SetInfo,
    SourceUnavailable,
)
from .repo_index import INDEX_PREFIX, RepoEntry, base_url_from_set_spec, repo_set_spec
from .repository import DIDL_FORMAT, DIDL_PREFIX, EPOCH
from .transforms import TransformRegistry, service_id

logger = logging.getLogger(__name__)


class Federator:
    def __init__(
        self,
        index_url: str,
        locator,
        client: OaiClient,
        engine: DipEngine,
        registry: TransformRegistry,
        namespace: str,
        base_url: str,
        index_ttl: float = 10.0,
        fanout: int = 4,
        admin_email: str = "admin@localhost",
    ):
        self.index_url = index_url
        self.locator = locator
        self.client = client
        self.engine = engine
        self.registry = registry
        self.namespace = namespace
        self.base_url = base_url
        self.index_ttl = index_ttl
        self.fanout = max(1, fanout)
        self.admin_email = admin_email
        self._cache: Optional[Tuple[float, List[str]]] = None
        self._lock = threading.Lock()

    # -- upstream ------------------------------------------------------------

    def repositories(self) -> List[str]:
        """Indexed repository baseURLs in registration order, cached for ``index_ttl`` seconds."""
        with self._lock:
            if self._cache is not None and time.monotonic() - self._cache[0] < self.index_ttl:
                return list(self._cache[1])
        try:
            run = self.client.harvest(self.index_url, INDEX_PREFIX)
            urls = [RepoEntry.from_xml(r.metadata).base_url for r in run]
        except HarvestError as e:
            raise SourceUnavailable(f"repository index unreachable: {e}") from e
        with self._lock:
            self._cache = (time.monotonic(), urls)
        logger.debug(f"Federator sees {len(urls)} repositories")
        return list(urls)

    def invalidate(self) -> None:
        with self._lock:
            self._cache = None

    def _resolve(self, identifier: str):
        try:
            return self.locator.resolve(identifier)[0]
        except NotFound:
            raise IdDoesNotExist(f"{identifier} is unknown to the identifier locator") from None
        except LocatorUnavailable as e:
            raise SourceUnavailable(f"identifier locator unreachable: {e}") from e

    # -- dissemination -------------------------------------------------------

    def _check_prefix(self, prefix: str) -> None:
        if prefix != DIDL_PREFIX and self.registry.by_prefix(prefix) is None:
            raise CannotDisseminateFormat(f"metadataPrefix {prefix!r} is not supported")

    def disseminate(self, didl: bytes, prefix: str) -> bytes:
        """Stored DIDL bytes as-is for ``DIDL``, else the output of the prefix's transform."""
        if prefix == DIDL_PREFIX:
            return didl
        transform = self.registry.by_prefix(prefix)
        if transform is None:
            raise CannotDisseminateFormat(f"metadataPrefix {prefix!r} is not supported")
        stored = parse_didl(didl)
        sid = service_id(self.namespace, transform.name)
        completed = bind_container_service(insert_dims(stored, self.engine.dip_table), sid, transform.name)
        target = PackageIdentifier(stored.package_id, stored.root_container.xml_id)
        return self.engine.apply_service(completed, target, sid, stored=stored).data

    # -- RecordSource --------------------------------------------------------

    def identify(self) -> IdentifyInfo:
        repos = self.repositories()
        earliest = EPOCH
        if repos:
            with ThreadPoolExecutor(max_workers=self.fanout) as pool:
                try:
                    answers = list(pool.map(self.client.identify, repos))
                except HarvestError as e:
                    raise SourceUnavailable(f"repository unreachable: {e}") from e
            stamps = [a["earliestDatestamp"] for a in answers if a.get("earliestDatestamp")]
            if stamps:
                earliest = min(parse_datestamp(s) for s in stamps)
        return IdentifyInfo(
            repository_name="OAI-PMH Federator",
            base_url=self.base_url,
            earliest_datestamp=earliest,
            admin_emails=(self.admin_email,),
        )

    def metadata_formats(self, identifier: Optional[str] = None) -> List[MetadataFormat]:
        if identifier is not None:
            self._resolve(identifier)
        formats = [DIDL_FORMAT]
        for transform in self.registry.document_transforms():
            formats.append(MetadataFormat(transform.prefix, transform.schema, transform.namespace))
        return formats

    def list_sets(self) -> List[SetInfo]:
        return [SetInfo(repo_set_spec(url), url) for url in self.repositories()]

    def get_record(self, identifier: str, prefix: str) -> OaiRecord:
        plan = self._resolve(identifier)
        try:
            record = self.client.get_record(plan.repo_base_url, plan.package_id, DIDL_PREFIX)
        except ProtocolError as e:
            if e.code == "idDoesNotExist":
                raise IdDoesNotExist(f"{plan.package_id} is not held by {plan.repo_base_url}") from None
            raise SourceUnavailable(f"{plan.repo_base_url}: {e}") from e
        except HarvestError as e:
            raise SourceUnavailable(f"{plan.repo_base_url} unreachable: {e}") from e
        self._check_prefix(prefix)
        try:
            metadata = self.disseminate(record.metadata, prefix)
        except (DipError, DidlError) as e:
            logger.warning(f"Cannot disseminate {plan.package_id} as {prefix}: {e}")
            raise CannotDisseminateFormat(f"{plan.package_id} cannot be disseminated as {prefix}") from e
        return OaiRecord(plan.package_id, record.datestamp, (repo_set_spec(plan.repo_base_url),), metadata)

    @staticmethod
    def _decode_cursor(cursor: Optional[str]) -> Tuple[int, Optional[str]]:
        if cursor is None:
            return 0, None
        try:
            position, token = json.loads(cursor)
            position = int(position)
        except (TypeError, ValueError):
            raise BadResumptionToken(f"bad federated cursor {cursor!r}") from None
        if position < 0 or not (token is None or isinstance(token, str)):
            raise BadResumptionToken(f"bad federated cursor {cursor!r}")
        return position, token

    def _page(self, repo: str, window, token: Optional[str], headers_only: bool):
        from_, until = window
        verb = "ListIdentifiers" if headers_only else "ListRecords"
        try:
            return self.client.list_page(repo, DIDL_PREFIX, from_, until, None, token, verb)
        except ProtocolError as e:
            if e.code == "badResumptionToken":
                raise BadResumptionToken(f"{repo} no longer accepts the resumption token") from None
            raise SourceUnavailable(f"{repo}: {e}") from e
        except HarvestError as e:
            raise SourceUnavailable(f"{repo} unreachable: {e}") from e

    def _first_nonempty(self, repos: List[str], start: int, window, headers_only: bool):
        """First repository at or after ``start`` with records, asking ``fanout`` at a time."""
        position = start
        while position < len(repos):
            batch = repos[position : position + self.fanout]
            with ThreadPoolExecutor(max_workers=len(batch)) as pool:
                pages = list(pool.map(lambda url: self._page(url, window, None, headers_only), batch))
            for offset, (records, token) in enumerate(pages):
                if records or token:
                    return position + offset, records, token
            position += len(batch)
        return len(repos), [], None

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
        self._check_prefix(prefix)
        repos = self.repositories()
        if set_spec is not None:
            url = base_url_from_set_spec(set_spec)
            if url is None or url not in repos:
                raise NoRecordsMatch(f"no repository set {set_spec!r}")
            repos = [url]

        position, token = self._decode_cursor(cursor)
        if position > len(repos) or (token is not None and position >= len(repos)):
            raise BadResumptionToken("federated cursor points past the repository list")
        window = (from_, until)
        if token is not None:
            records, next_token = self._page(repos[position], window, token, headers_only)
        else:
            position, records, next_token = self._first_nonempty(repos, position, window, headers_only)

        out = []
        repo = repos[position] if position < len(repos) else None
        for record in records:
            metadata = None
            if not headers_only:
                try:
                    metadata = self.disseminate(record.metadata, prefix)
                except (DipError, DidlError) as e:
                    logger.warning(f"Cannot disseminate {record.identifier} as {prefix}: {e}")
                    raise CannotDisseminateFormat(f"{record.identifier} cannot be disseminated as {prefix}") from e
            out.append(OaiRecord(record.identifier, record.datestamp, (repo_set_spec(repo),), metadata))

        if next_token is not None:
            next_cursor = json.dumps([position, next_token])
        elif position + 1 < len(repos):
            next_cursor = json.dumps([position + 1, None])
        else:
            next_cursor = None
        logger.debug(
            f"Federated page from {repo}: {len(out)} records", extra={"base_url": repo, "prefix": prefix}
        )
        return RecordPage(out, next_cursor)
