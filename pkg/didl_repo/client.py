"""OAI-PMH harvesting client and the transports it speaks through.

``HttpTransport`` goes over the network with requests. ``LocalTransport`` sends the same
requests straight into a Flask app, so harvesting between components works without sockets.
"""

import logging
from dataclasses import dataclass
from datetime import datetime
from typing import Iterator, List, Optional, Protocol, Sequence, Tuple
from urllib.parse import urlencode, urlsplit

import requests
from lxml import etree

from .clock import format_datestamp, parse_datestamp
from .oaipmh import OAI, OaiRecord, SetInfo

logger = logging.getLogger(__name__)

Params = Sequence[Tuple[str, str]]


class HarvestError(Exception):
    """Base class for harvesting errors."""


class TransportFailure(HarvestError):
    def __init__(self, message: str, status: Optional[int] = None):
        super().__init__(message)
        self.status = status


class ProtocolError(HarvestError):
    """An OAI-PMH error response, carrying the protocol error code."""

    def __init__(self, code: str, message: str = ""):
        super().__init__(f"{code}: {message}" if message else code)
        self.code = code
        self.message = message


@dataclass(frozen=True)
class TransportResponse:
    status: int
    body: bytes
    content_type: str = ""


class Transport(Protocol):
    def get(self, url: str, params: Params = ()) -> TransportResponse: ...


class HttpTransport:
    def __init__(self, timeout: float = 30.0, session: Optional[requests.Session] = None):
        self.timeout = timeout
        self.session = session or requests.Session()

    def get(self, url: str, params: Params = ()) -> TransportResponse:
        try:
            response = self.session.get(url, params=list(params), timeout=self.timeout)
        except requests.RequestException as e:
            raise TransportFailure(f"GET {url} failed: {e}") from e
        return TransportResponse(
            response.status_code, response.content, response.headers.get("Content-Type", "")
        )


class LocalTransport:
    """Routes requests to a Flask app by URL path, ignoring scheme and host."""

    def __init__(self, app):
        self.app = app

    def get(self, url: str, params: Params = ()) -> TransportResponse:
        path = urlsplit(url).path or "/"
        response = self.app.test_client().get(path, query_string=urlencode(list(params)))
        return TransportResponse(response.status_code, response.data, response.content_type or "")


def _record_from_xml(element: etree._Element) -> OaiRecord:
    header = element if element.tag == OAI + "header" else element.find(OAI + "header")
    metadata = element.find(OAI + "metadata")
    payload = None
    if metadata is not None and len(metadata):
        payload = etree.tostring(metadata[0], with_tail=False)
    return OaiRecord(
        identifier=header.findtext(OAI + "identifier").strip(),
        datestamp=parse_datestamp(header.findtext(OAI + "datestamp")),
        sets=tuple(s.text.strip() for s in header.findall(OAI + "setSpec")),
        metadata=payload,
    )


class OaiClient:
    def __init__(self, transport: Transport):
        self.transport = transport

    def request(self, base_url: str, params: Params) -> etree._Element:
        """Issue one request; OAI error responses raise ProtocolError."""
        response = self.transport.get(base_url, params)
        if response.status != 200:
            raise TransportFailure(
                f"{base_url} answered HTTP {response.status}", status=response.status
            )
        try:
            root = etree.fromstring(response.body)
        except etree.XMLSyntaxError as e:
            raise TransportFailure(f"{base_url} returned malformed XML: {e}") from e
        error = root.find(OAI + "error")
        if error is not None:
            raise ProtocolError(error.get("code", "unknown"), (error.text or "").strip())
        return root

    def identify(self, base_url: str) -> dict:
        ident = self.request(base_url, [("verb", "Identify")]).find(OAI + "Identify")
        return {child.tag[len(OAI):]: (child.text or "").strip() for child in ident if child.tag != OAI + "description"}

    def list_metadata_formats(self, base_url: str, identifier: Optional[str] = None) -> List[str]:
        params = [("verb", "ListMetadataFormats")]
        if identifier:
            params.append(("identifier", identifier))
        root = self.request(base_url, params)
        return [p.text for p in root.iter(OAI + "metadataPrefix")]

    def list_sets(self, base_url: str) -> List[SetInfo]:
        root = self.request(base_url, [("verb", "ListSets")])
        return [
            SetInfo(s.findtext(OAI + "setSpec"), s.findtext(OAI + "setName"))
            for s in root.iter(OAI + "set")
        ]

    def get_record(self, base_url: str, identifier: str, prefix: str) -> OaiRecord:
        root = self.request(
            base_url, [("verb", "GetRecord"), ("identifier", identifier), ("metadataPrefix", prefix)]
        )
        return _record_from_xml(root.find(f"{OAI}GetRecord/{OAI}record"))

    def list_page(
        self,
        base_url: str,
        prefix: Optional[str] = None,
        from_: Optional[datetime] = None,
        until: Optional[datetime] = None,
        set_spec: Optional[str] = None,
        token: Optional[str] = None,
        verb: str = "ListRecords",
    ) -> Tuple[List[OaiRecord], Optional[str]]:
        """One list page and the next resumption token (None when the list is complete).

        An empty window (noRecordsMatch) comes back as an empty page.
        """
        params = [("verb", verb)]
        if token is not None:
            params.append(("resumptionToken", token))
        else:
            params.append(("metadataPrefix", prefix))
            if from_ is not None:
                params.append(("from", format_datestamp(from_)))
            if until is not None:
                params.append(("until", format_datestamp(until)))
            if set_spec is not None:
                params.append(("set", set_spec))
        try:
            root = self.request(base_url, params)
        except ProtocolError as e:
            if e.code == "noRecordsMatch":
                return [], None
            raise
        listing = root.find(OAI + verb)
        tag = OAI + ("header" if verb == "ListIdentifiers" else "record")
        records = [_record_from_xml(el) for el in listing.findall(tag)]
        next_token = (listing.findtext(OAI + "resumptionToken") or "").strip() or None
        return records, next_token

    def harvest(
        self,
        base_url: str,
        prefix: str,
        from_: Optional[datetime] = None,
        until: Optional[datetime] = None,
        set_spec: Optional[str] = None,
        verb: str = "ListRecords",
    ) -> "HarvestRun":
        return HarvestRun(self, base_url, prefix, from_, until, set_spec, verb)


class HarvestRun:
    """Iterates a whole list, following resumption tokens, and tracks the newest datestamp."""

    def __init__(self, client: OaiClient, base_url, prefix, from_, until, set_spec, verb):
        self.client = client
        self.base_url = base_url
        self.prefix = prefix
        self.from_ = from_
        self.until = until
        self.set_spec = set_spec
        self.verb = verb
        self.max_datestamp: Optional[datetime] = None
        self.count = 0
        self.pages = 0

    def __iter__(self) -> Iterator[OaiRecord]:
        token = None
        while True:
            records, token = self.client.list_page(
                self.base_url, self.prefix, self.from_, self.until, self.set_spec, token, self.verb
            )
            self.pages += 1
            for record in records:
                self.count += 1
                if self.max_datestamp is None or record.datestamp > self.max_datestamp:
                    self.max_datestamp = record.datestamp
                yield record
            if token is None:
                break
        logger.info(
            f"Harvested {self.count} records from {self.base_url} in {self.pages} pages",
            extra={"base_url": self.base_url, "records": self.count},
        )
