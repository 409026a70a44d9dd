"""OAI-PMH v2 protocol engine shared by every endpoint in the environment.

The engine validates requests, renders responses and drives resumption; everything about
records comes from a ``RecordSource``. Sources report protocol failures by raising
``OAIPMHError`` subclasses, which the engine renders in-band as ``<error code=...>``.
"""

import base64
import hashlib
import json
import logging
import re
from dataclasses import dataclass, field
from datetime import datetime, timedelta
from typing import Iterable, List, Optional, Protocol, Sequence, Tuple

from lxml import etree

from .clock import DAY_FORMAT, Clock, SystemClock, format_datestamp, parse_datestamp

logger = logging.getLogger(__name__)

OAI_NS = "http://www.openarchives.org/OAI/2.0/"
OAI = "{%s}" % OAI_NS
XSI_NS = "http://www.w3.org/2001/XMLSchema-instance"
OAI_SCHEMA = "http://www.openarchives.org/OAI/2.0/OAI-PMH.xsd"
GRANULARITY = "YYYY-MM-DDThh:mm:ssZ"
DEFAULT_PAGE_SIZE = 100
DATE_SHAPE = re.compile(r"[0-9]{4}-[0-9]{2}-[0-9]{2}(T[0-9]{2}:[0-9]{2}:[0-9]{2}Z)?")

# verb -> (required, optional); resumptionToken is exclusive wherever it is allowed
VERBS = {
    "Identify": (frozenset(), frozenset()),
    "ListMetadataFormats": (frozenset(), frozenset({"identifier"})),
    "ListSets": (frozenset(), frozenset()),
    "GetRecord": (frozenset({"identifier", "metadataPrefix"}), frozenset()),
    "ListIdentifiers": (frozenset({"metadataPrefix"}), frozenset({"from", "until", "set"})),
    "ListRecords": (frozenset({"metadataPrefix"}), frozenset({"from", "until", "set"})),
}
RESUMABLE = frozenset({"ListSets", "ListIdentifiers", "ListRecords"})


class OAIPMHError(Exception):
    """A protocol error rendered in the response body."""

    code = "badArgument"

    def __init__(self, message: str = ""):
        super().__init__(message or self.code)
        self.message = message or self.code


class BadVerb(OAIPMHError):
    code = "badVerb"


class BadArgument(OAIPMHError):
    code = "badArgument"


class IdDoesNotExist(OAIPMHError):
    code = "idDoesNotExist"


class CannotDisseminateFormat(OAIPMHError):
    code = "cannotDisseminateFormat"


class NoRecordsMatch(OAIPMHError):
    code = "noRecordsMatch"


class BadResumptionToken(OAIPMHError):
    code = "badResumptionToken"


class NoSetHierarchy(OAIPMHError):
    code = "noSetHierarchy"


class NoMetadataFormats(OAIPMHError):
    code = "noMetadataFormats"


ERRORS_BY_CODE = {
    cls.code: cls
    for cls in (
        BadVerb,
        BadArgument,
        IdDoesNotExist,
        CannotDisseminateFormat,
        NoRecordsMatch,
        BadResumptionToken,
        NoSetHierarchy,
        NoMetadataFormats,
    )
}


class SourceUnavailable(Exception):
    """A dependency of the record source is unreachable; served as HTTP 503."""

    def __init__(self, message: str, retry_after: int = 30):
        super().__init__(message)
        self.retry_after = retry_after


@dataclass(frozen=True)
class IdentifyInfo:
    repository_name: str
    base_url: str
    earliest_datestamp: datetime
    admin_emails: Tuple[str, ...] = ("admin@localhost",)
    description: Optional[bytes] = None


@dataclass(frozen=True)
class MetadataFormat:
    prefix: str
    schema: str
    namespace: str


@dataclass(frozen=True)
class SetInfo:
    spec: str
    name: str


@dataclass(frozen=True)
class OaiRecord:
    identifier: str
    datestamp: datetime
    sets: Tuple[str, ...] = ()
    metadata: Optional[bytes] = None


@dataclass
class RecordPage:
    records: List[OaiRecord]
    next_cursor: Optional[str] = None
    complete_size: Optional[int] = None


class RecordSource(Protocol):
    base_url: str

    def identify(self) -> IdentifyInfo: ...

    def metadata_formats(self, identifier: Optional[str] = None) -> List[MetadataFormat]: ...

    def list_sets(self) -> List[SetInfo]: ...

    def get_record(self, identifier: str, prefix: str) -> OaiRecord: ...

    def list_records(
        self,
        prefix: str,
        from_: Optional[datetime],
        until: Optional[datetime],
        set_spec: Optional[str],
        cursor: Optional[str],
        page_size: int,
        headers_only: bool = False,
    ) -> RecordPage: ...


@dataclass
class OaiRequest:
    verb: str
    identifier: Optional[str] = None
    metadata_prefix: Optional[str] = None
    from_: Optional[datetime] = None
    until: Optional[datetime] = None
    set_spec: Optional[str] = None
    resumption_token: Optional[str] = None
    arguments: dict = field(default_factory=dict)


def parse_date(text: str, end_of_day: bool = False) -> Tuple[datetime, str]:
    """Parse a day- or seconds-granularity UTC date; returns the instant and its granularity.

    A day-granularity ``until`` covers the whole day.
    """
    if not DATE_SHAPE.fullmatch(text):
        raise BadArgument(f"illegal date {text!r}")
    try:
        if len(text) == 10:
            day = datetime.strptime(text, DAY_FORMAT)
            value = parse_datestamp(day.strftime("%Y-%m-%dT00:00:00Z"))
            if end_of_day:
                value = value + timedelta(days=1, seconds=-1)
            return value, "day"
        return parse_datestamp(text), "seconds"
    except ValueError:
        raise BadArgument(f"illegal date {text!r}") from None


def parse_request(pairs: Iterable[Tuple[str, str]]) -> OaiRequest:
    """Validate raw query pairs into an OaiRequest, raising BadVerb or BadArgument."""
    args: dict = {}
    for key, value in pairs:
        if key in args:
            if key == "verb":
                raise BadVerb("verb argument repeated")
            raise BadArgument(f"argument {key} repeated")
        args[key] = value

    verb = args.pop("verb", None)
    if verb is None:
        raise BadVerb("missing verb")
    if verb not in VERBS:
        raise BadVerb(f"illegal verb {verb!r}")

    required, optional = VERBS[verb]
    if "resumptionToken" in args:
        if verb not in RESUMABLE:
            raise BadArgument(f"{verb} does not accept resumptionToken")
        if len(args) != 1:
            raise BadArgument("resumptionToken is an exclusive argument")
        return OaiRequest(verb=verb, resumption_token=args["resumptionToken"], arguments=dict(args))

    unknown = set(args) - required - optional
    if unknown:
        raise BadArgument(f"illegal arguments for {verb}: {', '.join(sorted(unknown))}")
    missing = required - set(args)
    if missing:
        raise BadArgument(f"missing arguments for {verb}: {', '.join(sorted(missing))}")

    req = OaiRequest(
        verb=verb,
        identifier=args.get("identifier"),
        metadata_prefix=args.get("metadataPrefix"),
        set_spec=args.get("set"),
        arguments=dict(args),
    )
    granularities = set()
    if "from" in args:
        req.from_, g = parse_date(args["from"])
        granularities.add(g)
    if "until" in args:
        req.until, g = parse_date(args["until"], end_of_day=True)
        granularities.add(g)
    if len(granularities) > 1:
        raise BadArgument("from and until must share one granularity")
    if req.from_ and req.until and req.from_ > req.until:
        raise BadArgument("from is later than until")
    return req


# ---------------------------------------------------------------------------
# Resumption tokens: url-safe base64 of a small JSON object
# ---------------------------------------------------------------------------


def _args_hash(verb: str, prefix, from_text, until_text, set_spec) -> str:
    raw = "|".join(str(v or "") for v in (verb, prefix, from_text, until_text, set_spec))
    return hashlib.sha1(raw.encode("utf-8")).hexdigest()[:12]


def encode_token(payload: dict) -> str:
    raw = json.dumps(payload, separators=(",", ":"), sort_keys=True).encode("utf-8")
    return base64.urlsafe_b64encode(raw).decode("ascii").rstrip("=")


def decode_token(token: str) -> dict:
    try:
        padded = token + "=" * (-len(token) % 4)
        payload = json.loads(base64.urlsafe_b64decode(padded.encode("ascii")))
    except (ValueError, UnicodeError):
        raise BadResumptionToken(f"unreadable resumptionToken {token!r}") from None
    if not isinstance(payload, dict) or "c" not in payload or "h" not in payload:
        raise BadResumptionToken(f"malformed resumptionToken {token!r}")
    return payload


# ---------------------------------------------------------------------------
# Response rendering
# ---------------------------------------------------------------------------


def _envelope(base_url: str, req: Optional[OaiRequest], clock: Clock, echo: bool):
    root = etree.Element(OAI + "OAI-PMH", nsmap={None: OAI_NS, "xsi": XSI_NS})
    root.set("{%s}schemaLocation" % XSI_NS, f"{OAI_NS} {OAI_SCHEMA}")
    etree.SubElement(root, OAI + "responseDate").text = format_datestamp(clock.now())
    request = etree.SubElement(root, OAI + "request")
    request.text = base_url
    if echo and req is not None:
        request.set("verb", req.verb)
        for key, value in req.arguments.items():
            request.set(key, value)
    return root


def _header(parent, record: OaiRecord) -> None:
    header = etree.SubElement(parent, OAI + "header")
    etree.SubElement(header, OAI + "identifier").text = record.identifier
    etree.SubElement(header, OAI + "datestamp").text = format_datestamp(record.datestamp)
    for spec in record.sets:
        etree.SubElement(header, OAI + "setSpec").text = spec


def _record(parent, record: OaiRecord) -> None:
    element = etree.SubElement(parent, OAI + "record")
    _header(element, record)
    if record.metadata is not None:
        metadata = etree.SubElement(element, OAI + "metadata")
        metadata.append(etree.fromstring(record.metadata))


def _tostring(root) -> bytes:
    return etree.tostring(root, xml_declaration=True, encoding="UTF-8")


def error_response(
    base_url: str, error: OAIPMHError, req: Optional[OaiRequest] = None, clock: Optional[Clock] = None
) -> bytes:
    echo = not isinstance(error, (BadVerb, BadArgument))
    root = _envelope(base_url, req, clock or SystemClock(), echo)
    etree.SubElement(root, OAI + "error", code=error.code).text = error.message
    return _tostring(root)


class Engine:
    """Answers OAI-PMH requests against one record source."""

    def __init__(self, source: RecordSource, page_size: int = DEFAULT_PAGE_SIZE, clock: Optional[Clock] = None):
        self.source = source
        self.page_size = page_size
        self.clock = clock or SystemClock()

    def handle(self, pairs: Iterable[Tuple[str, str]]) -> bytes:
        """Parse and answer one request; protocol failures come back as error responses."""
        base_url = self.source.base_url
        pairs = list(pairs)
        try:
            req = parse_request(pairs)
        except OAIPMHError as e:
            logger.info(f"Rejected OAI-PMH request {pairs}: {e.code}")
            return error_response(base_url, e, None, self.clock)
        return self.dispatch(req)

    def dispatch(self, req: OaiRequest) -> bytes:
        base_url = self.source.base_url
        try:
            root = _envelope(base_url, req, self.clock, echo=True)
            handler = getattr(self, "_" + req.verb)
            handler(root, req)
        except OAIPMHError as e:
            logger.debug(f"{req.verb} answered with {e.code}: {e.message}")
            return error_response(base_url, e, req, self.clock)
        return _tostring(root)

    def _Identify(self, root, req: OaiRequest) -> None:
        info = self.source.identify()
        ident = etree.SubElement(root, OAI + "Identify")
        etree.SubElement(ident, OAI + "repositoryName").text = info.repository_name
        etree.SubElement(ident, OAI + "baseURL").text = info.base_url
        etree.SubElement(ident, OAI + "protocolVersion").text = "2.0"
        for email in info.admin_emails:
            etree.SubElement(ident, OAI + "adminEmail").text = email
        etree.SubElement(ident, OAI + "earliestDatestamp").text = format_datestamp(info.earliest_datestamp)
        etree.SubElement(ident, OAI + "deletedRecord").text = "no"
        etree.SubElement(ident, OAI + "granularity").text = GRANULARITY
        if info.description is not None:
            desc = etree.SubElement(ident, OAI + "description")
            desc.append(etree.fromstring(info.description))

    def _ListMetadataFormats(self, root, req: OaiRequest) -> None:
        formats = self.source.metadata_formats(req.identifier)
        if not formats:
            raise NoMetadataFormats()
        listing = etree.SubElement(root, OAI + "ListMetadataFormats")
        for fmt in formats:
            element = etree.SubElement(listing, OAI + "metadataFormat")
            etree.SubElement(element, OAI + "metadataPrefix").text = fmt.prefix
            etree.SubElement(element, OAI + "schema").text = fmt.schema
            etree.SubElement(element, OAI + "metadataNamespace").text = fmt.namespace

    def _ListSets(self, root, req: OaiRequest) -> None:
        if req.resumption_token is not None:
            raise BadResumptionToken("ListSets is never paged")
        sets = self.source.list_sets()
        listing = etree.SubElement(root, OAI + "ListSets")
        for s in sets:
            element = etree.SubElement(listing, OAI + "set")
            etree.SubElement(element, OAI + "setSpec").text = s.spec
            etree.SubElement(element, OAI + "setName").text = s.name

    def _GetRecord(self, root, req: OaiRequest) -> None:
        record = self.source.get_record(req.identifier, req.metadata_prefix)
        _record(etree.SubElement(root, OAI + "GetRecord"), record)

    def _ListIdentifiers(self, root, req: OaiRequest) -> None:
        self._list(root, req, headers_only=True)

    def _ListRecords(self, root, req: OaiRequest) -> None:
        self._list(root, req, headers_only=False)

    def _list(self, root, req: OaiRequest, headers_only: bool) -> None:
        offset = 0
        cursor = None
        page_size = self.page_size
        if req.resumption_token is not None:
            state = decode_token(req.resumption_token)
            try:
                prefix, from_text, until_text, set_spec = state["m"], state.get("f"), state.get("u"), state.get("s")
                expected = _args_hash(req.verb, prefix, from_text, until_text, set_spec)
                if state["h"] != expected:
                    raise BadResumptionToken("resumptionToken does not belong to this request")
                cursor, offset, page_size = state["c"], int(state.get("o", 0)), int(state.get("n", page_size))
                if page_size < 1:
                    raise BadResumptionToken(f"resumptionToken page size {page_size} is not positive")
                from_ = parse_date(from_text)[0] if from_text else None
                until = parse_date(until_text, end_of_day=True)[0] if until_text else None
            except (KeyError, TypeError, ValueError, BadArgument):
                raise BadResumptionToken(f"malformed resumptionToken {req.resumption_token!r}") from None
        else:
            prefix, set_spec = req.metadata_prefix, req.set_spec
            from_text, until_text = req.arguments.get("from"), req.arguments.get("until")
            from_, until = req.from_, req.until

        if prefix not in {f.prefix for f in self.source.metadata_formats(None)}:
            raise CannotDisseminateFormat(f"metadataPrefix {prefix!r} is not supported")

        page = self.source.list_records(prefix, from_, until, set_spec, cursor, page_size, headers_only)
        if not page.records and req.resumption_token is None:
            raise NoRecordsMatch("no records in the requested window")

        listing = etree.SubElement(root, OAI + req.verb)
        for record in page.records:
            if headers_only:
                _header(listing, record)
            else:
                _record(listing, record)

        if req.resumption_token is None and page.next_cursor is None:
            return
        token = etree.SubElement(listing, OAI + "resumptionToken", cursor=str(offset))
        if page.complete_size is not None:
            token.set("completeListSize", str(page.complete_size))
        if page.next_cursor is not None:
            token.text = encode_token(
                {
                    "c": page.next_cursor,
                    "m": prefix,
                    "f": from_text,
                    "u": until_text,
                    "s": set_spec,
                    "n": page_size,
                    "o": offset + len(page.records),
                    "h": _args_hash(req.verb, prefix, from_text, until_text, set_spec),
                }
            )


def dispatch(
    source: RecordSource,
    req: OaiRequest,
    page_size: int = DEFAULT_PAGE_SIZE,
    clock: Optional[Clock] = None,
) -> bytes:
    return Engine(source, page_size, clock).dispatch(req)


def page_slice(total: int, cursor: Optional[str], page_size: int) -> Tuple[int, int, Optional[str]]:
    """Offset paging helper for sources backed by an ordered list: (start, stop, next cursor)."""
    try:
        start = int(cursor) if cursor is not None else 0
    except ValueError:
        raise BadResumptionToken(f"bad cursor {cursor!r}") from None
    if start < 0 or start > total:
        raise BadResumptionToken(f"cursor {start} out of range")
    stop = min(start + page_size, total)
    return start, stop, (str(stop) if stop < total else None)


def require_format(formats: Sequence[MetadataFormat], prefix: str) -> MetadataFormat:
    for fmt in formats:
        if fmt.prefix == prefix:
            return fmt
    raise CannotDisseminateFormat(f"metadataPrefix {prefix!r} is not supported")
