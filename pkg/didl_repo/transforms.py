"""Registered transforms: the code that services point at.

A DIP Table entry names a transform; the DIM inserter writes that name into the method
Resource and the engine looks it up here. Element transforms receive the addressed entity,
document transforms the whole stored document. Document transforms that declare a metadata
prefix are also what the Federator serves for that prefix, so they must produce XML.

Every transform is a pure function ``(target, context) -> Dissemination``.
"""

import dataclasses
import logging
from dataclasses import dataclass
from typing import Callable, Dict, Iterable, Iterator, List, Optional, Union

from lxml import etree

from .clock import format_datestamp
from .didl import (
    Component,
    Container,
    DidlDocument,
    Entity,
    Item,
    entity_element,
    extract_identifiers,
    serialize_didl,
)
from .dip import Dissemination, TransformContext, TransformFailure, insert_dims, method_bindings
from .locator import IDENTIFIERS_NS
from .repository import DIDL_FORMAT

logger = logging.getLogger(__name__)

MARC_NS = "http://www.loc.gov/MARC21/slim"
MODS_NS = "http://www.loc.gov/mods/v3"
METS_NS = "http://www.loc.gov/METS/"
XLINK_NS = "http://www.w3.org/1999/xlink"
XHTML_NS = "http://www.w3.org/1999/xhtml"
OAI_DC_NS = "http://www.openarchives.org/OAI/2.0/oai_dc/"
DC_NS = "http://purl.org/dc/elements/1.1/"

XML_MIME = "application/xml"

TransformFunc = Callable[[Union[Entity, DidlDocument], TransformContext], Dissemination]


@dataclass
class Transform:
    name: str
    func: TransformFunc
    scope: str = "element"  # element | document
    mime_type: str = XML_MIME
    prefix: Optional[str] = None
    description: str = ""
    enabled: bool = True
    schema: str = ""
    namespace: str = ""


class TransformRegistry:
    def __init__(self, transforms: Iterable[Transform] = (), disabled: Iterable[str] = ()):
        self._transforms: Dict[str, Transform] = {}
        for transform in transforms:
            self.register(transform)
        for name in disabled:
            self.disable(name)

    def register(self, transform: Transform) -> None:
        if transform.name in self._transforms:
            raise ValueError(f"transform {transform.name!r} is already registered")
        self._transforms[transform.name] = transform

    def disable(self, name: str) -> None:
        if name not in self._transforms:
            raise ValueError(f"unknown transform: {name}")
        self._transforms[name].enabled = False

    def enable(self, name: str) -> None:
        if name not in self._transforms:
            raise ValueError(f"unknown transform: {name}")
        self._transforms[name].enabled = True

    def get(self, name: str) -> Optional[Transform]:
        """Enabled transform by name; disabled ones are invisible."""
        transform = self._transforms.get(name)
        return transform if transform is not None and transform.enabled else None

    def by_prefix(self, prefix: str) -> Optional[Transform]:
        for transform in self._transforms.values():
            if transform.enabled and transform.scope == "document" and transform.prefix == prefix:
                return transform
        return None

    def document_transforms(self) -> List[Transform]:
        return [t for t in self._transforms.values() if t.enabled and t.scope == "document" and t.prefix]

    def all(self) -> List[Transform]:
        return list(self._transforms.values())

    def __contains__(self, name: str) -> bool:
        return self.get(name) is not None


def service_id(namespace: str, transform_name: str) -> str:
    return f"{namespace.rstrip('/')}/service/{transform_name}"


# ---------------------------------------------------------------------------
# Helpers
# ---------------------------------------------------------------------------


def _components(entity: Entity) -> Iterator[Component]:
    if isinstance(entity, Component):
        yield entity
    elif isinstance(entity, Item):
        for sub in entity.sub_items:
            yield from _components(sub)
        yield from entity.components
    else:
        for item in entity.items:
            yield from _components(item)


def _subtree(entity: Entity) -> Iterator[Entity]:
    yield entity
    if isinstance(entity, Item):
        for sub in entity.sub_items:
            yield from _subtree(sub)
        yield from entity.components
    elif isinstance(entity, Container):
        for item in entity.items:
            yield from _subtree(item)


def _xml_bytes(root: etree._Element) -> bytes:
    return etree.tostring(root, xml_declaration=True, encoding="UTF-8")


def _is_xml_mime(mime_type: str) -> bool:
    subtype = mime_type.split(";")[0].strip().split("/")[-1]
    return subtype == "xml" or subtype.endswith("+xml")


def _marc_records(entity: Entity, context: TransformContext) -> Iterator[etree._Element]:
    for component in _components(entity):
        for resource in component.resources:
            if not (resource.payload.is_xml or _is_xml_mime(resource.mime_type)):
                continue
            try:
                root = etree.fromstring(context.resource_bytes(resource))
            except etree.XMLSyntaxError:
                continue
            if root.tag == "{%s}record" % MARC_NS:
                yield root
            else:
                yield from root.iter("{%s}record" % MARC_NS)


def _subfields(record: etree._Element, tags: Iterable[str], codes: str) -> List[str]:
    values = []
    for datafield in record.iter("{%s}datafield" % MARC_NS):
        if datafield.get("tag") not in tags:
            continue
        for subfield in datafield.iter("{%s}subfield" % MARC_NS):
            if subfield.get("code") in codes and subfield.text:
                values.append(subfield.text.strip().rstrip(" /:;,.").strip())
    return values


def _controlfield(record: etree._Element, tag: str) -> Optional[str]:
    for cf in record.iter("{%s}controlfield" % MARC_NS):
        if cf.get("tag") == tag:
            return cf.text or ""
    return None


# ---------------------------------------------------------------------------
# Builtins
# ---------------------------------------------------------------------------


def raw_bytes(target: Entity, context: TransformContext) -> Dissemination:
    """The addressed element as stored.

    Element transform. A Component yields its first Resource's bytes under the Resource's
    MIME type, dereferencing ARC pointers; an Item yields its DIDL fragment; the root Container
    yields the whole stored document. Fails on a Component without Resources.
    """
    if isinstance(target, Component):
        if not target.resources:
            raise TransformFailure(f"component {target.xml_id} holds no resource")
        resource = target.resources[0]
        return Dissemination(context.resource_bytes(resource), resource.mime_type)
    if isinstance(target, Container):
        return Dissemination(serialize_didl(context.stored), XML_MIME)
    return Dissemination(_xml_bytes(entity_element(target)), XML_MIME)


def identifiers_only(doc: DidlDocument, context: TransformContext) -> Dissemination:
    """Package Identifier, creation time and every Content Identifier with its XML ID.

    Document transform, ``application/xml``; the listing the Identifier Locator loads.
    """
    root = etree.Element("{%s}identifiers" % IDENTIFIERS_NS, nsmap={None: IDENTIFIERS_NS})
    root.set("package", doc.package_id)
    root.set("created", format_datestamp(doc.created))
    for entry in extract_identifiers(doc):
        etree.SubElement(root, "{%s}content" % IDENTIFIERS_NS, id=entry.content_id, xmlId=entry.xml_id)
    return Dissemination(_xml_bytes(root), XML_MIME)


def didl_completed(doc: DidlDocument, context: TransformContext) -> Dissemination:
    """Document transform: the Completed form of the stored document."""
    return Dissemination(serialize_didl(insert_dims(doc, context.dip_table)), XML_MIME)


def format_crosswalk(doc: DidlDocument, context: TransformContext) -> Dissemination:
    """Structural METS view: one file per Component Resource and a div tree mirroring the Items.

    Document transform, ``application/xml``. Descriptive metadata is not mapped.
    """
    m = "{%s}" % METS_NS
    root = etree.Element(m + "mets", nsmap={"mets": METS_NS, "xlink": XLINK_NS})
    root.set("OBJID", doc.package_id)
    header = etree.SubElement(root, m + "metsHdr", CREATEDATE=format_datestamp(doc.created))
    etree.SubElement(header, m + "agent", ROLE="CREATOR").text = doc.package_id
    group = etree.SubElement(etree.SubElement(root, m + "fileSec"), m + "fileGrp")
    for component in _components(doc.root_container):
        for n, resource in enumerate(component.resources):
            file_id = f"{component.xml_id}-{n}"
            f = etree.SubElement(group, m + "file", ID=file_id, MIMETYPE=resource.mime_type)
            href = resource.payload.ref or f"{doc.package_id}#{component.xml_id}"
            etree.SubElement(f, m + "FLocat", LOCTYPE="URL").set("{%s}href" % XLINK_NS, href)

    def div(parent: etree._Element, entity: Entity) -> None:
        d = etree.SubElement(parent, m + "div", TYPE=entity.level)
        if entity.identifiers:
            d.set("LABEL", entity.identifiers[0])
        if isinstance(entity, Component):
            for n in range(len(entity.resources)):
                etree.SubElement(d, m + "fptr", FILEID=f"{entity.xml_id}-{n}")
            return
        children = entity.items if isinstance(entity, Container) else entity.sub_items + entity.components
        for child in children:
            div(d, child)

    div(etree.SubElement(root, m + "structMap"), doc.root_container)
    return Dissemination(_xml_bytes(root), XML_MIME)


def record_to_dc(doc: DidlDocument, context: TransformContext) -> Dissemination:
    """Document transform: minimal unqualified Dublin Core for ``oai_dc`` harvesters."""
    root = etree.Element("{%s}dc" % OAI_DC_NS, nsmap={"oai_dc": OAI_DC_NS, "dc": DC_NS})

    def dc(name: str, value: str) -> None:
        etree.SubElement(root, "{%s}%s" % (DC_NS, name)).text = value

    for record in _marc_records(doc.root_container, context):
        for title in _subfields(record, ("245",), "a")[:1]:
            dc("title", title)
        for creator in _subfields(record, ("100", "110", "700"), "a"):
            dc("creator", creator)
        break
    dc("identifier", doc.package_id)
    for entry in extract_identifiers(doc):
        dc("identifier", entry.content_id)
    dc("date", format_datestamp(doc.created))
    for mime in dict.fromkeys(r.mime_type for c in _components(doc.root_container) for r in c.resources):
        dc("format", mime)
    return Dissemination(_xml_bytes(root), XML_MIME)


def marcxml_to_mods(target: Entity, context: TransformContext) -> Dissemination:
    """Element transform: MODS for the first MARCXML record held by the element.

    Output ``application/mods+xml``. Fails when the element holds no MARCXML record.
    """
    record = next(_marc_records(target, context), None)
    if record is None:
        raise TransformFailure(f"no MARCXML record under {target.xml_id}")

    m = "{%s}" % MODS_NS
    mods = etree.Element(m + "mods", nsmap={None: MODS_NS}, version="3.0")
    title = _subfields(record, ("245",), "a")
    if title:
        info = etree.SubElement(mods, m + "titleInfo")
        etree.SubElement(info, m + "title").text = title[0]
        for sub in _subfields(record, ("245",), "b")[:1]:
            etree.SubElement(info, m + "subTitle").text = sub
    for tags, kind in ((("100", "700"), "personal"), (("110", "710"), "corporate")):
        for value in _subfields(record, tags, "a"):
            name = etree.SubElement(mods, m + "name", type=kind)
            etree.SubElement(name, m + "namePart").text = value
    places = _subfields(record, ("260", "264"), "a")
    publishers = _subfields(record, ("260", "264"), "b")
    dates = _subfields(record, ("260", "264"), "c")
    if places or publishers or dates:
        origin = etree.SubElement(mods, m + "originInfo")
        for value in places[:1]:
            place = etree.SubElement(origin, m + "place")
            etree.SubElement(place, m + "placeTerm", type="text").text = value
        for value in publishers[:1]:
            etree.SubElement(origin, m + "publisher").text = value
        for value in dates[:1]:
            etree.SubElement(origin, m + "dateIssued").text = value
    fixed = _controlfield(record, "008")
    if fixed and len(fixed) >= 38 and fixed[35:38].strip():
        language = etree.SubElement(mods, m + "language")
        etree.SubElement(language, m + "languageTerm", type="code", authority="iso639-2b").text = fixed[35:38]
    for value in _subfields(record, ("520",), "a"):
        etree.SubElement(mods, m + "abstract").text = value
    for value in _subfields(record, ("650",), "a"):
        subject = etree.SubElement(mods, m + "subject")
        etree.SubElement(subject, m + "topic").text = value
    for tag, kind in (("020", "isbn"), ("022", "issn"), ("035", "local")):
        for value in _subfields(record, (tag,), "a"):
            etree.SubElement(mods, m + "identifier", type=kind).text = value
    control = _controlfield(record, "001")
    if control:
        info = etree.SubElement(mods, m + "recordInfo")
        source = _controlfield(record, "003")
        if source:
            etree.SubElement(info, m + "recordContentSource").text = source
        etree.SubElement(info, m + "recordIdentifier").text = control
    return Dissemination(_xml_bytes(mods), "application/mods+xml")


def table_of_contents(target: Entity, context: TransformContext) -> Dissemination:
    """XHTML page listing the element's datastreams and the services bound inside it.

    Element transform, ``application/xhtml+xml``. Only service identifiers and XML IDs
    appear, so repeated requests render identical pages.
    """
    h = "{%s}" % XHTML_NS
    package = context.stored.package_id
    label = target.identifiers[0] if target.identifiers else f"{package}#{target.xml_id}"

    html = etree.Element(h + "html", nsmap={None: XHTML_NS})
    head = etree.SubElement(html, h + "head")
    etree.SubElement(head, h + "title").text = f"Contents of {label}"
    body = etree.SubElement(html, h + "body")
    etree.SubElement(body, h + "h1").text = label

    etree.SubElement(body, h + "h2").text = "Datastreams"
    streams = etree.SubElement(body, h + "ul", {"class": "datastreams"})
    for component in _components(target):
        for resource in component.resources:
            li = etree.SubElement(streams, h + "li")
            address = f"{package}#{component.xml_id}"
            etree.SubElement(li, h + "a", href=address).text = address
            etree.SubElement(li, h + "span", {"class": "mime"}).text = resource.mime_type

    etree.SubElement(body, h + "h2").text = "Services"
    services = etree.SubElement(body, h + "ul", {"class": "services"})
    completed = context.document.find(target.xml_id) if target.xml_id else None
    if completed is not None:
        hosts = {
            value: entity.xml_id for entity in _subtree(completed) for value in entity.object_types
        }
        for binding in method_bindings(context.document):
            for argument in binding.arguments:
                if argument in hosts:
                    li = etree.SubElement(services, h + "li")
                    li.text = binding.service_id
                    etree.SubElement(li, h + "span", {"class": "target"}).text = f"{package}#{hosts[argument]}"
    return Dissemination(_xml_bytes(html), "application/xhtml+xml")


BUILTINS = (
    Transform("raw_bytes", raw_bytes, description="The addressed element as stored"),
    Transform(
        "identifiers_only",
        identifiers_only,
        scope="document",
        prefix="identifiers",
        description="Package and Content Identifiers for locator loading",
        namespace=IDENTIFIERS_NS,
        schema=f"{IDENTIFIERS_NS}/identifiers.xsd",
    ),
    Transform(
        "didl_completed",
        didl_completed,
        scope="document",
        prefix="DIDL:completed",
        description="DIDL document with all methods inserted",
        namespace=DIDL_FORMAT.namespace,
        schema=DIDL_FORMAT.schema,
    ),
    Transform(
        "format_crosswalk",
        format_crosswalk,
        scope="document",
        prefix="mets",
        description="Structural METS view of the document",
        namespace=METS_NS,
        schema="http://www.loc.gov/standards/mets/mets.xsd",
    ),
    Transform(
        "record_to_dc",
        record_to_dc,
        scope="document",
        prefix="oai_dc",
        description="Minimal Dublin Core record",
        namespace=OAI_DC_NS,
        schema="http://www.openarchives.org/OAI/2.0/oai_dc.xsd",
    ),
    Transform(
        "marcxml_to_mods",
        marcxml_to_mods,
        mime_type="application/mods+xml",
        description="Convert a MARCXML record to MODS",
    ),
    Transform(
        "table_of_contents",
        table_of_contents,
        mime_type="application/xhtml+xml",
        description="Table of contents listing all datastreams and available services",
    ),
)


def default_registry(disabled: Iterable[str] = ()) -> TransformRegistry:
    """Fresh registry holding the builtins; ``disabled`` names are switched off."""
    return TransformRegistry([dataclasses.replace(t) for t in BUILTINS], disabled)
