"""DIDL documents: the abstract-model types, the XML codec and the dual identifiers.

A stored DIDL document is the archival package of one Digital Object version. It is
identified by a Package Identifier (the ``DIDid`` attribute of the root element) and every
Container, Item and Component inside it carries an XML ID, so ``<package id>#<xml id>``
addresses a single element. Content Identifiers are carried through from ingestion input as
DII ``Identifier`` statements on Items.

Documents are frozen dataclasses. Nothing mutates a document after construction; the DIM
inserter and every transform build new documents.
"""

import base64
import logging
import uuid
from dataclasses import dataclass, field
from datetime import datetime
from functools import cached_property
from typing import Iterator, List, Optional, Tuple, Union

from lxml import etree

from .clock import format_datestamp, parse_datestamp, to_utc

logger = logging.getLogger(__name__)

DIDL_NS = "urn:mpeg:mpeg21:2002:02-DIDL-NS"
DII_NS = "urn:mpeg:mpeg21:2002:01-DII-NS"
DIP_NS = "urn:mpeg:mpeg21:2002:01-DIP-NS"
DIEXT_NS = "http://library.lanl.gov/2004-04/STB-RL/DIEXT"
DIADM_NS = "http://library.lanl.gov/2004-01/STB-RL/DIADM"
DC_NS = "http://purl.org/dc/elements/1.1/"
XSI_NS = "http://www.w3.org/2001/XMLSchema-instance"

DIDL = "{%s}" % DIDL_NS
DII = "{%s}" % DII_NS
DIP = "{%s}" % DIP_NS
DIEXT = "{%s}" % DIEXT_NS
DIADM = "{%s}" % DIADM_NS
DC = "{%s}" % DC_NS

NSMAP = {"didl": DIDL_NS, "diext": DIEXT_NS, "xsi": XSI_NS}

STATEMENT_MIME = "text/xml; charset=UTF-8"
METHOD_MIME = "application/mp21-method"


class DidlError(Exception):
    """Base class for DIDL codec and addressing errors."""


class MalformedXml(DidlError):
    pass


class MissingPackageId(DidlError):
    pass


class DuplicateXmlId(DidlError):
    pass


class UnknownXmlId(DidlError):
    pass


def _parser() -> etree.XMLParser:
    return etree.XMLParser(
        remove_blank_text=True,
        remove_comments=True,
        remove_pis=True,
        resolve_entities=False,
        no_network=True,
    )


def canonical_fragment(element: etree._Element) -> bytes:
    """Exclusive C14N of one element: stable attribute order, only used namespaces."""
    return etree.tostring(element, method="c14n", exclusive=True)


def canonicalize(data: bytes) -> bytes:
    """Canonical form of a whole XML document, ignoring insignificant whitespace."""
    try:
        root = etree.fromstring(data, _parser())
    except etree.XMLSyntaxError as e:
        raise MalformedXml(str(e)) from e
    return canonical_fragment(root)


# ---------------------------------------------------------------------------
# Identifiers
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class PackageIdentifier:
    """A package URI, optionally narrowed to one element by a ``#xmlId`` fragment."""

    base: str
    fragment: Optional[str] = None

    @classmethod
    def parse(cls, text: str) -> "PackageIdentifier":
        base, sep, fragment = text.strip().partition("#")
        return cls(base=base, fragment=fragment.strip() if sep and fragment.strip() else None)

    def __str__(self) -> str:
        if self.fragment:
            return f"{self.base}#{self.fragment}"
        return self.base


@dataclass(frozen=True)
class IdentifierEntry:
    content_id: str
    xml_id: str


@dataclass(frozen=True)
class Placeholder:
    level: str  # container | item | component
    value: str


def mint_package_id(namespace: str) -> PackageIdentifier:
    return PackageIdentifier(base=f"{namespace.rstrip('/')}/{uuid.uuid4()}")


def mint_xml_id() -> str:
    return f"uuid-{uuid.uuid4()}"


# ---------------------------------------------------------------------------
# Abstract model
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class Descriptor:
    """One Descriptor holding exactly one Statement, kept as canonical XML or as text."""

    statement_mime: str = STATEMENT_MIME
    statement_xml: Optional[bytes] = None
    statement_text: Optional[str] = None

    @cached_property
    def _statement(self) -> Optional[etree._Element]:
        if self.statement_xml is None:
            return None
        return etree.fromstring(self.statement_xml)

    @property
    def kind(self) -> str:
        el = self._statement
        if el is None:
            return "text"
        if el.tag == DII + "Identifier":
            return "identifier"
        if el.tag == DIADM + "Admin" and el.find(DC + "format") is not None:
            return "placeholder"
        if el.tag == DIP + "ObjectType":
            return "object_type"
        if el.tag == DIP + "MethodInfo":
            return "method_info"
        return "other"

    @property
    def identifier(self) -> Optional[str]:
        if self.kind != "identifier":
            return None
        return (self._statement.text or "").strip()

    @property
    def placeholder(self) -> Optional[str]:
        if self.kind != "placeholder":
            return None
        return (self._statement.find(DC + "format").text or "").strip()

    @property
    def object_type(self) -> Optional[str]:
        if self.kind != "object_type":
            return None
        return (self._statement.text or "").strip()

    @property
    def arguments(self) -> Tuple[str, ...]:
        if self.kind != "method_info":
            return ()
        return tuple((a.text or "").strip() for a in self._statement.iter(DIP + "Argument"))


def _statement_descriptor(element: etree._Element) -> Descriptor:
    return Descriptor(statement_xml=canonical_fragment(element))


def identifier_descriptor(uri: str) -> Descriptor:
    el = etree.Element(DII + "Identifier", nsmap={"dii": DII_NS})
    el.text = uri
    return _statement_descriptor(el)


def placeholder_descriptor(value: str) -> Descriptor:
    admin = etree.Element(DIADM + "Admin", nsmap={"diadm": DIADM_NS})
    fmt = etree.SubElement(admin, DC + "format", nsmap={"dc": DC_NS})
    fmt.text = value
    return _statement_descriptor(admin)


def object_type_descriptor(value: str) -> Descriptor:
    el = etree.Element(DIP + "ObjectType", nsmap={"dip": DIP_NS})
    el.text = value
    return _statement_descriptor(el)


def method_info_descriptor(arguments: Tuple[str, ...]) -> Descriptor:
    info = etree.Element(DIP + "MethodInfo", nsmap={"dip": DIP_NS})
    for value in arguments:
        etree.SubElement(info, DIP + "Argument").text = value
    return _statement_descriptor(info)


@dataclass(frozen=True)
class DatastreamPayload:
    """Datastream bytes held inline, or a pointer into ARC storage."""

    data: bytes = b""
    ref: Optional[str] = None
    is_xml: bool = False

    @property
    def by_reference(self) -> bool:
        return self.ref is not None


@dataclass(frozen=True)
class Resource:
    mime_type: str
    payload: DatastreamPayload = field(default_factory=DatastreamPayload)
    encoding: Optional[str] = None  # None or "base64"


class _Described:
    """Descriptor accessors shared by Container, Item and Component."""

    descriptors: Tuple[Descriptor, ...]

    @property
    def identifiers(self) -> List[str]:
        return [d.identifier for d in self.descriptors if d.kind == "identifier"]

    @property
    def placeholders(self) -> List[str]:
        return [d.placeholder for d in self.descriptors if d.kind == "placeholder"]

    @property
    def object_types(self) -> List[str]:
        return [d.object_type for d in self.descriptors if d.kind == "object_type"]


@dataclass(frozen=True)
class Component(_Described):
    xml_id: Optional[str] = None
    descriptors: Tuple[Descriptor, ...] = ()
    resources: Tuple[Resource, ...] = ()

    level = "component"


@dataclass(frozen=True)
class Item(_Described):
    xml_id: Optional[str] = None
    descriptors: Tuple[Descriptor, ...] = ()
    sub_items: Tuple["Item", ...] = ()
    components: Tuple[Component, ...] = ()

    level = "item"


@dataclass(frozen=True)
class Container(_Described):
    xml_id: Optional[str] = None
    descriptors: Tuple[Descriptor, ...] = ()
    items: Tuple[Item, ...] = ()

    level = "container"


Entity = Union[Container, Item, Component]


@dataclass(frozen=True)
class DidlDocument:
    package_id: str
    created: datetime
    root_container: Container

    def __post_init__(self):
        object.__setattr__(self, "created", to_utc(self.created))

    def walk(self) -> Iterator[Entity]:
        """All entities in document order."""
        yield self.root_container
        for item in self.root_container.items:
            yield from _walk_item(item)

    def find(self, xml_id: str) -> Optional[Entity]:
        for entity in self.walk():
            if entity.xml_id == xml_id:
                return entity
        return None

    def parent_of(self, xml_id: str) -> Optional[Entity]:
        for entity in self.walk():
            children = ()
            if isinstance(entity, Container):
                children = entity.items
            elif isinstance(entity, Item):
                children = entity.sub_items + entity.components
            if any(child.xml_id == xml_id for child in children):
                return entity
        return None

    def placeholders(self) -> Iterator[Tuple[Entity, Placeholder]]:
        for entity in self.walk():
            for value in entity.placeholders:
                yield entity, Placeholder(level=entity.level, value=value)


def _walk_item(item: Item) -> Iterator[Entity]:
    yield item
    for sub in item.sub_items:
        yield from _walk_item(sub)
    yield from item.components


# ---------------------------------------------------------------------------
# Operations
# ---------------------------------------------------------------------------


def address_of(doc: DidlDocument, xml_id: str) -> PackageIdentifier:
    if doc.find(xml_id) is None:
        raise UnknownXmlId(f"{xml_id} not found in {doc.package_id}")
    return PackageIdentifier(base=doc.package_id, fragment=xml_id)


def extract_identifiers(doc: DidlDocument) -> List[IdentifierEntry]:
    entries = []
    for entity in doc.walk():
        if isinstance(entity, Item):
            for content_id in entity.identifiers:
                entries.append(IdentifierEntry(content_id=content_id, xml_id=entity.xml_id))
    return entries


def _local(element: etree._Element) -> Optional[str]:
    """Local name of a DIDL element; None for elements outside the DIDL namespace."""
    if not isinstance(element.tag, str):
        return None
    qname = etree.QName(element)
    if qname.namespace in (DIDL_NS, None):
        return qname.localname
    return None


def _attr(element: etree._Element, name: str) -> Optional[str]:
    value = element.get(DIEXT + name)
    if value is None:
        value = element.get(name)
    return value


class _Reader:
    def __init__(self):
        self.seen_ids = set()

    def xml_id(self, element: etree._Element) -> Optional[str]:
        value = element.get("id")
        if value is None:
            return None
        if value in self.seen_ids:
            raise DuplicateXmlId(value)
        self.seen_ids.add(value)
        return value

    def descriptor(self, element: etree._Element) -> Descriptor:
        statements = [c for c in element if _local(c) == "Statement"]
        if len(statements) != 1:
            raise MalformedXml("a Descriptor must carry exactly one Statement")
        statement = statements[0]
        mime = statement.get("mimeType", STATEMENT_MIME)
        children = [c for c in statement if isinstance(c.tag, str)]
        if len(children) > 1:
            raise MalformedXml("a Statement may hold at most one XML element")
        if children:
            return Descriptor(statement_mime=mime, statement_xml=canonical_fragment(children[0]))
        return Descriptor(statement_mime=mime, statement_text=statement.text or "")

    def resource(self, element: etree._Element) -> Resource:
        mime = element.get("mimeType")
        if not mime:
            raise MalformedXml("Resource without mimeType")
        encoding = element.get("encoding")
        ref = element.get("ref")
        if ref is not None:
            return Resource(mime_type=mime, payload=DatastreamPayload(ref=ref), encoding=encoding)
        if encoding == "base64":
            data = base64.b64decode(element.text or "")
            return Resource(mime_type=mime, payload=DatastreamPayload(data=data), encoding=encoding)
        children = [c for c in element if isinstance(c.tag, str)]
        if len(children) > 1:
            raise MalformedXml("an inline XML Resource must hold one root element")
        if children:
            payload = DatastreamPayload(data=canonical_fragment(children[0]), is_xml=True)
        else:
            payload = DatastreamPayload(data=(element.text or "").encode("utf-8"))
        return Resource(mime_type=mime, payload=payload, encoding=encoding)

    def component(self, element: etree._Element) -> Component:
        xml_id = self.xml_id(element)
        descriptors, resources = [], []
        for child in element:
            name = _local(child)
            if name == "Descriptor":
                descriptors.append(self.descriptor(child))
            elif name == "Resource":
                resources.append(self.resource(child))
            else:
                raise MalformedXml(f"unsupported element in Component: {child.tag}")
        return Component(xml_id=xml_id, descriptors=tuple(descriptors), resources=tuple(resources))

    def item(self, element: etree._Element) -> Item:
        xml_id = self.xml_id(element)
        descriptors, items, components = [], [], []
        for child in element:
            name = _local(child)
            if name == "Descriptor":
                descriptors.append(self.descriptor(child))
            elif name == "Item":
                items.append(self.item(child))
            elif name == "Component":
                components.append(self.component(child))
            else:
                raise MalformedXml(f"unsupported element in Item: {child.tag}")
        return Item(
            xml_id=xml_id,
            descriptors=tuple(descriptors),
            sub_items=tuple(items),
            components=tuple(components),
        )

    def container(self, element: etree._Element) -> Container:
        xml_id = self.xml_id(element)
        descriptors, items = [], []
        for child in element:
            name = _local(child)
            if name == "Descriptor":
                descriptors.append(self.descriptor(child))
            elif name == "Item":
                items.append(self.item(child))
            else:
                raise MalformedXml(f"unsupported element in Container: {child.tag}")
        return Container(xml_id=xml_id, descriptors=tuple(descriptors), items=tuple(items))


def parse_didl(data: Union[bytes, etree._Element]) -> DidlDocument:
    """Parse DIDL XML (bytes or an already parsed root element) into a document."""
    if isinstance(data, (bytes, bytearray)):
        try:
            root = etree.fromstring(bytes(data), _parser())
        except etree.XMLSyntaxError as e:
            raise MalformedXml(str(e)) from e
    else:
        root = data

    if _local(root) != "DIDL":
        raise MalformedXml(f"root element is {root.tag}, expected DIDL")

    package_id = _attr(root, "DIDid")
    if not package_id:
        raise MissingPackageId("DIDL root carries no DIDid")
    created = _attr(root, "DIDcreated")
    if not created:
        raise MalformedXml("DIDL root carries no DIDcreated")
    try:
        created_at = parse_datestamp(created)
    except ValueError as e:
        raise MalformedXml(f"bad DIDcreated value: {created}") from e

    containers = [c for c in root if _local(c) == "Container"]
    if len(containers) != 1:
        raise MalformedXml("a DIDL document must hold exactly one Container")

    reader = _Reader()
    container = reader.container(containers[0])
    return DidlDocument(package_id=package_id, created=created_at, root_container=container)


def _descriptor_element(parent: etree._Element, descriptor: Descriptor) -> None:
    d = etree.SubElement(parent, DIDL + "Descriptor")
    s = etree.SubElement(d, DIDL + "Statement", mimeType=descriptor.statement_mime)
    if descriptor.statement_xml is not None:
        s.append(etree.fromstring(descriptor.statement_xml))
    else:
        s.text = descriptor.statement_text


def _resource_element(parent: etree._Element, resource: Resource) -> None:
    r = etree.SubElement(parent, DIDL + "Resource", mimeType=resource.mime_type)
    if resource.encoding:
        r.set("encoding", resource.encoding)
    payload = resource.payload
    if payload.by_reference:
        r.set("ref", payload.ref)
    elif resource.encoding == "base64":
        r.text = base64.b64encode(payload.data).decode("ascii")
    elif payload.is_xml:
        r.append(etree.fromstring(payload.data))
    else:
        r.text = payload.data.decode("utf-8")


def _set_id(element: etree._Element, xml_id: Optional[str]) -> None:
    if xml_id is not None:
        element.set("id", xml_id)


def _component_element(parent: etree._Element, component: Component) -> etree._Element:
    c = etree.SubElement(parent, DIDL + "Component")
    _set_id(c, component.xml_id)
    for descriptor in component.descriptors:
        _descriptor_element(c, descriptor)
    for resource in component.resources:
        _resource_element(c, resource)
    return c


def _item_element(parent: etree._Element, item: Item) -> etree._Element:
    i = etree.SubElement(parent, DIDL + "Item")
    _set_id(i, item.xml_id)
    for descriptor in item.descriptors:
        _descriptor_element(i, descriptor)
    for sub in item.sub_items:
        _item_element(i, sub)
    for component in item.components:
        _component_element(i, component)
    return i


def _container_element(parent: etree._Element, container: Container) -> etree._Element:
    c = etree.SubElement(parent, DIDL + "Container")
    _set_id(c, container.xml_id)
    for descriptor in container.descriptors:
        _descriptor_element(c, descriptor)
    for item in container.items:
        _item_element(c, item)
    return c


def document_element(doc: DidlDocument) -> etree._Element:
    root = etree.Element(DIDL + "DIDL", nsmap=NSMAP)
    root.set(DIEXT + "DIDid", doc.package_id)
    root.set(DIEXT + "DIDcreated", format_datestamp(doc.created))
    _container_element(root, doc.root_container)
    return root


def entity_element(entity: Entity) -> etree._Element:
    """Standalone DIDL XML for one entity, as disseminated for element-level requests."""
    holder = etree.Element(DIDL + "DIDL", nsmap=NSMAP)
    if isinstance(entity, Container):
        return _container_element(holder, entity)
    if isinstance(entity, Item):
        return _item_element(holder, entity)
    return _component_element(holder, entity)


def serialize_didl(doc: DidlDocument, xml_declaration: bool = True) -> bytes:
    return etree.tostring(
        document_element(doc), xml_declaration=xml_declaration, encoding="UTF-8"
    )
