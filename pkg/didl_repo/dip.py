"""Dynamic dissemination: DIP Table, DIM insertion and service application.

Stored documents carry placeholders (``dc:format`` values) instead of methods. On
dissemination the inserter looks every placeholder up in the DIP Table and, per match,
pairs the placeholder's host element with a new method Item through a fresh correspondence
value: an ``ObjectType`` on the host and an ``Argument`` on the method. The engine later
accepts a service request for an element only when such a pairing exists.

Methods do not carry code. The method Resource's ``ref`` names a transform in the registry.
"""

import csv
import dataclasses
import logging
import uuid
from dataclasses import dataclass
from pathlib import Path
from typing import Callable, Dict, List, Optional, Set, Tuple, Union

from .didl import (
    METHOD_MIME,
    Component,
    DatastreamPayload,
    DidlDocument,
    Entity,
    Item,
    PackageIdentifier,
    Resource,
    identifier_descriptor,
    method_info_descriptor,
    mint_xml_id,
    object_type_descriptor,
)

logger = logging.getLogger(__name__)

Dereference = Callable[[str], Tuple[bytes, str]]


class DipError(Exception):
    """Base class for DIP Table and dissemination errors."""


class ServiceNotApplicable(DipError):
    pass


class UnknownService(DipError):
    pass


class UnknownTarget(DipError):
    pass


class TransformFailure(DipError):
    pass


class DuplicateEntry(DipError):
    pass


@dataclass(frozen=True)
class DipTableEntry:
    service_id: str
    placeholder_value: str
    transform_ref: str
    description: str = ""


class DipTable:
    """Service bindings keyed by placeholder value, persisted as a tab-separated file.

    Columns: service id, placeholder value, transform pointer, description.
    """

    def __init__(self, entries: Optional[List[DipTableEntry]] = None, path: Optional[Path] = None):
        self.entries: List[DipTableEntry] = []
        self.path = Path(path) if path else None
        for entry in entries or []:
            self.add(entry)

    @classmethod
    def load(cls, path: Union[str, Path]) -> "DipTable":
        entries = []
        path = Path(path)
        if path.exists():
            with open(path, encoding="utf-8", newline="") as f:
                for row in csv.reader(f, delimiter="\t"):
                    if not row or row[0].startswith("#"):
                        continue
                    if len(row) < 3:
                        raise DipError(f"{path}: DIP Table row needs at least 3 columns: {row}")
                    entries.append(DipTableEntry(row[0], row[1], row[2], row[3] if len(row) > 3 else ""))
        logger.debug(f"Loaded {len(entries)} DIP Table entries from {path}")
        return cls(entries, path)

    def save(self, path: Optional[Union[str, Path]] = None) -> None:
        target = Path(path) if path else self.path
        if target is None:
            raise DipError("no path to save the DIP Table to")
        target.parent.mkdir(parents=True, exist_ok=True)
        with open(target, "w", encoding="utf-8", newline="") as f:
            f.write("# service_id\tplaceholder_value\ttransform_ref\tdescription\n")
            writer = csv.writer(f, delimiter="\t", lineterminator="\n")
            for e in self.entries:
                writer.writerow([e.service_id, e.placeholder_value, e.transform_ref, e.description])

    def add(self, entry: DipTableEntry) -> None:
        for existing in self.entries:
            if (existing.service_id, existing.placeholder_value) == (entry.service_id, entry.placeholder_value):
                raise DuplicateEntry(f"{entry.service_id} is already bound to {entry.placeholder_value}")
        self.entries.append(entry)

    def remove(self, service_id: str, placeholder_value: Optional[str] = None) -> int:
        keep = [
            e
            for e in self.entries
            if not (e.service_id == service_id and placeholder_value in (None, e.placeholder_value))
        ]
        removed = len(self.entries) - len(keep)
        self.entries = keep
        return removed

    def lookup(self, placeholder_value: str) -> List[DipTableEntry]:
        return [e for e in self.entries if e.placeholder_value == placeholder_value]

    def service_ids(self) -> Set[str]:
        return {e.service_id for e in self.entries}

    def __len__(self) -> int:
        return len(self.entries)

    def __iter__(self):
        return iter(self.entries)


# ---------------------------------------------------------------------------
# DIM insertion
# ---------------------------------------------------------------------------


def _method_item(service_id: str, transform_ref: str, correspondence: str) -> Item:
    component = Component(
        xml_id=mint_xml_id(),
        descriptors=(method_info_descriptor((correspondence,)),),
        resources=(Resource(mime_type=METHOD_MIME, payload=DatastreamPayload(ref=transform_ref)),),
    )
    return Item(
        xml_id=mint_xml_id(),
        descriptors=(identifier_descriptor(service_id),),
        components=(component,),
    )


def _rebuild(entity: Entity, additions: Dict[str, List[str]]):
    extra = tuple(object_type_descriptor(v) for v in additions.get(entity.xml_id, ())) if entity.xml_id else ()
    descriptors = entity.descriptors + extra
    if isinstance(entity, Component):
        return dataclasses.replace(entity, descriptors=descriptors) if extra else entity
    if isinstance(entity, Item):
        return dataclasses.replace(
            entity,
            descriptors=descriptors,
            sub_items=tuple(_rebuild(i, additions) for i in entity.sub_items),
            components=tuple(_rebuild(c, additions) for c in entity.components),
        )
    return dataclasses.replace(
        entity, descriptors=descriptors, items=tuple(_rebuild(i, additions) for i in entity.items)
    )


def _complete(doc: DidlDocument, bindings: List[Tuple[Entity, str, str]]) -> DidlDocument:
    additions: Dict[str, List[str]] = {}
    methods = []
    for host, service_id, transform_ref in bindings:
        if host.xml_id is None:
            raise UnknownTarget(f"{host.level} bound to {service_id} in {doc.package_id} has no XML ID")
        correspondence = f"urn:uuid:{uuid.uuid4()}"
        additions.setdefault(host.xml_id, []).append(correspondence)
        methods.append(_method_item(service_id, transform_ref, correspondence))
    container = _rebuild(doc.root_container, additions)
    container = dataclasses.replace(container, items=container.items + tuple(methods))
    return dataclasses.replace(doc, root_container=container)


def insert_dims(doc: DidlDocument, table: DipTable) -> DidlDocument:
    """Completed form of doc: one paired method Item per (placeholder, matching entry)."""
    bindings = []
    for host, placeholder in doc.placeholders():
        for entry in table.lookup(placeholder.value):
            bindings.append((host, entry.service_id, entry.transform_ref))
    if not bindings:
        return doc
    logger.debug(f"Inserting {len(bindings)} methods into {doc.package_id}")
    return _complete(doc, bindings)


def bind_container_service(doc: DidlDocument, service_id: str, transform_ref: str) -> DidlDocument:
    """Bind a whole-document service at container level.

    Deprecated pattern kept until services on complete documents can be declared otherwise.
    """
    return _complete(doc, [(doc.root_container, service_id, transform_ref)])


@dataclass(frozen=True)
class MethodBinding:
    service_id: str
    transform_ref: str
    arguments: Tuple[str, ...]
    item_xml_id: Optional[str]


def method_bindings(doc: DidlDocument) -> List[MethodBinding]:
    """Container-level method Items of a Completed document."""
    bindings = []
    for item in doc.root_container.items:
        for component in item.components:
            arguments = tuple(a for d in component.descriptors for a in d.arguments)
            refs = [
                r.payload.ref for r in component.resources if r.mime_type == METHOD_MIME and r.payload.ref
            ]
            if arguments and refs and item.identifiers:
                bindings.append(MethodBinding(item.identifiers[0], refs[0], arguments, item.xml_id))
    return bindings


def strip_dims(doc: DidlDocument) -> DidlDocument:
    """Remove inserted method Items and the ObjectType descriptors paired with them."""
    bindings = method_bindings(doc)
    if not bindings:
        return doc
    paired = {a for b in bindings for a in b.arguments}
    method_ids = {b.item_xml_id for b in bindings}

    def keep(descriptor) -> bool:
        return not (descriptor.kind == "object_type" and descriptor.object_type in paired)

    def strip(entity):
        descriptors = tuple(d for d in entity.descriptors if keep(d))
        if isinstance(entity, Component):
            return dataclasses.replace(entity, descriptors=descriptors)
        if isinstance(entity, Item):
            return dataclasses.replace(
                entity,
                descriptors=descriptors,
                sub_items=tuple(strip(i) for i in entity.sub_items),
                components=tuple(strip(c) for c in entity.components),
            )
        return dataclasses.replace(
            entity,
            descriptors=descriptors,
            items=tuple(strip(i) for i in entity.items if i.xml_id not in method_ids),
        )

    return dataclasses.replace(doc, root_container=strip(doc.root_container))


# ---------------------------------------------------------------------------
# Service application
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class Dissemination:
    data: bytes
    mime_type: str
    status: int = 200


@dataclass
class TransformContext:
    """What a transform may look at: the completed and stored forms, the table, and ARC reads."""

    document: DidlDocument
    stored: DidlDocument
    dip_table: DipTable
    dereference: Optional[Dereference] = None

    def resource_bytes(self, resource: Resource) -> bytes:
        if resource.payload.by_reference:
            if self.dereference is None:
                raise TransformFailure(f"cannot dereference {resource.payload.ref}")
            data, _ = self.dereference(resource.payload.ref)
            return data
        return resource.payload.data


class DipEngine:
    """Applies a service to one element of a Completed document.

    ``registry`` is anything with ``get(name)`` returning a transform that has ``name``,
    ``scope`` and ``func(target, context)``.
    """

    def __init__(self, registry, dip_table: DipTable, dereference: Optional[Dereference] = None):
        self.registry = registry
        self.dip_table = dip_table
        self.dereference = dereference

    def _target(self, doc: DidlDocument, target: PackageIdentifier) -> Entity:
        if target.base != doc.package_id:
            raise UnknownTarget(f"{target} is not part of {doc.package_id}")
        if target.fragment is None:
            return doc.root_container
        entity = doc.find(target.fragment)
        if entity is None:
            raise UnknownTarget(str(target))
        return entity

    def _paired(self, target: Entity, arguments: Set[str]) -> Optional[Entity]:
        if set(target.object_types) & arguments:
            return target
        if isinstance(target, Item):
            for component in target.components:
                if set(component.object_types) & arguments:
                    return component
        return None

    def apply_service(
        self,
        doc: DidlDocument,
        target: PackageIdentifier,
        service_id: Optional[str] = None,
        stored: Optional[DidlDocument] = None,
    ) -> Dissemination:
        element = self._target(doc, target)
        stored = stored or doc
        if service_id is None:
            transform_ref = "raw_bytes"
        else:
            bindings = [b for b in method_bindings(doc) if b.service_id == service_id]
            if not bindings:
                if service_id in self.dip_table.service_ids():
                    raise ServiceNotApplicable(f"{service_id} is not bound anywhere in {doc.package_id}")
                raise UnknownService(service_id)
            arguments = {a for b in bindings for a in b.arguments}
            paired = self._paired(element, arguments)
            if paired is None:
                raise ServiceNotApplicable(f"{service_id} does not apply to {target}")
            element = paired
            transform_ref = next(
                b.transform_ref for b in bindings if set(b.arguments) & set(element.object_types)
            )

        transform = self.registry.get(transform_ref)
        if transform is None:
            raise UnknownService(f"no transform registered as {transform_ref!r}")

        context = TransformContext(doc, stored, self.dip_table, self.dereference)
        if transform.scope == "document":
            subject = stored
        else:
            subject = stored.find(element.xml_id) if element.xml_id else None
            subject = subject or element
        try:
            return transform.func(subject, context)
        except DipError:
            raise
        except Exception as e:
            raise TransformFailure(f"{transform.name} failed on {target}: {e}") from e
