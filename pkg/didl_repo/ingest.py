"""Ingest: turn described digital objects into DIDL archival packages.

Every ingest builds a brand new package with fresh identifiers; nothing ever looks up or
rewrites a stored one. XML datastreams are embedded inline, everything else is appended to
the ARC store and referenced by its URL key.

Manifests are INI files, one per object::

    [object]
    content_id = info:doi/10.123/44455
    placeholder = info:lanl-repo/pro/paper

    [datastream:marc]
    path = marc.xml
    mime_type = text/xml; charset=UTF-8
    content_id = info:pmid/2225887
    format = info:lanl-repo/fmt/3

    [datastream:pdf]
    path = paper.pdf
    mime_type = application/pdf
    format = info:lanl-repo/fmt/5

Datastream sections are kept in file order. ``path`` is relative to the manifest.
"""

import configparser
import logging
import uuid
from dataclasses import dataclass, field
from pathlib import Path
from typing import Dict, Iterable, List, Optional, Tuple, Union

from .arc import ArcError, ArcStore
from .clock import Clock, format_arc_date
from .didl import (
    Component,
    Container,
    DatastreamPayload,
    DidlDocument,
    DidlError,
    Item,
    MalformedXml,
    Resource,
    canonicalize,
    identifier_descriptor,
    mint_package_id,
    mint_xml_id,
    placeholder_descriptor,
)
from .tape import TAPE_SUFFIX, TapeError, XMLTape

logger = logging.getLogger(__name__)

DATASTREAM_SECTION = "datastream:"


class IngestError(Exception):
    """Base class for ingest errors."""


class EmptyManifest(IngestError):
    pass


class InvalidManifest(IngestError):
    pass


class DuplicateContentId(IngestError):
    pass


class ArcWriteFailed(IngestError):
    pass


def container_placeholder(namespace: str) -> str:
    return f"{namespace.rstrip('/')}/pro/DIDL"


def metadata_placeholder(namespace: str) -> str:
    return f"{namespace.rstrip('/')}/pro/metadata"


def package_namespace(namespace: str) -> str:
    return f"{namespace.rstrip('/')}/i"


@dataclass(frozen=True)
class DatastreamSpec:
    data: bytes
    mime_type: str
    format_placeholder: str
    content_id: Optional[str] = None
    sub_placeholder: Optional[str] = None
    name: str = ""


@dataclass(frozen=True)
class ObjectManifest:
    family_placeholder: str
    datastreams: Tuple[DatastreamSpec, ...] = ()
    object_content_id: Optional[str] = None
    source: Optional[str] = None

    def validate(self) -> None:
        if not self.datastreams:
            raise EmptyManifest(f"{self.source or 'manifest'} declares no datastreams")
        if not self.family_placeholder:
            raise InvalidManifest(f"{self.source or 'manifest'} has no object placeholder")
        seen = {self.object_content_id} if self.object_content_id else set()
        for ds in self.datastreams:
            if not ds.mime_type:
                raise InvalidManifest(f"datastream {ds.name!r} has no mime_type")
            if not ds.format_placeholder:
                raise InvalidManifest(f"datastream {ds.name!r} has no format placeholder")
            if ds.content_id:
                if ds.content_id in seen:
                    raise DuplicateContentId(f"{ds.content_id} appears twice in {self.source or 'manifest'}")
                seen.add(ds.content_id)


def load_manifest(path: Union[str, Path]) -> ObjectManifest:
    path = Path(path)
    parser = configparser.ConfigParser(interpolation=None)
    try:
        with open(path, encoding="utf-8") as f:
            parser.read_file(f)
    except (OSError, configparser.Error) as e:
        raise InvalidManifest(f"cannot read manifest {path}: {e}") from e
    if not parser.has_section("object"):
        raise InvalidManifest(f"{path} has no [object] section")

    obj = parser["object"]
    datastreams = []
    for section in parser.sections():
        if not section.startswith(DATASTREAM_SECTION):
            continue
        ds = parser[section]
        name = section[len(DATASTREAM_SECTION):]
        if "path" not in ds:
            raise InvalidManifest(f"{path}: datastream {name!r} has no path")
        data_path = path.parent / ds["path"]
        try:
            data = data_path.read_bytes()
        except OSError as e:
            raise InvalidManifest(f"{path}: cannot read {data_path}: {e}") from e
        datastreams.append(
            DatastreamSpec(
                data=data,
                mime_type=ds.get("mime_type", "").strip(),
                format_placeholder=ds.get("format", "").strip(),
                content_id=ds.get("content_id", "").strip() or None,
                sub_placeholder=ds.get("placeholder", "").strip() or None,
                name=name,
            )
        )
    return ObjectManifest(
        family_placeholder=obj.get("placeholder", "").strip(),
        datastreams=tuple(datastreams),
        object_content_id=obj.get("content_id", "").strip() or None,
        source=str(path),
    )


def load_batch(path: Union[str, Path]) -> List[Path]:
    """Manifest paths of a batch: every ``*.ini`` in a directory, or the lines of a list file."""
    path = Path(path)
    if path.is_dir():
        return sorted(path.glob("*.ini"))
    paths = []
    for line in path.read_text(encoding="utf-8").splitlines():
        line = line.strip()
        if line and not line.startswith("#"):
            paths.append(path.parent / line)
    return paths


def is_inline(mime_type: str) -> bool:
    """XML subtypes (``xml`` or ``*+xml``) are embedded; everything else goes to ARC."""
    subtype = mime_type.split(";")[0].strip().lower().split("/")[-1]
    return subtype == "xml" or subtype.endswith("+xml")


def _resource(ds: DatastreamSpec, arc: ArcStore, written: List[str]) -> Resource:
    if is_inline(ds.mime_type):
        try:
            return Resource(ds.mime_type, DatastreamPayload(data=canonicalize(ds.data), is_xml=True))
        except MalformedXml:
            logger.warning(f"Datastream {ds.name!r} is not well-formed XML, embedding as base64")
            return Resource(ds.mime_type, DatastreamPayload(data=ds.data), encoding="base64")
    try:
        key = arc.write(ds.data, ds.mime_type)
    except ArcError as e:
        raise ArcWriteFailed(f"datastream {ds.name!r}: {e}") from e
    written.append(key)
    return Resource(ds.mime_type, DatastreamPayload(ref=key))


def build_aip(
    manifest: ObjectManifest,
    arc: ArcStore,
    clock: Clock,
    namespace: str,
    written: Optional[List[str]] = None,
) -> DidlDocument:
    """Build a new AIP, writing binary datastreams to ARC; their keys are appended to ``written``."""
    if written is None:
        written = []
    manifest.validate()
    sub_items: List[Item] = []
    components: List[Component] = []
    for ds in manifest.datastreams:
        component = Component(
            xml_id=mint_xml_id(),
            descriptors=(placeholder_descriptor(ds.format_placeholder),),
            resources=(_resource(ds, arc, written),),
        )
        if ds.content_id:
            sub_items.append(
                Item(
                    xml_id=mint_xml_id(),
                    descriptors=(
                        identifier_descriptor(ds.content_id),
                        placeholder_descriptor(ds.sub_placeholder or metadata_placeholder(namespace)),
                    ),
                    components=(component,),
                )
            )
        else:
            components.append(component)

    top_descriptors = []
    if manifest.object_content_id:
        top_descriptors.append(identifier_descriptor(manifest.object_content_id))
    top_descriptors.append(placeholder_descriptor(manifest.family_placeholder))
    top = Item(
        xml_id=mint_xml_id(),
        descriptors=tuple(top_descriptors),
        sub_items=tuple(sub_items),
        components=tuple(components),
    )
    container = Container(
        xml_id=mint_xml_id(),
        descriptors=(placeholder_descriptor(container_placeholder(namespace)),),
        items=(top,),
    )
    return DidlDocument(
        package_id=str(mint_package_id(package_namespace(namespace))),
        created=clock.now(),
        root_container=container,
    )


def ingest_version(
    manifest: ObjectManifest,
    arc: ArcStore,
    tape: XMLTape,
    clock: Clock,
    namespace: str,
    written: Optional[List[str]] = None,
) -> DidlDocument:
    """Build a new AIP for the manifest and append it to the tape."""
    doc = build_aip(manifest, arc, clock, namespace, written)
    tape.append(doc)
    logger.info(
        f"Ingested {manifest.source or 'object'} as {doc.package_id}",
        extra={"package_id": doc.package_id, "tape": tape.name},
    )
    return doc


@dataclass
class BatchReport:
    tape_name: str
    tape_path: Path
    arc_file: Optional[str] = None
    package_ids: List[str] = field(default_factory=list)
    failures: Dict[str, str] = field(default_factory=dict)
    # ARC keys written for objects that then failed; no package references them
    orphaned: Dict[str, List[str]] = field(default_factory=dict)

    @property
    def ok(self) -> bool:
        return not self.failures


def new_tape_name(clock: Clock) -> str:
    return f"tape-{format_arc_date(clock.now())}-{uuid.uuid4().hex[:8]}"


def ingest_batch(
    items: Iterable[Union[ObjectManifest, str, Path]],
    arc: ArcStore,
    tapes_dir: Path,
    clock: Clock,
    namespace: str,
    tape_name: Optional[str] = None,
) -> BatchReport:
    """Ingest one batch into a new tape and a new ARC file, then seal the tape.

    Items are manifests or manifest paths. A failing object is recorded in the report and
    the batch carries on.
    """
    name = tape_name or new_tape_name(clock)
    tape = XMLTape.create(Path(tapes_dir) / f"{name}{TAPE_SUFFIX}")
    report = BatchReport(tape_name=tape.name, tape_path=tape.path)
    arc_started = False

    for n, item in enumerate(items):
        source = str(item) if not isinstance(item, ObjectManifest) else (item.source or f"#{n}")
        written: List[str] = []
        try:
            manifest = item if isinstance(item, ObjectManifest) else load_manifest(item)
            if not arc_started and not all(is_inline(ds.mime_type) for ds in manifest.datastreams):
                report.arc_file = arc.start_file()
                arc_started = True
            doc = ingest_version(manifest, arc, tape, clock, namespace, written)
        except (IngestError, DidlError, TapeError, ArcError) as e:
            report.failures[source] = str(e)
            logger.warning(f"Ingest of {source} failed: {e}", extra={"tape": tape.name})
            if written:
                report.orphaned[source] = written
                logger.warning(
                    f"Ingest of {source} left {len(written)} unreferenced ARC records: {', '.join(written)}",
                    extra={"tape": tape.name},
                )
            continue
        report.package_ids.append(doc.package_id)

    tape.seal()
    logger.info(
        f"Batch {tape.name}: {len(report.package_ids)} ingested, {len(report.failures)} failed",
        extra={"tape": tape.name},
    )
    return report
