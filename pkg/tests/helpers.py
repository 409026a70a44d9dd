"""Shared builders and comparison helpers for the test suite."""

import itertools
import random
import re
import string
from datetime import datetime, timedelta, timezone
from pathlib import Path
from typing import List, Tuple

from lxml import etree

from didl_repo.didl import (
    Component,
    Container,
    DatastreamPayload,
    Descriptor,
    DidlDocument,
    Item,
    Resource,
    canonical_fragment,
    canonicalize,
    identifier_descriptor,
    object_type_descriptor,
    placeholder_descriptor,
)
from didl_repo.ingest import DatastreamSpec, ObjectManifest
from didl_repo.oaipmh import OAI

FIXTURES = Path(__file__).parent / "fixtures"
MANIFEST = FIXTURES / "manifest" / "paper.ini"
NAMESPACE = "info:lanl-repo"
START = datetime(2004, 6, 22, 18, 7, 18, tzinfo=timezone.utc)

UUID_TOKEN = re.compile(rb"(urn:uuid:|uuid-)[0-9A-Za-z-]+")


def mask_uuids(data: bytes) -> bytes:
    """Replace every uuid token with a label numbered by first appearance."""
    labels = {}

    def label(match):
        token = match.group(0)
        if token not in labels:
            labels[token] = b"UUID-%d" % len(labels)
        return labels[token]

    return UUID_TOKEN.sub(label, data)


def masked(data: bytes) -> bytes:
    return mask_uuids(canonicalize(data))


def outline(doc: DidlDocument) -> List[Tuple]:
    """Structure of a document with all minted values left out."""
    rows = []
    for entity in doc.walk():
        mimes = tuple(r.mime_type for r in getattr(entity, "resources", ()))
        rows.append((entity.level, tuple(entity.identifiers), tuple(entity.placeholders), mimes))
    return rows


def tiny_doc(n: int, created: datetime = START, namespace: str = NAMESPACE) -> DidlDocument:
    """A minimal AIP: one Item with a Content Identifier and one inline Component."""
    component = Component(
        xml_id=f"uuid-c{n}",
        descriptors=(placeholder_descriptor(f"{namespace}/fmt/1"),),
        resources=(Resource("text/plain", DatastreamPayload(data=f"object {n}".encode())),),
    )
    item = Item(
        xml_id=f"uuid-i{n}",
        descriptors=(identifier_descriptor(f"info:doi/10.999/{n}"), placeholder_descriptor(f"{namespace}/pro/ai")),
        components=(component,),
    )
    container = Container(
        xml_id=f"uuid-r{n}",
        descriptors=(placeholder_descriptor(f"{namespace}/pro/DIDL"),),
        items=(item,),
    )
    return DidlDocument(package_id=f"{namespace}/i/{n:08d}", created=created, root_container=container)


def minutes(n: int) -> datetime:
    return START + timedelta(minutes=n)


WORDS = string.ascii_letters + string.digits + " &<>"


def random_doc(seed: int, namespace: str = NAMESPACE) -> DidlDocument:
    """A seeded random AIP: nested Items, every descriptor and payload kind, unique XML IDs."""
    rng = random.Random(seed)
    serial = itertools.count()

    def text() -> str:
        return rng.choice(string.ascii_letters) + "".join(rng.choice(WORDS) for _ in range(rng.randint(0, 20)))

    def xml_id():
        return f"uuid-{seed}-{next(serial)}" if rng.random() < 0.8 else None

    def descriptors():
        out = []
        for _ in range(rng.randint(0, 3)):
            kind = rng.choice(["identifier", "placeholder", "object_type", "text"])
            if kind == "identifier":
                out.append(identifier_descriptor(f"info:doi/10.{rng.randint(1, 9999)}/{rng.randint(0, 10**6)}"))
            elif kind == "placeholder":
                out.append(placeholder_descriptor(f"{namespace}/fmt/{rng.randint(1, 9)}"))
            elif kind == "object_type":
                out.append(object_type_descriptor(f"{namespace}/type/{rng.randint(1, 5)}"))
            else:
                out.append(Descriptor(statement_mime="text/plain", statement_text=text()))
        return tuple(out)

    def resource() -> Resource:
        kind = rng.choice(["text", "base64", "xml", "ref"])
        if kind == "text":
            return Resource("text/plain", DatastreamPayload(data=text().encode("utf-8")))
        if kind == "base64":
            data = rng.randbytes(rng.randint(0, 64))
            return Resource("application/octet-stream", DatastreamPayload(data=data), encoding="base64")
        if kind == "xml":
            note = etree.Element("{urn:example:note}note", nsmap={"n": "urn:example:note"}, seq=str(next(serial)))
            note.text = text()
            return Resource("text/xml", DatastreamPayload(data=canonical_fragment(note), is_xml=True))
        return Resource("application/pdf", DatastreamPayload(ref=f"{namespace}/ds/{rng.randint(0, 10**6)}"))

    def component() -> Component:
        return Component(
            xml_id=xml_id(),
            descriptors=descriptors(),
            resources=tuple(resource() for _ in range(rng.randint(0, 2))),
        )

    def item(depth: int) -> Item:
        return Item(
            xml_id=xml_id(),
            descriptors=descriptors(),
            sub_items=tuple(item(depth + 1) for _ in range(rng.randint(0, 2) if depth < 3 else 0)),
            components=tuple(component() for _ in range(rng.randint(0, 2))),
        )

    container = Container(
        xml_id=xml_id(), descriptors=descriptors(), items=tuple(item(0) for _ in range(rng.randint(0, 3)))
    )
    created = START + timedelta(seconds=rng.randrange(10**8))
    return DidlDocument(package_id=f"{namespace}/i/r{seed:05d}", created=created, root_container=container)

MARC_TEMPLATE = (
    '<record xmlns="http://www.loc.gov/MARC21/slim">'
    '<controlfield tag="001">SYN{n}</controlfield>'
    '<datafield tag="245" ind1="1" ind2="0"><subfield code="a">Synthetic record {n} /</subfield></datafield>'
    "</record>"
)


def synthetic_manifest(n: int, binary: bool = True, namespace: str = NAMESPACE) -> ObjectManifest:
    """A paper-like object: an identified MARCXML record and, optionally, a binary datastream."""
    datastreams = [
        DatastreamSpec(
            data=MARC_TEMPLATE.format(n=n).encode("utf-8"),
            mime_type="text/xml; charset=UTF-8",
            format_placeholder=f"{namespace}/fmt/3",
            content_id=f"info:pmid/9{n:07d}",
            name="marc",
        )
    ]
    if binary:
        datastreams.append(
            DatastreamSpec(
                data=b"%PDF-1.4\n" + f"synthetic {n}\n".encode() + bytes(range(256)),
                mime_type="application/pdf",
                format_placeholder=f"{namespace}/fmt/5",
                name="pdf",
            )
        )
    return ObjectManifest(
        family_placeholder=f"{namespace}/pro/paper",
        datastreams=tuple(datastreams),
        object_content_id=f"info:doi/10.999/{n}",
        source=f"synthetic-{n}",
    )


def error_code(body: bytes):
    """OAI-PMH error code of a response, or None."""
    error = etree.fromstring(body).find(OAI + "error")
    return None if error is None else error.get("code")


def oai_get(client, path: str, **params) -> bytes:
    """GET an OAI-PMH endpoint through a Flask test client."""
    query = {k.rstrip("_"): v for k, v in params.items()}
    response = client.get(path, query_string=query)
    assert response.status_code == 200, response.data
    return response.data
