"""OpenURL resolver: KEV ContextObjects in, one dissemination out.

Only the Referent and the ServiceType drive resolution. The other entities are parsed and
kept on the ContextObject but do not change the response.
"""

import logging
from dataclasses import dataclass, field
from typing import Dict, Iterable, List, Optional, Tuple, Union
from urllib.parse import parse_qsl

from lxml import etree

from .client import HarvestError, OaiClient
from .clock import format_datestamp
from .didl import DidlError, PackageIdentifier, parse_didl
from .dip import (
    DipEngine,
    Dissemination,
    ServiceNotApplicable,
    TransformFailure,
    UnknownService,
    UnknownTarget,
    insert_dims,
)
from .locator import LocatorUnavailable, NotFound
from .repository import DIDL_PREFIX

logger = logging.getLogger(__name__)

KEV_VERSION = "Z39.88-2004"
VERSIONS_NS = "info:didl-repo/ns/versions"
ENTITY_PREFIXES = {
    "rft": "referent",
    "req": "requester",
    "rfr": "referrer",
    "rfe": "referring_entity",
    "res": "resolver",
    "svc": "service_type",
}


class OpenUrlError(Exception):
    """Base class for resolver errors."""


class MissingReferent(OpenUrlError):
    pass


class UnsupportedVersion(OpenUrlError):
    pass


class UpstreamFailure(OpenUrlError):
    pass


@dataclass
class ContextObject:
    referent_id: str
    version: str = KEV_VERSION
    service_type_id: Optional[str] = None
    service_data: Optional[str] = None
    entities: Dict[str, Dict[str, List[str]]] = field(default_factory=dict)
    extra: Dict[str, List[str]] = field(default_factory=dict)


def parse_kev(query: Union[str, Iterable[Tuple[str, str]]]) -> ContextObject:
    pairs = parse_qsl(query, keep_blank_values=True) if isinstance(query, str) else list(query)
    entities: Dict[str, Dict[str, List[str]]] = {}
    extra: Dict[str, List[str]] = {}
    for key, value in pairs:
        head, sep, _ = key.partition("_")
        if sep and head in ENTITY_PREFIXES:
            entities.setdefault(ENTITY_PREFIXES[head], {}).setdefault(key, []).append(value)
        else:
            extra.setdefault(key, []).append(value)

    version = (extra.get("url_ver") or [""])[0]
    if version != KEV_VERSION:
        raise UnsupportedVersion(f"url_ver {version!r} is not {KEV_VERSION}")
    referent = [v for v in entities.get("referent", {}).get("rft_id", []) if v.strip()]
    if not referent:
        raise MissingReferent("the ContextObject carries no rft_id")
    service = entities.get("service_type", {})
    if entities.get("requester"):
        logger.debug("Requester entity present; responses are not requester-sensitive")
    return ContextObject(
        referent_id=referent[0].strip(),
        version=version,
        service_type_id=(service.get("svc_id") or [None])[0] or None,
        service_data=(service.get("svc_dat") or [None])[0] or None,
        entities=entities,
        extra=extra,
    )


def status_for(error: Exception) -> int:
    """HTTP status for a resolution failure."""
    if isinstance(error, (MissingReferent, UnsupportedVersion, ServiceNotApplicable, UnknownService)):
        return 400
    if isinstance(error, (NotFound, UnknownTarget)):
        return 404
    if isinstance(error, TransformFailure):
        return 500
    return 502


class OpenUrlResolver:
    """Locate, fetch, insert, apply, deliver. Performs no writes."""

    def __init__(self, locator, client: OaiClient, engine: DipEngine):
        self.locator = locator
        self.client = client
        self.engine = engine

    def _step(self, step: str, message: str, ctx: ContextObject) -> None:
        logger.info(
            message,
            extra={"pipeline_step": step, "referent": ctx.referent_id, "service": ctx.service_type_id},
        )

    def _versions(self, ctx: ContextObject, plans) -> Dissemination:
        root = etree.Element("{%s}versions" % VERSIONS_NS, nsmap={None: VERSIONS_NS})
        root.set("identifier", ctx.referent_id)
        for plan in plans:
            version = etree.SubElement(root, "{%s}version" % VERSIONS_NS, package=plan.package_id)
            version.set("repository", plan.repo_base_url)
            if plan.xml_id:
                version.set("xmlId", plan.xml_id)
            if plan.created:
                version.set("created", format_datestamp(plan.created))
        return Dissemination(etree.tostring(root, xml_declaration=True, encoding="UTF-8"), "application/xml")

    def resolve(self, ctx: ContextObject) -> Dissemination:
        try:
            plans = self.locator.resolve(ctx.referent_id)
        except LocatorUnavailable as e:
            raise UpstreamFailure(f"identifier locator unreachable: {e}") from e
        plan = plans[0]
        self._step("locate", f"Located {ctx.referent_id} in {plan.package_id} at {plan.repo_base_url}", ctx)
        if ctx.service_data == "versions":
            self._step("deliver", f"Delivering {len(plans)} versions of {ctx.referent_id}", ctx)
            return self._versions(ctx, plans)

        try:
            record = self.client.get_record(plan.repo_base_url, plan.package_id, DIDL_PREFIX)
            stored = parse_didl(record.metadata)
        except (HarvestError, DidlError) as e:
            raise UpstreamFailure(f"cannot fetch {plan.package_id} from {plan.repo_base_url}: {e}") from e
        self._step("fetch", f"Fetched {plan.package_id}", ctx)

        completed = insert_dims(stored, self.engine.dip_table)
        self._step("insert", f"Completed {plan.package_id}", ctx)

        target = PackageIdentifier(plan.package_id, plan.xml_id)
        result = self.engine.apply_service(completed, target, ctx.service_type_id, stored=stored)
        self._step("apply", f"Applied {ctx.service_type_id or 'raw dissemination'} to {target}", ctx)

        self._step("deliver", f"Delivering {len(result.data)} bytes of {result.mime_type}", ctx)
        return result
