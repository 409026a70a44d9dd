"""One deployment assembled from a RepositoryConfig.

The Environment owns the stores and wires the services on top of them. Services talk to
each other over OAI-PMH and the locator lookup endpoint through ``transport``: in-process
by default, over HTTP when the services run in separate processes.
"""

import logging
from pathlib import Path
from typing import Dict, Iterable, List, Optional, Union

from .arc import ArcStore
from .client import OaiClient, Transport
from .clock import Clock, SystemClock
from .config import RepositoryConfig
from .dip import DipEngine, DipTable
from .federator import Federator
from .ingest import BatchReport, ObjectManifest, ingest_batch
from .locator import IdentifierLocator, PopulateStats, RemoteLocator
from .openurl import OpenUrlResolver
from .repo_index import IndexRecordSource, RepositoryIndex
from .repository import TapeRepository
from .tape import TAPE_SUFFIX, XMLTape
from .transforms import default_registry

logger = logging.getLogger(__name__)

SERVICES = ("repo", "index", "locator", "federator", "openurl")


class Environment:
    def __init__(
        self,
        config: RepositoryConfig,
        clock: Optional[Clock] = None,
        services: Iterable[str] = SERVICES,
        transport: Optional[Transport] = None,
    ):
        from .web import create_app

        self.config = config
        self.clock = clock or SystemClock()
        self.services = tuple(services)
        config.root.mkdir(parents=True, exist_ok=True)
        config.tapes_dir.mkdir(parents=True, exist_ok=True)

        self.arc = ArcStore(config.arc_dir, config.namespace, config.repository_name, self.clock)
        self.index = RepositoryIndex(config.index_journal, self.clock)
        self.locator_store = IdentifierLocator(config.locator_db)
        self.dip_table = DipTable.load(config.dip_table_file)
        self.registry = default_registry(config.disabled_transforms)
        self.engine = DipEngine(self.registry, self.dip_table, dereference=self.arc.read)
        self.tapes: Dict[str, XMLTape] = {}
        for path in sorted(config.tapes_dir.glob(f"*{TAPE_SUFFIX}")):
            tape = XMLTape(path)
            self.tapes[tape.name] = tape

        self.app = create_app(self, self.services)
        if transport is None:
            from .client import LocalTransport

            transport = LocalTransport(self.app)
        self.transport = transport
        self.client = OaiClient(transport)

        if config.locator_url or "locator" not in self.services:
            self.locator = RemoteLocator(transport, config.locator_endpoint)
        else:
            self.locator = self.locator_store

        self.federator = Federator(
            index_url=config.index_endpoint,
            locator=self.locator,
            client=self.client,
            engine=self.engine,
            registry=self.registry,
            namespace=config.namespace,
            base_url=config.federator_endpoint,
            index_ttl=config.index_ttl,
            fanout=config.fanout,
            admin_email=config.admin_email,
        )
        self.resolver = OpenUrlResolver(self.locator, self.client, self.engine)
        logger.debug(f"Environment ready: {len(self.tapes)} tapes, services {', '.join(self.services)}")

    def ingest_batch(
        self, items: Iterable[Union[ObjectManifest, str, Path]], tape_name: Optional[str] = None
    ) -> BatchReport:
        """Ingest into a new tape, then register its repository in the Repository Index."""
        report = ingest_batch(
            items, self.arc, self.config.tapes_dir, self.clock, self.config.namespace, tape_name
        )
        self.tapes[report.tape_name] = XMLTape(report.tape_path)
        self.index.register_repository(
            self.config.repo_url(report.tape_name), description=f"XMLtape {report.tape_name}"
        )
        self.federator.invalidate()
        return report

    def populate_locator(self) -> PopulateStats:
        return self.locator_store.populate_from_harvest(self.client, self.config.index_endpoint)

    def find_tape(self, tape_name: str) -> Optional[XMLTape]:
        """The named tape, picking up tapes sealed by another process since startup."""
        tape = self.tapes.get(tape_name)
        if tape is not None:
            return tape
        path = self.config.tapes_dir / f"{tape_name}{TAPE_SUFFIX}"
        if not path.is_file() or path.parent != self.config.tapes_dir:
            return None
        tape = XMLTape(path)
        if not tape.sealed:
            # still being written
            return None
        self.tapes[tape_name] = tape
        logger.info(f"Opened tape {tape_name} written by another process")
        return tape

    def repository_source(self, tape_name: str) -> TapeRepository:
        tape = self.find_tape(tape_name)
        if tape is None:
            raise KeyError(tape_name)
        return TapeRepository(
            tape,
            self.config.repo_url(tape_name),
            repository_name=f"{self.config.repository_name} {tape_name}",
            admin_email=self.config.admin_email,
        )

    def index_source(self) -> IndexRecordSource:
        return IndexRecordSource(self.index, self.config.index_endpoint, self.config.admin_email)

    def repository_urls(self) -> List[str]:
        return [entry.base_url for entry in self.index.repositories()]

    def close(self) -> None:
        self.locator_store.close()
