"""Command-line entry point for didl-repo."""

import argparse
import json
import sys
from datetime import datetime, timedelta, timezone
from pathlib import Path
from typing import Optional
from urllib.parse import quote

from .client import HttpTransport, OaiClient
from .clock import DAY_FORMAT, format_datestamp, parse_datestamp
from .config import RepositoryConfig, setup_logging
from .dip import DipTable, DipTableEntry
from .environment import SERVICES, Environment
from .ingest import load_batch
from .openurl import parse_kev
from .repository import DIDL_PREFIX
from .tape import TAPE_SUFFIX, XMLTape
from .transforms import default_registry


def load_config(parsed_args) -> RepositoryConfig:
    """Config file (or environment), then command-line overrides."""
    if parsed_args.config:
        config = RepositoryConfig.from_file(parsed_args.config)
    else:
        config = RepositoryConfig.from_env()

    if parsed_args.data_dir:
        config.data_dir = parsed_args.data_dir
    if parsed_args.namespace:
        config.namespace = parsed_args.namespace
    if parsed_args.base_url:
        config.base_url = parsed_args.base_url
    if getattr(parsed_args, "page_size", None) is not None:
        config.page_size = parsed_args.page_size
    if getattr(parsed_args, "host", None):
        config.host = parsed_args.host
    if getattr(parsed_args, "port", None) is not None:
        config.port = parsed_args.port

    config.validate()
    return config


def _datestamp(text: Optional[str], end_of_day: bool = False) -> Optional[datetime]:
    if not text:
        return None
    if len(text.strip()) == 10:
        day = datetime.strptime(text.strip(), DAY_FORMAT).replace(tzinfo=timezone.utc)
        return day + timedelta(days=1, seconds=-1) if end_of_day else day
    return parse_datestamp(text)


def _client_for(env: Environment, url: str) -> OaiClient:
    """Endpoints of this deployment are answered in-process; anything else over HTTP."""
    if url.startswith(env.config.base_url.rstrip("/") + "/"):
        return env.client
    return OaiClient(HttpTransport(env.config.request_timeout))


def cmd_ingest(parsed_args, config: RepositoryConfig) -> int:
    source = Path(parsed_args.batch)
    items = [source] if source.suffix == ".ini" else load_batch(source)
    env = Environment(config)
    try:
        report = env.ingest_batch(items, tape_name=parsed_args.tape_name)
    finally:
        env.close()
    for package_id in report.package_ids:
        print(package_id)
    for item, reason in report.failures.items():
        print(f"FAILED {item}: {reason}")
        for key in report.orphaned.get(item, ()):
            print(f"  unreferenced ARC record {key}")
    print(f"Tape {report.tape_name}: {len(report.package_ids)} ingested, {len(report.failures)} failed")
    print(f"Repository {config.repo_url(report.tape_name)}")
    return 0 if report.ok else 1


def cmd_serve(parsed_args, config: RepositoryConfig) -> int:
    services = parsed_args.only or list(SERVICES)
    # A partial deployment reaches the other services over HTTP
    transport = None if set(services) == set(SERVICES) else HttpTransport(config.request_timeout)
    env = Environment(config, services=services, transport=transport)
    print(f"Serving {', '.join(services)} on {config.host}:{config.port} as {config.base_url}")
    try:
        env.app.run(host=config.host, port=config.port, threaded=True)
    finally:
        env.close()
    return 0


def cmd_harvest(parsed_args, config: RepositoryConfig) -> int:
    env = Environment(config)
    try:
        client = _client_for(env, parsed_args.url)
        run = client.harvest(
            parsed_args.url,
            parsed_args.prefix,
            from_=_datestamp(parsed_args.from_date),
            until=_datestamp(parsed_args.until_date, end_of_day=True),
            set_spec=parsed_args.set_spec,
            verb="ListIdentifiers" if parsed_args.headers_only else "ListRecords",
        )
        output = Path(parsed_args.output) if parsed_args.output else None
        if output is not None:
            output.mkdir(parents=True, exist_ok=True)
        records = []
        for record in run:
            records.append(record)
            if output is not None and record.metadata is not None:
                (output / f"{quote(record.identifier, safe='')}.xml").write_bytes(record.metadata)
            print(f"{record.identifier}\t{format_datestamp(record.datestamp)}")
        if parsed_args.into_locator:
            counts = env.locator_store.load_identifier_listing(records)
            print(f"Loaded {counts['package_rows']} package rows, {counts['content_rows']} content rows")
    finally:
        env.close()
    print(f"Harvested {run.count} records in {run.pages} pages")
    return 0


def cmd_locate(parsed_args, config: RepositoryConfig) -> int:
    env = Environment(config)
    try:
        plans = env.locator.resolve(parsed_args.identifier)
    finally:
        env.close()
    for plan in plans:
        created = format_datestamp(plan.created) if plan.created else "-"
        print(f"{plan.repo_base_url}\t{plan.package_id}\t{plan.xml_id or '-'}\t{created}")
    return 0


def cmd_populate(parsed_args, config: RepositoryConfig) -> int:
    env = Environment(config)
    try:
        stats = env.populate_locator()
    finally:
        env.close()
    print(json.dumps(stats.to_dict(), indent=2))
    return 0 if not stats.failures else 1


def cmd_load_locator(parsed_args, config: RepositoryConfig) -> int:
    env = Environment(config)
    try:
        counts = env.locator_store.load_batch_file(parsed_args.file)
    finally:
        env.close()
    print(f"Loaded {counts['package_rows']} package rows, {counts['content_rows']} content rows")
    return 0


def cmd_dip_table(parsed_args, config: RepositoryConfig) -> int:
    table = DipTable.load(config.dip_table_file)
    if parsed_args.action == "add":
        table.add(
            DipTableEntry(
                parsed_args.service_id,
                parsed_args.placeholder,
                parsed_args.transform,
                parsed_args.description or "",
            )
        )
        table.save(config.dip_table_file)
        print(f"Bound {parsed_args.service_id} to {parsed_args.placeholder}")
    elif parsed_args.action == "remove":
        removed = table.remove(parsed_args.service_id, parsed_args.placeholder)
        table.save(config.dip_table_file)
        print(f"Removed {removed} rows")
        if not removed:
            return 1
    else:
        for entry in table:
            print(f"{entry.service_id}\t{entry.placeholder_value}\t{entry.transform_ref}\t{entry.description}")
    return 0


def cmd_transforms(parsed_args, config: RepositoryConfig) -> int:
    registry = default_registry(config.disabled_transforms)
    for transform in registry.all():
        state = "enabled" if transform.enabled else "disabled"
        print(f"{transform.name}\t{transform.scope}\t{transform.prefix or '-'}\t{transform.mime_type}\t{state}")
    return 0


def cmd_inspect_tape(parsed_args, config: RepositoryConfig) -> int:
    path = Path(parsed_args.tape)
    if not path.exists():
        path = config.tapes_dir / f"{parsed_args.tape}{TAPE_SUFFIX}"
    tape = XMLTape(path)
    stats = tape.stats()
    if parsed_args.scan:
        stats["scanned"] = sum(1 for _ in tape.scan())
    print(json.dumps(stats, indent=2))
    if parsed_args.scan and stats["scanned"] != stats["records"]:
        print(f"Error: index holds {stats['records']} records, scan found {stats['scanned']}")
        return 1
    return 0


def cmd_openurl(parsed_args, config: RepositoryConfig) -> int:
    env = Environment(config)
    try:
        result = env.resolver.resolve(parse_kev(parsed_args.query))
    finally:
        env.close()
    if parsed_args.output:
        Path(parsed_args.output).write_bytes(result.data)
        print(f"Wrote {len(result.data)} bytes of {result.mime_type} to {parsed_args.output}")
    else:
        sys.stdout.buffer.write(result.data)
        sys.stdout.flush()
    return 0


COMMANDS = {
    "ingest": cmd_ingest,
    "serve": cmd_serve,
    "harvest": cmd_harvest,
    "locate": cmd_locate,
    "populate": cmd_populate,
    "load-locator": cmd_load_locator,
    "dip-table": cmd_dip_table,
    "transforms": cmd_transforms,
    "inspect-tape": cmd_inspect_tape,
    "openurl": cmd_openurl,
}


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", type=str, default=None, help="JSON configuration file")
    common.add_argument("--data-dir", type=str, default=None, help="Storage directory")
    common.add_argument("--namespace", type=str, default=None, help="Identifier namespace")
    common.add_argument("--base-url", type=str, default=None, help="Public base URL of the services")
    common.add_argument(
        "--log-level",
        choices=["DEBUG", "INFO", "WARNING", "ERROR"],
        default="WARNING",
        help="Logging level",
    )

    parser = argparse.ArgumentParser(
        description="didl-repo: DIDL archival packages behind OAI-PMH and OpenURL",
        formatter_class=argparse.ArgumentDefaultsHelpFormatter,
    )
    commands = parser.add_subparsers(dest="command", required=True)

    ingest = commands.add_parser("ingest", parents=[common], help="Ingest a batch into a new tape")
    ingest.add_argument("batch", help="Manifest directory, manifest list file or one .ini manifest")
    ingest.add_argument("--tape-name", type=str, default=None, help="Name for the new tape")

    serve = commands.add_parser("serve", parents=[common], help="Serve the HTTP endpoints")
    serve.add_argument("--only", nargs="+", choices=SERVICES, default=None, help="Services to run")
    serve.add_argument("--host", type=str, default=None, help="Interface to bind")
    serve.add_argument("--port", type=int, default=None, help="Port to bind")
    serve.add_argument("--page-size", type=int, default=None, help="OAI-PMH list page size")

    harvest = commands.add_parser("harvest", parents=[common], help="Harvest an OAI-PMH endpoint")
    harvest.add_argument("url", help="OAI-PMH baseURL")
    harvest.add_argument("--prefix", default=DIDL_PREFIX, help="metadataPrefix")
    harvest.add_argument("--from", dest="from_date", default=None, help="Lower datestamp bound")
    harvest.add_argument("--until", dest="until_date", default=None, help="Upper datestamp bound")
    harvest.add_argument("--set", dest="set_spec", default=None, help="setSpec")
    harvest.add_argument("--headers-only", action="store_true", help="Use ListIdentifiers")
    harvest.add_argument("--output", default=None, help="Directory for one metadata file per record")
    harvest.add_argument(
        "--into-locator", action="store_true", help="Load an identifiers listing into the locator"
    )

    locate = commands.add_parser("locate", parents=[common], help="Resolve an identifier")
    locate.add_argument("identifier", help="Package Identifier (optionally #xmlId) or Content Identifier")

    commands.add_parser("populate", parents=[common], help="Populate the locator by harvesting")

    load = commands.add_parser("load-locator", parents=[common], help="Load locator rows from a file")
    load.add_argument("file", help="Tab-delimited P/C row file")

    dip = commands.add_parser("dip-table", help="List or edit the DIP Table")
    dip_actions = dip.add_subparsers(dest="action", required=True)
    dip_actions.add_parser("list", parents=[common], help="List the rows")
    add = dip_actions.add_parser("add", parents=[common], help="Bind a service to a placeholder")
    add.add_argument("service_id")
    add.add_argument("placeholder")
    add.add_argument("transform")
    add.add_argument("--description", default=None)
    remove = dip_actions.add_parser("remove", parents=[common], help="Unbind a service")
    remove.add_argument("service_id")
    remove.add_argument("placeholder", nargs="?", default=None)

    commands.add_parser("transforms", parents=[common], help="List registered transforms")

    inspect = commands.add_parser("inspect-tape", parents=[common], help="Show tape statistics")
    inspect.add_argument("tape", help="Tape name or path")
    inspect.add_argument("--scan", action="store_true", help="Also count records by a streamed scan")

    openurl = commands.add_parser("openurl", parents=[common], help="Resolve one KEV ContextObject")
    openurl.add_argument("query", help="KEV query string")
    openurl.add_argument("--output", default=None, help="File for the dissemination")

    return parser


def main(args: Optional[list] = None) -> int:
    """
    Main entry point for the CLI.

    Args:
        args: Optional command line arguments (for testing)

    Returns:
        Exit code (0 for success, 1 for failure)
    """
    parser = build_parser()
    parsed_args = parser.parse_args(args)

    setup_logging(parsed_args.log_level)

    try:
        config = load_config(parsed_args)
        return COMMANDS[parsed_args.command](parsed_args, config)

    except KeyboardInterrupt:
        print("\nInterrupted by user")
        return 1
    except Exception as e:
        print(f"Error: {e}")
        return 1


if __name__ == "__main__":
    sys.exit(main())
