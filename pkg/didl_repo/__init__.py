"""
didl-repo: DIDL archival packages behind OAI-PMH and OpenURL

Ingests multi-datastream digital objects as MPEG-21 DIDL documents, stores them in
append-only XMLtape and ARC files exposed as autonomous OAI-PMH repositories, and serves
disseminations through an OAI-PMH Federator and an OpenURL Resolver.
"""

__version__ = "0.1.0"
__author__ = "didl-repo developers"

# Lazy imports keep `import didl_repo` cheap for the CLI
__all__ = [
    "RepositoryConfig",
    "Environment",
    "parse_didl",
    "serialize_didl",
    "build_aip",
    "XMLTape",
    "ArcStore",
    "IdentifierLocator",
    "DipTable",
    "insert_dims",
    "Federator",
    "OpenUrlResolver",
]


def __getattr__(name):
    """Lazy import mechanism for the public API."""
    if name == "RepositoryConfig":
        from .config import RepositoryConfig

        return RepositoryConfig
    elif name == "Environment":
        from .environment import Environment

        return Environment
    elif name == "parse_didl":
        from .didl import parse_didl

        return parse_didl
    elif name == "serialize_didl":
        from .didl import serialize_didl

        return serialize_didl
    elif name == "build_aip":
        from .ingest import build_aip

        return build_aip
    elif name == "XMLTape":
        from .tape import XMLTape

        return XMLTape
    elif name == "ArcStore":
        from .arc import ArcStore

        return ArcStore
    elif name == "IdentifierLocator":
        from .locator import IdentifierLocator

        return IdentifierLocator
    elif name == "DipTable":
        from .dip import DipTable

        return DipTable
    elif name == "insert_dims":
        from .dip import insert_dims

        return insert_dims
    elif name == "Federator":
        from .federator import Federator

        return Federator
    elif name == "OpenUrlResolver":
        from .openurl import OpenUrlResolver

        return OpenUrlResolver
    else:
        raise AttributeError(f"module '{__name__}' has no attribute '{name}'")
