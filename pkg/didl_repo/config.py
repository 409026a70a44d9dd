"""Configuration management for a didl-repo deployment."""

import dataclasses
import json
import logging
import os
from dataclasses import dataclass
from pathlib import Path
from typing import Tuple

logger = logging.getLogger(__name__)


@dataclass
class RepositoryConfig:
    """Configuration for one deployment: storage, endpoints and dissemination."""

    # Identity
    namespace: str = "info:local-repo"
    repository_name: str = "didl-repo"
    admin_email: str = "admin@localhost"

    # Storage
    data_dir: str = "./data"
    dip_table_path: str = ""  # empty = <data_dir>/dip_table.tsv

    # Endpoints
    base_url: str = "http://localhost:8080"
    host: str = "127.0.0.1"
    port: int = 8080
    locator_url: str = ""  # empty = in-process locator
    index_url: str = ""  # empty = <base_url>/index
    federator_url: str = ""  # empty = <base_url>/federator
    repo_base_url: str = ""  # empty = <base_url>/repo
    request_timeout: float = 30.0

    # Protocol
    page_size: int = 100
    index_ttl: float = 10.0  # Federator repository-list cache, seconds
    fanout: int = 4  # Concurrent upstream requests per federated request

    # Dissemination
    disabled_transforms: Tuple[str, ...] = ()

    @classmethod
    def from_env(cls) -> "RepositoryConfig":
        """Create configuration from DIDL_REPO_* environment variables."""
        disabled = os.getenv("DIDL_REPO_DISABLED_TRANSFORMS", "")
        return cls(
            namespace=os.getenv("DIDL_REPO_NAMESPACE", cls.namespace),
            repository_name=os.getenv("DIDL_REPO_REPOSITORY_NAME", cls.repository_name),
            admin_email=os.getenv("DIDL_REPO_ADMIN_EMAIL", cls.admin_email),
            data_dir=os.getenv("DIDL_REPO_DATA_DIR", cls.data_dir),
            dip_table_path=os.getenv("DIDL_REPO_DIP_TABLE", cls.dip_table_path),
            base_url=os.getenv("DIDL_REPO_BASE_URL", cls.base_url),
            host=os.getenv("DIDL_REPO_HOST", cls.host),
            port=int(os.getenv("DIDL_REPO_PORT", str(cls.port))),
            locator_url=os.getenv("DIDL_REPO_LOCATOR_URL", cls.locator_url),
            index_url=os.getenv("DIDL_REPO_INDEX_URL", cls.index_url),
            federator_url=os.getenv("DIDL_REPO_FEDERATOR_URL", cls.federator_url),
            repo_base_url=os.getenv("DIDL_REPO_REPO_BASE_URL", cls.repo_base_url),
            request_timeout=float(os.getenv("DIDL_REPO_REQUEST_TIMEOUT", str(cls.request_timeout))),
            page_size=int(os.getenv("DIDL_REPO_PAGE_SIZE", str(cls.page_size))),
            index_ttl=float(os.getenv("DIDL_REPO_INDEX_TTL", str(cls.index_ttl))),
            fanout=int(os.getenv("DIDL_REPO_FANOUT", str(cls.fanout))),
            disabled_transforms=tuple(n.strip() for n in disabled.split(",") if n.strip()),
        )

    @classmethod
    def from_file(cls, path) -> "RepositoryConfig":
        """Create configuration from one JSON file; unknown keys are an error."""
        with open(path, encoding="utf-8") as f:
            data = json.load(f)
        known = {f.name for f in dataclasses.fields(cls)}
        unknown = sorted(set(data) - known)
        if unknown:
            raise ValueError(f"Unknown configuration keys in {path}: {', '.join(unknown)}")
        if "disabled_transforms" in data:
            data["disabled_transforms"] = tuple(data["disabled_transforms"])
        return cls(**data)

    def validate(self) -> None:
        """Validate configuration parameters."""
        if ":" not in self.namespace:
            raise ValueError(f"Namespace must be a URI prefix, got {self.namespace!r}")

        if not self.base_url.startswith(("http://", "https://")):
            raise ValueError(f"Base URL must be http(s), got {self.base_url!r}")

        for name in ("locator_url", "index_url", "federator_url", "repo_base_url"):
            value = getattr(self, name)
            if value and not value.startswith(("http://", "https://")):
                raise ValueError(f"{name} must be an http(s) URL, got {value!r}")

        if not (0 < self.port < 65536):
            raise ValueError(f"Port must be between 1 and 65535, got {self.port}")

        if self.page_size < 1:
            raise ValueError(f"Page size must be >= 1, got {self.page_size}")

        if self.fanout < 1:
            raise ValueError(f"Fanout must be >= 1, got {self.fanout}")

        if self.index_ttl < 0:
            raise ValueError(f"Index TTL must be >= 0, got {self.index_ttl}")

        if self.request_timeout <= 0:
            raise ValueError(f"Request timeout must be > 0, got {self.request_timeout}")

        logger.info(f"Configuration validated: {self}")

    # Derived locations

    @property
    def root(self) -> Path:
        return Path(self.data_dir)

    @property
    def tapes_dir(self) -> Path:
        return self.root / "tapes"

    @property
    def arc_dir(self) -> Path:
        return self.root / "arc"

    @property
    def index_journal(self) -> Path:
        return self.root / "index.jsonl"

    @property
    def locator_db(self) -> Path:
        return self.root / "locator.sqlite"

    @property
    def dip_table_file(self) -> Path:
        return Path(self.dip_table_path) if self.dip_table_path else self.root / "dip_table.tsv"

    def repo_url(self, tape_name: str) -> str:
        base = self.repo_base_url or f"{self.base_url.rstrip('/')}/repo"
        return f"{base.rstrip('/')}/{tape_name}"

    @property
    def index_endpoint(self) -> str:
        return self.index_url or f"{self.base_url.rstrip('/')}/index"

    @property
    def locator_endpoint(self) -> str:
        return self.locator_url or f"{self.base_url.rstrip('/')}/locator"

    @property
    def federator_endpoint(self) -> str:
        return self.federator_url or f"{self.base_url.rstrip('/')}/federator"

    @property
    def openurl_endpoint(self) -> str:
        return f"{self.base_url.rstrip('/')}/openurl"


def setup_logging(level: str = "INFO") -> None:
    """Setup logging configuration."""
    logging.basicConfig(
        level=logging.INFO,
        format="%(asctime)s - %(name)s - %(levelname)s - %(message)s",
        datefmt="%Y-%m-%d %H:%M:%S",
    )

    logging.getLogger("didl_repo").setLevel(getattr(logging, level.upper()))

    # Suppress noisy third-party loggers
    for logger_name in ("urllib3", "requests", "werkzeug"):
        logging.getLogger(logger_name).setLevel(logging.WARNING)
