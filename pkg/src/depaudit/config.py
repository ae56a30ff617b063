"""Runtime configuration: a TOML file plus per-key environment overrides.

Every scalar key can be overridden by a DEPAUDIT_* environment variable,
which wins over the file. Worker pool sizes and generator adapters are
structured and come from the file only.
"""

from __future__ import annotations

import os
from dataclasses import dataclass, field
from pathlib import Path
from typing import Mapping

try:
    import tomllib
except ModuleNotFoundError:  # 3.10 ships without tomllib
    import tomli as tomllib

ROUTING_KEYS = ("repo.mine", "sbom.generate", "components.analyze", "feeds.sync")

DEFAULT_CONFIG_FILENAME = "depaudit.toml"


class ConfigError(ValueError):
    """The configuration file or an override is unusable."""


@dataclass
class Config:
    store_path: str = "depaudit.db"
    out_dir: str = "reports"
    shared_sbom_dir: str = "sboms"
    feed_dir: str | None = None
    feed_url: str | None = None
    nvd_years: tuple[int, int] = (2002, 2023)
    remote_index_url: str | None = None
    requests_per_minute: float = 120.0
    cache_ttl_seconds: int = 86400
    generator_timeout: float = 300.0
    daemon_interval: float = 3600.0
    liveness_port: int = 0
    max_retries: int = 3
    workers: dict[str, int] = field(
        default_factory=lambda: {key: 1 for key in ROUTING_KEYS}
    )
    adapters: dict[str, list[str]] = field(default_factory=dict)

    def __post_init__(self) -> None:
        if self.requests_per_minute <= 0:
            raise ConfigError("requests_per_minute must be positive")
        if self.cache_ttl_seconds < 0:
            raise ConfigError("cache_ttl_seconds must not be negative")
        if self.generator_timeout <= 0:
            raise ConfigError("generator_timeout must be positive")
        if self.daemon_interval <= 0:
            raise ConfigError("daemon_interval must be positive")
        if self.max_retries < 1:
            raise ConfigError("max_retries must be at least one")
        unknown = set(self.workers) - set(ROUTING_KEYS)
        if unknown:
            raise ConfigError(f"unknown worker routing keys: {sorted(unknown)}")
        for key, count in self.workers.items():
            if count < 1:
                raise ConfigError(f"worker count for {key} must be at least one")
        for key in ROUTING_KEYS:
            self.workers.setdefault(key, 1)
        if len(self.nvd_years) != 2 or self.nvd_years[0] > self.nvd_years[1]:
            raise ConfigError(f"nvd_years must be (first, last), got {self.nvd_years!r}")


# env var -> (config attribute, parser)
_ENV_OVERRIDES = {
    "DEPAUDIT_STORE_PATH": ("store_path", str),
    "DEPAUDIT_OUT_DIR": ("out_dir", str),
    "DEPAUDIT_SHARED_SBOM_DIR": ("shared_sbom_dir", str),
    "DEPAUDIT_FEED_DIR": ("feed_dir", str),
    "DEPAUDIT_FEED_URL": ("feed_url", str),
    "DEPAUDIT_REMOTE_INDEX_URL": ("remote_index_url", str),
    "DEPAUDIT_REQUESTS_PER_MINUTE": ("requests_per_minute", float),
    "DEPAUDIT_CACHE_TTL_SECONDS": ("cache_ttl_seconds", int),
    "DEPAUDIT_GENERATOR_TIMEOUT": ("generator_timeout", float),
    "DEPAUDIT_DAEMON_INTERVAL": ("daemon_interval", float),
    "DEPAUDIT_LIVENESS_PORT": ("liveness_port", int),
    "DEPAUDIT_MAX_RETRIES": ("max_retries", int),
}


def _from_toml(data: Mapping) -> dict:
    fields: dict = {}
    for key in ("store_path", "out_dir", "shared_sbom_dir"):
        if key in data:
            fields[key] = str(data[key])

    feeds = data.get("feeds", {})
    if "dir" in feeds:
        fields["feed_dir"] = str(feeds["dir"])
    if "url" in feeds:
        fields["feed_url"] = str(feeds["url"])
    if "years" in feeds:
        years = feeds["years"]
        if not isinstance(years, list) or len(years) != 2:
            raise ConfigError("feeds.years must be [first, last]")
        fields["nvd_years"] = (int(years[0]), int(years[1]))

    matcher = data.get("matcher", {})
    if "remote_index_url" in matcher:
        fields["remote_index_url"] = str(matcher["remote_index_url"]) or None
    if "requests_per_minute" in matcher:
        fields["requests_per_minute"] = float(matcher["requests_per_minute"])
    if "cache_ttl_seconds" in matcher:
        fields["cache_ttl_seconds"] = int(matcher["cache_ttl_seconds"])

    generator = data.get("generator", {})
    if "timeout_seconds" in generator:
        fields["generator_timeout"] = float(generator["timeout_seconds"])
    adapters = generator.get("adapters", {})
    if adapters:
        parsed = {}
        for eco, argv in adapters.items():
            if not isinstance(argv, list) or not all(isinstance(a, str) for a in argv):
                raise ConfigError(f"generator.adapters.{eco} must be a string list")
            parsed[str(eco)] = list(argv)
        fields["adapters"] = parsed

    daemon = data.get("daemon", {})
    if "interval_seconds" in daemon:
        fields["daemon_interval"] = float(daemon["interval_seconds"])
    if "liveness_port" in daemon:
        fields["liveness_port"] = int(daemon["liveness_port"])
    if "max_retries" in daemon:
        fields["max_retries"] = int(daemon["max_retries"])

    workers = data.get("workers", {})
    if workers:
        fields["workers"] = {str(k): int(v) for k, v in workers.items()}
    return fields


def load_config(path: str | Path | None = None, env: Mapping[str, str] | None = None) -> Config:
    """Build the effective configuration.

    Resolution order: explicit ``path`` argument, then $DEPAUDIT_CONFIG,
    then ./depaudit.toml when present, then built-in defaults. A path that
    was named explicitly but does not exist is an error; the implicit
    default file is simply skipped.
    """
    env = os.environ if env is None else env
    explicit = path or env.get("DEPAUDIT_CONFIG")
    fields: dict = {}
    if explicit:
        file_path = Path(explicit)
        if not file_path.is_file():
            raise ConfigError(f"config file not found: {file_path}")
        fields = _parse_file(file_path)
    else:
        default = Path(DEFAULT_CONFIG_FILENAME)
        if default.is_file():
            fields = _parse_file(default)

    for var, (attr, cast) in _ENV_OVERRIDES.items():
        raw = env.get(var)
        if raw is None:
            continue
        try:
            fields[attr] = cast(raw)
        except ValueError as exc:
            raise ConfigError(f"bad value for {var}: {raw!r}") from exc
    return Config(**fields)


def _parse_file(file_path: Path) -> dict:
    try:
        with open(file_path, "rb") as fh:
            data = tomllib.load(fh)
    except tomllib.TOMLDecodeError as exc:
        raise ConfigError(f"{file_path}: {exc}") from exc
    return _from_toml(data)
