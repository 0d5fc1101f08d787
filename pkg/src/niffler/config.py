"""Service configuration: one plain-text ``key = value`` file.

Blank lines and ``#`` comments are ignored.  Unknown keys are rejected so a
typo never silently falls back to a default.  Plugin registry entries use
``plugin.<name> = <command path>``.
"""

from __future__ import annotations

from dataclasses import dataclass, fields
from pathlib import Path

from niffler.errors import ConfigError
from niffler.net.association import validate_ae_title

DEFAULT_EXTRACTION_INTERVAL = 600.0
DEFAULT_JOURNAL_INTERVAL = 1200.0
DEFAULT_PURGE_TIME = "23:59"

#: Keys that name directories or files; no two may share a resolved path.
_PATH_KEYS = (
    "vault_root",
    "journal_path",
    "profile_dir",
    "store_dir",
    "export_dir",
    "jobs_dir",
)

_REQUIRED_KEYS = _PATH_KEYS + ("api_token",)

_PLUGIN_PREFIX = "plugin."


def parse_purge_time(text: str) -> tuple[int, int]:
    """Validate ``HH:MM`` and return (hour, minute)."""
    parts = text.split(":")
    if len(parts) == 2 and parts[0].isdigit() and parts[1].isdigit():
        hour, minute = int(parts[0]), int(parts[1])
        if 0 <= hour <= 23 and 0 <= minute <= 59:
            return hour, minute
    raise ConfigError(f"purge_time must be HH:MM (00:00..23:59): {text!r}")


@dataclass(frozen=True)
class ServiceConfig:
    """Everything the integrated service needs, validated up front."""

    vault_root: Path
    journal_path: Path
    profile_dir: Path
    store_dir: Path
    export_dir: Path
    jobs_dir: Path
    api_token: str
    listener_port: int = 11112
    listener_ae: str = "NIFFLER"
    listener_allow: tuple[str, ...] = ()
    extraction_interval: float = DEFAULT_EXTRACTION_INTERVAL
    journal_interval: float = DEFAULT_JOURNAL_INTERVAL
    purge_time: str = DEFAULT_PURGE_TIME
    api_host: str = "127.0.0.1"
    api_port: int = 8642
    plugins: tuple[tuple[str, str], ...] = ()

    def __post_init__(self) -> None:
        resolved: dict[Path, str] = {}
        for key in _PATH_KEYS:
            path = Path(getattr(self, key)).expanduser().resolve()
            other = resolved.get(path)
            if other is not None:
                raise ConfigError(
                    f"{other} and {key} point to the same path: {path}"
                )
            resolved[path] = key
        for name, value in (
            ("extraction_interval", self.extraction_interval),
            ("journal_interval", self.journal_interval),
        ):
            if not value > 0:  # also rejects NaN
                raise ConfigError(f"{name} must be positive: {value}")
        parse_purge_time(self.purge_time)
        validate_ae_title(self.listener_ae)
        for caller in self.listener_allow:
            validate_ae_title(caller)
        for port_name, port in (("listener_port", self.listener_port),
                                ("api_port", self.api_port)):
            if not 0 <= port <= 65535:
                raise ConfigError(f"{port_name} out of range: {port}")
        if not self.api_token:
            raise ConfigError("api_token must not be empty")
        for name, command in self.plugins:
            if not name or not command:
                raise ConfigError(f"plugin entry must map a name to a command: {name!r}")

    def purge_hhmm(self) -> tuple[int, int]:
        return parse_purge_time(self.purge_time)


_FIELD_TYPES = {f.name: f for f in fields(ServiceConfig)}

_INT_KEYS = ("listener_port", "api_port")
_FLOAT_KEYS = ("extraction_interval", "journal_interval")


def parse_config_text(text: str, source: str = "<config>") -> ServiceConfig:
    values: dict[str, object] = {}
    plugins: list[tuple[str, str]] = []
    for line_no, raw_line in enumerate(text.splitlines(), start=1):
        line = raw_line.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigError(f"{source} line {line_no}: expected 'key = value': {raw_line!r}")
        key, _sep, value = line.partition("=")
        key, value = key.strip(), value.strip()
        if key.startswith(_PLUGIN_PREFIX):
            plugins.append((key[len(_PLUGIN_PREFIX):], value))
            continue
        if key not in _FIELD_TYPES or key == "plugins":
            raise ConfigError(f"{source} line {line_no}: unknown key {key!r}")
        if key in values:
            raise ConfigError(f"{source} line {line_no}: duplicate key {key!r}")
        values[key] = _convert(key, value, source, line_no)
    missing = [key for key in _REQUIRED_KEYS if key not in values]
    if missing:
        raise ConfigError(f"{source}: missing required keys: {', '.join(missing)}")
    values["plugins"] = tuple(plugins)
    return ServiceConfig(**values)  # type: ignore[arg-type]


def _convert(key: str, value: str, source: str, line_no: int) -> object:
    try:
        if key in _PATH_KEYS:
            return Path(value)
        if key in _INT_KEYS:
            return int(value)
        if key in _FLOAT_KEYS:
            return float(value)
        if key == "listener_allow":
            return tuple(part.strip() for part in value.split(",") if part.strip())
    except ValueError as exc:
        raise ConfigError(f"{source} line {line_no}: bad value for {key}: {exc}") from exc
    return value


def load_config(path: Path) -> ServiceConfig:
    path = Path(path)
    try:
        text = path.read_text(encoding="utf-8")
    except OSError as exc:
        raise ConfigError(f"cannot read config file {path}: {exc}") from exc
    return parse_config_text(text, source=str(path))


def write_example_config(path: Path) -> Path:
    """Write a commented starter config next to which docs can point."""
    path = Path(path)
    path.write_text(EXAMPLE_CONFIG)
    return path


EXAMPLE_CONFIG = """\
# niffler service configuration

# Storage layout (all paths must be distinct)
vault_root = /var/lib/niffler/vault
journal_path = /var/lib/niffler/journal.json
profile_dir = /etc/niffler/profiles
store_dir = /var/lib/niffler/store
export_dir = /var/lib/niffler/exports
jobs_dir = /var/lib/niffler/jobs

# DICOM listener
listener_port = 11112
listener_ae = NIFFLER
# listener_allow = MODALITY1,MODALITY2   # empty: accept any calling AE

# Schedules (seconds; purge_time is local wall clock HH:MM)
extraction_interval = 600
journal_interval = 1200
purge_time = 23:59

# HTTP API
api_host = 127.0.0.1
api_port = 8642
api_token = change-me

# Extra detection plugins (the stub detector is built in)
# plugin.my-detector = /opt/detectors/my_detector.py
"""
