"""Flat ``key=value`` experiment files and run manifests."""

from __future__ import annotations

import dataclasses
import hashlib
import typing
from datetime import datetime, timezone
from pathlib import Path
from typing import Iterable, Literal, Mapping, Optional, Union, get_args, get_origin

from .orchestrator import ConfigError, ExperimentConfig

_HINTS = typing.get_type_hints(ExperimentConfig)
FIELDS = tuple(f.name for f in dataclasses.fields(ExperimentConfig))


class ConfigFileError(ConfigError):
    """A config problem tied to a file position."""

    def __init__(self, field: str, message: str, path: Optional[str] = None, line: Optional[int] = None):
        super().__init__(field, message)
        self.path = path
        self.line = line

    def __str__(self) -> str:
        where = ""
        if self.path is not None:
            where = f"{self.path}:{self.line}: " if self.line is not None else f"{self.path}: "
        return where + super().__str__()


def _convert(key: str, raw: str):
    hint = _HINTS[key]
    optional = False
    if get_origin(hint) is Union:
        args = [a for a in get_args(hint) if a is not type(None)]
        optional = len(args) < len(get_args(hint))
        hint = args[0]
    text = raw.strip()
    if optional and text.lower() in ("", "none", "null"):
        return None
    if hint is bool:
        low = text.lower()
        if low in ("true", "yes", "1", "on"):
            return True
        if low in ("false", "no", "0", "off"):
            return False
        raise ValueError(f"expected a boolean, got {raw!r}")
    if hint is int:
        return int(text)
    if hint is float:
        return float(text)
    if get_origin(hint) is Literal:
        allowed = get_args(hint)
        if text not in allowed:
            raise ValueError(f"expected one of {', '.join(allowed)}, got {raw!r}")
        return text
    return text


def parse_assignments(lines: Iterable[str], source: str = "<overrides>", numbered: bool = True) -> dict:
    """Parse ``key=value`` lines (``#`` starts a comment) into typed values."""
    values: dict = {}
    for lineno, line in enumerate(lines, start=1):
        text = line.split("#", 1)[0].strip()
        if not text:
            continue
        where = lineno if numbered else None
        if "=" not in text:
            raise ConfigFileError("<syntax>", f"expected key=value, got {text!r}", source, where)
        key, raw = (part.strip() for part in text.split("=", 1))
        if key not in _HINTS:
            raise ConfigFileError(key, "unknown configuration key", source, where)
        if key in values and numbered:
            raise ConfigFileError(key, "key given twice", source, where)
        try:
            values[key] = _convert(key, raw)
        except ValueError as err:
            raise ConfigFileError(key, str(err), source, where) from None
    return values


def load_config(path: Optional[Union[str, Path]] = None, overrides: Mapping[str, object] = ()) -> ExperimentConfig:
    """Read a config file (or start from defaults) and apply ``overrides`` on top."""
    values: dict = {}
    source = "<defaults>"
    if path is not None:
        source = str(path)
        try:
            text = Path(path).read_text()
        except OSError as err:
            raise ConfigFileError("<file>", f"cannot read config: {err.strerror}", source) from None
        values = parse_assignments(text.splitlines(), source)
    values.update(dict(overrides))
    try:
        return ExperimentConfig(**values)
    except ConfigError as err:
        raise ConfigFileError(err.field, str(err).split(": ", 1)[-1], source) from None


def dump_config(config: ExperimentConfig) -> str:
    """Canonical text form: every field, in declaration order."""
    lines = []
    for name in FIELDS:
        value = getattr(config, name)
        if value is None:
            text = "none"
        elif isinstance(value, bool):
            text = "true" if value else "false"
        elif isinstance(value, float):
            text = repr(value)
        else:
            text = str(value)
        lines.append(f"{name}={text}")
    return "\n".join(lines) + "\n"


def config_hash(config: ExperimentConfig) -> str:
    return hashlib.sha256(dump_config(config).encode()).hexdigest()


@dataclasses.dataclass
class RunManifest:
    config: dict
    config_hash: str
    output_dir: str
    started: str
    finished: str
    seeds: list[int]
    command: str
    files: list[str] = dataclasses.field(default_factory=list)

    @classmethod
    def begin(cls, config: ExperimentConfig, out: Path, seeds: list[int], command: str) -> "RunManifest":
        return cls(
            config=dataclasses.asdict(config),
            config_hash=config_hash(config),
            output_dir=str(out),
            started=_now(),
            finished="",
            seeds=list(seeds),
            command=command,
        )

    def finish(self, files: Iterable[Path], root: Path) -> "RunManifest":
        self.finished = _now()
        self.files = sorted(str(Path(f).relative_to(root)) for f in files)
        return self


def _now() -> str:
    return datetime.now(timezone.utc).isoformat(timespec="seconds")
