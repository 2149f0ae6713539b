"""Line-based key/value record files.

Used for corpus manifests, run configs, and checkpoint sidecars. The
format is deliberately simple so files stay diffable:

    # optional comment
    [section]
    key = value
    other = 1, 2, 3

Sections may repeat (e.g. one [sample] per corpus entry). Values are
stored as strings; typed accessors live on Section. Writing is fully
deterministic: section and key order is preserved as given.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from pathlib import Path

from .errors import ConfigError


@dataclass
class Section:
    name: str
    fields: dict[str, str] = field(default_factory=dict)

    def get(self, key: str, default: str | None = None) -> str:
        if key in self.fields:
            return self.fields[key]
        if default is None:
            raise ConfigError(f"missing key {key!r} in [{self.name}]")
        return default

    def get_int(self, key: str, default: int | None = None) -> int:
        if key not in self.fields and default is not None:
            return default
        return int(self.get(key))

    def get_float(self, key: str, default: float | None = None) -> float:
        if key not in self.fields and default is not None:
            return default
        return float(self.get(key))

    def get_bool(self, key: str, default: bool | None = None) -> bool:
        if key not in self.fields and default is not None:
            return default
        raw = self.get(key).lower()
        if raw in ("true", "1", "yes"):
            return True
        if raw in ("false", "0", "no"):
            return False
        raise ConfigError(f"bad boolean {raw!r} for {key!r} in [{self.name}]")

    def get_list(self, key: str) -> list[str]:
        raw = self.get(key, "")
        if not raw.strip():
            return []
        return [part.strip() for part in raw.split(",")]

    def get_ints(self, key: str) -> list[int]:
        return [int(x) for x in self.get_list(key)]

    def get_floats(self, key: str) -> list[float]:
        return [float(x) for x in self.get_list(key)]

    def set(self, key: str, value) -> None:
        if isinstance(value, bool):
            self.fields[key] = "true" if value else "false"
        elif isinstance(value, (list, tuple)):
            self.fields[key] = ", ".join(_scalar(v) for v in value)
        else:
            self.fields[key] = _scalar(value)


def _scalar(value) -> str:
    if isinstance(value, bool):
        return "true" if value else "false"
    if isinstance(value, float):
        return repr(value)  # repr round-trips float64 exactly
    return str(value)


def dump_records(sections: list[Section]) -> str:
    lines: list[str] = []
    for sec in sections:
        lines.append(f"[{sec.name}]")
        for key, value in sec.fields.items():
            lines.append(f"{key} = {value}")
        lines.append("")
    return "\n".join(lines)


def write_records(path: str | Path, sections: list[Section]) -> None:
    Path(path).write_text(dump_records(sections), encoding="utf-8")


def parse_records(text: str) -> list[Section]:
    sections: list[Section] = []
    current: Section | None = None
    for lineno, raw in enumerate(text.splitlines(), start=1):
        line = raw.strip()
        if not line or line.startswith("#"):
            continue
        if line.startswith("[") and line.endswith("]"):
            current = Section(line[1:-1].strip())
            sections.append(current)
            continue
        if "=" not in line:
            raise ConfigError(f"line {lineno}: expected 'key = value', got {raw!r}")
        if current is None:
            raise ConfigError(f"line {lineno}: key/value before any [section]")
        key, _, value = line.partition("=")
        current.fields[key.strip()] = value.strip()
    return sections


def read_records(path: str | Path) -> list[Section]:
    return parse_records(Path(path).read_text(encoding="utf-8"))


def find_section(sections: list[Section], name: str) -> Section:
    for sec in sections:
        if sec.name == name:
            return sec
    raise ConfigError(f"missing [{name}] section")


def find_all(sections: list[Section], name: str) -> list[Section]:
    return [sec for sec in sections if sec.name == name]
