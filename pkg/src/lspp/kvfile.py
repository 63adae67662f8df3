"""Reader/writer for the plain ``key = value`` text format used by config files.

Blank lines and lines starting with ``#`` are ignored.  Keys are dotted
names, values are kept as raw strings; callers convert them.
"""

from __future__ import annotations

from pathlib import Path
from typing import Iterable, Mapping


class ConfigFormatError(ValueError):
    """Raised for malformed key-value files."""


def parse_kv(text: str, source: str = "<string>") -> dict[str, str]:
    out: dict[str, str] = {}
    for lineno, raw in enumerate(text.splitlines(), start=1):
        line = raw.strip()
        if not line or line.startswith("#"):
            continue
        if "=" not in line:
            raise ConfigFormatError(f"{source}:{lineno}: expected 'key = value', got {raw!r}")
        key, value = line.split("=", 1)
        key = key.strip()
        if not key:
            raise ConfigFormatError(f"{source}:{lineno}: empty key")
        if key in out:
            raise ConfigFormatError(f"{source}:{lineno}: duplicate key {key!r}")
        out[key] = value.strip()
    return out


def read_kv(path: str | Path) -> dict[str, str]:
    path = Path(path)
    return parse_kv(path.read_text(encoding="utf-8"), source=str(path))


def format_kv(items: Mapping[str, object] | Iterable[tuple[str, object]], header: str = "") -> str:
    pairs = items.items() if isinstance(items, Mapping) else items
    lines = [f"# {h}" for h in header.splitlines()] if header else []
    for key, value in pairs:
        if isinstance(value, (list, tuple)):
            value = " ".join(_fmt(v) for v in value)
        else:
            value = _fmt(value)
        lines.append(f"{key} = {value}")
    return "\n".join(lines) + "\n"


def _fmt(v: object) -> str:
    if isinstance(v, bool):
        return "true" if v else "false"
    if isinstance(v, float):
        return repr(v)
    return str(v)


def floats(value: str) -> list[float]:
    try:
        return [float(tok) for tok in value.split()]
    except ValueError as exc:
        raise ConfigFormatError(f"expected reals, got {value!r}") from exc


def as_bool(value: str) -> bool:
    v = value.strip().lower()
    if v in ("1", "true", "yes", "on"):
        return True
    if v in ("0", "false", "no", "off"):
        return False
    raise ConfigFormatError(f"expected boolean, got {value!r}")
