"""Flat `section.key = value` configuration files.

No nesting, no quoting: one dotted key and one value per line, `#` starts
a comment. Typed accessors raise ValidationError with the offending key.
"""

from __future__ import annotations

from .errors import ValidationError


def parse_config(path: str) -> dict[str, str]:
    values: dict[str, str] = {}
    with open(path) as fh:
        for lineno, raw in enumerate(fh, 1):
            line = raw.split("#", 1)[0].strip()
            if not line:
                continue
            if "=" not in line:
                raise ValidationError(f"{path}:{lineno}: expected 'key = value', got {line!r}")
            key, value = (part.strip() for part in line.split("=", 1))
            if not key:
                raise ValidationError(f"{path}:{lineno}: empty key")
            values[key] = value
    return values


class ConfigView:
    """Typed access over a parsed config dict."""

    def __init__(self, values: dict[str, str], source: str = "<config>"):
        self.values = values
        self.source = source

    def has(self, key: str) -> bool:
        return key in self.values

    def get(self, key: str, default: str | None = None) -> str:
        if key in self.values:
            return self.values[key]
        if default is not None:
            return default
        raise ValidationError(f"{self.source}: missing required key {key!r}")

    def get_float(self, key: str, default: float | None = None) -> float:
        if key not in self.values and default is not None:
            return default
        try:
            return float(self.get(key))
        except ValueError as exc:
            raise ValidationError(f"{self.source}: key {key!r} is not a number") from exc

    def get_int(self, key: str, default: int | None = None) -> int:
        if key not in self.values and default is not None:
            return default
        try:
            return int(self.get(key))
        except ValueError as exc:
            raise ValidationError(f"{self.source}: key {key!r} is not an integer") from exc

    def get_bool(self, key: str, default: bool = False) -> bool:
        if key not in self.values:
            return default
        value = self.values[key].lower()
        if value in ("true", "1", "yes"):
            return True
        if value in ("false", "0", "no"):
            return False
        raise ValidationError(f"{self.source}: key {key!r} is not a boolean")

    def get_floats(self, key: str, default: tuple[float, ...] | None = None) -> tuple[float, ...]:
        if key not in self.values and default is not None:
            return default
        try:
            return tuple(float(v) for v in self.get(key).replace(",", " ").split())
        except ValueError as exc:
            raise ValidationError(f"{self.source}: key {key!r} is not a number list") from exc
