"""Ingest manifests: which container to read, what to discard, where to write.

Manifests are flat TOML files.  Python 3.10 has no tomllib and the package
mirror carries no backport, so a small parser covers the subset the
manifests use: strings, numbers, booleans, and integer lists, with
comments.  tomllib is preferred when the interpreter provides it.
"""

from __future__ import annotations

import re
from dataclasses import dataclass, field

try:  # Python >= 3.11
    import tomllib
except ModuleNotFoundError:
    tomllib = None


class ManifestError(ValueError):
    pass


_SCALARS = [
    (re.compile(r'^"(.*)"$'), lambda m: m.group(1)),
    (re.compile(r"^'(.*)'$"), lambda m: m.group(1)),
    (re.compile(r"^(true|false)$"), lambda m: m.group(1) == "true"),
    (re.compile(r"^[+-]?\d+$"), lambda m: int(m.group(0))),
    (re.compile(r"^[+-]?\d*\.\d+(e[+-]?\d+)?$", re.I), lambda m: float(m.group(0))),
]


def _parse_value(raw: str, where: str):
    raw = raw.strip()
    if raw.startswith("["):
        if not raw.endswith("]"):
            raise ManifestError(f"{where}: unterminated list")
        items = [x.strip() for x in raw[1:-1].split(",") if x.strip()]
        return [_parse_value(x, where) for x in items]
    for pattern, convert in _SCALARS:
        m = pattern.match(raw)
        if m:
            return convert(m)
    raise ManifestError(f"{where}: cannot parse value {raw!r}")


def _strip_comment(line: str) -> str:
    out = []
    quote = None
    for ch in line:
        if quote:
            if ch == quote:
                quote = None
        elif ch in "\"'":
            quote = ch
        elif ch == "#":
            break
        out.append(ch)
    return "".join(out)


def parse_toml_subset(text: str, name: str = "<manifest>") -> dict:
    data: dict = {}
    pending_key = None
    pending_val = ""
    for lineno, raw in enumerate(text.splitlines(), start=1):
        line = _strip_comment(raw).strip()
        if not line and pending_key is None:
            continue
        where = f"{name}:{lineno}"
        if pending_key is None:
            if "=" not in line:
                raise ManifestError(f"{where}: expected key = value")
            key, val = (part.strip() for part in line.split("=", 1))
            if not re.fullmatch(r"[A-Za-z0-9_-]+", key):
                raise ManifestError(f"{where}: bad key {key!r}")
        else:
            key, val = pending_key, pending_val + " " + line
        if val.lstrip().startswith("[") and not val.rstrip().endswith("]"):
            pending_key, pending_val = key, val
            continue
        pending_key, pending_val = None, ""
        data[key] = _parse_value(val, where)
    if pending_key is not None:
        raise ManifestError(f"{name}: unterminated list for key {pending_key!r}")
    return data


@dataclass(frozen=True)
class IngestManifest:
    cube_source: str
    cube_variable: str
    labels_source: str
    labels_variable: str
    cube_out: str
    labels_out: str
    discard_bands: tuple[int, ...] = field(default_factory=tuple)

    def validate(self, num_bands: int | None = None) -> None:
        bands = self.discard_bands
        if any(b != int(b) for b in bands):
            raise ManifestError("discard_bands must be integers")
        if any(b2 <= b1 for b1, b2 in zip(bands, bands[1:])):
            raise ManifestError("discard_bands must be strictly increasing")
        if bands and bands[0] < 1:
            raise ManifestError("discard_bands are 1-based; indices start at 1")
        if num_bands is not None and bands and bands[-1] > num_bands:
            raise ManifestError(
                f"discard band {bands[-1]} exceeds the {num_bands} bands in the cube"
            )


def load_manifest(path: str) -> IngestManifest:
    text = open(path, "r", encoding="utf-8").read()
    if tomllib is not None:
        data = tomllib.loads(text)
    else:
        data = parse_toml_subset(text, name=path)
    required = ["cube_source", "cube_variable", "labels_source", "labels_variable",
                "cube_out", "labels_out"]
    missing = [k for k in required if k not in data]
    if missing:
        raise ManifestError(f"{path}: missing keys {missing}")
    unknown = set(data) - set(required) - {"discard_bands"}
    if unknown:
        raise ManifestError(f"{path}: unknown keys {sorted(unknown)}")
    manifest = IngestManifest(
        cube_source=str(data["cube_source"]),
        cube_variable=str(data["cube_variable"]),
        labels_source=str(data["labels_source"]),
        labels_variable=str(data["labels_variable"]),
        cube_out=str(data["cube_out"]),
        labels_out=str(data["labels_out"]),
        discard_bands=tuple(int(b) for b in data.get("discard_bands", [])),
    )
    manifest.validate()
    return manifest
