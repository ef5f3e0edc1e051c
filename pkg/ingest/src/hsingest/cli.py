"""Command line: convert MAT-file scenes listed in a manifest."""

from __future__ import annotations

import argparse
import sys

from .convert import IngestError, convert
from .manifest import ManifestError, load_manifest


def main(argv: list[str] | None = None) -> int:
    parser = argparse.ArgumentParser(
        prog="hsi-ingest",
        description="Convert a MAT-file hyperspectral scene to HSC1/HSL1 files.",
    )
    parser.add_argument("--manifest", required=True, help="TOML manifest path")
    args = parser.parse_args(sys.argv[1:] if argv is None else argv)
    try:
        manifest = load_manifest(args.manifest)
        convert(manifest)
    except (ManifestError, IngestError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    return 0


if __name__ == "__main__":
    sys.exit(main())
