"""MAT-container to HSC1/HSL1 conversion for hyperspectral scenes."""

from .convert import (
    IngestError,
    convert,
    discard_bands,
    load_variable,
    read_cube_file,
    read_label_file,
    write_cube_file,
    write_label_file,
)
from .manifest import IngestManifest, ManifestError, load_manifest, parse_toml_subset

__version__ = "0.1.0"
