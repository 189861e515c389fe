"""Bridge from pretrained encoders to the MIANEMB1 embedding format."""

from .manifest import ManifestError, ManifestRow, read_manifest
from .encoders import Encoder, HashEncoder
from .export import ExportError, export
from .writer import write_mianemb1

__version__ = "0.1.0"
