"""Frozen-encoder feature extraction to FEATSET files."""

from .featset import write_featset
from .pipeline import (
    EncoderLoadError,
    ExtractionJob,
    ExtractionResult,
    ExtractorError,
    InputError,
    extract,
    read_tsv,
)

__all__ = [
    "EncoderLoadError", "ExtractionJob", "ExtractionResult",
    "ExtractorError", "InputError", "extract", "read_tsv", "write_featset",
]
