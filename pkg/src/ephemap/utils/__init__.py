"""File formats and raster previews."""

from .formats import CloudFormat, detect_format, format_from_extension
from .io import (
    MapArchive,
    SessionLayout,
    read_archive,
    read_cloud,
    read_delta,
    read_session,
    write_archive,
    write_cloud,
    write_delta,
    write_session,
)

__all__ = [
    "CloudFormat",
    "MapArchive",
    "SessionLayout",
    "detect_format",
    "format_from_extension",
    "read_archive",
    "read_cloud",
    "read_delta",
    "read_session",
    "write_archive",
    "write_cloud",
    "write_delta",
    "write_session",
]
