"""Point-cloud file format detection."""

from enum import Enum
from typing import Optional


class CloudFormat(str, Enum):
    """Supported point-cloud file formats."""

    ARCHIVE = "archive"
    PLY = "ply"
    XYZ = "xyz"
    KITTI_BIN = "bin"

    @property
    def extension(self) -> str:
        """Get the file extension for this format."""
        if self == CloudFormat.ARCHIVE:
            return ".ephm"
        return f".{self.value}"

    @property
    def is_text(self) -> bool:
        return self in (CloudFormat.PLY, CloudFormat.XYZ)


# Magic bytes for format detection
ARCHIVE_MAGIC = b"EPHMAP\x00\x00"
PLY_MAGIC = b"ply\n"


def detect_format(data: bytes) -> Optional[CloudFormat]:
    """
    Detect a cloud format from the first bytes of a file.

    KITTI scans and XYZ text carry no signature and are never detected.

    Args:
        data: Leading bytes of the file

    Returns:
        Detected CloudFormat or None if unknown
    """
    if data[: len(ARCHIVE_MAGIC)] == ARCHIVE_MAGIC:
        return CloudFormat.ARCHIVE
    if data[: len(PLY_MAGIC)] == PLY_MAGIC or data[:5] == b"ply\r\n":
        return CloudFormat.PLY
    return None


def format_from_extension(ext: str) -> Optional[CloudFormat]:
    """
    Get a cloud format from a file extension.

    Args:
        ext: File extension (with or without leading dot)

    Returns:
        CloudFormat or None if unknown
    """
    ext = ext.lower().lstrip(".")
    mapping = {
        "ephm": CloudFormat.ARCHIVE,
        "ply": CloudFormat.PLY,
        "xyz": CloudFormat.XYZ,
        "txt": CloudFormat.XYZ,
        "bin": CloudFormat.KITTI_BIN,
    }
    return mapping.get(ext)
