"""Small shared helpers."""
from .helpers import (
    atomic_write_bytes,
    atomic_write_text,
    configure_logging,
    file_sha256,
    format_percentage,
)
