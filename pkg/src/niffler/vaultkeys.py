"""Series keys and the path-component sanitizer the vault layout rests on.

Keys always hold the sanitized form of the three identifiers, so a key built
from header values and a key recovered from a directory walk compare equal.
"""

from __future__ import annotations

import hashlib
import re
from dataclasses import dataclass

_UNSAFE = re.compile(r"[^A-Za-z0-9._-]")
_MAX_STEM = 55


def sanitize_component(value: str) -> str:
    """Map an arbitrary identifier to a filesystem-safe path component.

    Safe characters pass through; anything else becomes "_", leading dots
    are stripped (no hidden or traversal names), and over-long values are
    truncated.  Whenever the value changed, an 8-hex digest of the original
    is appended so distinct originals keep distinct components.  The result
    is a fixed point: sanitizing it again returns it unchanged.
    """
    kept = _UNSAFE.sub("_", value).lstrip(".")
    if kept == value and 0 < len(value) <= _MAX_STEM + 9:
        return value
    digest = hashlib.sha256(value.encode("utf-8", "surrogateescape")).hexdigest()[:8]
    return f"{kept[:_MAX_STEM] or 'EMPTY'}-{digest}"


@dataclass(frozen=True, order=True)
class SeriesKey:
    """Identity of one series inside the vault (sanitized components)."""

    patient_id: str
    study_instance_uid: str
    series_instance_uid: str

    @classmethod
    def from_identifiers(cls, patient_id: str, study_uid: str, series_uid: str) -> "SeriesKey":
        return cls(
            sanitize_component(patient_id),
            sanitize_component(study_uid),
            sanitize_component(series_uid),
        )

    def components(self) -> tuple[str, str, str]:
        return (self.patient_id, self.study_instance_uid, self.series_instance_uid)
