"""Attribute-strip de-identification with referential UID remapping.

Identity attributes are replaced by deterministic keyed-hash surrogates so
two instances of one study keep a shared (surrogate) study UID; everything
else on the strip list is blanked. A marker attribute makes the operation
idempotent on already de-identified datasets.
"""

from __future__ import annotations

import hashlib
from typing import Iterable

from niffler.dicom.dataset import DataElement, DicomDataset, Tag
from niffler.dicom.vr import VR

# The four attributes that carry referential structure between instances.
IDENTITY_ATTRIBUTES = (
    "PatientID",
    "StudyInstanceUID",
    "SeriesInstanceUID",
    "SOPInstanceUID",
)

# Person-identifying attributes blanked by default. Technical and acquisition
# fields (Modality, Manufacturer, dates, exposure, body part) are retained:
# they carry the cohort signal and no direct identifier.
DEFAULT_STRIP_LIST = frozenset({
    "PatientName",
    "PatientBirthDate",
    "PatientSex",
    "PatientAge",
    "ReferringPhysicianName",
    "PerformingPhysicianName",
    "OperatorsName",
    "AccessionNumber",
    "StationName",
    "InstitutionName",
    "InstitutionAddress",
    "StudyID",
})

_MARKER = "PatientIdentityRemoved"
_METHOD = "ATTRIBUTE STRIP + UID REMAP"


def surrogate_uid(salt: bytes, original: str) -> str:
    """'2.25.' + decimal rendering of a 128-bit keyed hash of the original."""
    digest = hashlib.blake2b(original.encode("ascii", errors="replace"),
                             digest_size=16, key=salt).digest()
    return "2.25." + str(int.from_bytes(digest, "big"))


def deidentify(ds: DicomDataset, strip_list: Iterable[str] = DEFAULT_STRIP_LIST,
               salt: bytes = b"") -> DicomDataset:
    """Return a de-identified copy; the input dataset is never modified."""
    if ds.get_scalar(_MARKER) == "YES":
        return ds
    strip_tags = {Tag.parse(ident) for ident in strip_list}
    identity_tags = {Tag.parse(kw): kw for kw in IDENTITY_ATTRIBUTES}
    out = DicomDataset(transfer_syntax=ds.transfer_syntax)
    for el in ds:
        if el.tag in identity_tags:
            original = el.first()
            if original is not None:
                el = DataElement.from_value(el.tag, el.vr,
                                            surrogate_uid(salt, str(original)))
        elif el.tag in strip_tags:
            el = DataElement(el.tag, el.vr, b"")
        out.set(el)
    out.put(_MARKER, VR.CS, "YES")
    out.put("DeidentificationMethod", VR.LO, _METHOD)
    return out
