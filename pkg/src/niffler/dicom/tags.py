"""Built-in attribute dictionary.

Covers the identity, acquisition, equipment, geometry, and pixel attributes
the shipped extraction profiles and the de-identification defaults name.
Unknown tags pass through parsing opaquely; they are simply not addressable
by keyword.
"""

from __future__ import annotations

import re

from niffler.dicom.vr import VR
from niffler.errors import UnknownKeyword

# (group, element, VR, keyword)
_ENTRIES = [
    (0x0000, 0x0000, VR.UL, "CommandGroupLength"),
    (0x0000, 0x0002, VR.UI, "AffectedSOPClassUID"),
    (0x0000, 0x0003, VR.UI, "RequestedSOPClassUID"),
    (0x0000, 0x0100, VR.US, "CommandField"),
    (0x0000, 0x0110, VR.US, "MessageID"),
    (0x0000, 0x0120, VR.US, "MessageIDBeingRespondedTo"),
    (0x0000, 0x0600, VR.AE, "MoveDestination"),
    (0x0000, 0x0700, VR.US, "Priority"),
    (0x0000, 0x0800, VR.US, "CommandDataSetType"),
    (0x0000, 0x0900, VR.US, "Status"),
    (0x0000, 0x1000, VR.UI, "AffectedSOPInstanceUID"),
    (0x0000, 0x1001, VR.UI, "RequestedSOPInstanceUID"),
    (0x0000, 0x1020, VR.US, "NumberOfRemainingSuboperations"),
    (0x0000, 0x1021, VR.US, "NumberOfCompletedSuboperations"),
    (0x0000, 0x1022, VR.US, "NumberOfFailedSuboperations"),
    (0x0000, 0x1023, VR.US, "NumberOfWarningSuboperations"),
    (0x0000, 0x1030, VR.AE, "MoveOriginatorApplicationEntityTitle"),
    (0x0000, 0x1031, VR.US, "MoveOriginatorMessageID"),
    (0x0002, 0x0000, VR.UL, "FileMetaInformationGroupLength"),
    (0x0002, 0x0001, VR.OB, "FileMetaInformationVersion"),
    (0x0002, 0x0002, VR.UI, "MediaStorageSOPClassUID"),
    (0x0002, 0x0003, VR.UI, "MediaStorageSOPInstanceUID"),
    (0x0002, 0x0010, VR.UI, "TransferSyntaxUID"),
    (0x0002, 0x0012, VR.UI, "ImplementationClassUID"),
    (0x0002, 0x0013, VR.SH, "ImplementationVersionName"),
    (0x0008, 0x0005, VR.CS, "SpecificCharacterSet"),
    (0x0008, 0x0008, VR.CS, "ImageType"),
    (0x0008, 0x0016, VR.UI, "SOPClassUID"),
    (0x0008, 0x0018, VR.UI, "SOPInstanceUID"),
    (0x0008, 0x0020, VR.DA, "StudyDate"),
    (0x0008, 0x0021, VR.DA, "SeriesDate"),
    (0x0008, 0x0022, VR.DA, "AcquisitionDate"),
    (0x0008, 0x0023, VR.DA, "ContentDate"),
    (0x0008, 0x0030, VR.TM, "StudyTime"),
    (0x0008, 0x0031, VR.TM, "SeriesTime"),
    (0x0008, 0x0032, VR.TM, "AcquisitionTime"),
    (0x0008, 0x0033, VR.TM, "ContentTime"),
    (0x0008, 0x0050, VR.SH, "AccessionNumber"),
    (0x0008, 0x0052, VR.CS, "QueryRetrieveLevel"),
    (0x0008, 0x0060, VR.CS, "Modality"),
    (0x0008, 0x0070, VR.LO, "Manufacturer"),
    (0x0008, 0x0080, VR.LO, "InstitutionName"),
    (0x0008, 0x0081, VR.ST, "InstitutionAddress"),
    (0x0008, 0x0090, VR.PN, "ReferringPhysicianName"),
    (0x0008, 0x1010, VR.SH, "StationName"),
    (0x0008, 0x1030, VR.LO, "StudyDescription"),
    (0x0008, 0x103E, VR.LO, "SeriesDescription"),
    (0x0008, 0x1050, VR.PN, "PerformingPhysicianName"),
    (0x0008, 0x1070, VR.PN, "OperatorsName"),
    (0x0008, 0x1090, VR.LO, "ManufacturerModelName"),
    (0x0010, 0x0010, VR.PN, "PatientName"),
    (0x0010, 0x0020, VR.LO, "PatientID"),
    (0x0010, 0x0030, VR.DA, "PatientBirthDate"),
    (0x0010, 0x0040, VR.CS, "PatientSex"),
    (0x0010, 0x1010, VR.AS, "PatientAge"),
    (0x0010, 0x1020, VR.DS, "PatientSize"),
    (0x0010, 0x1030, VR.DS, "PatientWeight"),
    (0x0012, 0x0062, VR.CS, "PatientIdentityRemoved"),
    (0x0012, 0x0063, VR.LO, "DeidentificationMethod"),
    (0x0018, 0x0015, VR.CS, "BodyPartExamined"),
    (0x0018, 0x0060, VR.DS, "KVP"),
    (0x0018, 0x1000, VR.LO, "DeviceSerialNumber"),
    (0x0018, 0x1020, VR.LO, "SoftwareVersions"),
    (0x0018, 0x1030, VR.LO, "ProtocolName"),
    (0x0018, 0x1110, VR.DS, "DistanceSourceToDetector"),
    (0x0018, 0x1150, VR.IS, "ExposureTime"),
    (0x0018, 0x1151, VR.IS, "XRayTubeCurrent"),
    (0x0018, 0x1152, VR.IS, "Exposure"),
    (0x0018, 0x1164, VR.DS, "ImagerPixelSpacing"),
    (0x0018, 0x5100, VR.CS, "PatientPosition"),
    (0x0018, 0x5101, VR.CS, "ViewPosition"),
    (0x0020, 0x000D, VR.UI, "StudyInstanceUID"),
    (0x0020, 0x000E, VR.UI, "SeriesInstanceUID"),
    (0x0020, 0x0010, VR.SH, "StudyID"),
    (0x0020, 0x0011, VR.IS, "SeriesNumber"),
    (0x0020, 0x0013, VR.IS, "InstanceNumber"),
    (0x0020, 0x0020, VR.CS, "PatientOrientation"),
    (0x0028, 0x0002, VR.US, "SamplesPerPixel"),
    (0x0028, 0x0004, VR.CS, "PhotometricInterpretation"),
    (0x0028, 0x0006, VR.US, "PlanarConfiguration"),
    (0x0028, 0x0010, VR.US, "Rows"),
    (0x0028, 0x0011, VR.US, "Columns"),
    (0x0028, 0x0030, VR.DS, "PixelSpacing"),
    (0x0028, 0x0100, VR.US, "BitsAllocated"),
    (0x0028, 0x0101, VR.US, "BitsStored"),
    (0x0028, 0x0102, VR.US, "HighBit"),
    (0x0028, 0x0103, VR.US, "PixelRepresentation"),
    (0x0028, 0x0301, VR.CS, "BurnedInAnnotation"),
    (0x0028, 0x1050, VR.DS, "WindowCenter"),
    (0x0028, 0x1051, VR.DS, "WindowWidth"),
    (0x0028, 0x1052, VR.DS, "RescaleIntercept"),
    (0x0028, 0x1053, VR.DS, "RescaleSlope"),
    (0x7FE0, 0x0010, VR.OW, "PixelData"),
]

KEYWORD_TO_TAG: dict[str, tuple[int, int]] = {
    kw: (g, e) for g, e, _vr, kw in _ENTRIES
}
TAG_TO_VR: dict[tuple[int, int], VR] = {(g, e): vr for g, e, vr, _kw in _ENTRIES}
TAG_TO_KEYWORD: dict[tuple[int, int], str] = {(g, e): kw for g, e, _vr, kw in _ENTRIES}

_TAG_FORM = re.compile(r"^\(([0-9A-Fa-f]{4}),([0-9A-Fa-f]{4})\)$")


def resolve_identifier(identifier: str) -> tuple[int, int]:
    """Resolve a keyword or an explicit "(GGGG,EEEE)" form to (group, element)."""
    pair = KEYWORD_TO_TAG.get(identifier)
    if pair is not None:
        return pair
    m = _TAG_FORM.match(identifier)
    if m:
        return int(m.group(1), 16), int(m.group(2), 16)
    raise UnknownKeyword(f"unknown attribute identifier: {identifier!r}")


def vr_for_tag(group: int, element: int) -> VR | None:
    return TAG_TO_VR.get((group, element))


def keyword_for_tag(group: int, element: int) -> str | None:
    return TAG_TO_KEYWORD.get((group, element))
