"""Dataset serialization and atomic Part-10 file writing."""

from __future__ import annotations

import os
import struct
import tempfile
from pathlib import Path

from niffler.dicom import uids
from niffler.dicom.dataset import DataElement, DicomDataset, FileMetaInfo, Tag
from niffler.dicom.vr import LONG_FORM_VRS, VR
from niffler.errors import DicomError, UnsupportedSyntax


def write_dataset(ds: DicomDataset, syntax: str | None = None) -> bytes:
    syntax = syntax or ds.transfer_syntax
    if syntax == uids.EXPLICIT_VR_LE:
        explicit = True
    elif syntax == uids.IMPLICIT_VR_LE:
        explicit = False
    else:
        raise UnsupportedSyntax(f"unsupported transfer syntax: {syntax}")
    return b"".join(_encode_element(el, explicit) for el in ds)


def _encode_element(el: DataElement, explicit: bool) -> bytes:
    head = struct.pack("<HH", el.tag.group, el.tag.element)
    if el.vr is VR.SQ:
        raw = b"".join(_encode_item(item, explicit) for item in el.items or [])
        if explicit:
            return head + b"SQ\x00\x00" + struct.pack("<I", len(raw)) + raw
        # Implicit VR: undefined length + delimiter, so a reader that lacks
        # this tag in its dictionary can still recognize the sequence.
        return (head + struct.pack("<I", 0xFFFFFFFF) + raw
                + struct.pack("<HHI", 0xFFFE, 0xE0DD, 0))
    raw = el.raw
    if len(raw) % 2:
        raise DicomError(f"odd value length on {el.tag}")
    if explicit:
        vr_bytes = el.vr.value.encode("ascii")
        if el.vr in LONG_FORM_VRS:
            return head + vr_bytes + b"\x00\x00" + struct.pack("<I", len(raw)) + raw
        if len(raw) > 0xFFFF:
            raise DicomError(f"value too long for short-form VR on {el.tag}")
        return head + vr_bytes + struct.pack("<H", len(raw)) + raw
    return head + struct.pack("<I", len(raw)) + raw


def _encode_item(item: DicomDataset, explicit: bool) -> bytes:
    body = b"".join(_encode_element(el, explicit) for el in item)
    return struct.pack("<HHI", 0xFFFE, 0xE000, len(body)) + body


def _meta_group_bytes(meta: FileMetaInfo) -> bytes:
    elements = [
        DataElement.from_value(Tag(0x0002, 0x0001), VR.OB, b"\x00\x01"),
        DataElement.from_value(Tag(0x0002, 0x0002), VR.UI,
                               meta.media_storage_sop_class_uid),
        DataElement.from_value(Tag(0x0002, 0x0003), VR.UI,
                               meta.media_storage_sop_instance_uid),
        DataElement.from_value(Tag(0x0002, 0x0010), VR.UI, meta.transfer_syntax_uid),
        DataElement.from_value(Tag(0x0002, 0x0012), VR.UI,
                               meta.implementation_class_uid),
        DataElement.from_value(Tag(0x0002, 0x0013), VR.SH,
                               meta.implementation_version_name),
    ]
    body = b"".join(_encode_element(el, explicit=True) for el in elements)
    group_length = _encode_element(
        DataElement.from_value(Tag(0x0002, 0x0000), VR.UL, len(body)), explicit=True)
    return group_length + body


def write_part10_file(meta: FileMetaInfo, ds: DicomDataset, destination) -> Path:
    """Write preamble + DICM + meta group + body atomically (temp then rename)."""
    ds_sop = ds.get_scalar("SOPInstanceUID")
    if ds_sop and meta.media_storage_sop_instance_uid and \
            ds_sop != meta.media_storage_sop_instance_uid:
        raise DicomError("meta SOP instance UID does not match dataset")
    return write_part10_bytes(meta, write_dataset(ds, meta.transfer_syntax_uid), destination)


def write_part10_bytes(meta: FileMetaInfo, body: bytes, destination) -> Path:
    """Write a Part-10 file around an already-encoded dataset payload.

    Used on the ingest path so stored files carry the exact bytes received
    on the wire rather than a re-encoding.
    """
    destination = Path(destination)
    if meta.transfer_syntax_uid not in uids.SUPPORTED_TRANSFER_SYNTAXES:
        raise UnsupportedSyntax(f"transfer syntax {meta.transfer_syntax_uid}")
    payload = b"\x00" * 128 + b"DICM" + _meta_group_bytes(meta) + body
    fd, tmp_name = tempfile.mkstemp(dir=destination.parent, suffix=".part")
    try:
        with os.fdopen(fd, "wb") as fh:
            fh.write(payload)
            fh.flush()
            os.fsync(fh.fileno())
        os.replace(tmp_name, destination)
    except BaseException:
        try:
            os.unlink(tmp_name)
        except OSError:
            pass
        raise
    return destination
