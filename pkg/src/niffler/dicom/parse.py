"""Wire and Part-10 parsing for the two supported little-endian syntaxes."""

from __future__ import annotations

import struct
from pathlib import Path

from niffler.dicom import tags as dictionary
from niffler.dicom import uids
from niffler.dicom.dataset import DataElement, DicomDataset, FileMetaInfo, Tag
from niffler.dicom.vr import LONG_FORM_VRS, VR
from niffler.errors import MalformedVR, MissingMagic, TruncatedInput, UnsupportedSyntax

_UNDEFINED = 0xFFFFFFFF

_ITEM = Tag(0xFFFE, 0xE000)
_ITEM_DELIM = Tag(0xFFFE, 0xE00D)
_SEQ_DELIM = Tag(0xFFFE, 0xE0DD)


def parse_dataset(data: bytes, syntax: str) -> DicomDataset:
    """Parse a bare dataset encoded in the given transfer syntax.

    Pixel data is kept as raw bytes; decoding is a separate step. Unknown
    tags are preserved with VR=UN (implicit) or their declared VR (explicit).
    """
    if syntax == uids.EXPLICIT_VR_LE:
        explicit = True
    elif syntax == uids.IMPLICIT_VR_LE:
        explicit = False
    else:
        raise UnsupportedSyntax(f"unsupported transfer syntax: {syntax}")
    elements, pos = _parse_elements(memoryview(data), 0, len(data), explicit)
    if pos != len(data):
        raise TruncatedInput(f"{len(data) - pos} trailing bytes after last element")
    ds = DicomDataset(elements, transfer_syntax=syntax)
    return ds


def _need(data, pos: int, count: int, what: str) -> None:
    if pos + count > len(data):
        raise TruncatedInput(f"need {count} bytes for {what}, have {len(data) - pos}")


def _parse_elements(data, pos: int, end: int, explicit: bool,
                    inside_item: bool = False):
    """Parse elements until `end`; inside an undefined-length item, an item
    delimiter terminates instead. Returns (elements, next_pos)."""
    elements: list[DataElement] = []
    while pos < end:
        if inside_item and end - pos >= 8:
            group, elem = struct.unpack_from("<HH", data, pos)
            if Tag(group, elem) == _ITEM_DELIM:
                return elements, pos  # caller consumes the delimiter
        el, pos = _parse_one(data, pos, end, explicit)
        elements.append(el)
    return elements, pos


def _parse_one(data, pos: int, end: int, explicit: bool):
    _need(data, pos, 8, "element header")
    group, elem = struct.unpack_from("<HH", data, pos)
    tag = Tag(group, elem)

    if explicit and group != 0xFFFE:
        vr_bytes = bytes(data[pos + 4:pos + 6])
        try:
            vr = VR(vr_bytes.decode("ascii"))
        except (UnicodeDecodeError, ValueError):
            raise MalformedVR(f"bad VR code {vr_bytes!r} at offset {pos}") from None
        if vr in LONG_FORM_VRS:
            _need(data, pos, 12, "long-form element header")
            (length,) = struct.unpack_from("<I", data, pos + 8)
            value_pos = pos + 12
        else:
            (length,) = struct.unpack_from("<H", data, pos + 6)
            value_pos = pos + 8
    else:
        (length,) = struct.unpack_from("<I", data, pos + 4)
        value_pos = pos + 8
        vr = dictionary.vr_for_tag(group, elem) or VR.UN
        if length == _UNDEFINED:
            vr = VR.SQ  # undefined length outside pixel data means a sequence

    if vr is VR.SQ:
        items, next_pos = _parse_items(data, value_pos, end, explicit, length)
        return DataElement(tag, VR.SQ, items=items), next_pos

    if length == _UNDEFINED:
        # Encapsulated (compressed) pixel data framing is out of native scope.
        raise TruncatedInput(f"undefined length on non-sequence element {tag}")
    if value_pos + length > end:
        raise TruncatedInput(
            f"element {tag} declares {length} bytes, only {end - value_pos} remain")
    raw = bytes(data[value_pos:value_pos + length])
    return DataElement(tag, vr, raw), value_pos + length


def _parse_items(data, pos: int, end: int, explicit: bool, seq_length: int):
    """Parse SQ items; supports defined and undefined sequence lengths."""
    items: list[DicomDataset] = []
    undefined = seq_length == _UNDEFINED
    seq_end = end if undefined else pos + seq_length
    if seq_end > end:
        raise TruncatedInput("sequence length exceeds enclosing scope")
    while pos < seq_end:
        _need(data, pos, 8, "item header")
        group, elem = struct.unpack_from("<HH", data, pos)
        (item_len,) = struct.unpack_from("<I", data, pos + 4)
        item_tag = Tag(group, elem)
        pos += 8
        if item_tag == _SEQ_DELIM:
            if not undefined:
                raise TruncatedInput("sequence delimiter inside defined-length SQ")
            return items, pos
        if item_tag != _ITEM:
            raise TruncatedInput(f"expected item tag, found {item_tag}")
        if item_len == _UNDEFINED:
            elements, pos = _parse_elements(data, pos, seq_end, explicit,
                                            inside_item=True)
            _need(data, pos, 8, "item delimiter")
            pos += 8
        else:
            if pos + item_len > seq_end:
                raise TruncatedInput("item length exceeds sequence")
            elements, _ = _parse_elements(data, pos, pos + item_len, explicit)
            pos += item_len
        items.append(DicomDataset(elements))
    if undefined:
        raise TruncatedInput("unterminated undefined-length sequence")
    return items, pos


def read_part10_file(source) -> tuple[FileMetaInfo, DicomDataset]:
    """Read a Part-10 file: preamble, magic, explicit-VR meta group, body."""
    data = Path(source).read_bytes()
    if len(data) < 132 or data[128:132] != b"DICM":
        raise MissingMagic(f"{source}: no DICM marker after 128-byte preamble")
    view = memoryview(data)
    pos = 132
    meta_elements: list[DataElement] = []
    while pos + 8 <= len(data):
        group, _elem = struct.unpack_from("<HH", view, pos)
        if group != 0x0002:
            break
        el, pos = _parse_one(view, pos, len(data), explicit=True)
        meta_elements.append(el)
    meta_ds = DicomDataset(meta_elements)
    syntax = meta_ds.get_scalar("TransferSyntaxUID")
    if not syntax:
        raise UnsupportedSyntax(f"{source}: meta group lacks TransferSyntaxUID")
    if syntax not in uids.SUPPORTED_TRANSFER_SYNTAXES:
        raise UnsupportedSyntax(f"{source}: transfer syntax {syntax}")
    meta = FileMetaInfo(
        media_storage_sop_class_uid=meta_ds.get_scalar("MediaStorageSOPClassUID") or "",
        media_storage_sop_instance_uid=meta_ds.get_scalar("MediaStorageSOPInstanceUID") or "",
        transfer_syntax_uid=syntax,
        implementation_class_uid=meta_ds.get_scalar("ImplementationClassUID") or "",
        implementation_version_name=meta_ds.get_scalar("ImplementationVersionName") or "",
    )
    body = parse_dataset(bytes(view[pos:]), syntax)
    return meta, body
