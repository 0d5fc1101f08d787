"""Dataset model: tags, data elements, and the ordered element map."""

from __future__ import annotations

import struct
from dataclasses import dataclass, field
from typing import Iterator, Sequence, Union

from niffler.dicom import tags as dictionary
from niffler.dicom import uids
from niffler.dicom.vr import (
    NUMERIC_FORMATS,
    OPAQUE_VRS,
    SPLIT_VRS,
    STRING_VRS,
    TEXT_VRS,
    VR,
    padding_byte,
)
from niffler.errors import DicomError


@dataclass(frozen=True, order=True)
class Tag:
    group: int
    element: int

    def __str__(self) -> str:
        return f"({self.group:04X},{self.element:04X})"

    @classmethod
    def parse(cls, text: str) -> "Tag":
        g, e = dictionary.resolve_identifier(text)
        return cls(g, e)

    @property
    def keyword(self) -> str | None:
        return dictionary.keyword_for_tag(self.group, self.element)


Value = Union[list, bytes]


class DataElement:
    """One tagged value: raw bytes plus a lazily decoded typed view.

    The raw bytes are authoritative; the decoded view is derived and, for
    string VRs, round-trips to the raw bytes modulo the trailing padding
    byte. SQ elements hold nested datasets in ``items`` instead of raw.
    """

    __slots__ = ("tag", "vr", "raw", "items")

    def __init__(self, tag: Tag, vr: VR, raw: bytes = b"",
                 items: Sequence["DicomDataset"] | None = None):
        self.tag = tag
        self.vr = vr
        self.raw = bytes(raw)
        self.items = list(items) if items is not None else None
        if vr is VR.SQ and self.items is None:
            self.items = []

    @classmethod
    def from_value(cls, tag: Tag, vr: VR, value) -> "DataElement":
        if vr is VR.SQ:
            return cls(tag, vr, b"", items=list(value))
        return cls(tag, vr, encode_value(vr, value))

    @property
    def value(self):
        """Decoded view: string list, number list, item list, or raw bytes."""
        if self.vr is VR.SQ:
            return self.items
        return decode_value(self.vr, self.raw)

    def first(self) -> str | int | float | None:
        v = self.value
        if isinstance(v, list):
            return v[0] if v else None
        return v

    def __eq__(self, other) -> bool:
        if not isinstance(other, DataElement):
            return NotImplemented
        if (self.tag, self.vr) != (other.tag, other.vr):
            return False
        if self.vr is VR.SQ:
            return self.items == other.items
        return self.raw == other.raw

    def __repr__(self) -> str:
        kw = self.tag.keyword or ""
        return f"<DataElement {self.tag} {self.vr.value} {kw} len={len(self.raw)}>"


def encode_value(vr: VR, value) -> bytes:
    """Encode a typed value to even-length raw bytes for the given VR."""
    if vr in STRING_VRS:
        if value is None:
            value = ""
        if isinstance(value, (list, tuple)):
            text = "\\".join(str(v) for v in value)
        else:
            text = str(value)
        raw = text.encode("ascii")
        if len(raw) % 2:
            raw += padding_byte(vr)
        return raw
    if vr in NUMERIC_FORMATS:
        if value is None:
            return b""
        if not isinstance(value, (list, tuple)):
            value = [value]
        fmt = "<" + NUMERIC_FORMATS[vr] * len(value)
        return struct.pack(fmt, *value)
    if vr in OPAQUE_VRS:
        raw = bytes(value or b"")
        if len(raw) % 2:
            raw += b"\x00"
        return raw
    raise DicomError(f"cannot encode value for VR {vr.value}")


def decode_value(vr: VR, raw: bytes):
    """Decode raw bytes into the typed view.

    Defensive on malformed lengths: numeric tails that do not fill a whole
    item are dropped rather than raised, so header reads on hostile input
    degrade instead of aborting a whole extraction tick.
    """
    if vr in STRING_VRS:
        text = raw.decode("ascii", errors="replace")
        text = text.rstrip("\x00") if vr is VR.UI else text.rstrip(" \x00")
        if not text:
            return []
        if vr in TEXT_VRS:
            return [text]
        return text.split("\\")
    if vr in NUMERIC_FORMATS:
        code = NUMERIC_FORMATS[vr]
        size = struct.calcsize(code)
        n = len(raw) // size
        return list(struct.unpack("<" + code * n, raw[: n * size]))
    return raw


class DicomDataset:
    """Ordered map of data elements, strictly increasing by tag.

    Immutable by convention after construction: parsing and the generators
    build datasets once and share them across threads without locking.
    """

    def __init__(self, elements: Sequence[DataElement] = (),
                 transfer_syntax: str = uids.EXPLICIT_VR_LE):
        self._elements: dict[Tag, DataElement] = {}
        self.transfer_syntax = transfer_syntax
        for el in elements:
            self._elements[el.tag] = el

    def set(self, element: DataElement) -> None:
        self._elements[element.tag] = element

    def put(self, identifier: str, vr: VR, value) -> None:
        tag = Tag.parse(identifier)
        self.set(DataElement.from_value(tag, vr, value))

    def remove(self, tag: Tag) -> None:
        self._elements.pop(tag, None)

    def element(self, identifier: str | Tag) -> DataElement | None:
        tag = identifier if isinstance(identifier, Tag) else Tag.parse(identifier)
        return self._elements.get(tag)

    def get(self, identifier: str | Tag):
        """Decoded view for the attribute, or None when absent."""
        el = self.element(identifier)
        return None if el is None else el.value

    def get_scalar(self, identifier: str | Tag) -> str | None:
        """First value rendered as a string, or None when absent/empty."""
        el = self.element(identifier)
        if el is None:
            return None
        v = el.first()
        return None if v is None else str(v)

    def __iter__(self) -> Iterator[DataElement]:
        for tag in sorted(self._elements):
            yield self._elements[tag]

    def __len__(self) -> int:
        return len(self._elements)

    def __contains__(self, identifier) -> bool:
        return self.element(identifier) is not None

    def __eq__(self, other) -> bool:
        if not isinstance(other, DicomDataset):
            return NotImplemented
        return list(self) == list(other)

    def __repr__(self) -> str:
        return f"<DicomDataset {len(self)} elements>"


def get_value(ds: DicomDataset, identifier: str):
    """Decoded view of a header attribute; absent tag yields None."""
    return ds.get(identifier)


@dataclass
class FileMetaInfo:
    """File meta group content for a Part-10 file."""

    media_storage_sop_class_uid: str
    media_storage_sop_instance_uid: str
    transfer_syntax_uid: str
    implementation_class_uid: str = uids.IMPLEMENTATION_CLASS_UID
    implementation_version_name: str = uids.IMPLEMENTATION_VERSION_NAME

    @classmethod
    def for_dataset(cls, ds: DicomDataset,
                    transfer_syntax_uid: str | None = None) -> "FileMetaInfo":
        return cls(
            media_storage_sop_class_uid=ds.get_scalar("SOPClassUID") or "",
            media_storage_sop_instance_uid=ds.get_scalar("SOPInstanceUID") or "",
            transfer_syntax_uid=transfer_syntax_uid or ds.transfer_syntax,
        )
