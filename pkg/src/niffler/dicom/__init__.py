"""Native DICOM dataset handling for the uncompressed little-endian subset."""

from niffler.dicom.dataset import DataElement, DicomDataset, FileMetaInfo, Tag, get_value
from niffler.dicom.deident import DEFAULT_STRIP_LIST, deidentify, surrogate_uid
from niffler.dicom.parse import parse_dataset, read_part10_file
from niffler.dicom.pixels import PixelBuffer, decode_pixels
from niffler.dicom.tags import keyword_for_tag, resolve_identifier
from niffler.dicom.vr import VR
from niffler.dicom.write import write_dataset, write_part10_file
from niffler.dicom import uids

__all__ = [
    "DataElement",
    "DicomDataset",
    "FileMetaInfo",
    "Tag",
    "VR",
    "PixelBuffer",
    "DEFAULT_STRIP_LIST",
    "decode_pixels",
    "deidentify",
    "get_value",
    "keyword_for_tag",
    "parse_dataset",
    "read_part10_file",
    "resolve_identifier",
    "surrogate_uid",
    "uids",
    "write_dataset",
    "write_part10_file",
]
