"""Native pixel decoding for uncompressed little-endian pixel data."""

from __future__ import annotations

from dataclasses import dataclass
from typing import Callable, Optional

import numpy as np

from niffler.dicom import uids
from niffler.dicom.dataset import DicomDataset
from niffler.errors import CompressedPixelData, InconsistentDimensions

DecoderHook = Callable[[DicomDataset], "PixelBuffer"]


@dataclass
class PixelBuffer:
    rows: int
    columns: int
    bits_allocated: int
    bits_stored: int
    samples_per_pixel: int
    photometric_interpretation: str
    samples: np.ndarray  # flat, row-major, length rows*columns*samples_per_pixel

    def as_matrix(self) -> np.ndarray:
        if self.samples_per_pixel == 1:
            return self.samples.reshape(self.rows, self.columns)
        return self.samples.reshape(self.rows, self.columns, self.samples_per_pixel)


def decode_pixels(ds: DicomDataset,
                  decoder_hook: Optional[DecoderHook] = None) -> PixelBuffer:
    """Extract samples little-endian, masked to BitsStored.

    Compressed transfer syntaxes are never decoded natively: they route to
    the decoder hook when one is installed, else raise CompressedPixelData.
    MONOCHROME1 is left as stored; inversion is a render-time concern.
    """
    if not uids.is_uncompressed(ds.transfer_syntax):
        if decoder_hook is not None:
            return decoder_hook(ds)
        raise CompressedPixelData(
            f"transfer syntax {ds.transfer_syntax} needs a decoder hook")

    el = ds.element("PixelData")
    if el is None:
        raise InconsistentDimensions("dataset has no PixelData")
    rows = _required_int(ds, "Rows")
    columns = _required_int(ds, "Columns")
    bits_allocated = _required_int(ds, "BitsAllocated")
    if bits_allocated not in (8, 16):
        raise InconsistentDimensions(f"BitsAllocated {bits_allocated} unsupported")
    bits_stored = _optional_int(ds, "BitsStored") or bits_allocated
    spp = _optional_int(ds, "SamplesPerPixel") or 1
    if spp not in (1, 3):
        raise InconsistentDimensions(f"SamplesPerPixel {spp} unsupported")
    photometric = ds.get_scalar("PhotometricInterpretation") or "MONOCHROME2"

    count = rows * columns * spp
    expected = count * (bits_allocated // 8)
    raw = el.raw
    # A single trailing pad byte is legal when the payload length is odd.
    if len(raw) not in (expected, expected + (expected % 2)):
        raise InconsistentDimensions(
            f"PixelData holds {len(raw)} bytes, expected {expected}")
    dtype = np.uint8 if bits_allocated == 8 else np.dtype("<u2")
    samples = np.frombuffer(raw[:expected], dtype=dtype).astype(
        np.uint8 if bits_allocated == 8 else np.uint16)
    mask = (1 << bits_stored) - 1
    samples = samples & mask
    return PixelBuffer(
        rows=rows,
        columns=columns,
        bits_allocated=bits_allocated,
        bits_stored=bits_stored,
        samples_per_pixel=spp,
        photometric_interpretation=photometric,
        samples=samples,
    )


def _required_int(ds: DicomDataset, keyword: str) -> int:
    v = ds.get_scalar(keyword)
    if v is None:
        raise InconsistentDimensions(f"missing {keyword}")
    return int(v)


def _optional_int(ds: DicomDataset, keyword: str) -> int | None:
    v = ds.get_scalar(keyword)
    return None if v is None else int(v)
