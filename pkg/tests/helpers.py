"""Shared generators for synthetic datasets used across the test suite."""

from __future__ import annotations

import random
import string

import numpy as np

from niffler.dicom import uids
from niffler.dicom.dataset import DataElement, DicomDataset, Tag
from niffler.dicom.tags import _ENTRIES, resolve_identifier, vr_for_tag
from niffler.dicom.vr import NUMERIC_FORMATS, OPAQUE_VRS, STRING_VRS, VR

# Body attributes only: no meta group, no pixel data (tests add those on demand).
BODY_ENTRIES = [
    (g, e, vr, kw) for g, e, vr, kw in _ENTRIES
    if g not in (0x0000, 0x0002) and (g, e) != (0x7FE0, 0x0010)
]

_PRINTABLE = string.ascii_uppercase + string.digits + " ^.-"


def random_string_value(rng: random.Random, vr: VR):
    if vr is VR.UI:
        return "1.2." + ".".join(str(rng.randrange(1, 10**6)) for _ in range(3))
    if vr is VR.DA:
        return f"{rng.randrange(1990, 2026):04d}{rng.randrange(1, 13):02d}{rng.randrange(1, 29):02d}"
    if vr is VR.TM:
        return f"{rng.randrange(24):02d}{rng.randrange(60):02d}{rng.randrange(60):02d}"
    if vr is VR.IS:
        return str(rng.randrange(-1000, 1000))
    if vr is VR.DS:
        return f"{rng.uniform(-100, 100):.4f}"
    if vr is VR.AS:
        return f"{rng.randrange(0, 120):03d}Y"
    n = rng.randrange(0, 12)
    return "".join(rng.choice(_PRINTABLE) for _ in range(n)).strip() or "X"


def random_value(rng: random.Random, vr: VR):
    if vr in STRING_VRS:
        count = rng.choice([1, 1, 1, 2, 3])
        if count == 1:
            return random_string_value(rng, vr)
        return [random_string_value(rng, vr) for _ in range(count)]
    if vr in NUMERIC_FORMATS:
        count = rng.choice([1, 1, 2])
        lo, hi = {
            VR.US: (0, 0xFFFF), VR.UL: (0, 0xFFFFFFFF),
            VR.SS: (-0x8000, 0x7FFF), VR.SL: (-0x80000000, 0x7FFFFFFF),
        }.get(vr, (0, 0))
        if vr in (VR.FL, VR.FD):
            vals = [float(rng.randrange(-1000, 1000)) for _ in range(count)]
        else:
            vals = [rng.randrange(lo, hi + 1) for _ in range(count)]
        return vals if count > 1 else vals[0]
    if vr in OPAQUE_VRS:
        return rng.randbytes(rng.randrange(0, 16) * 2)
    raise AssertionError(vr)


def random_dataset(rng: random.Random, syntax: str = uids.EXPLICIT_VR_LE,
                   with_sequences: bool = True) -> DicomDataset:
    """Dictionary-consistent dataset; private tags carry UN so the implicit
    round trip preserves VRs."""
    ds = DicomDataset(transfer_syntax=syntax)
    chosen = rng.sample(BODY_ENTRIES, rng.randrange(1, 16))
    for g, e, vr, _kw in chosen:
        ds.set(DataElement.from_value(Tag(g, e), vr, random_value(rng, vr)))
    for _ in range(rng.randrange(0, 3)):
        group = rng.choice([0x0009, 0x0011, 0x0043])
        tag = Tag(group, rng.randrange(0x1000, 0x1100))
        ds.set(DataElement(tag, VR.UN, rng.randbytes(rng.randrange(0, 8) * 2)))
    if with_sequences and rng.random() < 0.3:
        items = []
        for _ in range(rng.randrange(0, 3)):
            g, e, vr, _kw = rng.choice(
                [t for t in BODY_ENTRIES if t[2] in STRING_VRS])
            items.append(DicomDataset(
                [DataElement.from_value(Tag(g, e), vr, random_value(rng, vr))]))
        ds.set(DataElement(Tag(0x0040, 0x0275), VR.SQ, items=items))
    return ds


def listing_dataset() -> DicomDataset:
    """A portable-chest-style dataset mirroring the shipped profile fields."""
    ds = DicomDataset()
    fields = [
        ("PatientID", VR.LO, "PAT001"),
        ("StudyInstanceUID", VR.UI, "1.2.840.99999.1.7.100"),
        ("StudyDate", VR.DA, "20200327"),
        ("StudyTime", VR.TM, "050348.128"),
        ("SeriesInstanceUID", VR.UI, "1.2.840.99999.1.7.100.1"),
        ("SeriesDate", VR.DA, "20200327"),
        ("SeriesTime", VR.TM, "050503.271"),
        ("SOPInstanceUID", VR.UI, "1.2.840.99999.1.7.100.1.1"),
        ("SOPClassUID", VR.UI, uids.DX_IMAGE_STORAGE_PRESENTATION),
        ("AcquisitionDate", VR.DA, "20200327"),
        ("AcquisitionTime", VR.TM, "050503.271"),
        ("Exposure", VR.IS, "1"),
        ("ExposureTime", VR.IS, "7"),
        ("ImageType", VR.CS, ["DERIVED", "PRIMARY"]),
        ("Manufacturer", VR.LO, "CARESTREAM HEALTH"),
        ("ManufacturerModelName", VR.LO, "DRX-REVOLUTION"),
        ("Modality", VR.CS, "DX"),
        ("StationName", VR.SH, "STATION42"),
        ("StudyDescription", VR.LO, "XR CHEST 1 VIEW PORTABLE"),
        ("InstitutionName", VR.LO, "GENERAL HOSPITAL"),
        ("SeriesNumber", VR.IS, "2"),
        ("SeriesDescription", VR.LO, "AP"),
        ("BodyPartExamined", VR.CS, "PORT CHEST"),
        ("DeviceSerialNumber", VR.LO, "002691"),
    ]
    for kw, vr, value in fields:
        ds.put(kw, vr, value)
    return ds


# --- upper-layer PDU generators ------------------------------------------


def _random_uid(rng: random.Random) -> str:
    return "1.2." + ".".join(str(rng.randrange(0, 10**4)) for _ in range(rng.randrange(2, 6)))


def _random_ae(rng: random.Random) -> str:
    n = rng.randrange(1, 17)
    title = "".join(rng.choice(string.ascii_uppercase + string.digits) for _ in range(n))
    return title


def random_pdu(rng: random.Random):
    """One random PDU drawn across all seven kinds, normalized so that
    decode(encode(pdu)) == pdu holds exactly."""
    from niffler.net import pdu as p

    kind = rng.randrange(7)
    if kind == 0 or kind == 1:
        contexts_rq = tuple(
            p.PresentationContextRq(
                2 * i + 1,
                _random_uid(rng),
                tuple(_random_uid(rng) for _ in range(rng.randrange(1, 4))),
            )
            for i in range(rng.randrange(1, 5))
        )
        extras = tuple(
            (rng.choice([0x53, 0x54, 0x56, 0x58]), rng.randbytes(rng.randrange(0, 12)))
            for _ in range(rng.randrange(0, 3))
        )
        info = p.UserInformation(
            max_pdu_length=rng.randrange(64, 1 << 24),
            implementation_class_uid=_random_uid(rng) if rng.random() < 0.9 else "",
            implementation_version_name=(
                _random_ae(rng) if rng.random() < 0.7 else None
            ),
            extra_items=extras,
        )
        if kind == 0:
            return p.AssociateRq(
                called_ae=_random_ae(rng),
                calling_ae=_random_ae(rng),
                application_context=_random_uid(rng),
                presentation_contexts=contexts_rq,
                user_info=info,
                protocol_version=rng.randrange(0, 0x10000),
            )
        contexts_ac = tuple(
            p.PresentationContextAc(
                ctx.context_id,
                rng.choice([0, 0, 1, 3, 4]),
                ctx.transfer_syntaxes[0] if rng.random() < 0.8 else "",
            )
            for ctx in contexts_rq
        )
        return p.AssociateAc(
            called_ae=_random_ae(rng),
            calling_ae=_random_ae(rng),
            application_context=_random_uid(rng),
            presentation_contexts=contexts_ac,
            user_info=info,
            protocol_version=rng.randrange(0, 0x10000),
        )
    if kind == 2:
        return p.AssociateRj(rng.randrange(256), rng.randrange(256), rng.randrange(256))
    if kind == 3:
        pdvs = tuple(
            p.Pdv(
                rng.randrange(256),
                rng.random() < 0.5,
                rng.random() < 0.5,
                rng.randbytes(rng.randrange(0, 64)),
            )
            for _ in range(rng.randrange(1, 4))
        )
        return p.PDataTf(pdvs)
    if kind == 4:
        return p.ReleaseRq()
    if kind == 5:
        return p.ReleaseRp()
    return p.Abort(rng.randrange(256), rng.randrange(256))


# --- synthetic pixel patterns ---------------------------------------------
#
# Pattern contract shared by the injector and the shipped detector: the
# background never exceeds BACKGROUND_MAX, implanted rectangles are solid
# IMPLANT_VALUE, so threshold detection recovers the injected geometry
# exactly.

BACKGROUND_MAX = 200
IMPLANT_VALUE = 255


def noise_array(rng: random.Random, rows: int = 64, cols: int = 64) -> np.ndarray:
    flat = [rng.randrange(0, BACKGROUND_MAX + 1) for _ in range(rows * cols)]
    return np.array(flat, dtype=np.uint8).reshape(rows, cols)


def implant_array(
    rng: random.Random, box: tuple[int, int, int, int], rows: int = 64, cols: int = 64
) -> np.ndarray:
    arr = noise_array(rng, rows, cols)
    x0, y0, x1, y1 = box
    arr[y0:y1, x0:x1] = IMPLANT_VALUE
    return arr


def random_box(rng: random.Random, rows: int = 64, cols: int = 64) -> tuple[int, int, int, int]:
    w = rng.randrange(6, 20)
    h = rng.randrange(6, 20)
    x0 = rng.randrange(0, cols - w)
    y0 = rng.randrange(0, rows - h)
    return (x0, y0, x0 + w, y0 + h)


def pixel_event(
    patient: str,
    study: str,
    series: str,
    sop: str,
    arr: np.ndarray,
    *,
    window: tuple[str, str] | None = None,
    photometric: str = "MONOCHROME2",
    samples_per_pixel: int = 1,
    extra: dict | None = None,
):
    """A StoreEvent whose dataset carries a renderable pixel matrix."""
    arr = np.asarray(arr)
    bits = 8 if arr.dtype == np.uint8 else 16
    raw = arr.astype(np.uint8 if bits == 8 else "<u2").tobytes()
    spp = arr.shape[2] if arr.ndim == 3 else samples_per_pixel
    fields = {
        "Rows": (VR.US, arr.shape[0]),
        "Columns": (VR.US, arr.shape[1]),
        "BitsAllocated": (VR.US, bits),
        "BitsStored": (VR.US, bits),
        "HighBit": (VR.US, bits - 1),
        "PixelRepresentation": (VR.US, 0),
        "SamplesPerPixel": (VR.US, spp),
        "PhotometricInterpretation": (VR.CS, photometric),
        "PixelData": (VR.OW, raw),
    }
    if window is not None:
        fields["WindowCenter"] = (VR.DS, window[0])
        fields["WindowWidth"] = (VR.DS, window[1])
    fields.update(extra or {})
    return store_event(patient, study, series, sop, extra=fields)


def store_event(patient: str, study: str, series: str, sop: str,
                syntax: str = uids.EXPLICIT_VR_LE, extra: dict | None = None,
                omit: tuple[str, ...] = ()):
    """Build a StoreEvent as the ingest listener would after a C-STORE."""
    from niffler.dicom.write import write_dataset
    from niffler.net.scp import StoreEvent

    ds = DicomDataset(transfer_syntax=syntax)
    identity = {
        "PatientID": (VR.LO, patient),
        "StudyInstanceUID": (VR.UI, study),
        "SeriesInstanceUID": (VR.UI, series),
        "SOPInstanceUID": (VR.UI, sop),
    }
    for keyword, (vr, value) in identity.items():
        if keyword not in omit and value is not None:
            ds.put(keyword, vr, value)
    ds.put("SOPClassUID", VR.UI, uids.DX_IMAGE_STORAGE_PRESENTATION)
    ds.put("Modality", VR.CS, "DX")
    for keyword, spec in (extra or {}).items():
        if isinstance(spec, tuple) and isinstance(spec[0], VR):
            vr, value = spec
        else:
            vr = vr_for_tag(*resolve_identifier(keyword)) or VR.LO
            value = spec
        ds.put(keyword, vr, value)
    raw = write_dataset(ds, syntax)
    return StoreEvent(
        sop_class_uid=uids.DX_IMAGE_STORAGE_PRESENTATION,
        sop_instance_uid=sop or "",
        transfer_syntax=syntax,
        dataset=ds,
        raw=raw,
        calling_ae="SENDER",
        called_ae="NIFFLER",
        peer_host="127.0.0.1",
    )
