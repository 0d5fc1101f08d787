"""DIMSE command sets: building and parsing the group-0000 messages.

Command sets always travel in implicit-VR little-endian regardless of the
transfer syntax negotiated for the presentation context, and always begin
with a CommandGroupLength element covering the rest of the group.
"""

from __future__ import annotations

from dataclasses import dataclass

from niffler.dicom.dataset import DataElement, DicomDataset, Tag
from niffler.dicom.parse import parse_dataset
from niffler.dicom.tags import vr_for_tag
from niffler.dicom.uids import IMPLICIT_VR_LE
from niffler.dicom.vr import VR
from niffler.dicom.write import write_dataset
from niffler.errors import DicomParseError, MalformedPdu

C_STORE_RQ = 0x0001
C_STORE_RSP = 0x8001
C_MOVE_RQ = 0x0021
C_MOVE_RSP = 0x8021
C_ECHO_RQ = 0x0030
C_ECHO_RSP = 0x8030

#: CommandDataSetType value meaning "no data set follows this command".
NO_DATA_SET = 0x0101
HAS_DATA_SET = 0x0000

STATUS_SUCCESS = 0x0000
STATUS_PENDING = 0xFF00
STATUS_OUT_OF_RESOURCES = 0xA700
STATUS_MOVE_DESTINATION_UNKNOWN = 0xA801
STATUS_SOP_CLASS_NOT_SUPPORTED = 0x0122
STATUS_PROCESSING_FAILURE = 0x0110


def _field(element: int, value) -> DataElement:
    tag = Tag(0x0000, element)
    vr = vr_for_tag(0x0000, element) or VR.UN
    return DataElement.from_value(tag, vr, value)


def encode_command(fields: list[DataElement]) -> bytes:
    """Serialize a command set, prepending the computed group length."""
    body = DicomDataset(fields, transfer_syntax=IMPLICIT_VR_LE)
    payload = write_dataset(body, IMPLICIT_VR_LE)
    head = DicomDataset([_field(0x0000, len(payload))], transfer_syntax=IMPLICIT_VR_LE)
    return write_dataset(head, IMPLICIT_VR_LE) + payload


def decode_command(data: bytes) -> DicomDataset:
    """Parse a command set received on the command channel."""
    try:
        ds = parse_dataset(data, IMPLICIT_VR_LE)
    except DicomParseError as exc:
        raise MalformedPdu(f"undecodable command set: {exc}") from exc
    declared = _int(ds, 0x0000)
    if declared is not None:
        rest = len(data) - 12  # the group-length element itself spans 12 bytes
        if declared != rest:
            raise MalformedPdu(
                f"command group length declares {declared} bytes but {rest} follow"
            )
    return ds


def _int(ds: DicomDataset, element: int) -> int | None:
    el = ds.element(Tag(0x0000, element))
    if el is None:
        return None
    v = el.first()
    return None if v is None else int(v)


def _str(ds: DicomDataset, element: int) -> str:
    el = ds.element(Tag(0x0000, element))
    if el is None:
        return ""
    v = el.first()
    return "" if v is None else str(v)


@dataclass(frozen=True)
class CommandSummary:
    """The routing-relevant fields of a parsed command set."""

    command_field: int
    message_id: int
    sop_class_uid: str
    sop_instance_uid: str
    has_data_set: bool
    status: int | None


def summarize_command(command: DicomDataset) -> CommandSummary:
    field = _int(command, 0x0100)
    if field is None:
        raise MalformedPdu("command set lacks a CommandField element")
    message_id = _int(command, 0x0110)
    if message_id is None:
        message_id = _int(command, 0x0120) or 0
    sop_class = _str(command, 0x0002) or _str(command, 0x0003)
    sop_instance = _str(command, 0x1000) or _str(command, 0x1001)
    dataset_type = _int(command, 0x0800)
    return CommandSummary(
        command_field=field,
        message_id=message_id,
        sop_class_uid=sop_class,
        sop_instance_uid=sop_instance,
        has_data_set=dataset_type is not None and dataset_type != NO_DATA_SET,
        status=_int(command, 0x0900),
    )


def move_counts(command: DicomDataset) -> tuple[int, int, int, int]:
    """(remaining, completed, failed, warning) from a C-MOVE response."""
    return (
        _int(command, 0x1020) or 0,
        _int(command, 0x1021) or 0,
        _int(command, 0x1022) or 0,
        _int(command, 0x1023) or 0,
    )


def c_echo_rq(message_id: int, sop_class_uid: str) -> bytes:
    return encode_command([
        _field(0x0002, sop_class_uid),
        _field(0x0100, C_ECHO_RQ),
        _field(0x0110, message_id),
        _field(0x0800, NO_DATA_SET),
    ])


def c_echo_rsp(message_id: int, sop_class_uid: str, status: int = STATUS_SUCCESS) -> bytes:
    return encode_command([
        _field(0x0002, sop_class_uid),
        _field(0x0100, C_ECHO_RSP),
        _field(0x0120, message_id),
        _field(0x0800, NO_DATA_SET),
        _field(0x0900, status),
    ])


def c_store_rq(
    message_id: int,
    sop_class_uid: str,
    sop_instance_uid: str,
    priority: int = 0,
    move_originator_ae: str | None = None,
    move_originator_message_id: int | None = None,
) -> bytes:
    fields = [
        _field(0x0002, sop_class_uid),
        _field(0x0100, C_STORE_RQ),
        _field(0x0110, message_id),
        _field(0x0700, priority),
        _field(0x0800, HAS_DATA_SET),
        _field(0x1000, sop_instance_uid),
    ]
    if move_originator_ae is not None:
        fields.append(_field(0x1030, move_originator_ae))
    if move_originator_message_id is not None:
        fields.append(_field(0x1031, move_originator_message_id))
    return encode_command(fields)


def c_store_rsp(
    message_id: int, sop_class_uid: str, sop_instance_uid: str, status: int
) -> bytes:
    return encode_command([
        _field(0x0002, sop_class_uid),
        _field(0x0100, C_STORE_RSP),
        _field(0x0120, message_id),
        _field(0x0800, NO_DATA_SET),
        _field(0x0900, status),
        _field(0x1000, sop_instance_uid),
    ])


def c_move_rq(
    message_id: int, sop_class_uid: str, destination_ae: str, priority: int = 0
) -> bytes:
    return encode_command([
        _field(0x0002, sop_class_uid),
        _field(0x0100, C_MOVE_RQ),
        _field(0x0110, message_id),
        _field(0x0600, destination_ae),
        _field(0x0700, priority),
        _field(0x0800, HAS_DATA_SET),
    ])


def c_move_rsp(
    message_id: int,
    sop_class_uid: str,
    status: int,
    remaining: int | None = None,
    completed: int = 0,
    failed: int = 0,
    warning: int = 0,
) -> bytes:
    fields = [
        _field(0x0002, sop_class_uid),
        _field(0x0100, C_MOVE_RSP),
        _field(0x0120, message_id),
        _field(0x0800, NO_DATA_SET),
        _field(0x0900, status),
    ]
    if remaining is not None:
        fields.append(_field(0x1020, remaining))
    fields.extend([
        _field(0x1021, completed),
        _field(0x1022, failed),
        _field(0x1023, warning),
    ])
    return encode_command(fields)
