"""Encoding and decoding of the seven upper-layer PDU kinds.

Every PDU is framed as a one-byte type code, one reserved byte, and a
four-byte big-endian length followed by exactly that many payload bytes.
Association negotiation payloads carry nested variable items which are in
turn framed as a one-byte item type, one reserved byte, and a two-byte
big-endian length.  Decoding is total over arbitrary byte input: malformed
input raises a subclass of :class:`~niffler.errors.PduError`, never anything
else.
"""

from __future__ import annotations

import struct
from dataclasses import dataclass, field

from niffler.errors import LengthMismatch, MalformedPdu, OversizedPdu, UnknownPduType

PDU_ASSOCIATE_RQ = 0x01
PDU_ASSOCIATE_AC = 0x02
PDU_ASSOCIATE_RJ = 0x03
PDU_P_DATA_TF = 0x04
PDU_RELEASE_RQ = 0x05
PDU_RELEASE_RP = 0x06
PDU_ABORT = 0x07

ITEM_APPLICATION_CONTEXT = 0x10
ITEM_PRESENTATION_CONTEXT_RQ = 0x20
ITEM_PRESENTATION_CONTEXT_AC = 0x21
ITEM_ABSTRACT_SYNTAX = 0x30
ITEM_TRANSFER_SYNTAX = 0x40
ITEM_USER_INFORMATION = 0x50
SUB_ITEM_MAX_LENGTH = 0x51
SUB_ITEM_IMPLEMENTATION_CLASS_UID = 0x52
SUB_ITEM_IMPLEMENTATION_VERSION_NAME = 0x55

#: Presentation context negotiation results carried in 0x21 items.
CONTEXT_ACCEPTED = 0
CONTEXT_REJECTED_USER = 1
CONTEXT_REJECTED_ABSTRACT_SYNTAX = 3
CONTEXT_REJECTED_TRANSFER_SYNTAX = 4

DEFAULT_MAX_PDU_LENGTH = 16384

#: Hard ceiling applied while reading any PDU off a socket, independent of
#: the negotiated maximum, so a hostile length field cannot trigger an
#: arbitrarily large allocation.
HARD_PDU_CEILING = 16 * 1024 * 1024

_HEADER = struct.Struct(">BBI")


@dataclass(frozen=True)
class PresentationContextRq:
    """One proposed presentation context: an abstract syntax plus the
    transfer syntaxes the proposer can use for it."""

    context_id: int
    abstract_syntax: str
    transfer_syntaxes: tuple[str, ...]


@dataclass(frozen=True)
class PresentationContextAc:
    """The acceptor's verdict on one proposed context."""

    context_id: int
    result: int
    transfer_syntax: str


@dataclass(frozen=True)
class UserInformation:
    """User-information item: receive-buffer size plus implementation
    identity.  Sub-items this implementation does not interpret are kept
    verbatim so the item re-encodes exactly as received."""

    max_pdu_length: int = DEFAULT_MAX_PDU_LENGTH
    implementation_class_uid: str = ""
    implementation_version_name: str | None = None
    extra_items: tuple[tuple[int, bytes], ...] = ()


@dataclass(frozen=True)
class AssociateRq:
    called_ae: str
    calling_ae: str
    application_context: str
    presentation_contexts: tuple[PresentationContextRq, ...]
    user_info: UserInformation
    protocol_version: int = 1


@dataclass(frozen=True)
class AssociateAc:
    called_ae: str
    calling_ae: str
    application_context: str
    presentation_contexts: tuple[PresentationContextAc, ...]
    user_info: UserInformation
    protocol_version: int = 1


@dataclass(frozen=True)
class AssociateRj:
    result: int
    source: int
    reason: int


@dataclass(frozen=True)
class Pdv:
    """One presentation-data-value fragment.

    ``is_command`` selects the command/data channel; ``is_last`` marks the
    final fragment of a message on that channel.
    """

    context_id: int
    is_command: bool
    is_last: bool
    data: bytes


@dataclass(frozen=True)
class PDataTf:
    pdvs: tuple[Pdv, ...] = field(default_factory=tuple)


@dataclass(frozen=True)
class ReleaseRq:
    pass


@dataclass(frozen=True)
class ReleaseRp:
    pass


@dataclass(frozen=True)
class Abort:
    source: int
    reason: int


Pdu = AssociateRq | AssociateAc | AssociateRj | PDataTf | ReleaseRq | ReleaseRp | Abort


def _pad_ae(title: str) -> bytes:
    encoded = title.encode("ascii")
    if not 0 < len(encoded) <= 16:
        raise ValueError(f"AE title must be 1..16 characters, got {title!r}")
    return encoded.ljust(16)


def _item(item_type: int, body: bytes) -> bytes:
    if len(body) > 0xFFFF:
        raise ValueError(f"item 0x{item_type:02X} body exceeds 65535 bytes")
    return struct.pack(">BBH", item_type, 0, len(body)) + body


def _uid_item(item_type: int, uid: str) -> bytes:
    return _item(item_type, uid.encode("ascii"))


def _encode_user_info(info: UserInformation) -> bytes:
    body = _item(SUB_ITEM_MAX_LENGTH, struct.pack(">I", info.max_pdu_length))
    if info.implementation_class_uid:
        body += _uid_item(SUB_ITEM_IMPLEMENTATION_CLASS_UID, info.implementation_class_uid)
    if info.implementation_version_name is not None:
        body += _uid_item(SUB_ITEM_IMPLEMENTATION_VERSION_NAME, info.implementation_version_name)
    for item_type, raw in info.extra_items:
        body += _item(item_type, raw)
    return _item(ITEM_USER_INFORMATION, body)


def _encode_associate(pdu: AssociateRq | AssociateAc) -> bytes:
    body = struct.pack(">HH", pdu.protocol_version, 0)
    body += _pad_ae(pdu.called_ae) + _pad_ae(pdu.calling_ae) + bytes(32)
    body += _uid_item(ITEM_APPLICATION_CONTEXT, pdu.application_context)
    if isinstance(pdu, AssociateRq):
        for ctx in pdu.presentation_contexts:
            inner = _uid_item(ITEM_ABSTRACT_SYNTAX, ctx.abstract_syntax)
            inner += b"".join(_uid_item(ITEM_TRANSFER_SYNTAX, ts) for ts in ctx.transfer_syntaxes)
            body += _item(
                ITEM_PRESENTATION_CONTEXT_RQ,
                struct.pack(">BBBB", ctx.context_id, 0, 0, 0) + inner,
            )
    else:
        for ctx in pdu.presentation_contexts:
            body += _item(
                ITEM_PRESENTATION_CONTEXT_AC,
                struct.pack(">BBBB", ctx.context_id, 0, ctx.result, 0)
                + _uid_item(ITEM_TRANSFER_SYNTAX, ctx.transfer_syntax),
            )
    body += _encode_user_info(pdu.user_info)
    return body


def encode_pdu(pdu: Pdu) -> bytes:
    """Serialize one PDU, including its six-byte header."""
    if isinstance(pdu, AssociateRq):
        pdu_type, body = PDU_ASSOCIATE_RQ, _encode_associate(pdu)
    elif isinstance(pdu, AssociateAc):
        pdu_type, body = PDU_ASSOCIATE_AC, _encode_associate(pdu)
    elif isinstance(pdu, AssociateRj):
        pdu_type, body = PDU_ASSOCIATE_RJ, struct.pack(">BBBB", 0, pdu.result, pdu.source, pdu.reason)
    elif isinstance(pdu, PDataTf):
        parts = []
        for pdv in pdu.pdvs:
            control = (1 if pdv.is_command else 0) | (2 if pdv.is_last else 0)
            parts.append(struct.pack(">IBB", len(pdv.data) + 2, pdv.context_id, control) + pdv.data)
        pdu_type, body = PDU_P_DATA_TF, b"".join(parts)
    elif isinstance(pdu, ReleaseRq):
        pdu_type, body = PDU_RELEASE_RQ, bytes(4)
    elif isinstance(pdu, ReleaseRp):
        pdu_type, body = PDU_RELEASE_RP, bytes(4)
    elif isinstance(pdu, Abort):
        pdu_type, body = PDU_ABORT, struct.pack(">BBBB", 0, 0, pdu.source, pdu.reason)
    else:
        raise TypeError(f"not a PDU: {pdu!r}")
    return _HEADER.pack(pdu_type, 0, len(body)) + body


class _Cursor:
    """Bounds-checked reader over a PDU payload."""

    __slots__ = ("data", "pos")

    def __init__(self, data: bytes) -> None:
        self.data = data
        self.pos = 0

    def remaining(self) -> int:
        return len(self.data) - self.pos

    def take(self, count: int) -> bytes:
        if count > self.remaining():
            raise LengthMismatch(
                f"payload ends after {self.remaining()} of {count} expected bytes"
            )
        chunk = self.data[self.pos : self.pos + count]
        self.pos += count
        return chunk

    def u8(self) -> int:
        return self.take(1)[0]

    def u16(self) -> int:
        return struct.unpack(">H", self.take(2))[0]

    def u32(self) -> int:
        return struct.unpack(">I", self.take(4))[0]

    def item_header(self) -> tuple[int, int]:
        item_type = self.u8()
        self.take(1)
        return item_type, self.u16()


def _decode_text(raw: bytes) -> str:
    return raw.decode("latin-1")


def _decode_user_info(raw: bytes) -> UserInformation:
    cur = _Cursor(raw)
    max_pdu = DEFAULT_MAX_PDU_LENGTH
    impl_uid = ""
    impl_name: str | None = None
    extras: list[tuple[int, bytes]] = []
    while cur.remaining():
        sub_type, sub_len = cur.item_header()
        sub_body = cur.take(sub_len)
        if sub_type == SUB_ITEM_MAX_LENGTH:
            if sub_len != 4:
                raise MalformedPdu(f"maximum-length sub-item has length {sub_len}, expected 4")
            max_pdu = struct.unpack(">I", sub_body)[0]
        elif sub_type == SUB_ITEM_IMPLEMENTATION_CLASS_UID:
            impl_uid = _decode_text(sub_body)
        elif sub_type == SUB_ITEM_IMPLEMENTATION_VERSION_NAME:
            impl_name = _decode_text(sub_body)
        else:
            extras.append((sub_type, sub_body))
    return UserInformation(max_pdu, impl_uid, impl_name, tuple(extras))


def _decode_context_rq(raw: bytes) -> PresentationContextRq:
    cur = _Cursor(raw)
    context_id = cur.u8()
    cur.take(3)
    abstract = ""
    transfers: list[str] = []
    while cur.remaining():
        sub_type, sub_len = cur.item_header()
        sub_body = cur.take(sub_len)
        if sub_type == ITEM_ABSTRACT_SYNTAX:
            abstract = _decode_text(sub_body)
        elif sub_type == ITEM_TRANSFER_SYNTAX:
            transfers.append(_decode_text(sub_body))
        else:
            raise MalformedPdu(f"unexpected sub-item 0x{sub_type:02X} in proposed context")
    if not abstract:
        raise MalformedPdu("proposed presentation context lacks an abstract syntax")
    if not transfers:
        raise MalformedPdu("proposed presentation context lacks transfer syntaxes")
    return PresentationContextRq(context_id, abstract, tuple(transfers))


def _decode_context_ac(raw: bytes) -> PresentationContextAc:
    cur = _Cursor(raw)
    context_id = cur.u8()
    cur.take(1)
    result = cur.u8()
    cur.take(1)
    transfer = ""
    while cur.remaining():
        sub_type, sub_len = cur.item_header()
        sub_body = cur.take(sub_len)
        if sub_type != ITEM_TRANSFER_SYNTAX:
            raise MalformedPdu(f"unexpected sub-item 0x{sub_type:02X} in context reply")
        transfer = _decode_text(sub_body)
    return PresentationContextAc(context_id, result, transfer)


def _decode_associate(pdu_type: int, payload: bytes) -> AssociateRq | AssociateAc:
    cur = _Cursor(payload)
    protocol_version = cur.u16()
    cur.take(2)
    called = _decode_text(cur.take(16)).rstrip(" ")
    calling = _decode_text(cur.take(16)).rstrip(" ")
    cur.take(32)
    application_context = ""
    contexts_rq: list[PresentationContextRq] = []
    contexts_ac: list[PresentationContextAc] = []
    user_info = UserInformation()
    while cur.remaining():
        item_type, item_len = cur.item_header()
        item_body = cur.take(item_len)
        if item_type == ITEM_APPLICATION_CONTEXT:
            application_context = _decode_text(item_body)
        elif item_type == ITEM_PRESENTATION_CONTEXT_RQ and pdu_type == PDU_ASSOCIATE_RQ:
            contexts_rq.append(_decode_context_rq(item_body))
        elif item_type == ITEM_PRESENTATION_CONTEXT_AC and pdu_type == PDU_ASSOCIATE_AC:
            contexts_ac.append(_decode_context_ac(item_body))
        elif item_type == ITEM_USER_INFORMATION:
            user_info = _decode_user_info(item_body)
        else:
            raise MalformedPdu(f"unexpected item 0x{item_type:02X} in association PDU")
    if pdu_type == PDU_ASSOCIATE_RQ:
        return AssociateRq(
            called, calling, application_context, tuple(contexts_rq), user_info, protocol_version
        )
    return AssociateAc(
        called, calling, application_context, tuple(contexts_ac), user_info, protocol_version
    )


def _decode_p_data(payload: bytes) -> PDataTf:
    cur = _Cursor(payload)
    pdvs: list[Pdv] = []
    while cur.remaining():
        pdv_len = cur.u32()
        if pdv_len < 2:
            raise MalformedPdu(f"PDV declares {pdv_len} bytes, minimum is 2")
        context_id = cur.u8()
        control = cur.u8()
        data = cur.take(pdv_len - 2)
        pdvs.append(Pdv(context_id, bool(control & 1), bool(control & 2), data))
    return PDataTf(tuple(pdvs))


def decode_pdu(data: bytes, max_length: int = HARD_PDU_CEILING) -> Pdu:
    """Parse exactly one PDU from ``data``.

    The declared length must account for every byte after the header; short
    or trailing bytes raise :class:`LengthMismatch`, a declared length above
    ``max_length`` raises :class:`OversizedPdu`, and a type code outside the
    assigned range raises :class:`UnknownPduType`.
    """
    if len(data) < 6:
        raise LengthMismatch(f"PDU header needs 6 bytes, got {len(data)}")
    pdu_type, reserved, declared = _HEADER.unpack_from(data)
    del reserved
    if declared > max_length:
        raise OversizedPdu(f"declared PDU length {declared} exceeds limit {max_length}")
    if len(data) - 6 != declared:
        raise LengthMismatch(
            f"declared PDU length {declared} but {len(data) - 6} payload bytes present"
        )
    payload = data[6:]
    if pdu_type in (PDU_ASSOCIATE_RQ, PDU_ASSOCIATE_AC):
        return _decode_associate(pdu_type, payload)
    if pdu_type == PDU_ASSOCIATE_RJ:
        cur = _Cursor(payload)
        cur.take(1)
        return AssociateRj(cur.u8(), cur.u8(), cur.u8())
    if pdu_type == PDU_P_DATA_TF:
        return _decode_p_data(payload)
    if pdu_type == PDU_RELEASE_RQ:
        _Cursor(payload).take(4)
        return ReleaseRq()
    if pdu_type == PDU_RELEASE_RP:
        _Cursor(payload).take(4)
        return ReleaseRp()
    if pdu_type == PDU_ABORT:
        cur = _Cursor(payload)
        cur.take(2)
        return Abort(cur.u8(), cur.u8())
    raise UnknownPduType(f"no PDU kind is assigned to type code 0x{pdu_type:02X}")
