"""Shared association machinery: socket framing, negotiation, PDV assembly.

Both the server and client sides are built from the pieces here: a
:class:`PduStream` that frames PDUs over a socket with size limits and
timeout mapping, a :class:`MessageAssembler` that reassembles fragmented
DIMSE messages from PDV streams, and the negotiation rules that turn a
proposed association into an accept/reject decision.
"""

from __future__ import annotations

import socket
import struct
from dataclasses import dataclass, field

from niffler.dicom.dataset import DicomDataset
from niffler.dicom.uids import (
    APPLICATION_CONTEXT,
    DEFAULT_STORAGE_CLASSES,
    EXPLICIT_VR_LE,
    IMPLEMENTATION_CLASS_UID,
    IMPLEMENTATION_VERSION_NAME,
    IMPLICIT_VR_LE,
    VERIFICATION_SOP_CLASS,
)
from niffler.errors import ConfigError, DimseTimeout, MalformedPdu, OversizedPdu, PeerClosed
from niffler.net import dimse
from niffler.net.pdu import (
    CONTEXT_ACCEPTED,
    CONTEXT_REJECTED_ABSTRACT_SYNTAX,
    CONTEXT_REJECTED_TRANSFER_SYNTAX,
    DEFAULT_MAX_PDU_LENGTH,
    HARD_PDU_CEILING,
    AssociateAc,
    AssociateRj,
    AssociateRq,
    PDataTf,
    Pdu,
    Pdv,
    PresentationContextAc,
    UserInformation,
    decode_pdu,
    encode_pdu,
)

#: A-ASSOCIATE-RJ field values used by the acceptor.
REJECT_PERMANENT = 1
REJECT_SOURCE_USER = 1
REJECT_REASON_CALLING_AE_UNKNOWN = 3
REJECT_REASON_CALLED_AE_UNKNOWN = 7
REJECT_REASON_APPLICATION_CONTEXT = 2

_MIN_PDU_FOR_FRAGMENT = 64


def default_user_info(max_pdu_length: int) -> UserInformation:
    return UserInformation(
        max_pdu_length=max_pdu_length,
        implementation_class_uid=IMPLEMENTATION_CLASS_UID,
        implementation_version_name=IMPLEMENTATION_VERSION_NAME,
    )


@dataclass
class AssociationConfig:
    """Acceptor-side policy for incoming associations."""

    ae_title: str = "NIFFLER"
    max_pdu_length: int = DEFAULT_MAX_PDU_LENGTH
    #: Calling AE titles allowed to associate; None accepts any caller.
    accepted_callers: frozenset[str] | None = None
    #: Source addresses allowed to associate; None accepts any address.
    accepted_hosts: frozenset[str] | None = None
    accepted_abstract_syntaxes: tuple[str, ...] = DEFAULT_STORAGE_CLASSES + (
        VERIFICATION_SOP_CLASS,
    )
    #: Transfer syntaxes in preference order for accepted contexts.
    transfer_syntax_preference: tuple[str, ...] = (EXPLICIT_VR_LE, IMPLICIT_VR_LE)
    #: When True, the called AE title must equal ``ae_title``.
    enforce_called_ae: bool = True
    dimse_timeout: float = 30.0

    def __post_init__(self) -> None:
        validate_ae_title(self.ae_title)
        if self.max_pdu_length < _MIN_PDU_FOR_FRAGMENT:
            raise ConfigError(
                f"max PDU length {self.max_pdu_length} below minimum {_MIN_PDU_FOR_FRAGMENT}"
            )


def validate_ae_title(title: str) -> str:
    if not 0 < len(title) <= 16:
        raise ConfigError(f"AE title must be 1..16 characters: {title!r}")
    if not title.isascii() or any(c == "\\" or ord(c) < 0x20 for c in title):
        raise ConfigError(f"AE title contains forbidden characters: {title!r}")
    return title


class PduStream:
    """Frames PDUs over a connected socket.

    Receive failures map onto the protocol error hierarchy: clean EOF at a
    PDU boundary raises :class:`PeerClosed`, EOF mid-PDU raises
    :class:`MalformedPdu`, socket timeouts raise :class:`DimseTimeout`, and
    a declared length above ``recv_limit`` raises :class:`OversizedPdu`
    before any large allocation happens.
    """

    def __init__(self, sock: socket.socket, recv_limit: int = HARD_PDU_CEILING) -> None:
        self.sock = sock
        self.recv_limit = recv_limit

    def send_pdu(self, pdu: Pdu) -> None:
        try:
            self.sock.sendall(encode_pdu(pdu))
        except (BrokenPipeError, ConnectionResetError, OSError) as exc:
            raise PeerClosed(f"send failed: {exc}") from exc

    def _read_exact(self, count: int, at_boundary: bool) -> bytes:
        chunks = bytearray()
        while len(chunks) < count:
            try:
                chunk = self.sock.recv(count - len(chunks))
            except socket.timeout as exc:
                raise DimseTimeout("timed out waiting for a PDU") from exc
            except (ConnectionResetError, OSError) as exc:
                raise PeerClosed(f"receive failed: {exc}") from exc
            if not chunk:
                if at_boundary and not chunks:
                    raise PeerClosed("peer closed the connection")
                raise MalformedPdu(
                    f"connection closed after {len(chunks)} of {count} expected bytes"
                )
            chunks.extend(chunk)
        return bytes(chunks)

    def recv_pdu(self, timeout: float | None = None) -> Pdu:
        self.sock.settimeout(timeout)
        header = self._read_exact(6, at_boundary=True)
        declared = struct.unpack(">I", header[2:6])[0]
        if declared > self.recv_limit:
            raise OversizedPdu(
                f"peer declared a {declared}-byte PDU, limit is {self.recv_limit}"
            )
        payload = self._read_exact(declared, at_boundary=False)
        return decode_pdu(header + payload, max_length=self.recv_limit)

    def close(self) -> None:
        try:
            self.sock.shutdown(socket.SHUT_RDWR)
        except OSError:
            pass
        self.sock.close()


@dataclass(frozen=True)
class CompletedMessage:
    """One fully reassembled DIMSE message."""

    context_id: int
    command: DicomDataset
    summary: dimse.CommandSummary
    data: bytes | None


class _ChannelState:
    __slots__ = ("command", "data", "summary", "command_obj")

    def __init__(self) -> None:
        self.command = bytearray()
        self.data = bytearray()
        self.summary = None
        self.command_obj = None


class MessageAssembler:
    """Reassembles PDV fragments into complete DIMSE messages.

    Fragments for different presentation contexts may interleave; within one
    context the command set must complete before data set fragments arrive.
    """

    def __init__(self) -> None:
        self._channels: dict[int, _ChannelState] = {}

    def feed(self, pdv: Pdv) -> CompletedMessage | None:
        state = self._channels.setdefault(pdv.context_id, _ChannelState())
        if pdv.is_command:
            if state.summary is not None:
                raise MalformedPdu("command fragment arrived while a data set was pending")
            state.command.extend(pdv.data)
            if not pdv.is_last:
                return None
            command = dimse.decode_command(bytes(state.command))
            summary = dimse.summarize_command(command)
            if summary.has_data_set:
                state.summary = summary
                state.command_obj = command
                return None
            del self._channels[pdv.context_id]
            return CompletedMessage(pdv.context_id, command, summary, None)
        if state.summary is None:
            raise MalformedPdu("data fragment arrived before any command set")
        state.data.extend(pdv.data)
        if not pdv.is_last:
            return None
        message = CompletedMessage(
            pdv.context_id, state.command_obj, state.summary, bytes(state.data)
        )
        del self._channels[pdv.context_id]
        return message


def fragment_message(
    context_id: int, command: bytes, data: bytes | None, max_pdu: int
) -> list[PDataTf]:
    """Split a DIMSE message into P-DATA-TF PDUs no larger than ``max_pdu``."""
    chunk_size = max(1, max_pdu - 6)
    pdus: list[PDataTf] = []

    def emit(payload: bytes, is_command: bool) -> None:
        total = len(payload)
        offset = 0
        while True:
            chunk = payload[offset : offset + chunk_size]
            offset += len(chunk)
            last = offset >= total
            pdus.append(PDataTf((Pdv(context_id, is_command, last, chunk),)))
            if last:
                break

    emit(command, True)
    if data is not None:
        emit(data, False)
    return pdus


@dataclass(frozen=True)
class AcceptedContext:
    context_id: int
    abstract_syntax: str
    transfer_syntax: str


@dataclass
class NegotiationOutcome:
    reply: AssociateAc | AssociateRj
    accepted: dict[int, AcceptedContext] = field(default_factory=dict)
    peer_max_pdu: int = DEFAULT_MAX_PDU_LENGTH


def negotiate(request: AssociateRq, config: AssociationConfig, peer_host: str) -> NegotiationOutcome:
    """Apply acceptor policy to a proposed association."""

    def rejection(reason: int) -> NegotiationOutcome:
        return NegotiationOutcome(
            AssociateRj(REJECT_PERMANENT, REJECT_SOURCE_USER, reason)
        )

    if request.application_context != APPLICATION_CONTEXT:
        return rejection(REJECT_REASON_APPLICATION_CONTEXT)
    if config.accepted_hosts is not None and peer_host not in config.accepted_hosts:
        return rejection(REJECT_REASON_CALLING_AE_UNKNOWN)
    if config.accepted_callers is not None and request.calling_ae not in config.accepted_callers:
        return rejection(REJECT_REASON_CALLING_AE_UNKNOWN)
    if config.enforce_called_ae and request.called_ae != config.ae_title:
        return rejection(REJECT_REASON_CALLED_AE_UNKNOWN)

    replies: list[PresentationContextAc] = []
    accepted: dict[int, AcceptedContext] = {}
    for ctx in request.presentation_contexts:
        if ctx.abstract_syntax not in config.accepted_abstract_syntaxes:
            replies.append(
                PresentationContextAc(ctx.context_id, CONTEXT_REJECTED_ABSTRACT_SYNTAX, "")
            )
            continue
        chosen = next(
            (ts for ts in config.transfer_syntax_preference if ts in ctx.transfer_syntaxes),
            None,
        )
        if chosen is None:
            replies.append(
                PresentationContextAc(ctx.context_id, CONTEXT_REJECTED_TRANSFER_SYNTAX, "")
            )
            continue
        replies.append(PresentationContextAc(ctx.context_id, CONTEXT_ACCEPTED, chosen))
        accepted[ctx.context_id] = AcceptedContext(ctx.context_id, ctx.abstract_syntax, chosen)

    ac = AssociateAc(
        called_ae=request.called_ae,
        calling_ae=request.calling_ae,
        application_context=APPLICATION_CONTEXT,
        presentation_contexts=tuple(replies),
        user_info=default_user_info(config.max_pdu_length),
    )
    peer_max = request.user_info.max_pdu_length or DEFAULT_MAX_PDU_LENGTH
    return NegotiationOutcome(ac, accepted, peer_max)


def send_dimse_message(
    stream: PduStream,
    context_id: int,
    command: bytes,
    data: bytes | None,
    peer_max_pdu: int,
) -> None:
    for pdu in fragment_message(context_id, command, data, peer_max_pdu):
        stream.send_pdu(pdu)
