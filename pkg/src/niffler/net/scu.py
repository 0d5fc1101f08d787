"""Client-side DIMSE services: C-ECHO, C-STORE, and C-MOVE requests."""

from __future__ import annotations

import logging
import socket
import time
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable

from niffler.dicom.dataset import DataElement, DicomDataset, Tag
from niffler.dicom.parse import read_part10_file
from niffler.dicom.tags import resolve_identifier, vr_for_tag
from niffler.dicom.uids import (
    APPLICATION_CONTEXT,
    EXPLICIT_VR_LE,
    IMPLICIT_VR_LE,
    STUDY_ROOT_QR_MOVE,
    VERIFICATION_SOP_CLASS,
)
from niffler.dicom.vr import VR
from niffler.dicom.write import write_dataset
from niffler.errors import (
    AssociationRejected,
    ConnectionRefusedByPeer,
    DicomError,
    DimseError,
    DimseTimeout,
    MoveRefused,
    NoAcceptedContext,
    PeerClosed,
)
from niffler.net import dimse
from niffler.net.association import (
    CompletedMessage,
    MessageAssembler,
    PduStream,
    default_user_info,
    send_dimse_message,
    validate_ae_title,
)
from niffler.net.pdu import (
    CONTEXT_ACCEPTED,
    DEFAULT_MAX_PDU_LENGTH,
    Abort,
    AssociateAc,
    AssociateRj,
    AssociateRq,
    PDataTf,
    PresentationContextRq,
    ReleaseRp,
    ReleaseRq,
)

log = logging.getLogger(__name__)

_BOTH_SYNTAXES = (EXPLICIT_VR_LE, IMPLICIT_VR_LE)


@dataclass(frozen=True)
class RemotePeer:
    """Where to connect and who the two parties claim to be."""

    host: str
    port: int
    called_ae: str
    calling_ae: str = "NIFFLER"

    def __post_init__(self) -> None:
        validate_ae_title(self.called_ae)
        validate_ae_title(self.calling_ae)


class ClientAssociation:
    """One negotiated association from the requestor side."""

    def __init__(self, stream: PduStream, accepted: dict[str, tuple[int, str]], peer_max_pdu: int):
        self.stream = stream
        #: abstract syntax -> (context id, negotiated transfer syntax)
        self.accepted = accepted
        self.peer_max_pdu = peer_max_pdu
        self._assembler = MessageAssembler()

    @classmethod
    def connect(
        cls,
        peer: RemotePeer,
        contexts: list[tuple[str, tuple[str, ...]]],
        max_pdu: int = DEFAULT_MAX_PDU_LENGTH,
        timeout: float = 10.0,
    ) -> "ClientAssociation":
        proposed = tuple(
            PresentationContextRq(2 * i + 1, abstract, transfers)
            for i, (abstract, transfers) in enumerate(contexts)
        )
        request = AssociateRq(
            called_ae=peer.called_ae,
            calling_ae=peer.calling_ae,
            application_context=APPLICATION_CONTEXT,
            presentation_contexts=proposed,
            user_info=default_user_info(max_pdu),
        )
        try:
            sock = socket.create_connection((peer.host, peer.port), timeout=timeout)
        except (ConnectionRefusedError, socket.timeout, OSError) as exc:
            raise ConnectionRefusedByPeer(
                f"cannot connect to {peer.host}:{peer.port}: {exc}"
            ) from exc
        # Request/response traffic stalls badly under Nagle + delayed ACK.
        sock.setsockopt(socket.IPPROTO_TCP, socket.TCP_NODELAY, 1)
        stream = PduStream(sock)
        try:
            stream.send_pdu(request)
            reply = stream.recv_pdu(timeout=timeout)
        except Exception:
            stream.close()
            raise
        if isinstance(reply, AssociateRj):
            stream.close()
            raise AssociationRejected(
                f"association rejected: result={reply.result} "
                f"source={reply.source} reason={reply.reason}"
            )
        if not isinstance(reply, AssociateAc):
            stream.close()
            raise AssociationRejected(f"unexpected handshake reply: {type(reply).__name__}")
        by_id = {ctx.context_id: ctx for ctx in proposed}
        accepted: dict[str, tuple[int, str]] = {}
        for ctx in reply.presentation_contexts:
            if ctx.result == CONTEXT_ACCEPTED and ctx.context_id in by_id:
                abstract = by_id[ctx.context_id].abstract_syntax
                accepted.setdefault(abstract, (ctx.context_id, ctx.transfer_syntax))
        stream.recv_limit = max(max_pdu, 4096) + 64
        return cls(stream, accepted, reply.user_info.max_pdu_length or DEFAULT_MAX_PDU_LENGTH)

    def context_for(self, abstract_syntax: str) -> tuple[int, str]:
        try:
            return self.accepted[abstract_syntax]
        except KeyError:
            raise NoAcceptedContext(
                f"peer accepted no presentation context for {abstract_syntax}"
            ) from None

    def send_message(self, context_id: int, command: bytes, data: bytes | None = None) -> None:
        send_dimse_message(self.stream, context_id, command, data, self.peer_max_pdu)

    def recv_message(self, timeout: float) -> CompletedMessage:
        deadline = time.monotonic() + timeout
        while True:
            remaining = deadline - time.monotonic()
            if remaining <= 0:
                raise DimseTimeout("no complete DIMSE message within the allowed window")
            pdu = self.stream.recv_pdu(timeout=remaining)
            if isinstance(pdu, PDataTf):
                for pdv in pdu.pdvs:
                    message = self._assembler.feed(pdv)
                    if message is not None:
                        return message
            elif isinstance(pdu, Abort):
                raise DimseError(
                    f"peer aborted the association (source={pdu.source} reason={pdu.reason})"
                )
            else:
                raise DimseError(f"unexpected PDU while awaiting a response: {type(pdu).__name__}")

    def release(self, timeout: float = 5.0) -> None:
        try:
            self.stream.send_pdu(ReleaseRq())
            deadline = time.monotonic() + timeout
            while True:
                remaining = deadline - time.monotonic()
                if remaining <= 0:
                    break
                pdu = self.stream.recv_pdu(timeout=remaining)
                if isinstance(pdu, (ReleaseRp, Abort)):
                    break
        except (PeerClosed, DimseTimeout):
            pass
        finally:
            self.stream.close()

    def abort(self) -> None:
        try:
            self.stream.send_pdu(Abort(source=0, reason=0))
        except PeerClosed:
            pass
        finally:
            self.stream.close()


def send_c_echo(peer: RemotePeer, timeout: float = 10.0) -> int:
    """Verify connectivity; returns the peer's C-ECHO response status."""
    assoc = ClientAssociation.connect(
        peer, [(VERIFICATION_SOP_CLASS, _BOTH_SYNTAXES)], timeout=timeout
    )
    try:
        ctx_id, _ts = assoc.context_for(VERIFICATION_SOP_CLASS)
        assoc.send_message(ctx_id, dimse.c_echo_rq(1, VERIFICATION_SOP_CLASS))
        reply = assoc.recv_message(timeout)
        return reply.summary.status if reply.summary.status is not None else -1
    finally:
        assoc.release()


@dataclass(frozen=True)
class InstanceOutcome:
    path: Path
    sop_instance_uid: str
    status: int | None
    detail: str


@dataclass
class StoreReport:
    """Per-instance outcomes of one C-STORE run over a single association."""

    sent: int = 0
    outcomes: list[InstanceOutcome] = field(default_factory=list)

    @property
    def failed(self) -> list[InstanceOutcome]:
        return [o for o in self.outcomes if o.status != dimse.STATUS_SUCCESS]


def send_c_store(
    peer: RemotePeer,
    paths: list[Path],
    timeout: float = 30.0,
    max_pdu: int = DEFAULT_MAX_PDU_LENGTH,
    pace: Callable[[], None] | None = None,
) -> StoreReport:
    """Send Part-10 files over one association, one C-STORE apiece.

    Instances whose SOP class ends up with no accepted presentation context
    are recorded as failures rather than aborting the rest of the batch.
    Files are re-encoded when the negotiated transfer syntax differs from
    the on-disk one.  ``pace`` is called before each instance, letting a
    caller throttle the send rate without owning the association.
    """
    report = StoreReport()
    loaded = []
    for path in paths:
        path = Path(path)
        try:
            meta, dataset = read_part10_file(path)
        except (DicomError, OSError) as exc:
            report.outcomes.append(InstanceOutcome(path, "", None, f"unreadable: {exc}"))
            continue
        loaded.append((path, meta, dataset))
    if not loaded:
        return report

    sop_classes = sorted({meta.media_storage_sop_class_uid for _p, meta, _d in loaded})
    assoc = ClientAssociation.connect(
        peer,
        [(sop_class, _BOTH_SYNTAXES) for sop_class in sop_classes],
        max_pdu=max_pdu,
        timeout=timeout,
    )
    try:
        message_id = 0
        for path, meta, dataset in loaded:
            message_id += 1
            if pace is not None:
                pace()
            try:
                ctx_id, transfer_syntax = assoc.context_for(meta.media_storage_sop_class_uid)
            except NoAcceptedContext as exc:
                report.outcomes.append(
                    InstanceOutcome(path, meta.media_storage_sop_instance_uid, None, str(exc))
                )
                continue
            payload = write_dataset(dataset, transfer_syntax)
            assoc.send_message(
                ctx_id,
                dimse.c_store_rq(
                    message_id,
                    meta.media_storage_sop_class_uid,
                    meta.media_storage_sop_instance_uid,
                ),
                payload,
            )
            reply = assoc.recv_message(timeout)
            status = reply.summary.status
            if status == dimse.STATUS_SUCCESS:
                report.sent += 1
                report.outcomes.append(
                    InstanceOutcome(path, meta.media_storage_sop_instance_uid, status, "stored")
                )
            else:
                report.outcomes.append(
                    InstanceOutcome(
                        path,
                        meta.media_storage_sop_instance_uid,
                        status,
                        f"peer returned status 0x{(status or 0):04X}",
                    )
                )
    finally:
        assoc.release()
    return report


@dataclass(frozen=True)
class MoveRequest:
    """A study/series retrieval request addressed to a move destination."""

    destination_ae: str
    query_level: str = "STUDY"
    match: dict[str, str] = field(default_factory=dict)

    def identifier(self) -> DicomDataset:
        ds = DicomDataset(transfer_syntax=IMPLICIT_VR_LE)
        ds.put("QueryRetrieveLevel", VR.CS, self.query_level.upper())
        for key, value in self.match.items():
            group, element = resolve_identifier(key)
            vr = vr_for_tag(group, element) or VR.LO
            ds.set(DataElement.from_value(Tag(group, element), vr, value))
        return ds


@dataclass(frozen=True)
class MoveReport:
    """Sub-operation counts from the final C-MOVE response."""

    status: int
    completed: int
    failed: int
    warning: int


def send_c_move(
    peer: RemotePeer,
    request: MoveRequest,
    timeout: float = 60.0,
    max_pdu: int = DEFAULT_MAX_PDU_LENGTH,
) -> MoveReport:
    """Ask the peer to move matching instances to ``request.destination_ae``.

    Pending responses are consumed until a final status arrives; a final
    status outside success/warning raises :class:`MoveRefused`.
    """
    validate_ae_title(request.destination_ae)
    assoc = ClientAssociation.connect(
        peer, [(STUDY_ROOT_QR_MOVE, _BOTH_SYNTAXES)], max_pdu=max_pdu, timeout=timeout
    )
    try:
        ctx_id, transfer_syntax = assoc.context_for(STUDY_ROOT_QR_MOVE)
        identifier = write_dataset(request.identifier(), transfer_syntax)
        assoc.send_message(
            ctx_id,
            dimse.c_move_rq(1, STUDY_ROOT_QR_MOVE, request.destination_ae),
            identifier,
        )
        deadline = time.monotonic() + timeout
        while True:
            remaining = deadline - time.monotonic()
            if remaining <= 0:
                raise DimseTimeout("no final C-MOVE response within the allowed window")
            reply = assoc.recv_message(remaining)
            status = reply.summary.status
            if status == dimse.STATUS_PENDING:
                continue
            _remaining, completed, failed, warning = dimse.move_counts(reply.command)
            if status in (dimse.STATUS_SUCCESS, 0xB000):
                return MoveReport(status, completed, failed, warning)
            raise MoveRefused(f"move refused with status 0x{(status or 0):04X}")
    finally:
        assoc.release()
