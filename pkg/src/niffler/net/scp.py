"""Threaded association acceptor: verification, storage, and custom services.

One thread accepts connections; each association runs on its own thread and
dispatches reassembled DIMSE messages to handlers.  The built-in handlers
answer C-ECHO directly and turn C-STORE into a :class:`StoreEvent` passed to
the configured sink; a sink failure is reported to the peer as the
out-of-resources status rather than a dropped connection.
"""

from __future__ import annotations

import logging
import socket
import threading
import time
from dataclasses import dataclass
from typing import Callable

from niffler.dicom.dataset import DicomDataset
from niffler.dicom.parse import parse_dataset
from niffler.errors import DicomError, DimseTimeout, PduError, PeerClosed
from niffler.net import dimse
from niffler.net.association import (
    AcceptedContext,
    AssociationConfig,
    CompletedMessage,
    MessageAssembler,
    NegotiationOutcome,
    PduStream,
    negotiate,
    send_dimse_message,
)
from niffler.net.pdu import (
    Abort,
    AssociateAc,
    AssociateRq,
    PDataTf,
    ReleaseRp,
    ReleaseRq,
)

log = logging.getLogger(__name__)

#: source=2 (service provider), reason=2 (unexpected PDU).
_PROTOCOL_ABORT = Abort(source=2, reason=2)

Sink = Callable[["StoreEvent"], None]
Handler = Callable[["ServerAssociation", CompletedMessage], None]


@dataclass(frozen=True)
class StoreEvent:
    """One instance received over C-STORE, parsed and still in wire form."""

    sop_class_uid: str
    sop_instance_uid: str
    transfer_syntax: str
    dataset: DicomDataset
    raw: bytes
    calling_ae: str
    called_ae: str
    peer_host: str


class ServerAssociation:
    """State for one accepted association, visible to service handlers."""

    def __init__(
        self,
        server: "ScpServer",
        sock: socket.socket,
        peer: tuple[str, int],
    ) -> None:
        self.server = server
        self.stream = PduStream(sock)
        self.peer_host = peer[0]
        self.calling_ae = ""
        self.called_ae = ""
        self.contexts: dict[int, AcceptedContext] = {}
        self.peer_max_pdu = 0
        self._assembler = MessageAssembler()

    def respond(self, context_id: int, command: bytes, data: bytes | None = None) -> None:
        """Send one DIMSE message back on an accepted context."""
        send_dimse_message(self.stream, context_id, command, data, self.peer_max_pdu)

    def context(self, context_id: int) -> AcceptedContext:
        return self.contexts[context_id]

    # --- association lifecycle -------------------------------------------

    def _handshake(self) -> bool:
        config = self.server.config
        request = self.stream.recv_pdu(timeout=config.dimse_timeout)
        if not isinstance(request, AssociateRq):
            self.stream.send_pdu(_PROTOCOL_ABORT)
            return False
        self.calling_ae = request.calling_ae
        self.called_ae = request.called_ae
        outcome: NegotiationOutcome = negotiate(request, config, self.peer_host)
        self.stream.send_pdu(outcome.reply)
        if not isinstance(outcome.reply, AssociateAc):
            return False
        self.contexts = outcome.accepted
        self.peer_max_pdu = outcome.peer_max_pdu
        self.stream.recv_limit = max(config.max_pdu_length, 4096) + 64
        return True

    def run(self) -> None:
        observer = self.server.observer
        opened = False
        try:
            if not self._handshake():
                return
            opened = True
            if observer:
                observer.association_opened(self.calling_ae, self.peer_host)
            while True:
                pdu = self.stream.recv_pdu(timeout=self.server.config.dimse_timeout)
                if isinstance(pdu, PDataTf):
                    for pdv in pdu.pdvs:
                        message = self._assembler.feed(pdv)
                        if message is not None:
                            self._dispatch(message)
                elif isinstance(pdu, ReleaseRq):
                    self.stream.send_pdu(ReleaseRp())
                    return
                elif isinstance(pdu, Abort):
                    return
                else:
                    self.stream.send_pdu(_PROTOCOL_ABORT)
                    return
        except PeerClosed:
            pass
        except (PduError, DimseTimeout) as exc:
            log.warning("association with %s dropped: %s", self.peer_host, exc)
            try:
                self.stream.send_pdu(_PROTOCOL_ABORT)
            except PduError:
                pass
        except Exception:
            log.exception("unexpected error on association with %s", self.peer_host)
        finally:
            self.stream.close()
            if opened and observer:
                observer.association_closed(self.calling_ae, self.peer_host)

    # --- message dispatch -------------------------------------------------

    def _dispatch(self, message: CompletedMessage) -> None:
        if message.context_id not in self.contexts:
            self.stream.send_pdu(_PROTOCOL_ABORT)
            raise PeerClosed(f"message on unaccepted context {message.context_id}")
        field = message.summary.command_field
        handler = self.server.handlers.get(field)
        if handler is not None:
            handler(self, message)
        elif field == dimse.C_ECHO_RQ:
            self._handle_echo(message)
        elif field == dimse.C_STORE_RQ:
            self._handle_store(message)
        elif field == dimse.C_MOVE_RQ:
            self.respond(
                message.context_id,
                dimse.c_move_rsp(
                    message.summary.message_id,
                    message.summary.sop_class_uid,
                    dimse.STATUS_SOP_CLASS_NOT_SUPPORTED,
                ),
            )
        else:
            log.warning("unsupported command field 0x%04X", field)
            self.stream.send_pdu(_PROTOCOL_ABORT)
            raise PeerClosed("unsupported DIMSE command")

    def _handle_echo(self, message: CompletedMessage) -> None:
        self.respond(
            message.context_id,
            dimse.c_echo_rsp(message.summary.message_id, message.summary.sop_class_uid),
        )

    def _handle_store(self, message: CompletedMessage) -> None:
        summary = message.summary
        context = self.contexts[message.context_id]
        status = dimse.STATUS_SUCCESS
        if message.data is None:
            status = 0xC000
        else:
            try:
                dataset = parse_dataset(message.data, context.transfer_syntax)
            except DicomError as exc:
                log.warning("undecodable C-STORE payload from %s: %s", self.calling_ae, exc)
                status = 0xC000
            else:
                event = StoreEvent(
                    sop_class_uid=summary.sop_class_uid,
                    sop_instance_uid=summary.sop_instance_uid,
                    transfer_syntax=context.transfer_syntax,
                    dataset=dataset,
                    raw=message.data,
                    calling_ae=self.calling_ae,
                    called_ae=self.called_ae,
                    peer_host=self.peer_host,
                )
                try:
                    self.server.sink(event)
                except Exception as exc:
                    log.error("store sink failed for %s: %s", summary.sop_instance_uid, exc)
                    status = dimse.STATUS_OUT_OF_RESOURCES
        observer = self.server.observer
        if observer:
            if status == dimse.STATUS_SUCCESS:
                observer.instance_received(summary.sop_instance_uid, len(message.data or b""))
            else:
                observer.instance_failed(summary.sop_instance_uid, status)
        self.respond(
            message.context_id,
            dimse.c_store_rsp(
                summary.message_id, summary.sop_class_uid, summary.sop_instance_uid, status
            ),
        )


class ScpServer:
    """Accepts associations on a TCP port until stopped.

    ``handlers`` maps DIMSE command-field codes to callables and overrides
    the built-in echo/store behaviour for those codes; the storage ``sink``
    receives one :class:`StoreEvent` per accepted instance.
    """

    def __init__(
        self,
        config: AssociationConfig,
        sink: Sink | None = None,
        host: str = "127.0.0.1",
        port: int = 0,
        handlers: dict[int, Handler] | None = None,
        observer=None,
        backlog: int = 16,
    ) -> None:
        self.config = config
        self.sink = sink or (lambda event: None)
        self.handlers = handlers or {}
        self.observer = observer
        self._host = host
        self._requested_port = port
        self._backlog = backlog
        self._listener: socket.socket | None = None
        self._accept_thread: threading.Thread | None = None
        self._connections: dict[ServerAssociation, threading.Thread] = {}
        self._lock = threading.Lock()
        self._stopping = threading.Event()

    @property
    def port(self) -> int:
        if self._listener is None:
            raise RuntimeError("server is not started")
        return self._listener.getsockname()[1]

    @property
    def endpoint(self) -> tuple[str, int]:
        return self._host, self.port

    def start(self) -> "ScpServer":
        listener = socket.socket(socket.AF_INET, socket.SOCK_STREAM)
        listener.setsockopt(socket.SOL_SOCKET, socket.SO_REUSEADDR, 1)
        listener.bind((self._host, self._requested_port))
        listener.listen(self._backlog)
        # A blocked accept() is not reliably woken by close() from another
        # thread; poll with a short timeout so stop() takes effect promptly.
        listener.settimeout(0.1)
        self._listener = listener
        self._accept_thread = threading.Thread(
            target=self._accept_loop, name="scp-accept", daemon=True
        )
        self._accept_thread.start()
        return self

    def _accept_loop(self) -> None:
        assert self._listener is not None
        while not self._stopping.is_set():
            try:
                sock, peer = self._listener.accept()
            except socket.timeout:
                continue
            except OSError:
                return
            sock.settimeout(None)
            # Request/response traffic stalls badly under Nagle + delayed ACK.
            sock.setsockopt(socket.IPPROTO_TCP, socket.TCP_NODELAY, 1)
            association = ServerAssociation(self, sock, peer)
            thread = threading.Thread(
                target=self._run_association,
                args=(association,),
                name=f"scp-assoc-{peer[0]}:{peer[1]}",
                daemon=True,
            )
            with self._lock:
                self._connections[association] = thread
            thread.start()

    def _run_association(self, association: ServerAssociation) -> None:
        try:
            association.run()
        finally:
            with self._lock:
                self._connections.pop(association, None)

    def stop(self, drain_timeout: float = 5.0) -> None:
        """Stop accepting, drain in-flight associations, then force-close."""
        self._stopping.set()
        if self._listener is not None:
            self._listener.close()
        if self._accept_thread is not None:
            self._accept_thread.join(timeout=2.0)
        deadline = time.monotonic() + drain_timeout
        while time.monotonic() < deadline:
            with self._lock:
                if not self._connections:
                    return
            time.sleep(0.02)
        with self._lock:
            leftovers = list(self._connections.items())
        for association, thread in leftovers:
            association.stream.close()
            thread.join(timeout=1.0)


def run_store_scp(
    config: AssociationConfig,
    sink: Sink,
    host: str = "127.0.0.1",
    port: int = 0,
    handlers: dict[int, Handler] | None = None,
    observer=None,
) -> ScpServer:
    """Start a storage SCP and return its running server handle."""
    return ScpServer(
        config, sink=sink, host=host, port=port, handlers=handlers, observer=observer
    ).start()
