"""DICOM Upper Layer over TCP and the DIMSE services built on it."""

from niffler.net.pdu import (
    Abort,
    AssociateAc,
    AssociateRj,
    AssociateRq,
    PDataTf,
    Pdv,
    PresentationContextAc,
    PresentationContextRq,
    ReleaseRp,
    ReleaseRq,
    UserInformation,
    decode_pdu,
    encode_pdu,
)
from niffler.net.scp import AssociationConfig, ScpServer, StoreEvent, run_store_scp
from niffler.net.scu import (
    MoveReport,
    MoveRequest,
    StoreReport,
    send_c_echo,
    send_c_move,
    send_c_store,
)

__all__ = [
    "Abort",
    "AssociateAc",
    "AssociateRj",
    "AssociateRq",
    "AssociationConfig",
    "MoveReport",
    "MoveRequest",
    "PDataTf",
    "Pdv",
    "PresentationContextAc",
    "PresentationContextRq",
    "ReleaseRp",
    "ReleaseRq",
    "ScpServer",
    "StoreEvent",
    "StoreReport",
    "UserInformation",
    "decode_pdu",
    "encode_pdu",
    "run_store_scp",
    "send_c_echo",
    "send_c_move",
    "send_c_store",
]
