"""Well-known UIDs used on the wire and in file meta."""

IMPLICIT_VR_LE = "1.2.840.10008.1.2"
EXPLICIT_VR_LE = "1.2.840.10008.1.2.1"

SUPPORTED_TRANSFER_SYNTAXES = (EXPLICIT_VR_LE, IMPLICIT_VR_LE)

APPLICATION_CONTEXT = "1.2.840.10008.3.1.1.1"
VERIFICATION_SOP_CLASS = "1.2.840.10008.1.1"

CR_IMAGE_STORAGE = "1.2.840.10008.5.1.4.1.1.1"
DX_IMAGE_STORAGE_PRESENTATION = "1.2.840.10008.5.1.4.1.1.1.1"
DX_IMAGE_STORAGE_PROCESSING = "1.2.840.10008.5.1.4.1.1.1.1.1"
CT_IMAGE_STORAGE = "1.2.840.10008.5.1.4.1.1.2"
MR_IMAGE_STORAGE = "1.2.840.10008.5.1.4.1.1.4"
SECONDARY_CAPTURE_STORAGE = "1.2.840.10008.5.1.4.1.1.7"

STUDY_ROOT_QR_MOVE = "1.2.840.10008.5.1.4.1.2.2.2"

DEFAULT_STORAGE_CLASSES = (
    CR_IMAGE_STORAGE,
    DX_IMAGE_STORAGE_PRESENTATION,
    DX_IMAGE_STORAGE_PROCESSING,
    CT_IMAGE_STORAGE,
    MR_IMAGE_STORAGE,
    SECONDARY_CAPTURE_STORAGE,
)

IMPLEMENTATION_CLASS_UID = "1.2.826.0.1.3680043.10.1439.1"
IMPLEMENTATION_VERSION_NAME = "NIFFLER_01"


def is_uncompressed(transfer_syntax_uid: str) -> bool:
    return transfer_syntax_uid in SUPPORTED_TRANSFER_SYNTAXES
