"""Exception types shared across the gateway."""

from __future__ import annotations


class NifflerError(Exception):
    """Base class for all gateway errors."""


# --- DICOM data errors ---


class DicomError(NifflerError):
    pass


class DicomParseError(DicomError):
    pass


class TruncatedInput(DicomParseError):
    """Element or value length exceeds the remaining input."""


class MalformedVR(DicomParseError):
    """Explicit VR code is not one of the supported two-letter codes."""


class UnsupportedSyntax(DicomError):
    """Transfer syntax outside the supported uncompressed LE subset."""


class MissingMagic(DicomError):
    """File lacks the 128-byte preamble + 'DICM' marker."""


class UnknownKeyword(DicomError):
    """Attribute identifier is neither a dictionary keyword nor tag-formed."""


class CompressedPixelData(DicomError):
    """Pixel data is compressed; route to the decoder hook, not native decode."""


class InconsistentDimensions(DicomError):
    """PixelData length does not match Rows x Columns x SamplesPerPixel."""


# --- network protocol errors ---


class PduError(NifflerError):
    pass


class UnknownPduType(PduError):
    pass


class LengthMismatch(PduError):
    pass


class OversizedPdu(PduError):
    pass


class MalformedPdu(PduError):
    """Structurally invalid PDU payload (bad item nesting, bad field)."""


class PeerClosed(PduError):
    """Connection closed by the peer in the middle of a PDU exchange."""


class DimseError(NifflerError):
    pass


class ConnectionRefusedByPeer(DimseError):
    pass


class AssociationRejected(DimseError):
    pass


class MoveRefused(DimseError):
    pass


class DimseTimeout(DimseError):
    pass


class NoAcceptedContext(DimseError):
    """No presentation context was accepted for the instance's SOP class."""


# --- vault / extraction / store errors ---


class VaultError(NifflerError):
    pass


class QuarantinedMissingIdentity(VaultError):
    """Instance lacked one of the four identity attributes; file quarantined."""

    def __init__(self, message: str, quarantine_path=None):
        super().__init__(message)
        self.quarantine_path = quarantine_path


class PartialPurge(VaultError):
    """Some series could not be deleted; they remain in the processed set."""

    def __init__(self, message: str, report=None):
        super().__init__(message)
        self.report = report


class InvalidProfile(NifflerError):
    pass


class CorruptJournal(NifflerError):
    """Journal exists but cannot be decoded; refuse to start over it."""


class StoreError(NifflerError):
    pass


class UnknownCollection(StoreError):
    pass


class BadQuery(StoreError):
    pass


class UnknownAttribute(BadQuery):
    pass


class MissingKey(StoreError):
    pass


# --- inference errors ---


class JobError(NifflerError):
    pass


class PluginNotFound(JobError):
    pass


class PluginTimeout(JobError):
    pass


class PluginCrashed(JobError):
    pass


class MalformedResults(JobError):
    pass


class IllegalJobTransition(JobError):
    pass


class EmptyCohort(NifflerError):
    pass


class ConfigError(NifflerError):
    pass
