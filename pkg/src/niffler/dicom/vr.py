"""Value representations and their explicit-VR wire encoding rules."""

from __future__ import annotations

import enum


class VR(str, enum.Enum):
    AE = "AE"
    AS = "AS"
    CS = "CS"
    DA = "DA"
    DS = "DS"
    DT = "DT"
    FL = "FL"
    FD = "FD"
    IS = "IS"
    LO = "LO"
    LT = "LT"
    OB = "OB"
    OW = "OW"
    PN = "PN"
    SH = "SH"
    SL = "SL"
    SQ = "SQ"
    SS = "SS"
    ST = "ST"
    TM = "TM"
    UI = "UI"
    UL = "UL"
    UN = "UN"
    US = "US"


# Explicit VR: these use a 2-byte reserved field + 4-byte length; all others
# use a 2-byte length field.
LONG_FORM_VRS = frozenset({VR.OB, VR.OW, VR.SQ, VR.UN})

# Decoded as text; backslash is the multi-value separator except in the text
# VRs LT/ST where it is ordinary content.
STRING_VRS = frozenset(
    {VR.AE, VR.AS, VR.CS, VR.DA, VR.DS, VR.DT, VR.IS, VR.LO, VR.LT,
     VR.PN, VR.SH, VR.ST, VR.TM, VR.UI}
)
TEXT_VRS = frozenset({VR.LT, VR.ST})
SPLIT_VRS = STRING_VRS - TEXT_VRS

# Fixed-width little-endian binary VRs and their struct codes.
NUMERIC_FORMATS = {
    VR.FL: "f",
    VR.FD: "d",
    VR.SL: "i",
    VR.SS: "h",
    VR.UL: "I",
    VR.US: "H",
}

OPAQUE_VRS = frozenset({VR.OB, VR.OW, VR.UN})


def padding_byte(vr: VR) -> bytes:
    return b"\x00" if vr in (VR.UI, *OPAQUE_VRS) else b" "
