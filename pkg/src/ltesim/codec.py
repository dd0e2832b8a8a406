"""Frame grammar for the simulated air interface.

Every frame is a 16-byte header followed by a message body. All
integers are big-endian, fixed width. The header is never ciphered:
whatever else a network protects, radio scheduling metadata stays
readable, which is exactly the property the passive-tracking model
exploits.

Header layout (16 bytes):

    timestamp_ms  u64   simulated milliseconds
    cell_id       u32   upper 4 bits zero (28-bit id)
    rnti          u16   0x0000 = broadcast/unassigned sentinel,
                        0x0001..0xFFF3 device range, rest reserved
    direction     u8    0 = downlink, 1 = uplink
    protection    u8    0 = cleartext body, 1 = protected body

A protected body region opens with a cleartext key_id u32 and continues
with the encoded message XOR-masked by the session keystream. Holders of
the session key decode it fully; everyone else gets the header and the
body length (an Opaque result), nothing more.

Body grammar: one type byte, then the message fields in declaration
order. Lists carry a one-byte count prefix; optional fields a one-byte
presence flag. The type table is frozen:

    0x01 mib                                   bandwidth_rb u8, sfn u16
    0x02 sib1                                  plmn, tac u16, cell_id u32,
                                               min_rx_level_dbm i8,
                                               priority_earfcns list of
                                               (earfcn u32, priority u8)
    0x03 rach_preamble                         preamble_id u8
    0x04 mac_rar                               temp_rnti u16,
                                               timing_advance u16,
                                               uplink_grant u32
    0x05 rrc_connection_request                tag u8: 0 tmsi u32,
                                                       1 random u40
    0x06 rrc_connection_setup                  (empty)
    0x07 attach_request                        tag u8: 0 imsi, 1 tmsi u32
    0x08 identity_request                      requested u8: 0 imsi, 1 imei
    0x09 identity_response                     tag u8: 0 imsi,
                                                       1 imei 15 ascii
    0x0A authentication_request                rand 16B, autn 16B
    0x0B authentication_response               res 8B
    0x0C security_mode_command                 key_id u32
    0x0D security_mode_complete                (empty)
    0x0E attach_accept                         tmsi u32, tac u16
    0x0F attach_reject                         emm_cause u8
    0x10 tau_request                           tmsi u32, tac u16
    0x11 tau_reject                            emm_cause u8
    0x12 paging                                tag u8: 0 imsi, 1 tmsi u32
    0x13 measurement_report                    list of (cell_id u32,
                                               rsrp_dbm i8)
    0x14 rrc_connection_reconfiguration        presence u8 + mobility:
                                               target_cell_id u32,
                                               new_rnti u16
    0x15 rrc_connection_reconfiguration_complete  (empty)
    0x16 user_data                             byte_count u16 +
                                               byte_count zero bytes

An IMSI on the wire is a one-byte mnc length followed by 15 ASCII
digits; a PLMN is mcc u16, mnc_len u8, mnc u16. EMM cause codes are the
closed set 0x0B plmn_not_allowed, 0x07 eps_services_not_allowed,
0x16 congestion_benign.

encode/decode are exact inverses on valid input and encoding is
canonical: equal frames produce equal bytes.
"""

from __future__ import annotations

import enum
import struct
from dataclasses import dataclass
from typing import ClassVar, Mapping, Optional, Union

from .crypto_stub import keystream_mask
from .identity import Imsi, Plmn, format_tmsi, is_device_rnti, parse_imsi, validate_imei

HEADER_LEN = 16
RAND_LEN = 16
AUTN_LEN = 16
RES_LEN = 8


class CodecError(Exception):
    """Base for anything the codec refuses to read or write."""


class Truncated(CodecError):
    """Input ended before the grammar did."""


class UnknownType(CodecError):
    """Type byte outside the frozen table."""


class TrailingBytes(CodecError):
    """Input continued after the grammar ended."""


class InvariantViolation(CodecError):
    """Field value outside its declared domain."""


class Direction(enum.IntEnum):
    DOWNLINK = 0
    UPLINK = 1


class EmmCause(enum.IntEnum):
    """Reject causes the model distinguishes; codes are wire-frozen."""

    EPS_SERVICES_NOT_ALLOWED = 0x07
    PLMN_NOT_ALLOWED = 0x0B
    CONGESTION_BENIGN = 0x16


class IdentityKind(enum.IntEnum):
    IMSI = 0
    IMEI = 1


MIB_BANDWIDTHS = (6, 15, 25, 50, 75, 100)


@dataclass(frozen=True)
class FrameHeader:
    """Cleartext scheduling metadata carried by every frame."""

    timestamp_ms: int
    cell_id: int
    rnti: int
    direction: Direction
    key_id: Optional[int] = None

    @property
    def protected(self) -> bool:
        return self.key_id is not None

    def validate(self) -> None:
        if not 0 <= self.timestamp_ms < (1 << 64):
            raise InvariantViolation(f"timestamp out of range: {self.timestamp_ms}")
        if not 0 <= self.cell_id < (1 << 28):
            raise InvariantViolation(f"cell_id out of range: {self.cell_id}")
        if self.rnti != 0 and not is_device_rnti(self.rnti):
            raise InvariantViolation(f"rnti outside device range: {self.rnti}")
        if self.key_id is not None and not 0 <= self.key_id < (1 << 32):
            raise InvariantViolation(f"key_id out of range: {self.key_id}")


class _Writer:
    def __init__(self) -> None:
        self.buf = bytearray()

    def u8(self, v: int) -> None:
        if not 0 <= v < (1 << 8):
            raise InvariantViolation(f"u8 out of range: {v}")
        self.buf.append(v)

    def u16(self, v: int) -> None:
        if not 0 <= v < (1 << 16):
            raise InvariantViolation(f"u16 out of range: {v}")
        self.buf += struct.pack(">H", v)

    def u32(self, v: int) -> None:
        if not 0 <= v < (1 << 32):
            raise InvariantViolation(f"u32 out of range: {v}")
        self.buf += struct.pack(">I", v)

    def u64(self, v: int) -> None:
        if not 0 <= v < (1 << 64):
            raise InvariantViolation(f"u64 out of range: {v}")
        self.buf += struct.pack(">Q", v)

    def i8(self, v: int) -> None:
        if not -128 <= v <= 127:
            raise InvariantViolation(f"i8 out of range: {v}")
        self.buf += struct.pack(">b", v)

    def raw(self, data: bytes, expect_len: int) -> None:
        if len(data) != expect_len:
            raise InvariantViolation(f"expected {expect_len} bytes, got {len(data)}")
        self.buf += data

    def digits(self, text: str, expect_len: int) -> None:
        if len(text) != expect_len or not text.isdigit():
            raise InvariantViolation(f"expected {expect_len} digits, got {text!r}")
        self.buf += text.encode("ascii")


class _Reader:
    def __init__(self, data: bytes) -> None:
        self.data = data
        self.pos = 0

    def take(self, n: int) -> bytes:
        if self.pos + n > len(self.data):
            raise Truncated(f"need {n} bytes at offset {self.pos}, have {len(self.data) - self.pos}")
        out = self.data[self.pos : self.pos + n]
        self.pos += n
        return out

    def u8(self) -> int:
        return self.take(1)[0]

    def u16(self) -> int:
        return struct.unpack(">H", self.take(2))[0]

    def u32(self) -> int:
        return struct.unpack(">I", self.take(4))[0]

    def u64(self) -> int:
        return struct.unpack(">Q", self.take(8))[0]

    def i8(self) -> int:
        return struct.unpack(">b", self.take(1))[0]

    def digits(self, n: int) -> str:
        raw = self.take(n)
        text = raw.decode("ascii", errors="replace")
        if not text.isdigit():
            raise InvariantViolation(f"expected {n} ascii digits, got {raw!r}")
        return text

    def finish(self) -> None:
        if self.pos != len(self.data):
            raise TrailingBytes(f"{len(self.data) - self.pos} bytes after message end")


def _pack_plmn(w: _Writer, plmn: Plmn) -> None:
    w.u16(int(plmn.mcc))
    w.u8(len(plmn.mnc))
    w.u16(int(plmn.mnc))


def _pack_imsi(w: _Writer, imsi: Imsi) -> None:
    w.u8(len(imsi.mnc))
    w.digits(str(imsi), 15)


def _unpack_imsi(r: _Reader) -> Imsi:
    mnc_len = r.u8()
    if mnc_len not in (2, 3):
        raise InvariantViolation(f"imsi mnc length must be 2 or 3, got {mnc_len}")
    return parse_imsi(r.digits(15), mnc_len)


@dataclass(frozen=True)
class Mib:
    """Master broadcast: bandwidth and frame number, nothing secret."""

    bandwidth_rb: int
    sfn: int

    TYPE: ClassVar[int] = 0x01
    NAME: ClassVar[str] = "mib"

    def _pack(self, w: _Writer) -> None:
        if self.bandwidth_rb not in MIB_BANDWIDTHS:
            raise InvariantViolation(f"bandwidth_rb not in {MIB_BANDWIDTHS}: {self.bandwidth_rb}")
        if not 0 <= self.sfn < 1024:
            raise InvariantViolation(f"sfn out of range: {self.sfn}")
        w.u8(self.bandwidth_rb)
        w.u16(self.sfn)

    @classmethod
    def _unpack(cls, r: _Reader) -> "Mib":
        bw = r.u8()
        if bw not in MIB_BANDWIDTHS:
            raise InvariantViolation(f"bandwidth_rb not in {MIB_BANDWIDTHS}: {bw}")
        sfn = r.u16()
        if sfn >= 1024:
            raise InvariantViolation(f"sfn out of range: {sfn}")
        return cls(bw, sfn)


@dataclass(frozen=True)
class Sib1:
    """System information: who the cell claims to be and which channels
    it wants devices to prefer. Entirely unauthenticated."""

    plmn: Plmn
    tac: int
    cell_id: int
    min_rx_level_dbm: int
    priority_earfcns: tuple[tuple[int, int], ...] = ()

    TYPE: ClassVar[int] = 0x02
    NAME: ClassVar[str] = "sib1"

    def _pack(self, w: _Writer) -> None:
        _pack_plmn(w, self.plmn)
        w.u16(self.tac)
        if not 0 <= self.cell_id < (1 << 28):
            raise InvariantViolation(f"cell_id out of range: {self.cell_id}")
        w.u32(self.cell_id)
        w.i8(self.min_rx_level_dbm)
        if len(self.priority_earfcns) > 255:
            raise InvariantViolation("priority list too long")
        w.u8(len(self.priority_earfcns))
        for earfcn, priority in self.priority_earfcns:
            if not 0 <= priority <= 7:
                raise InvariantViolation(f"priority out of range: {priority}")
            w.u32(earfcn)
            w.u8(priority)

    @classmethod
    def _unpack(cls, r: _Reader) -> "Sib1":
        mcc = r.u16()
        mnc_len = r.u8()
        mnc = r.u16()
        if mnc_len not in (2, 3):
            raise InvariantViolation(f"mnc length must be 2 or 3, got {mnc_len}")
        if mcc > 999 or mnc >= 10 ** mnc_len:
            raise InvariantViolation(f"plmn digits out of range: {mcc}/{mnc}")
        plmn = Plmn(f"{mcc:03d}", f"{mnc:0{mnc_len}d}")
        tac = r.u16()
        cell_id = r.u32()
        if cell_id >= (1 << 28):
            raise InvariantViolation(f"cell_id out of range: {cell_id}")
        min_rx = r.i8()
        entries = []
        for _ in range(r.u8()):
            earfcn = r.u32()
            priority = r.u8()
            if priority > 7:
                raise InvariantViolation(f"priority out of range: {priority}")
            entries.append((earfcn, priority))
        return cls(plmn, tac, cell_id, min_rx, tuple(entries))


@dataclass(frozen=True)
class RachPreamble:
    """First uplink of any connection; sent before any identity exists."""

    preamble_id: int

    TYPE: ClassVar[int] = 0x03
    NAME: ClassVar[str] = "rach_preamble"

    def _pack(self, w: _Writer) -> None:
        if not 0 <= self.preamble_id < 64:
            raise InvariantViolation(f"preamble_id out of range: {self.preamble_id}")
        w.u8(self.preamble_id)

    @classmethod
    def _unpack(cls, r: _Reader) -> "RachPreamble":
        pid = r.u8()
        if pid >= 64:
            raise InvariantViolation(f"preamble_id out of range: {pid}")
        return cls(pid)


@dataclass(frozen=True)
class MacRar:
    """Random-access response assigning the temporary radio id."""

    temp_rnti: int
    timing_advance: int = 0
    uplink_grant: int = 0

    TYPE: ClassVar[int] = 0x04
    NAME: ClassVar[str] = "mac_rar"

    def _pack(self, w: _Writer) -> None:
        if not is_device_rnti(self.temp_rnti):
            raise InvariantViolation(f"temp_rnti outside device range: {self.temp_rnti}")
        if not 0 <= self.timing_advance < 2048:
            raise InvariantViolation(f"timing_advance out of range: {self.timing_advance}")
        if not 0 <= self.uplink_grant < (1 << 20):
            raise InvariantViolation(f"uplink_grant out of range: {self.uplink_grant}")
        w.u16(self.temp_rnti)
        w.u16(self.timing_advance)
        w.u32(self.uplink_grant)

    @classmethod
    def _unpack(cls, r: _Reader) -> "MacRar":
        rnti = r.u16()
        ta = r.u16()
        grant = r.u32()
        if not is_device_rnti(rnti):
            raise InvariantViolation(f"temp_rnti outside device range: {rnti}")
        if ta >= 2048:
            raise InvariantViolation(f"timing_advance out of range: {ta}")
        if grant >= (1 << 20):
            raise InvariantViolation(f"uplink_grant out of range: {grant}")
        return cls(rnti, ta, grant)


@dataclass(frozen=True)
class RrcConnectionRequest:
    """Connection attempt; carries a TMSI when the device holds one,
    otherwise a random 40-bit value."""

    tmsi: Optional[int] = None
    random_id: Optional[int] = None

    TYPE: ClassVar[int] = 0x05
    NAME: ClassVar[str] = "rrc_connection_request"

    def __post_init__(self) -> None:
        if (self.tmsi is None) == (self.random_id is None):
            raise InvariantViolation("exactly one of tmsi/random_id must be set")

    def _pack(self, w: _Writer) -> None:
        if self.tmsi is not None:
            w.u8(0)
            w.u32(self.tmsi)
        else:
            if not 0 <= self.random_id < (1 << 40):
                raise InvariantViolation(f"random_id out of range: {self.random_id}")
            w.u8(1)
            w.raw(self.random_id.to_bytes(5, "big"), 5)

    @classmethod
    def _unpack(cls, r: _Reader) -> "RrcConnectionRequest":
        tag = r.u8()
        if tag == 0:
            return cls(tmsi=r.u32())
        if tag == 1:
            return cls(random_id=int.from_bytes(r.take(5), "big"))
        raise InvariantViolation(f"bad connection identity tag: {tag}")


@dataclass(frozen=True)
class RrcConnectionSetup:
    TYPE: ClassVar[int] = 0x06
    NAME: ClassVar[str] = "rrc_connection_setup"

    def _pack(self, w: _Writer) -> None:
        pass

    @classmethod
    def _unpack(cls, r: _Reader) -> "RrcConnectionSetup":
        return cls()


@dataclass(frozen=True)
class AttachRequest:
    """Registration request. Identity is the permanent IMSI only when no
    temporary identity exists; every IMSI here is a privacy event."""

    imsi: Optional[Imsi] = None
    tmsi: Optional[int] = None

    TYPE: ClassVar[int] = 0x07
    NAME: ClassVar[str] = "attach_request"

    def __post_init__(self) -> None:
        if (self.imsi is None) == (self.tmsi is None):
            raise InvariantViolation("exactly one of imsi/tmsi must be set")

    def _pack(self, w: _Writer) -> None:
        if self.imsi is not None:
            w.u8(0)
            _pack_imsi(w, self.imsi)
        else:
            w.u8(1)
            w.u32(self.tmsi)

    @classmethod
    def _unpack(cls, r: _Reader) -> "AttachRequest":
        tag = r.u8()
        if tag == 0:
            return cls(imsi=_unpack_imsi(r))
        if tag == 1:
            return cls(tmsi=r.u32())
        raise InvariantViolation(f"bad attach identity tag: {tag}")


@dataclass(frozen=True)
class IdentityRequest:
    """Network asks for a permanent identity. Pre-authentication, so
    anyone running a cell can ask."""

    requested: IdentityKind

    TYPE: ClassVar[int] = 0x08
    NAME: ClassVar[str] = "identity_request"

    def _pack(self, w: _Writer) -> None:
        w.u8(int(self.requested))

    @classmethod
    def _unpack(cls, r: _Reader) -> "IdentityRequest":
        tag = r.u8()
        try:
            return cls(IdentityKind(tag))
        except ValueError:
            raise InvariantViolation(f"bad identity kind: {tag}") from None


@dataclass(frozen=True)
class IdentityResponse:
    imsi: Optional[Imsi] = None
    imei: Optional[str] = None

    TYPE: ClassVar[int] = 0x09
    NAME: ClassVar[str] = "identity_response"

    def __post_init__(self) -> None:
        if (self.imsi is None) == (self.imei is None):
            raise InvariantViolation("exactly one of imsi/imei must be set")
        if self.imei is not None:
            validate_imei(self.imei)

    def _pack(self, w: _Writer) -> None:
        if self.imsi is not None:
            w.u8(0)
            _pack_imsi(w, self.imsi)
        else:
            w.u8(1)
            w.digits(self.imei, 15)

    @classmethod
    def _unpack(cls, r: _Reader) -> "IdentityResponse":
        tag = r.u8()
        if tag == 0:
            return cls(imsi=_unpack_imsi(r))
        if tag == 1:
            return cls(imei=r.digits(15))
        raise InvariantViolation(f"bad identity tag: {tag}")


@dataclass(frozen=True)
class AuthenticationRequest:
    """Challenge from a network that holds the subscriber key. A rogue
    cell cannot produce a valid one, which is why its conversations end
    before this point."""

    rand: bytes
    autn: bytes

    TYPE: ClassVar[int] = 0x0A
    NAME: ClassVar[str] = "authentication_request"

    def _pack(self, w: _Writer) -> None:
        w.raw(self.rand, RAND_LEN)
        w.raw(self.autn, AUTN_LEN)

    @classmethod
    def _unpack(cls, r: _Reader) -> "AuthenticationRequest":
        return cls(bytes(r.take(RAND_LEN)), bytes(r.take(AUTN_LEN)))


@dataclass(frozen=True)
class AuthenticationResponse:
    res: bytes

    TYPE: ClassVar[int] = 0x0B
    NAME: ClassVar[str] = "authentication_response"

    def _pack(self, w: _Writer) -> None:
        w.raw(self.res, RES_LEN)

    @classmethod
    def _unpack(cls, r: _Reader) -> "AuthenticationResponse":
        return cls(bytes(r.take(RES_LEN)))


@dataclass(frozen=True)
class SecurityModeCommand:
    """Activates the session security context named by key_id."""

    key_id: int

    TYPE: ClassVar[int] = 0x0C
    NAME: ClassVar[str] = "security_mode_command"

    def _pack(self, w: _Writer) -> None:
        w.u32(self.key_id)

    @classmethod
    def _unpack(cls, r: _Reader) -> "SecurityModeCommand":
        return cls(r.u32())


@dataclass(frozen=True)
class SecurityModeComplete:
    TYPE: ClassVar[int] = 0x0D
    NAME: ClassVar[str] = "security_mode_complete"

    def _pack(self, w: _Writer) -> None:
        pass

    @classmethod
    def _unpack(cls, r: _Reader) -> "SecurityModeComplete":
        return cls()


@dataclass(frozen=True)
class AttachAccept:
    """Registration granted; assigns the temporary identity."""

    tmsi: int
    tac: int

    TYPE: ClassVar[int] = 0x0E
    NAME: ClassVar[str] = "attach_accept"

    def _pack(self, w: _Writer) -> None:
        w.u32(self.tmsi)
        w.u16(self.tac)

    @classmethod
    def _unpack(cls, r: _Reader) -> "AttachAccept":
        return cls(r.u32(), r.u16())


@dataclass(frozen=True)
class AttachReject:
    """Registration refused. Unauthenticated, and the cause byte decides
    how long and how widely the device gives up."""

    emm_cause: EmmCause

    TYPE: ClassVar[int] = 0x0F
    NAME: ClassVar[str] = "attach_reject"

    def _pack(self, w: _Writer) -> None:
        w.u8(int(self.emm_cause))

    @classmethod
    def _unpack(cls, r: _Reader) -> "AttachReject":
        code = r.u8()
        try:
            return cls(EmmCause(code))
        except ValueError:
            raise InvariantViolation(f"unknown emm cause: {code:#04x}") from None


@dataclass(frozen=True)
class TauRequest:
    """Tracking-area update after moving into a new area."""

    tmsi: int
    tac: int

    TYPE: ClassVar[int] = 0x10
    NAME: ClassVar[str] = "tau_request"

    def _pack(self, w: _Writer) -> None:
        w.u32(self.tmsi)
        w.u16(self.tac)

    @classmethod
    def _unpack(cls, r: _Reader) -> "TauRequest":
        return cls(r.u32(), r.u16())


@dataclass(frozen=True)
class TauReject:
    emm_cause: EmmCause

    TYPE: ClassVar[int] = 0x11
    NAME: ClassVar[str] = "tau_reject"

    def _pack(self, w: _Writer) -> None:
        w.u8(int(self.emm_cause))

    @classmethod
    def _unpack(cls, r: _Reader) -> "TauReject":
        code = r.u8()
        try:
            return cls(EmmCause(code))
        except ValueError:
            raise InvariantViolation(f"unknown emm cause: {code:#04x}") from None


@dataclass(frozen=True)
class Paging:
    """Broadcast wake-up call; names the device for everyone to hear."""

    imsi: Optional[Imsi] = None
    tmsi: Optional[int] = None

    TYPE: ClassVar[int] = 0x12
    NAME: ClassVar[str] = "paging"

    def __post_init__(self) -> None:
        if (self.imsi is None) == (self.tmsi is None):
            raise InvariantViolation("exactly one of imsi/tmsi must be set")

    def _pack(self, w: _Writer) -> None:
        if self.imsi is not None:
            w.u8(0)
            _pack_imsi(w, self.imsi)
        else:
            w.u8(1)
            w.u32(self.tmsi)

    @classmethod
    def _unpack(cls, r: _Reader) -> "Paging":
        tag = r.u8()
        if tag == 0:
            return cls(imsi=_unpack_imsi(r))
        if tag == 1:
            return cls(tmsi=r.u32())
        raise InvariantViolation(f"bad paging identity tag: {tag}")


@dataclass(frozen=True)
class MeasurementReport:
    """Receive levels the device reports back; feeds handover decisions."""

    neighbors: tuple[tuple[int, int], ...] = ()

    TYPE: ClassVar[int] = 0x13
    NAME: ClassVar[str] = "measurement_report"

    def _pack(self, w: _Writer) -> None:
        if len(self.neighbors) > 255:
            raise InvariantViolation("neighbor list too long")
        w.u8(len(self.neighbors))
        for cell_id, rsrp in self.neighbors:
            if not 0 <= cell_id < (1 << 28):
                raise InvariantViolation(f"cell_id out of range: {cell_id}")
            w.u32(cell_id)
            w.i8(rsrp)

    @classmethod
    def _unpack(cls, r: _Reader) -> "MeasurementReport":
        entries = []
        for _ in range(r.u8()):
            cell_id = r.u32()
            if cell_id >= (1 << 28):
                raise InvariantViolation(f"cell_id out of range: {cell_id}")
            entries.append((cell_id, r.i8()))
        return cls(tuple(entries))


@dataclass(frozen=True)
class MobilityControlInfo:
    """Where to go and which radio id to use when arriving."""

    target_cell_id: int
    new_rnti: int


@dataclass(frozen=True)
class RrcConnectionReconfiguration:
    """Connection update. With mobility info it is the handover order,
    and it names the device's next radio identity."""

    mobility: Optional[MobilityControlInfo] = None

    TYPE: ClassVar[int] = 0x14
    NAME: ClassVar[str] = "rrc_connection_reconfiguration"

    def _pack(self, w: _Writer) -> None:
        if self.mobility is None:
            w.u8(0)
            return
        w.u8(1)
        if not 0 <= self.mobility.target_cell_id < (1 << 28):
            raise InvariantViolation(f"cell_id out of range: {self.mobility.target_cell_id}")
        if not is_device_rnti(self.mobility.new_rnti):
            raise InvariantViolation(f"new_rnti outside device range: {self.mobility.new_rnti}")
        w.u32(self.mobility.target_cell_id)
        w.u16(self.mobility.new_rnti)

    @classmethod
    def _unpack(cls, r: _Reader) -> "RrcConnectionReconfiguration":
        flag = r.u8()
        if flag == 0:
            return cls()
        if flag != 1:
            raise InvariantViolation(f"bad presence flag: {flag}")
        cell_id = r.u32()
        rnti = r.u16()
        if cell_id >= (1 << 28):
            raise InvariantViolation(f"cell_id out of range: {cell_id}")
        if not is_device_rnti(rnti):
            raise InvariantViolation(f"new_rnti outside device range: {rnti}")
        return cls(MobilityControlInfo(cell_id, rnti))


@dataclass(frozen=True)
class RrcConnectionReconfigurationComplete:
    TYPE: ClassVar[int] = 0x15
    NAME: ClassVar[str] = "rrc_connection_reconfiguration_complete"

    def _pack(self, w: _Writer) -> None:
        pass

    @classmethod
    def _unpack(cls, r: _Reader) -> "RrcConnectionReconfigurationComplete":
        return cls()


@dataclass(frozen=True)
class UserData:
    """Traffic volume abstraction: the body really is byte_count bytes of
    padding, so observed frame sizes equal declared volume."""

    byte_count: int

    TYPE: ClassVar[int] = 0x16
    NAME: ClassVar[str] = "user_data"

    def _pack(self, w: _Writer) -> None:
        w.u16(self.byte_count)
        w.buf += bytes(self.byte_count)

    @classmethod
    def _unpack(cls, r: _Reader) -> "UserData":
        count = r.u16()
        filler = r.take(count)
        if any(filler):
            raise InvariantViolation("user data filler must be zeros")
        return cls(count)


@dataclass(frozen=True)
class Opaque:
    """A protected body observed without the session key."""

    body_len: int

    NAME: ClassVar[str] = "opaque"


Message = Union[
    Mib,
    Sib1,
    RachPreamble,
    MacRar,
    RrcConnectionRequest,
    RrcConnectionSetup,
    AttachRequest,
    IdentityRequest,
    IdentityResponse,
    AuthenticationRequest,
    AuthenticationResponse,
    SecurityModeCommand,
    SecurityModeComplete,
    AttachAccept,
    AttachReject,
    TauRequest,
    TauReject,
    Paging,
    MeasurementReport,
    RrcConnectionReconfiguration,
    RrcConnectionReconfigurationComplete,
    UserData,
]

MESSAGE_CLASSES = Message.__args__
_BY_TYPE = {cls.TYPE: cls for cls in MESSAGE_CLASSES}
_BY_NAME = {cls.NAME: cls for cls in MESSAGE_CLASSES}

BROADCAST_TYPES = (Mib, Sib1, Paging)

# Everything that can legitimately cross the air before any security
# context exists. SecurityModeCommand/Complete sit on the activation
# boundary itself and everything later presumes a context.
PRE_AUTHENTICATION_CLASSES = frozenset(
    {
        Mib,
        Sib1,
        RachPreamble,
        MacRar,
        RrcConnectionRequest,
        RrcConnectionSetup,
        AttachRequest,
        IdentityRequest,
        IdentityResponse,
        AuthenticationRequest,
        AuthenticationResponse,
        AttachReject,
        TauRequest,
        TauReject,
        Paging,
    }
)


def is_pre_authentication(msg: Union[Message, type]) -> bool:
    """True for message types that exist before mutual authentication."""
    cls = msg if isinstance(msg, type) else type(msg)
    return cls in PRE_AUTHENTICATION_CLASSES


def encode_body(msg: Message) -> bytes:
    w = _Writer()
    w.u8(msg.TYPE)
    msg._pack(w)
    return bytes(w.buf)


def decode_body(data: bytes) -> Message:
    r = _Reader(data)
    type_byte = r.u8()
    cls = _BY_TYPE.get(type_byte)
    if cls is None:
        raise UnknownType(f"unknown message type byte: {type_byte:#04x}")
    msg = cls._unpack(r)
    r.finish()
    return msg


def pack_header(header: FrameHeader) -> bytes:
    """The 16 header bytes alone; callers reconstructing opaque frames
    append the cleartext key_id themselves."""
    header.validate()
    return struct.pack(
        ">QIHBB",
        header.timestamp_ms,
        header.cell_id,
        header.rnti,
        int(header.direction),
        1 if header.protected else 0,
    )


def encode(header: FrameHeader, msg: Message, keys: Optional[Mapping[int, bytes]] = None) -> bytes:
    """Serialize one frame. Protected frames need the session keystream
    seed for header.key_id in `keys`."""
    head = pack_header(header)
    body = encode_body(msg)
    if not header.protected:
        return head + body
    seed = (keys or {}).get(header.key_id)
    if seed is None:
        raise InvariantViolation(f"no keystream seed for key_id {header.key_id}")
    return head + struct.pack(">I", header.key_id) + keystream_mask(seed, body)


def decode(data: bytes, keys: Optional[Mapping[int, bytes]] = None) -> tuple[FrameHeader, Union[Message, Opaque]]:
    """Parse one frame. The header always comes back readable; a
    protected body without a matching key comes back Opaque."""
    if len(data) < HEADER_LEN:
        raise Truncated(f"frame shorter than header: {len(data)} bytes")
    ts, cell_id, rnti, direction, protection = struct.unpack(">QIHBB", data[:HEADER_LEN])
    if direction not in (0, 1):
        raise InvariantViolation(f"bad direction byte: {direction}")
    if protection not in (0, 1):
        raise InvariantViolation(f"bad protection byte: {protection}")
    body = data[HEADER_LEN:]
    if protection == 0:
        header = FrameHeader(ts, cell_id, rnti, Direction(direction))
        header.validate()
        return header, decode_body(body)
    if len(body) < 4:
        raise Truncated("protected frame missing key_id")
    key_id = struct.unpack(">I", body[:4])[0]
    header = FrameHeader(ts, cell_id, rnti, Direction(direction), key_id=key_id)
    header.validate()
    seed = (keys or {}).get(key_id)
    if seed is None:
        return header, Opaque(body_len=len(body))
    return header, decode_body(keystream_mask(seed, body[4:]))


def body_len(data: bytes) -> int:
    """Body-region length of an encoded frame (everything past the header)."""
    return len(data) - HEADER_LEN


def _identity_to_json(imsi: Optional[Imsi], tmsi: Optional[int]) -> dict:
    if imsi is not None:
        return {"kind": "imsi", "value": str(imsi), "mnc_len": len(imsi.mnc)}
    return {"kind": "tmsi", "value": format_tmsi(tmsi)}


def _identity_from_json(obj: dict) -> dict:
    if obj["kind"] == "imsi":
        return {"imsi": parse_imsi(obj["value"], obj["mnc_len"])}
    return {"tmsi": int(obj["value"], 16)}


def message_to_json(msg: Union[Message, Opaque]) -> dict:
    """Capture-log body for a decoded message. Inverse of message_from_json."""
    if isinstance(msg, Opaque):
        return {}
    if isinstance(msg, Mib):
        return {"bandwidth_rb": msg.bandwidth_rb, "sfn": msg.sfn}
    if isinstance(msg, Sib1):
        return {
            "plmn": {"mcc": msg.plmn.mcc, "mnc": msg.plmn.mnc},
            "tac": msg.tac,
            "cell_id": msg.cell_id,
            "min_rx_level_dbm": msg.min_rx_level_dbm,
            "priority_earfcns": [list(e) for e in msg.priority_earfcns],
        }
    if isinstance(msg, RachPreamble):
        return {"preamble_id": msg.preamble_id}
    if isinstance(msg, MacRar):
        return {
            "temp_rnti": msg.temp_rnti,
            "timing_advance": msg.timing_advance,
            "uplink_grant": msg.uplink_grant,
        }
    if isinstance(msg, RrcConnectionRequest):
        if msg.tmsi is not None:
            return {"identity": {"kind": "tmsi", "value": format_tmsi(msg.tmsi)}}
        return {"identity": {"kind": "random", "value": msg.random_id}}
    if isinstance(msg, RrcConnectionSetup):
        return {}
    if isinstance(msg, AttachRequest):
        return {"identity": _identity_to_json(msg.imsi, msg.tmsi)}
    if isinstance(msg, IdentityRequest):
        return {"requested": msg.requested.name.lower()}
    if isinstance(msg, IdentityResponse):
        if msg.imsi is not None:
            return {"identity": {"kind": "imsi", "value": str(msg.imsi), "mnc_len": len(msg.imsi.mnc)}}
        return {"identity": {"kind": "imei", "value": msg.imei}}
    if isinstance(msg, AuthenticationRequest):
        return {"rand": msg.rand.hex(), "autn": msg.autn.hex()}
    if isinstance(msg, AuthenticationResponse):
        return {"res": msg.res.hex()}
    if isinstance(msg, SecurityModeCommand):
        return {"key_id": msg.key_id}
    if isinstance(msg, SecurityModeComplete):
        return {}
    if isinstance(msg, AttachAccept):
        return {"tmsi": format_tmsi(msg.tmsi), "tac": msg.tac}
    if isinstance(msg, AttachReject):
        return {"emm_cause": msg.emm_cause.name.lower()}
    if isinstance(msg, TauRequest):
        return {"tmsi": format_tmsi(msg.tmsi), "tac": msg.tac}
    if isinstance(msg, TauReject):
        return {"emm_cause": msg.emm_cause.name.lower()}
    if isinstance(msg, Paging):
        return {"identity": _identity_to_json(msg.imsi, msg.tmsi)}
    if isinstance(msg, MeasurementReport):
        return {"neighbors": [list(e) for e in msg.neighbors]}
    if isinstance(msg, RrcConnectionReconfiguration):
        if msg.mobility is None:
            return {"mobility": None}
        return {"mobility": {"target_cell_id": msg.mobility.target_cell_id, "new_rnti": msg.mobility.new_rnti}}
    if isinstance(msg, RrcConnectionReconfigurationComplete):
        return {}
    if isinstance(msg, UserData):
        return {"byte_count": msg.byte_count}
    raise InvariantViolation(f"no json form for {type(msg).__name__}")


def message_from_json(name: str, body: dict) -> Message:
    """Rebuild a message from its capture-log body."""
    cls = _BY_NAME.get(name)
    if cls is None:
        raise UnknownType(f"unknown message name: {name!r}")
    if cls is Mib:
        return Mib(body["bandwidth_rb"], body["sfn"])
    if cls is Sib1:
        return Sib1(
            Plmn(body["plmn"]["mcc"], body["plmn"]["mnc"]),
            body["tac"],
            body["cell_id"],
            body["min_rx_level_dbm"],
            tuple((e[0], e[1]) for e in body["priority_earfcns"]),
        )
    if cls is RachPreamble:
        return RachPreamble(body["preamble_id"])
    if cls is MacRar:
        return MacRar(body["temp_rnti"], body["timing_advance"], body["uplink_grant"])
    if cls is RrcConnectionRequest:
        ident = body["identity"]
        if ident["kind"] == "tmsi":
            return RrcConnectionRequest(tmsi=int(ident["value"], 16))
        return RrcConnectionRequest(random_id=ident["value"])
    if cls is RrcConnectionSetup:
        return RrcConnectionSetup()
    if cls is AttachRequest:
        return AttachRequest(**_identity_from_json(body["identity"]))
    if cls is IdentityRequest:
        return IdentityRequest(IdentityKind[body["requested"].upper()])
    if cls is IdentityResponse:
        ident = body["identity"]
        if ident["kind"] == "imsi":
            return IdentityResponse(imsi=parse_imsi(ident["value"], ident["mnc_len"]))
        return IdentityResponse(imei=ident["value"])
    if cls is AuthenticationRequest:
        return AuthenticationRequest(bytes.fromhex(body["rand"]), bytes.fromhex(body["autn"]))
    if cls is AuthenticationResponse:
        return AuthenticationResponse(bytes.fromhex(body["res"]))
    if cls is SecurityModeCommand:
        return SecurityModeCommand(body["key_id"])
    if cls is SecurityModeComplete:
        return SecurityModeComplete()
    if cls is AttachAccept:
        return AttachAccept(int(body["tmsi"], 16), body["tac"])
    if cls is AttachReject:
        return AttachReject(EmmCause[body["emm_cause"].upper()])
    if cls is TauRequest:
        return TauRequest(int(body["tmsi"], 16), body["tac"])
    if cls is TauReject:
        return TauReject(EmmCause[body["emm_cause"].upper()])
    if cls is Paging:
        return Paging(**_identity_from_json(body["identity"]))
    if cls is MeasurementReport:
        return MeasurementReport(tuple((e[0], e[1]) for e in body["neighbors"]))
    if cls is RrcConnectionReconfiguration:
        mob = body["mobility"]
        if mob is None:
            return RrcConnectionReconfiguration()
        return RrcConnectionReconfiguration(MobilityControlInfo(mob["target_cell_id"], mob["new_rnti"]))
    if cls is RrcConnectionReconfigurationComplete:
        return RrcConnectionReconfigurationComplete()
    if cls is UserData:
        return UserData(body["byte_count"])
    raise UnknownType(f"unhandled message name: {name!r}")
