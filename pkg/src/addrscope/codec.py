"""Encoder/decoder for the Bitcoin P2P v1 message subset used by the monitor.

Wire layout: 24-byte header (magic, 12-byte null-padded command, payload
length as uint32 LE, checksum = first 4 bytes of double-SHA256 of the
payload), followed by the payload. All integers are little-endian on the
wire except ports, which are big-endian.

Supported commands: version, verack, getaddr, addr, ping, pong. Anything
else with valid framing decodes to :class:`Unknown` so a passive consumer
can skip it without dropping the session.
"""

from __future__ import annotations

import hashlib
import struct
from dataclasses import dataclass, field
from enum import IntFlag
from typing import Optional, Tuple, Union

MAINNET_MAGIC = b"\xf9\xbe\xb4\xd9"

PROTOCOL_VERSION = 70015  # pre-ADDRV2, so peers fall back to v1 ADDR
MIN_PEER_VERSION = 31402

MAX_ADDR_ENTRIES = 1000
MAX_USER_AGENT_BYTES = 256
MAX_PAYLOAD_BYTES = 4_000_000

_IPV4_MAPPED_PREFIX = b"\x00" * 10 + b"\xff\xff"


class CodecError(Exception):
    """Base class for all encode/decode failures."""


class BadMagic(CodecError):
    pass


class BadChecksum(CodecError):
    pass


class OversizedPayload(CodecError):
    pass


class MalformedPayload(CodecError):
    pass


class EntryCountExceeded(CodecError):
    pass


class UserAgentTooLong(CodecError):
    pass


class NonCanonicalVarint(CodecError):
    pass


class Truncated(CodecError):
    pass


class ServiceFlags(IntFlag):
    """64-bit service bitfield. Unknown bits are preserved verbatim."""

    NONE = 0
    NODE_NETWORK = 1 << 0
    NODE_WITNESS = 1 << 3
    NODE_NETWORK_LIMITED = 1 << 10


def has_useful_services(flags: int) -> bool:
    """True if the flags allow the address to be relayed by other peers:
    NODE_WITNESS and (NODE_NETWORK or NODE_NETWORK_LIMITED)."""
    f = int(flags)
    return bool(f & ServiceFlags.NODE_WITNESS) and bool(
        f & (ServiceFlags.NODE_NETWORK | ServiceFlags.NODE_NETWORK_LIMITED)
    )


@dataclass(frozen=True)
class NetworkAddress:
    """A peer address in 16-byte form (IPv4 mapped as ::ffff:a.b.c.d)."""

    ip: bytes  # always 16 bytes

    def __post_init__(self):
        if len(self.ip) != 16:
            raise ValueError("address must be 16 bytes")

    @property
    def is_ipv4(self) -> bool:
        return self.ip[:12] == _IPV4_MAPPED_PREFIX

    @classmethod
    def from_ipv4(cls, a: int, b: int, c: int, d: int) -> "NetworkAddress":
        return cls(_IPV4_MAPPED_PREFIX + bytes((a, b, c, d)))

    @classmethod
    def from_string(cls, text: str) -> "NetworkAddress":
        import ipaddress

        ip = ipaddress.ip_address(text)
        if ip.version == 4:
            return cls(_IPV4_MAPPED_PREFIX + ip.packed)
        return cls(ip.packed)

    def __str__(self) -> str:
        import ipaddress

        if self.is_ipv4:
            return str(ipaddress.IPv4Address(self.ip[12:]))
        return str(ipaddress.IPv6Address(self.ip))


# Special-purpose IPv4 blocks that are never routable on the public
# internet (private, loopback, link-local, CGN, documentation, reserved).
_IPV4_UNROUTABLE = (
    ("0.0.0.0", 8),
    ("10.0.0.0", 8),
    ("100.64.0.0", 10),
    ("127.0.0.0", 8),
    ("169.254.0.0", 16),
    ("172.16.0.0", 12),
    ("192.0.0.0", 24),
    ("192.0.2.0", 24),
    ("192.168.0.0", 16),
    ("198.18.0.0", 15),
    ("198.51.100.0", 24),
    ("203.0.113.0", 24),
    ("224.0.0.0", 4),
    ("240.0.0.0", 4),
)

# IPv6: unspecified, loopback, documentation, unique-local, link-local,
# multicast.
_IPV6_UNROUTABLE = (
    ("::", 128),
    ("::1", 128),
    ("2001:db8::", 32),
    ("fc00::", 7),
    ("fe80::", 10),
    ("ff00::", 8),
)


def _compile_ranges(ranges, width):
    out = []
    import ipaddress

    for base, prefix in ranges:
        net = ipaddress.ip_network(f"{base}/{prefix}")
        out.append((int(net.network_address), prefix, width))
    return out


_V4_RANGES = _compile_ranges(_IPV4_UNROUTABLE, 32)
_V6_RANGES = _compile_ranges(_IPV6_UNROUTABLE, 128)


def is_routable(addr: NetworkAddress) -> bool:
    """False for address ranges reserved for private or special use."""
    if addr.is_ipv4:
        value = int.from_bytes(addr.ip[12:], "big")
        ranges = _V4_RANGES
    else:
        value = int.from_bytes(addr.ip, "big")
        ranges = _V6_RANGES
    for base, prefix, width in ranges:
        if value >> (width - prefix) == base >> (width - prefix):
            return False
    return True


@dataclass(frozen=True)
class AddrEntry:
    """One announced address: exactly 30 bytes on the wire (4+8+16+2)."""

    timestamp: int  # unix seconds, uint32
    services: int
    address: NetworkAddress
    port: int

    WIRE_SIZE = 30

    def encode(self) -> bytes:
        return (
            struct.pack("<IQ", self.timestamp & 0xFFFFFFFF, self.services)
            + self.address.ip
            + struct.pack(">H", self.port)
        )

    @classmethod
    def decode(cls, buf: bytes, offset: int) -> "AddrEntry":
        if len(buf) - offset < cls.WIRE_SIZE:
            raise MalformedPayload("truncated addr entry")
        ts, services = struct.unpack_from("<IQ", buf, offset)
        ip = bytes(buf[offset + 12 : offset + 28])
        (port,) = struct.unpack_from(">H", buf, offset + 28)
        return cls(ts, services, NetworkAddress(ip), port)


@dataclass(frozen=True)
class Version:
    version: int
    services: int
    timestamp: int
    recv_services: int
    recv_address: NetworkAddress
    recv_port: int
    from_services: int
    from_address: NetworkAddress
    from_port: int
    nonce: int
    user_agent: str
    start_height: int
    relay: bool = True

    command = "version"


@dataclass(frozen=True)
class Verack:
    command = "verack"


@dataclass(frozen=True)
class Getaddr:
    command = "getaddr"


@dataclass(frozen=True)
class Addr:
    entries: Tuple[AddrEntry, ...] = ()

    command = "addr"


@dataclass(frozen=True)
class Ping:
    nonce: int

    command = "ping"


@dataclass(frozen=True)
class Pong:
    nonce: int

    command = "pong"


@dataclass(frozen=True)
class Unknown:
    raw_command: str
    payload: bytes = field(repr=False)

    command = "unknown"


Message = Union[Version, Verack, Getaddr, Addr, Ping, Pong, Unknown]


def checksum(payload: bytes) -> bytes:
    """First 4 bytes of SHA256(SHA256(payload))."""
    return hashlib.sha256(hashlib.sha256(payload).digest()).digest()[:4]


def encode_varint(n: int) -> bytes:
    """Bitcoin compact-size integer, minimal encoding."""
    if n < 0:
        raise ValueError("varint must be non-negative")
    if n < 0xFD:
        return bytes((n,))
    if n <= 0xFFFF:
        return b"\xfd" + struct.pack("<H", n)
    if n <= 0xFFFFFFFF:
        return b"\xfe" + struct.pack("<I", n)
    return b"\xff" + struct.pack("<Q", n)


def decode_varint(buf: bytes, offset: int = 0) -> Tuple[int, int]:
    """Decode a compact-size integer, rejecting non-minimal encodings.

    Returns (value, bytes consumed from offset).
    """
    if len(buf) <= offset:
        raise Truncated("empty varint")
    first = buf[offset]
    if first < 0xFD:
        return first, 1
    sizes = {0xFD: (2, "<H", 0xFD), 0xFE: (4, "<I", 0x10000), 0xFF: (8, "<Q", 0x100000000)}
    width, fmt, minimum = sizes[first]
    if len(buf) - offset - 1 < width:
        raise Truncated("truncated varint")
    (value,) = struct.unpack_from(fmt, buf, offset + 1)
    if value < minimum:
        raise NonCanonicalVarint(f"{value} has a shorter encoding")
    return value, 1 + width


def _encode_varstr(s: str) -> bytes:
    raw = s.encode("utf-8")
    return encode_varint(len(raw)) + raw


def _decode_varstr(buf: bytes, offset: int) -> Tuple[str, int]:
    try:
        n, consumed = decode_varint(buf, offset)
    except CodecError as exc:
        raise MalformedPayload(str(exc)) from exc
    if len(buf) - offset - consumed < n:
        raise MalformedPayload("truncated string")
    raw = bytes(buf[offset + consumed : offset + consumed + n])
    return raw.decode("utf-8", errors="replace"), consumed + n


def _netaddr_nots(services: int, address: NetworkAddress, port: int) -> bytes:
    return struct.pack("<Q", services) + address.ip + struct.pack(">H", port)


def _encode_payload(msg: Message) -> bytes:
    if isinstance(msg, (Verack, Getaddr)):
        return b""
    if isinstance(msg, Version):
        ua = msg.user_agent.encode("utf-8")
        if len(ua) > MAX_USER_AGENT_BYTES:
            raise UserAgentTooLong(f"user agent is {len(ua)} bytes")
        return (
            struct.pack("<iQq", msg.version, msg.services, msg.timestamp)
            + _netaddr_nots(msg.recv_services, msg.recv_address, msg.recv_port)
            + _netaddr_nots(msg.from_services, msg.from_address, msg.from_port)
            + struct.pack("<Q", msg.nonce)
            + _encode_varstr(msg.user_agent)
            + struct.pack("<i", msg.start_height)
            + struct.pack("<?", msg.relay)
        )
    if isinstance(msg, Addr):
        if len(msg.entries) > MAX_ADDR_ENTRIES:
            raise EntryCountExceeded(f"{len(msg.entries)} addr entries")
        return encode_varint(len(msg.entries)) + b"".join(e.encode() for e in msg.entries)
    if isinstance(msg, (Ping, Pong)):
        return struct.pack("<Q", msg.nonce)
    if isinstance(msg, Unknown):
        return msg.payload
    raise TypeError(f"not a Message: {msg!r}")


def _message_command(msg: Message) -> str:
    return msg.raw_command if isinstance(msg, Unknown) else msg.command


def encode_message(msg: Message, magic: bytes = MAINNET_MAGIC) -> bytes:
    """Serialize a message to header + payload."""
    payload = _encode_payload(msg)
    command = _message_command(msg).encode("ascii")
    if len(command) > 12:
        raise ValueError("command longer than 12 bytes")
    header = magic + command.ljust(12, b"\x00") + struct.pack("<I", len(payload)) + checksum(payload)
    return header + payload


def _decode_netaddr_nots(buf: bytes, offset: int) -> Tuple[int, NetworkAddress, int]:
    if len(buf) - offset < 26:
        raise MalformedPayload("truncated network address")
    (services,) = struct.unpack_from("<Q", buf, offset)
    ip = bytes(buf[offset + 8 : offset + 24])
    (port,) = struct.unpack_from(">H", buf, offset + 24)
    return services, NetworkAddress(ip), port


def _decode_payload(command: str, payload: bytes) -> Message:
    if command == "verack":
        return Verack()
    if command == "getaddr":
        return Getaddr()
    if command == "version":
        if len(payload) < 4 + 8 + 8 + 26 + 26 + 8:
            raise MalformedPayload("version payload too short")
        version, services, timestamp = struct.unpack_from("<iQq", payload, 0)
        recv = _decode_netaddr_nots(payload, 20)
        frm = _decode_netaddr_nots(payload, 46)
        (nonce,) = struct.unpack_from("<Q", payload, 72)
        user_agent, consumed = _decode_varstr(payload, 80)
        off = 80 + consumed
        if len(payload) - off < 4:
            raise MalformedPayload("version payload missing start height")
        (start_height,) = struct.unpack_from("<i", payload, off)
        off += 4
        relay = True  # absent for peers older than 70001
        if len(payload) > off:
            relay = payload[off] != 0
        return Version(version, services, timestamp, *recv, *frm, nonce, user_agent, start_height, relay)
    if command == "addr":
        try:
            count, consumed = decode_varint(payload, 0)
        except CodecError as exc:
            raise MalformedPayload(str(exc)) from exc
        if count > MAX_ADDR_ENTRIES:
            raise EntryCountExceeded(f"addr count {count} exceeds {MAX_ADDR_ENTRIES}")
        if len(payload) - consumed != count * AddrEntry.WIRE_SIZE:
            raise MalformedPayload("addr payload length mismatch")
        entries = tuple(
            AddrEntry.decode(payload, consumed + i * AddrEntry.WIRE_SIZE) for i in range(count)
        )
        return Addr(entries)
    if command in ("ping", "pong"):
        if len(payload) != 8:
            raise MalformedPayload(f"{command} payload must be 8 bytes")
        (nonce,) = struct.unpack("<Q", payload)
        return Ping(nonce) if command == "ping" else Pong(nonce)
    return Unknown(command, payload)


class NeedMoreData:
    """Sentinel: the buffer holds a prefix of a frame, keep reading."""

    __slots__ = ()

    def __repr__(self):
        return "NeedMoreData"


NEED_MORE_DATA = NeedMoreData()

_HEADER_SIZE = 24


def decode_message(
    buffer: bytes, expected_magic: bytes = MAINNET_MAGIC
) -> Union[Tuple[Message, int], NeedMoreData]:
    """Decode one frame from the start of ``buffer``.

    Returns (message, bytes consumed), or NEED_MORE_DATA if the buffer is a
    prefix of a valid frame. Raises a CodecError subclass for a bad frame;
    the caller should drop the session (no resync is attempted).
    """
    if len(buffer) < _HEADER_SIZE:
        head = bytes(buffer[:4])
        if head != expected_magic[: len(head)]:
            raise BadMagic(f"got prefix {head.hex()}, want {expected_magic.hex()}")
        return NEED_MORE_DATA
    if bytes(buffer[:4]) != expected_magic:
        raise BadMagic(f"got {bytes(buffer[:4]).hex()}, want {expected_magic.hex()}")
    command_raw = bytes(buffer[4:16])
    (length,) = struct.unpack_from("<I", buffer, 16)
    if length > MAX_PAYLOAD_BYTES:
        raise OversizedPayload(f"declared payload length {length}")
    if len(buffer) < _HEADER_SIZE + length:
        return NEED_MORE_DATA
    command_name = command_raw.split(b"\x00", 1)[0]
    if b"\x00" in command_raw and command_raw[len(command_name) :].strip(b"\x00"):
        raise MalformedPayload("command has bytes after first null")
    payload = bytes(buffer[_HEADER_SIZE : _HEADER_SIZE + length])
    if checksum(payload) != bytes(buffer[20:24]):
        raise BadChecksum(f"frame for command {command_name!r}")
    try:
        command = command_name.decode("ascii")
    except UnicodeDecodeError as exc:
        raise MalformedPayload("non-ASCII command") from exc
    return _decode_payload(command, payload), _HEADER_SIZE + length
