"""A small DER (X.690, definite-length) encoder and decoder.

Only single-byte identifier octets are supported, which covers the universal
types used here and context-specific tags [0]..[30].
"""

from __future__ import annotations

import datetime as dt
from dataclasses import dataclass
from typing import Iterable, Union

# identifier octets
BOOLEAN = 0x01
INTEGER = 0x02
BIT_STRING = 0x03
OCTET_STRING = 0x04
NULL = 0x05
OBJECT_IDENTIFIER = 0x06
UTF8_STRING = 0x0C
GENERALIZED_TIME = 0x18
SEQUENCE = 0x30
SET = 0x31

_CONSTRUCTED = 0x20
_CONTEXT = 0x80

TAG_NAMES = {
    BOOLEAN: "BOOLEAN",
    INTEGER: "INTEGER",
    BIT_STRING: "BIT STRING",
    OCTET_STRING: "OCTET STRING",
    NULL: "NULL",
    OBJECT_IDENTIFIER: "OBJECT IDENTIFIER",
    UTF8_STRING: "UTF8String",
    GENERALIZED_TIME: "GeneralizedTime",
    SEQUENCE: "SEQUENCE",
    SET: "SET",
}

MAX_DEPTH = 64


def context(number: int, constructed: bool = True) -> int:
    """Identifier octet for context-specific tag ``[number]``."""
    if not 0 <= number < 31:
        raise ValueError("only low tag numbers are supported")
    return _CONTEXT | (_CONSTRUCTED if constructed else 0) | number


def tag_name(tag: int) -> str:
    if tag & 0xC0 == _CONTEXT:
        return f"[{tag & 0x1F}]"
    return TAG_NAMES.get(tag, f"tag 0x{tag:02x}")


class DecodeError(ValueError):
    pass


class TruncatedError(DecodeError):
    pass


class TrailingBytesError(DecodeError):
    pass


class IndefiniteLengthError(DecodeError):
    pass


class NonMinimalLengthError(DecodeError):
    pass


class UnsupportedTagError(DecodeError):
    pass


class InvalidValueError(DecodeError):
    """Well-formed TLV whose content is not a valid value of its type."""


Value = Union[bytes, tuple["Node", ...]]


@dataclass(frozen=True)
class Node:
    tag: int
    value: Value

    @property
    def constructed(self) -> bool:
        return bool(self.tag & _CONSTRUCTED)

    @property
    def children(self) -> tuple[Node, ...]:
        if not self.constructed:
            raise TypeError(f"{tag_name(self.tag)} is primitive")
        return self.value  # type: ignore[return-value]

    def __len__(self):
        return len(self.children)

    def __getitem__(self, i):
        return self.children[i]

    def expect(self, tag: int) -> Node:
        if self.tag != tag:
            raise InvalidValueError(f"expected {tag_name(tag)}, found {tag_name(self.tag)}")
        return self

    def encoded_length(self) -> int:
        body = self.content_length()
        return 1 + _length_of_length(body) + body

    def content_length(self) -> int:
        if self.constructed:
            return sum(child.encoded_length() for child in self.children)
        return len(self.value)  # type: ignore[arg-type]


def _length_of_length(n: int) -> int:
    if n < 0x80:
        return 1
    return 1 + (n.bit_length() + 7) // 8


def _encode_length(n: int) -> bytes:
    if n < 0x80:
        return bytes([n])
    raw = n.to_bytes((n.bit_length() + 7) // 8, "big")
    return bytes([0x80 | len(raw)]) + raw


def encode(node: Node) -> bytes:
    out = bytearray()
    _encode_into(node, out)
    return bytes(out)


def _encode_into(node: Node, out: bytearray) -> None:
    if node.constructed:
        if not isinstance(node.value, tuple):
            raise TypeError(f"constructed {tag_name(node.tag)} needs a child tuple")
        body = bytearray()
        for child in node.value:
            _encode_into(child, body)
    else:
        if not isinstance(node.value, (bytes, bytearray)):
            raise TypeError(f"primitive {tag_name(node.tag)} needs bytes")
        body = node.value
    if node.tag & 0x1F == 0x1F:
        raise UnsupportedTagError("high tag numbers are not supported")
    out.append(node.tag)
    out += _encode_length(len(body))
    out += body


def decode(data: bytes) -> Node:
    """Decode exactly one TLV; anything after it is an error."""
    data = bytes(data)
    node, end = _decode_at(data, 0, len(data), 0)
    if end != len(data):
        raise TrailingBytesError(f"{len(data) - end} trailing bytes after TLV")
    return node


def decode_prefix(data: bytes) -> tuple[Node, int]:
    """Decode one TLV at the start of *data*; return it and the bytes consumed."""
    data = bytes(data)
    return _decode_at(data, 0, len(data), 0)


def _decode_at(data: bytes, pos: int, limit: int, depth: int) -> tuple[Node, int]:
    if depth > MAX_DEPTH:
        raise DecodeError("nesting too deep")
    if pos >= limit:
        raise TruncatedError("missing identifier octet")
    tag = data[pos]
    if tag & 0x1F == 0x1F:
        raise UnsupportedTagError(f"high tag number form at offset {pos}")
    pos += 1
    if pos >= limit:
        raise TruncatedError("missing length octet")
    first = data[pos]
    pos += 1
    if first == 0x80:
        raise IndefiniteLengthError(f"indefinite length at offset {pos - 1}")
    if first < 0x80:
        length = first
    else:
        count = first & 0x7F
        if count == 0x7F:
            raise DecodeError("reserved length octet 0xff")
        if pos + count > limit:
            raise TruncatedError("length octets run past the end")
        raw = data[pos:pos + count]
        pos += count
        length = int.from_bytes(raw, "big")
        if raw[0] == 0 or length < 0x80:
            raise NonMinimalLengthError(f"non-minimal length encoding at offset {pos - count - 1}")
    end = pos + length
    if end > limit:
        raise TruncatedError(f"{tag_name(tag)} needs {length} bytes, {limit - pos} available")
    if tag & _CONSTRUCTED:
        children = []
        while pos < end:
            child, pos = _decode_at(data, pos, end, depth + 1)
            children.append(child)
        return Node(tag, tuple(children)), end
    return Node(tag, data[pos:end]), end


# -- value helpers ------------------------------------------------------------

def seq(*children: Node) -> Node:
    return Node(SEQUENCE, tuple(children))


def set_of(*children: Node, sort: bool = True) -> Node:
    """SET OF; DER requires elements ordered by their encodings."""
    if sort:
        children = tuple(sorted(children, key=encode))
    return Node(SET, tuple(children))


def explicit(number: int, inner: Node) -> Node:
    return Node(context(number), (inner,))


def implicit(number: int, node: Node) -> Node:
    """Retag *node* as ``[number] IMPLICIT``, preserving its form."""
    return Node(context(number, node.constructed), node.value)


def null() -> Node:
    return Node(NULL, b"")


def octet_string(data: bytes) -> Node:
    return Node(OCTET_STRING, bytes(data))


def utf8(text: str) -> Node:
    return Node(UTF8_STRING, text.encode("utf-8"))


def bit_string(data: bytes) -> Node:
    """BIT STRING holding whole octets (zero unused bits)."""
    return Node(BIT_STRING, b"\x00" + bytes(data))


def integer(value: int) -> Node:
    return Node(INTEGER, _int_bytes(value))


def _int_bytes(value: int) -> bytes:
    length = max(1, (value + (value < 0)).bit_length() // 8 + 1)
    return value.to_bytes(length, "big", signed=True)


def oid(dotted: str) -> Node:
    return Node(OBJECT_IDENTIFIER, encode_oid(dotted))


def encode_oid(dotted: str) -> bytes:
    try:
        arcs = [int(a) for a in dotted.split(".")]
    except ValueError:
        raise ValueError(f"bad OID {dotted!r}") from None
    if len(arcs) < 2 or arcs[0] not in (0, 1, 2) or any(a < 0 for a in arcs):
        raise ValueError(f"bad OID {dotted!r}")
    if arcs[0] < 2 and arcs[1] >= 40:
        raise ValueError(f"bad OID {dotted!r}: second arc must be < 40")
    out = bytearray()
    for arc in [arcs[0] * 40 + arcs[1], *arcs[2:]]:
        chunk = [arc & 0x7F]
        arc >>= 7
        while arc:
            chunk.append(0x80 | (arc & 0x7F))
            arc >>= 7
        out += bytes(reversed(chunk))
    return bytes(out)


def decode_oid(raw: bytes) -> str:
    if not raw or raw[-1] & 0x80:
        raise InvalidValueError("truncated OID")
    values, acc, fresh = [], 0, True
    for b in raw:
        if fresh and b == 0x80:
            raise InvalidValueError("non-minimal OID arc")
        acc = (acc << 7) | (b & 0x7F)
        fresh = not b & 0x80
        if fresh:
            values.append(acc)
            acc = 0
    first = values[0]
    head = [0, first] if first < 40 else [1, first - 40] if first < 80 else [2, first - 80]
    return ".".join(str(a) for a in head + values[1:])


def generalized_time(when: dt.datetime) -> Node:
    """GeneralizedTime, UTC, whole seconds (always 15 bytes)."""
    if when.tzinfo is None:
        raise ValueError("timestamps must be timezone-aware")
    when = when.astimezone(dt.timezone.utc)
    return Node(GENERALIZED_TIME, when.strftime("%Y%m%d%H%M%SZ").encode("ascii"))


# -- readers ----------------------------------------------------------------------

def read_integer(node: Node) -> int:
    raw = node.expect(INTEGER).value
    if not raw:
        raise InvalidValueError("empty INTEGER")
    if len(raw) > 1 and ((raw[0] == 0 and raw[1] < 0x80) or (raw[0] == 0xFF and raw[1] >= 0x80)):
        raise InvalidValueError("non-minimal INTEGER")
    return int.from_bytes(raw, "big", signed=True)


def read_oid(node: Node) -> str:
    return decode_oid(node.expect(OBJECT_IDENTIFIER).value)


def read_octets(node: Node) -> bytes:
    return node.expect(OCTET_STRING).value


def read_bits(node: Node) -> bytes:
    raw = node.expect(BIT_STRING).value
    if not raw or raw[0] != 0:
        raise InvalidValueError("BIT STRING must hold whole octets")
    return raw[1:]


def read_utf8(node: Node) -> str:
    try:
        return node.expect(UTF8_STRING).value.decode("utf-8")
    except UnicodeDecodeError:
        raise InvalidValueError("invalid UTF-8") from None


def read_time(node: Node) -> dt.datetime:
    raw = node.expect(GENERALIZED_TIME).value
    try:
        text = raw.decode("ascii")
        if len(text) != 15 or not text.endswith("Z"):
            raise ValueError
        return dt.datetime.strptime(text, "%Y%m%d%H%M%SZ").replace(tzinfo=dt.timezone.utc)
    except ValueError:
        raise InvalidValueError(f"bad GeneralizedTime {raw!r}") from None


# -- debugging ----------------------------------------------------------------------

def dump(node: Node, indent: int = 0, max_bytes: int = 16) -> str:
    """Multi-line human readable rendering of a TLV tree."""
    return "\n".join(_dump_lines(node, indent, max_bytes))


def _dump_lines(node: Node, indent: int, max_bytes: int) -> Iterable[str]:
    pad = "  " * indent
    size = node.content_length()
    if node.constructed:
        yield f"{pad}{tag_name(node.tag)} ({size} bytes)"
        for child in node.children:
            yield from _dump_lines(child, indent + 1, max_bytes)
        return
    raw = node.value
    if node.tag == OBJECT_IDENTIFIER:
        shown = _safe(lambda: decode_oid(raw))
    elif node.tag in (UTF8_STRING, GENERALIZED_TIME):
        shown = repr(raw.decode("utf-8", "replace"))
    elif node.tag == INTEGER and len(raw) <= 20:
        shown = _safe(lambda: str(read_integer(node)))
    else:
        shown = raw[:max_bytes].hex() + ("..." if len(raw) > max_bytes else "")
    yield f"{pad}{tag_name(node.tag)} ({size} bytes) {shown}"


def _safe(fn):
    try:
        return fn()
    except DecodeError as exc:
        return f"<{exc}>"
