import datetime as dt

import pytest
from asn1crypto import core as oracle
from asn1crypto import parser as oracle_parser
from hypothesis import given, settings
from hypothesis import strategies as st

from der_corpus import MAX_DEPTH, corpus, depth_of
from pqkex import codec
from pqkex.codec import (
    DecodeError,
    IndefiniteLengthError,
    InvalidValueError,
    Node,
    NonMinimalLengthError,
    TrailingBytesError,
    TruncatedError,
    UnsupportedTagError,
)


class TestGoldenVectors:
    @pytest.mark.parametrize("node,hexed", [
        (codec.seq(), "3000"),
        (codec.integer(0), "020100"),
        (codec.integer(127), "02017f"),
        (codec.integer(128), "02020080"),
        (codec.integer(-1), "0201ff"),
        (codec.integer(-129), "0202ff7f"),
        (codec.null(), "0500"),
        (codec.octet_string(b"\x01\x02"), "04020102"),
        (codec.utf8("Bob"), "0c03426f62"),
        (codec.bit_string(b"\xaa"), "030200aa"),
        (codec.oid("2.16.840.1.101.3.4.2.12"), "060960864801650304020c"),
        (codec.oid("2.5.4.3"), "0603550403"),
        (codec.oid("1.2.840.113549.1.7.2"), "06092a864886f70d010702"),
        (codec.explicit(0, codec.integer(2)), "a003020102"),
        (codec.generalized_time(dt.datetime(2025, 1, 1, tzinfo=dt.timezone.utc)),
         "180f32303235303130313030303030305a"),
    ])
    def test_encoding(self, node, hexed):
        assert codec.encode(node).hex() == hexed
        assert codec.decode(bytes.fromhex(hexed)) == node

    @pytest.mark.parametrize("dotted", [
        "2.16.840.1.101.3.4.2.12", "1.3.6.1.4.1.59999.1.9", "2.5.4.3", "1.2.840.113549.1.9.5",
        "2.16.840.1.101.3.4.4.3", "0.0", "2.999.1",
    ])
    def test_oids_agree_with_independent_encoder(self, dotted):
        ours = codec.encode(codec.oid(dotted))
        assert ours == oracle.ObjectIdentifier(dotted).dump()
        assert codec.decode_oid(ours[2:]) == dotted

    @pytest.mark.parametrize("value", [0, 1, -1, 127, 128, 255, 256, -128, -129, 2**62 | 12345, -(2**70)])
    def test_integers_agree_with_independent_encoder(self, value):
        ours = codec.encode(codec.integer(value))
        assert ours == oracle.Integer(value).dump()
        assert codec.read_integer(codec.decode(ours)) == value

    @pytest.mark.parametrize("size,header", [(0x7F, "047f"), (0x80, "048180"), (0xFF, "0481ff"),
                                              (0x100, "04820100"), (0x10000, "0483010000")])
    def test_length_boundaries(self, size, header):
        der = codec.encode(codec.octet_string(bytes(size)))
        assert der[:len(header) // 2].hex() == header
        assert len(der) == codec.octet_string(bytes(size)).encoded_length()

    def test_set_of_is_sorted(self):
        a, b = codec.integer(5), codec.integer(1)
        assert codec.encode(codec.set_of(a, b)) == codec.encode(codec.set_of(b, a)) == bytes.fromhex("3106020101020105")


class TestRejection:
    @pytest.mark.parametrize("hexed,error", [
        ("30", TruncatedError),
        ("", TruncatedError),
        ("0402ab", TruncatedError),
        ("3004020100", TruncatedError),
        ("30000000", TrailingBytesError),
        ("3080020100 0000", IndefiniteLengthError),
        ("04810100", NonMinimalLengthError),
        ("0482007f" + "00" * 0x7F, NonMinimalLengthError),
        ("1f2100", UnsupportedTagError),
        ("bf2100", UnsupportedTagError),
    ])
    def test_distinct_errors(self, hexed, error):
        with pytest.raises(error):
            codec.decode(bytes.fromhex(hexed.replace(" ", "")))

    def test_errors_are_distinct_classes(self):
        classes = {TruncatedError, TrailingBytesError, IndefiniteLengthError, NonMinimalLengthError,
                   UnsupportedTagError, InvalidValueError}
        assert len(classes) == 6
        assert all(issubclass(c, DecodeError) for c in classes)
        for c in classes:
            assert not any(issubclass(c, o) for o in classes - {c})

    @pytest.mark.parametrize("hexed", ["0200", "0202007f", "0202ff80", "020300007f"])
    def test_non_minimal_or_empty_integer(self, hexed):
        raw = bytes.fromhex(hexed)
        try:
            node = codec.decode(raw)
        except DecodeError:
            return
        with pytest.raises(InvalidValueError):
            codec.read_integer(node)

    @pytest.mark.parametrize("text", [b"20250101000000", b"2025010100000Z", b"20251301000000Z", b"2025010100000.Z"])
    def test_bad_times(self, text):
        with pytest.raises(InvalidValueError):
            codec.read_time(Node(codec.GENERALIZED_TIME, text))

    def test_time_requires_timezone(self):
        with pytest.raises(ValueError):
            codec.generalized_time(dt.datetime(2025, 1, 1))

    def test_deep_nesting_is_bounded(self):
        node = codec.seq()
        for _ in range(codec.MAX_DEPTH + 5):
            node = codec.seq(node)
        with pytest.raises(DecodeError):
            codec.decode(codec.encode(node))

    def test_bit_string_padding(self):
        with pytest.raises(InvalidValueError):
            codec.read_bits(Node(codec.BIT_STRING, b"\x03\xa8"))


def _check_round_trip(node):
    der = codec.encode(node)
    assert len(der) == node.encoded_length()
    back = codec.decode(der)
    assert back == node
    assert codec.encode(back) == der
    return der


class TestRoundTrip:
    def test_generated_corpus(self):
        cases = corpus(2_000, seed=7)
        assert max(depth_of(n) for n in cases) <= MAX_DEPTH
        for node in cases:
            der = _check_round_trip(node)
            # the independent parser splits header and body the same way
            _, constructed, _, header, contents, trailer = oracle_parser.parse(der, strict=True)
            assert header + contents == der and trailer == b""
            assert bool(constructed) == node.constructed

    @given(st.recursive(
        st.builds(Node, st.sampled_from([0x02, 0x04, 0x05, 0x0C, 0x80]), st.binary(max_size=300)),
        lambda kids: st.builds(Node, st.sampled_from([0x30, 0x31, 0xA0]), st.lists(kids, max_size=5).map(tuple)),
        max_leaves=30,
    ))
    @settings(max_examples=300)
    def test_hypothesis_trees(self, node):
        _check_round_trip(node)

    @given(st.binary(max_size=200))
    @settings(max_examples=500)
    def test_bytes_direction(self, data):
        """Whatever decodes re-encodes to the identical bytes."""
        try:
            node = codec.decode(data)
        except DecodeError:
            return
        assert codec.encode(node) == data

    def test_decode_prefix(self):
        der = codec.encode(codec.integer(5))
        node, used = codec.decode_prefix(der + b"\xff\xff")
        assert node == codec.integer(5) and used == len(der)

    def test_dump_is_readable(self):
        text = codec.dump(codec.seq(codec.oid("2.5.4.3"), codec.utf8("Alice")))
        assert "SEQUENCE" in text and "2.5.4.3" in text and "'Alice'" in text
