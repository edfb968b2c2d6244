"""kepReq / kepResp / kepAck as PKCS#7-style SignedData.

Wire layout::

    ContentInfo ::= SEQUENCE { signedData OID, [0] EXPLICIT SignedData }
    SignedData  ::= SEQUENCE {
        version INTEGER (1),
        digestAlgorithms SET { SHAKE-256 },
        content KepContent,
        certificates [0] IMPLICIT SET OF Certificate,
        signerInfos SET { SignerInfo } }
    KepContent  ::= SEQUENCE {
        messageType OID,
        message NULL | OCTET STRING,       -- KEM ciphertext
        peerMessageId OCTET STRING (8) OPTIONAL }
    SignerInfo  ::= SEQUENCE {
        version INTEGER (1),
        issuerAndSerialNumber SEQUENCE { Name, INTEGER },
        digestAlgorithm SHAKE-256,
        signedAttrs [0] IMPLICIT SET { signingTime, messageDigest },
        signatureAlgorithm,
        signature OCTET STRING }

The signature covers the DER of the signed attributes re-tagged as SET; the
messageDigest attribute is SHAKE-256/32 of the KepContent encoding.
"""

from __future__ import annotations

import contextlib
import contextvars
import datetime as dt
import enum
import time
from collections import defaultdict
from dataclasses import dataclass, field
from typing import Iterator

from . import certificates as certs_mod
from . import codec
from .certificates import Certificate, CertificateError, ExtractedKeys
from .codec import Node
from .suite import (
    SHAKE256_OID,
    DsaAlgorithm,
    DsaKeyPair,
    constant_time_equal,
    count_verifications,
    dsa_sign,
    dsa_verify,
    hashed_id8,
    shake256,
)

SIGNED_DATA_OID = "1.2.840.113549.1.7.2"
SIGNING_TIME_OID = "1.2.840.113549.1.9.5"
MESSAGE_DIGEST_OID = "1.2.840.113549.1.9.4"

DEFAULT_FRESHNESS = dt.timedelta(seconds=300)
MESSAGE_ID_SIZE = 8


class MessageType(enum.Enum):
    KEP_REQ = "kepReq"
    KEP_RESP = "kepResp"
    KEP_ACK = "kepAck"

    @property
    def oid(self) -> str:
        return _TYPE_OIDS[self]


_TYPE_OIDS = {
    MessageType.KEP_REQ: certs_mod.PRIVATE_ARC + ".3.1",
    MessageType.KEP_RESP: certs_mod.PRIVATE_ARC + ".3.2",
    MessageType.KEP_ACK: certs_mod.PRIVATE_ARC + ".3.3",
}
_TYPES_BY_OID = {v: k for k, v in _TYPE_OIDS.items()}


class MessageError(Exception):
    pass


class MalformedMessage(MessageError):
    pass


class CertInvalid(MessageError):
    pass


class DigestMismatch(MessageError):
    pass


class BadSignature(MessageError):
    pass


class StaleTimestamp(MessageError):
    pass


class ContentError(ValueError):
    pass


@dataclass(frozen=True)
class ContentInfo:
    message_type: MessageType
    payload: bytes | None = None
    peer_message_id: bytes | None = None

    def __post_init__(self):
        if self.message_type is MessageType.KEP_REQ:
            if self.payload is not None or self.peer_message_id is not None:
                raise ContentError("kepReq carries no payload and no peer message id")
        else:
            if self.payload is None or self.peer_message_id is None:
                raise ContentError(f"{self.message_type.value} needs a ciphertext and a peer message id")
            if len(self.peer_message_id) != MESSAGE_ID_SIZE:
                raise ContentError("peer message id must be 8 bytes")

    def to_node(self) -> Node:
        fields = [codec.oid(self.message_type.oid)]
        if self.payload is None:
            fields.append(codec.null())
        else:
            fields += [codec.octet_string(self.payload), codec.octet_string(self.peer_message_id)]
        return codec.seq(*fields)

    @classmethod
    def from_node(cls, node: Node) -> ContentInfo:
        fields = node.expect(codec.SEQUENCE).children
        if not fields:
            raise codec.InvalidValueError("empty content")
        oid = codec.read_oid(fields[0])
        if oid not in _TYPES_BY_OID:
            raise codec.InvalidValueError(f"unknown message type {oid}")
        mtype = _TYPES_BY_OID[oid]
        if mtype is MessageType.KEP_REQ:
            if len(fields) != 2 or fields[1] != codec.null():
                raise codec.InvalidValueError("kepReq message must be NULL")
            return cls(mtype)
        if len(fields) != 3:
            raise codec.InvalidValueError(f"{mtype.value} needs message and peer id")
        peer_id = codec.read_octets(fields[2])
        if len(peer_id) != MESSAGE_ID_SIZE:
            raise codec.InvalidValueError("peer message id must be 8 bytes")
        return cls(mtype, codec.read_octets(fields[1]), peer_id)


@dataclass(frozen=True)
class SignerInfo:
    issuer: str
    serial: int
    signature_algorithm: DsaAlgorithm
    signing_time_raw: bytes
    message_digest: bytes
    signature: bytes = field(repr=False)
    signed_attrs_der: bytes = field(repr=False)

    @property
    def signing_time(self) -> dt.datetime:
        return codec.read_time(codec.Node(codec.GENERALIZED_TIME, self.signing_time_raw))


@dataclass(frozen=True)
class SignedData:
    content: ContentInfo
    certificates: tuple[Certificate, ...]
    signer: SignerInfo
    content_der: bytes = field(repr=False)
    encoded: bytes = field(repr=False)

    @property
    def message_type(self) -> MessageType:
        return self.content.message_type

    @property
    def encoded_length(self) -> int:
        return len(self.encoded)

    @property
    def message_id(self) -> bytes:
        return hashed_id8(self.encoded)

    @classmethod
    def from_der(cls, data: bytes) -> SignedData:
        return parse(data)


def message_id(msg: SignedData) -> bytes:
    return hashed_id8(msg.encoded)


def encoded_length(msg: SignedData) -> int:
    return len(msg.encoded)


# -- timing hooks (used by the benchmark) -------------------------------------------

@dataclass
class StepRecorder:
    seconds: dict[str, list[float]] = field(default_factory=lambda: defaultdict(list))
    verifications: dict[str, list[int]] = field(default_factory=lambda: defaultdict(list))


_recorder: contextvars.ContextVar[StepRecorder | None] = contextvars.ContextVar(
    "pqkex_step_recorder", default=None
)


@contextlib.contextmanager
def record_steps() -> Iterator[StepRecorder]:
    """Record wall-clock time and signature verifications of every build/verify."""
    recorder = StepRecorder()
    token = _recorder.set(recorder)
    try:
        yield recorder
    finally:
        _recorder.reset(token)


@contextlib.contextmanager
def _step(name: str):
    recorder = _recorder.get()
    if recorder is None:
        yield
        return
    with count_verifications() as counter:
        start = time.perf_counter()
        yield
        elapsed = time.perf_counter() - start
    recorder.seconds[name].append(elapsed)
    recorder.verifications[name].append(counter.count)


# -- build ----------------------------------------------------------------------------

def _signed_attrs(signing_time: dt.datetime, digest: bytes) -> Node:
    return codec.set_of(
        codec.seq(codec.oid(SIGNING_TIME_OID), codec.set_of(codec.generalized_time(signing_time))),
        codec.seq(codec.oid(MESSAGE_DIGEST_OID), codec.set_of(codec.octet_string(digest))),
    )


def _alg_id(oid: str) -> Node:
    return codec.seq(codec.oid(oid))


def _name(common_name: str) -> Node:
    return certs_mod._name(common_name)


def build(message_type: MessageType, content: ContentInfo, certs: list[Certificate] | tuple[Certificate, ...],
          signer_key: DsaKeyPair, signing_time: dt.datetime) -> SignedData:
    """Sign *content* with *signer_key* and wrap it with the sender's certificates.

    *certs* must include the certificate carrying ``signer_key.public``; the
    order given is the order on the wire.
    """
    if content.message_type is not message_type:
        raise ContentError(f"content is {content.message_type.value}, message is {message_type.value}")
    if not certs:
        raise ContentError("at least one certificate is required")
    signer_cert = next((c for c in certs if c.dsa_public == signer_key.public and not c.self_signed), None)
    if signer_cert is None:
        raise ContentError("no certificate carries the signer's DSA public key")
    if signing_time.tzinfo is None:
        raise ContentError("signing time must be timezone-aware")

    with _step(f"{message_type.value}.build"):
        content_node = content.to_node()
        content_der = codec.encode(content_node)
        attrs = _signed_attrs(signing_time, shake256(content_der, 32))
        signature = dsa_sign(signer_key, codec.encode(attrs))
        signer_info = codec.seq(
            codec.integer(1),
            codec.seq(_name(signer_cert.issuer), codec.integer(signer_cert.serial)),
            _alg_id(SHAKE256_OID),
            codec.implicit(0, attrs),
            _alg_id(signer_key.algorithm.oid),
            codec.octet_string(signature),
        )
        signed_data = codec.seq(
            codec.integer(1),
            codec.set_of(_alg_id(SHAKE256_OID)),
            content_node,
            Node(codec.context(0), tuple(codec.decode(c.encoded) for c in certs)),
            codec.set_of(signer_info),
        )
        encoded = codec.encode(codec.seq(codec.oid(SIGNED_DATA_OID), codec.explicit(0, signed_data)))
    return parse(encoded)


# -- parse ------------------------------------------------------------------------------

def parse(data: bytes) -> SignedData:
    """Decode a SignedData message.

    Envelope damage raises :class:`MalformedMessage`; a certificate that
    cannot be parsed raises :class:`CertInvalid`.
    """
    try:
        root = codec.decode(data)
        if len(root.expect(codec.SEQUENCE)) != 2 or codec.read_oid(root[0]) != SIGNED_DATA_OID:
            raise codec.InvalidValueError("not a SignedData ContentInfo")
        wrapper = root[1].expect(codec.context(0))
        if len(wrapper) != 1:
            raise codec.InvalidValueError("bad [0] wrapper")
        sd = wrapper[0].expect(codec.SEQUENCE)
        if len(sd) != 5:
            raise codec.InvalidValueError("SignedData must have 5 fields")
        if codec.read_integer(sd[0]) != 1:
            raise codec.InvalidValueError("unsupported SignedData version")
        digest_algs = sd[1].expect(codec.SET)
        if len(digest_algs) != 1 or _read_alg(digest_algs[0]) != SHAKE256_OID:
            raise codec.InvalidValueError("digest algorithm must be SHAKE-256")
        content = ContentInfo.from_node(sd[2])
        content_der = codec.encode(sd[2])
        cert_nodes = sd[3].expect(codec.context(0)).children
        signer_infos = sd[4].expect(codec.SET)
        if len(signer_infos) != 1:
            raise codec.InvalidValueError("exactly one signer is supported")
        signer = _parse_signer(signer_infos[0])
    except codec.DecodeError as exc:
        raise MalformedMessage(str(exc)) from exc
    if not cert_nodes:
        raise CertInvalid("message carries no certificate")
    try:
        certificates = tuple(certs_mod.parse(codec.encode(n)) for n in cert_nodes)
    except CertificateError as exc:
        raise CertInvalid(f"{type(exc).__name__}: {exc}") from exc
    return SignedData(content, certificates, signer, content_der, bytes(data))


def _read_alg(node: Node) -> str:
    if len(node.expect(codec.SEQUENCE)) != 1:
        raise codec.InvalidValueError("algorithm identifiers carry no parameters")
    return codec.read_oid(node[0])


def _parse_signer(node: Node) -> SignerInfo:
    fields = node.expect(codec.SEQUENCE).children
    if len(fields) != 6 or codec.read_integer(fields[0]) != 1:
        raise codec.InvalidValueError("bad SignerInfo")
    ias = fields[1].expect(codec.SEQUENCE)
    if len(ias) != 2:
        raise codec.InvalidValueError("bad issuerAndSerialNumber")
    issuer = certs_mod._read_name(ias[0])
    serial = codec.read_integer(ias[1])
    if _read_alg(fields[2]) != SHAKE256_OID:
        raise codec.InvalidValueError("digest algorithm must be SHAKE-256")
    attrs_node = fields[3].expect(codec.context(0))
    signing_time = digest = None
    for attr in attrs_node.children:
        if len(attr.expect(codec.SEQUENCE)) != 2 or len(attr[1].expect(codec.SET)) != 1:
            raise codec.InvalidValueError("bad signed attribute")
        attr_oid = codec.read_oid(attr[0])
        if attr_oid == SIGNING_TIME_OID and signing_time is None:
            # kept raw; interpreted only after the signature has been checked
            signing_time = attr[1][0].expect(codec.GENERALIZED_TIME).value
        elif attr_oid == MESSAGE_DIGEST_OID and digest is None:
            digest = codec.read_octets(attr[1][0])
        else:
            raise codec.InvalidValueError(f"unexpected signed attribute {attr_oid}")
    if signing_time is None or digest is None:
        raise codec.InvalidValueError("signingTime and messageDigest are required")
    sig_oid = _read_alg(fields[4])
    alg = next((a for a in certs_mod.DSA_ALGORITHMS.values() if a.oid == sig_oid), None)
    if alg is None:
        raise codec.InvalidValueError(f"unsupported signature algorithm {sig_oid}")
    return SignerInfo(
        issuer=issuer,
        serial=serial,
        signature_algorithm=alg,
        signing_time_raw=signing_time,
        message_digest=digest,
        signature=codec.read_octets(fields[5]),
        signed_attrs_der=codec.encode(Node(codec.SET, attrs_node.children)),
    )


# -- verify -----------------------------------------------------------------------------

@dataclass(frozen=True)
class VerifiedMessage:
    message_type: MessageType
    content: ContentInfo
    keys: ExtractedKeys
    signing_time: dt.datetime


def sender_keys(msg: SignedData, ca_public: bytes, now: dt.datetime) -> tuple[ExtractedKeys, Certificate]:
    """Validate the sender's certificates and merge their keys.

    A self-signed certificate holding *ca_public* is the trust anchor itself
    and is skipped. Returns the merged keys and the signer's certificate.
    """
    subject = dsa_alg = dsa_pk = kem_alg = kem_pk = None
    signer_cert = None
    for cert in msg.certificates:
        if cert.self_signed and cert.dsa_public == ca_public:
            continue
        try:
            keys = certs_mod.validate(cert, ca_public, now)
        except CertificateError as exc:
            raise CertInvalid(f"{type(exc).__name__}: {exc}") from exc
        if subject is not None and keys.subject != subject:
            raise CertInvalid("certificates name different subjects")
        subject = keys.subject
        if keys.dsa_public is not None:
            if dsa_pk is not None:
                raise CertInvalid("more than one DSA key for the sender")
            dsa_alg, dsa_pk = keys.dsa_algorithm, keys.dsa_public
            if cert.serial == msg.signer.serial and cert.issuer == msg.signer.issuer:
                signer_cert = cert
        if keys.kem_public is not None:
            if kem_pk is not None:
                raise CertInvalid("more than one KEM key for the sender")
            kem_alg, kem_pk = keys.kem_algorithm, keys.kem_public
    if dsa_pk is None:
        raise CertInvalid("no certificate carries a DSA key; the sender cannot be authenticated")
    if signer_cert is None:
        raise CertInvalid("no certificate matches the signer's issuer and serial")
    return ExtractedKeys(subject, dsa_alg, dsa_pk, kem_alg, kem_pk), signer_cert


def verify(msg: SignedData, ca_public: bytes, now: dt.datetime,
           freshness_window: dt.timedelta = DEFAULT_FRESHNESS,
           expected_signer: ExtractedKeys | None = None) -> VerifiedMessage:
    """Check certificates, digest, signature and freshness, in that order.

    With *expected_signer* the signature must verify under that party's DSA
    key (the one remembered from earlier in the handshake) instead of
    whatever key the certificates in *msg* present.
    """
    with _step(f"{msg.message_type.value}.verify"):
        keys, signer_cert = sender_keys(msg, ca_public, now)
        if not constant_time_equal(shake256(msg.content_der, 32), msg.signer.message_digest):
            raise DigestMismatch("messageDigest does not match the content")
        signer = expected_signer or keys
        if msg.signer.signature_algorithm != signer.dsa_algorithm:
            raise BadSignature("signature algorithm does not match the signer's key")
        if not dsa_verify(signer.dsa_algorithm, signer.dsa_public, msg.signer.signed_attrs_der,
                          msg.signer.signature):
            raise BadSignature(f"{msg.message_type.value} signature does not verify for {signer.subject!r}")
        try:
            signing_time = msg.signer.signing_time
        except codec.DecodeError as exc:
            raise MalformedMessage(str(exc)) from exc
        if abs(now - signing_time) > freshness_window:
            raise StaleTimestamp(f"signingTime {signing_time.isoformat()} is outside "
                                 f"{freshness_window.total_seconds():g}s of {now.isoformat()}")
    return VerifiedMessage(msg.message_type, msg.content, keys, signing_time)
