"""Dual-usage and pure certificates.

The layout is an X.509 v3-like skeleton::

    Certificate ::= SEQUENCE { tbs, signatureAlgorithm, signatureValue BIT STRING }
    TBS ::= SEQUENCE { [0] version(2), serial, signature, issuer, validity,
                       subject, subjectPublicKeyInfo, [3] extensions OPTIONAL }

with names reduced to a single CommonName. How the KEM key travels depends on
the scheme:

* composite: the SPKI holds ``dsa_pk || kem_pk`` under a combination OID
* catalyst: the SPKI holds the DSA key, an alt-public-key extension the KEM SPKI
* chameleon: the SPKI holds the DSA key; a delta-certificate extension holds
  ``SEQUENCE { serial, kem SPKI, signature }``. The signature is the CA's
  signature over the delta certificate obtained by taking the base TBS,
  swapping in the delta serial and KEM SPKI and dropping the extensions.
* pure-dsa / pure-kem: one key, no extensions.
"""

from __future__ import annotations

import base64
import binascii
import datetime as dt
import enum
import secrets
from dataclasses import dataclass, field

from . import codec
from .codec import Node
from .suite import (
    DSA_ALGORITHMS,
    KEM_ALGORITHMS,
    DsaAlgorithm,
    DsaKeyPair,
    KemAlgorithm,
    Suite,
    algorithm_by_oid,
    all_suites,
    dsa_keygen,
    dsa_sign,
    dsa_verify,
)

PRIVATE_ARC = "1.3.6.1.4.1.59999"
COMMON_NAME_OID = "2.5.4.3"
ALT_PUBLIC_KEY_OID = PRIVATE_ARC + ".2.1"
DELTA_CERTIFICATE_OID = PRIVATE_ARC + ".2.2"

# one combination OID per (DSA, KEM) pairing
COMPOSITE_OIDS: dict[tuple[str, str], str] = {
    (s.dsa.name, s.kem.name): f"{PRIVATE_ARC}.1.{i}" for i, s in enumerate(all_suites(), start=1)
}
_COMPOSITE_BY_OID = {v: k for k, v in COMPOSITE_OIDS.items()}

PEM_LABEL = "PQC CERTIFICATE"


class CertScheme(enum.Enum):
    COMPOSITE = "composite"
    CATALYST = "catalyst"
    CHAMELEON = "chameleon"
    PURE_DSA = "pure-dsa"
    PURE_KEM = "pure-kem"

    @property
    def dual_usage(self) -> bool:
        return self in (CertScheme.COMPOSITE, CertScheme.CATALYST, CertScheme.CHAMELEON)


class CertificateError(Exception):
    pass


class MalformedCertificate(CertificateError):
    pass


class MalformedExtension(CertificateError):
    pass


class UnknownScheme(CertificateError):
    pass


class BadCaSignature(CertificateError):
    pass


class Expired(CertificateError):
    pass


class NotYetValid(CertificateError):
    pass


class IssueError(ValueError):
    pass


def random_serial() -> int:
    """Positive serial that always encodes to exactly 8 content bytes."""
    return (1 << 62) | secrets.randbits(62)


@dataclass(frozen=True)
class CertTemplate:
    subject: str
    issuer: str
    serial: int
    not_before: dt.datetime
    not_after: dt.datetime

    def __post_init__(self):
        if not self.subject or not self.issuer:
            raise IssueError("common names must be non-empty")
        if self.serial <= 0 or len(codec.integer(self.serial).value) > 20:
            raise IssueError("serial must be positive and at most 20 bytes")
        if self.not_before.tzinfo is None or self.not_after.tzinfo is None:
            raise IssueError("validity timestamps must be timezone-aware")
        if not self.not_before < self.not_after:
            raise IssueError("not_before must precede not_after")


@dataclass(frozen=True)
class DeltaInfo:
    serial: int
    signature: bytes


@dataclass(frozen=True)
class ExtractedKeys:
    subject: str
    dsa_algorithm: DsaAlgorithm | None
    dsa_public: bytes | None
    kem_algorithm: KemAlgorithm | None = None
    kem_public: bytes | None = None


@dataclass(frozen=True)
class Certificate:
    scheme: CertScheme
    serial: int
    issuer: str
    subject: str
    not_before: dt.datetime
    not_after: dt.datetime
    signature_algorithm: DsaAlgorithm
    dsa_algorithm: DsaAlgorithm | None
    dsa_public: bytes | None
    kem_algorithm: KemAlgorithm | None
    kem_public: bytes | None
    delta: DeltaInfo | None
    signature: bytes = field(repr=False)
    tbs_der: bytes = field(repr=False)
    encoded: bytes = field(repr=False)

    @property
    def encoded_length(self) -> int:
        return len(self.encoded)

    @property
    def keys(self) -> ExtractedKeys:
        return ExtractedKeys(self.subject, self.dsa_algorithm, self.dsa_public,
                             self.kem_algorithm, self.kem_public)

    @property
    def self_signed(self) -> bool:
        return self.issuer == self.subject and self.scheme is CertScheme.PURE_DSA

    @classmethod
    def from_der(cls, data: bytes) -> Certificate:
        return parse(data)

    def to_pem(self) -> str:
        return to_pem(self.encoded)


def encoded_length(cert: Certificate) -> int:
    return len(cert.encoded)


# -- encoding ---------------------------------------------------------------------

def _name(common_name: str) -> Node:
    return codec.seq(codec.set_of(codec.seq(codec.oid(COMMON_NAME_OID), codec.utf8(common_name))))


def _alg_id(oid: str) -> Node:
    return codec.seq(codec.oid(oid))


def _spki(oid: str, key: bytes) -> Node:
    return codec.seq(_alg_id(oid), codec.bit_string(key))


def _extension(oid: str, value: Node) -> Node:
    return codec.seq(codec.oid(oid), codec.octet_string(codec.encode(value)))


def _tbs(serial: int, sig_alg: DsaAlgorithm, issuer: str, not_before: dt.datetime,
         not_after: dt.datetime, subject: str, spki: Node, extensions: list[Node]) -> Node:
    fields = [
        codec.explicit(0, codec.integer(2)),
        codec.integer(serial),
        _alg_id(sig_alg.oid),
        _name(issuer),
        codec.seq(codec.generalized_time(not_before), codec.generalized_time(not_after)),
        _name(subject),
        spki,
    ]
    if extensions:
        fields.append(codec.explicit(3, codec.seq(*extensions)))
    return codec.seq(*fields)


def _wrap(tbs_der: bytes, sig_alg: DsaAlgorithm, signature: bytes) -> bytes:
    return codec.encode(codec.seq(codec.decode(tbs_der), _alg_id(sig_alg.oid), codec.bit_string(signature)))


@dataclass(frozen=True)
class CaContext:
    suite: Suite
    keys: DsaKeyPair
    certificate: Certificate

    @property
    def name(self) -> str:
        return self.certificate.subject

    @property
    def public(self) -> bytes:
        return self.keys.public

    @classmethod
    def create(cls, suite: Suite, now: dt.datetime, name: str = "PQC Demo CA",
               lifetime: dt.timedelta = dt.timedelta(days=3650), keys: DsaKeyPair | None = None,
               serial: int | None = None) -> CaContext:
        """Generate a CA key pair and its self-signed pure-DSA certificate."""
        keys = keys or dsa_keygen(suite)
        template = CertTemplate(name, name, serial or random_serial(), now, now + lifetime)
        tbs = _tbs(template.serial, keys.algorithm, name, template.not_before, template.not_after,
                   name, _spki(keys.algorithm.oid, keys.public), [])
        tbs_der = codec.encode(tbs)
        cert = parse(_wrap(tbs_der, keys.algorithm, dsa_sign(keys, tbs_der)))
        return cls(suite, keys, cert)


def issue(ca: CaContext, template: CertTemplate, scheme: CertScheme,
          dsa_pk: bytes | None = None, kem_pk: bytes | None = None) -> Certificate:
    """Issue a certificate of *scheme* carrying the given subject keys.

    Dual-usage schemes need both keys, ``PURE_DSA`` only *dsa_pk*,
    ``PURE_KEM`` only *kem_pk*. Subject key algorithms follow ``ca.suite``.
    """
    needs_dsa = scheme is not CertScheme.PURE_KEM
    needs_kem = scheme is not CertScheme.PURE_DSA
    if (dsa_pk is not None) != needs_dsa or (kem_pk is not None) != needs_kem:
        raise IssueError(f"{scheme.value} certificates need "
                         + " and ".join(n for n, f in (("a DSA key", needs_dsa), ("a KEM key", needs_kem)) if f)
                         + " and nothing else")
    dsa_alg, kem_alg, ca_alg = ca.suite.dsa, ca.suite.kem, ca.keys.algorithm
    if dsa_pk is not None and len(dsa_pk) != dsa_alg.public_key_size:
        raise IssueError(f"{dsa_alg.name} public key must be {dsa_alg.public_key_size} bytes")
    if kem_pk is not None and len(kem_pk) != kem_alg.public_key_size:
        raise IssueError(f"{kem_alg.name} public key must be {kem_alg.public_key_size} bytes")

    common = (template.issuer, template.not_before, template.not_after, template.subject)
    extensions: list[Node] = []
    if scheme is CertScheme.COMPOSITE:
        spki = _spki(COMPOSITE_OIDS[(dsa_alg.name, kem_alg.name)], dsa_pk + kem_pk)
    elif scheme is CertScheme.PURE_KEM:
        spki = _spki(kem_alg.oid, kem_pk)
    else:
        spki = _spki(dsa_alg.oid, dsa_pk)
        if scheme is CertScheme.CATALYST:
            extensions.append(_extension(ALT_PUBLIC_KEY_OID, _spki(kem_alg.oid, kem_pk)))
        elif scheme is CertScheme.CHAMELEON:
            delta_serial = random_serial()
            while delta_serial == template.serial:
                delta_serial = random_serial()
            kem_spki = _spki(kem_alg.oid, kem_pk)
            delta_tbs = codec.encode(_tbs(delta_serial, ca_alg, *common, kem_spki, []))
            descriptor = codec.seq(codec.integer(delta_serial), kem_spki,
                                   codec.bit_string(dsa_sign(ca.keys, delta_tbs)))
            extensions.append(_extension(DELTA_CERTIFICATE_OID, descriptor))

    tbs_der = codec.encode(_tbs(template.serial, ca_alg, *common, spki, extensions))
    return parse(_wrap(tbs_der, ca_alg, dsa_sign(ca.keys, tbs_der)))


# -- parsing ------------------------------------------------------------------------

def _read_name(node: Node) -> str:
    rdns = node.expect(codec.SEQUENCE).children
    if len(rdns) != 1 or len(rdns[0].expect(codec.SET)) != 1:
        raise codec.InvalidValueError("name must be a single CommonName")
    attr = rdns[0][0].expect(codec.SEQUENCE)
    if len(attr) != 2 or codec.read_oid(attr[0]) != COMMON_NAME_OID:
        raise codec.InvalidValueError("name must be a single CommonName")
    return codec.read_utf8(attr[1])


def _read_alg_id(node: Node) -> str:
    if len(node.expect(codec.SEQUENCE)) != 1:
        raise codec.InvalidValueError("algorithm identifiers carry no parameters")
    return codec.read_oid(node[0])


def _read_spki(node: Node) -> tuple[str, bytes]:
    if len(node.expect(codec.SEQUENCE)) != 2:
        raise codec.InvalidValueError("bad SubjectPublicKeyInfo")
    return _read_alg_id(node[0]), codec.read_bits(node[1])


def _sized(alg, key: bytes, what: str) -> bytes:
    if len(key) != alg.public_key_size:
        raise codec.InvalidValueError(f"{what}: {alg.name} key must be {alg.public_key_size} bytes")
    return key


def _sig_alg(oid: str) -> DsaAlgorithm:
    for alg in DSA_ALGORITHMS.values():
        if alg.oid == oid:
            return alg
    raise MalformedCertificate(f"unsupported signature algorithm {oid}")


def _kem_alg(oid: str) -> KemAlgorithm:
    for alg in KEM_ALGORITHMS.values():
        if alg.oid == oid:
            return alg
    raise MalformedExtension(f"expected a KEM key, found algorithm {oid}")


def parse(data: bytes) -> Certificate:
    """Decode DER bytes into a :class:`Certificate` (no signature checks)."""
    try:
        root = codec.decode(data)
        if len(root.expect(codec.SEQUENCE)) != 3:
            raise codec.InvalidValueError("certificate must have 3 fields")
        tbs_node, outer_alg, sig_node = root.children
        fields = list(tbs_node.expect(codec.SEQUENCE).children)
        if len(fields) not in (7, 8):
            raise codec.InvalidValueError("unexpected TBS field count")
        version = fields[0].expect(codec.context(0))
        if len(version) != 1 or codec.read_integer(version[0]) != 2:
            raise codec.InvalidValueError("only v3 certificates are supported")
        serial = codec.read_integer(fields[1])
        if serial <= 0:
            raise codec.InvalidValueError("serial must be positive")
        sig_oid = _read_alg_id(fields[2])
        if _read_alg_id(outer_alg) != sig_oid:
            raise codec.InvalidValueError("signature algorithm mismatch between TBS and certificate")
        issuer = _read_name(fields[3])
        validity = fields[4].expect(codec.SEQUENCE)
        if len(validity) != 2:
            raise codec.InvalidValueError("bad validity")
        not_before, not_after = codec.read_time(validity[0]), codec.read_time(validity[1])
        subject = _read_name(fields[5])
        key_oid, key = _read_spki(fields[6])
        extensions: list[tuple[str, bytes]] = []
        if len(fields) == 8:
            ext_list = fields[7].expect(codec.context(3))
            if len(ext_list) != 1 or not len(ext_list[0].expect(codec.SEQUENCE)):
                raise codec.InvalidValueError("bad extensions")
            for ext in ext_list[0].children:
                if len(ext.expect(codec.SEQUENCE)) != 2:
                    raise codec.InvalidValueError("extensions are non-critical OID/value pairs")
                extensions.append((codec.read_oid(ext[0]), codec.read_octets(ext[1])))
        signature = codec.read_bits(sig_node)
    except codec.DecodeError as exc:
        raise MalformedCertificate(str(exc)) from exc

    sig_alg = _sig_alg(sig_oid)
    ext_oids = [oid for oid, _ in extensions]
    if len(set(ext_oids)) != len(ext_oids):
        raise MalformedExtension("duplicate extension")
    unknown = set(ext_oids) - {ALT_PUBLIC_KEY_OID, DELTA_CERTIFICATE_OID}
    if unknown:
        raise MalformedExtension(f"unsupported extension {sorted(unknown)[0]}")
    if len(extensions) > 1:
        raise MalformedExtension("alt-public-key and delta-certificate are mutually exclusive")

    dsa_alg = dsa_pk = kem_alg = kem_pk = delta = None
    try:
        if key_oid in _COMPOSITE_BY_OID:
            dsa_name, kem_name = _COMPOSITE_BY_OID[key_oid]
            dsa_alg, kem_alg = DSA_ALGORITHMS[dsa_name], KEM_ALGORITHMS[kem_name]
            if len(key) != dsa_alg.public_key_size + kem_alg.public_key_size:
                raise MalformedCertificate("composite key has the wrong length")
            dsa_pk, kem_pk = key[:dsa_alg.public_key_size], key[dsa_alg.public_key_size:]
            scheme = CertScheme.COMPOSITE
        else:
            try:
                alg = algorithm_by_oid(key_oid)
            except KeyError:
                raise UnknownScheme(f"unrecognised public key algorithm {key_oid}") from None
            if isinstance(alg, KemAlgorithm):
                kem_alg, kem_pk = alg, _sized(alg, key, "subject key")
                scheme = CertScheme.PURE_KEM
            else:
                dsa_alg, dsa_pk = alg, _sized(alg, key, "subject key")
                scheme = CertScheme.PURE_DSA
        if extensions and scheme is not CertScheme.PURE_DSA:
            raise MalformedExtension(f"{scheme.value} certificates carry no dual-usage extension")
        for ext_oid, raw in extensions:
            try:
                value = codec.decode(raw)
                if ext_oid == ALT_PUBLIC_KEY_OID:
                    alt_oid, alt_key = _read_spki(value)
                    kem_alg = _kem_alg(alt_oid)
                    kem_pk = _sized(kem_alg, alt_key, "alt public key")
                    scheme = CertScheme.CATALYST
                else:
                    if len(value.expect(codec.SEQUENCE)) != 3:
                        raise codec.InvalidValueError("bad delta certificate descriptor")
                    delta_serial = codec.read_integer(value[0])
                    if delta_serial <= 0:
                        raise codec.InvalidValueError("delta serial must be positive")
                    alt_oid, alt_key = _read_spki(value[1])
                    kem_alg = _kem_alg(alt_oid)
                    kem_pk = _sized(kem_alg, alt_key, "delta certificate key")
                    delta = DeltaInfo(delta_serial, codec.read_bits(value[2]))
                    scheme = CertScheme.CHAMELEON
            except codec.DecodeError as exc:
                raise MalformedExtension(str(exc)) from exc
    except codec.DecodeError as exc:
        raise MalformedCertificate(str(exc)) from exc

    return Certificate(
        scheme=scheme, serial=serial, issuer=issuer, subject=subject,
        not_before=not_before, not_after=not_after, signature_algorithm=sig_alg,
        dsa_algorithm=dsa_alg, dsa_public=dsa_pk, kem_algorithm=kem_alg, kem_public=kem_pk,
        delta=delta, signature=signature, tbs_der=codec.encode(tbs_node), encoded=bytes(data),
    )


def delta_tbs(cert: Certificate) -> bytes:
    """Rebuild the TBS of a chameleon certificate's embedded delta certificate."""
    if cert.delta is None:
        raise ValueError("not a chameleon certificate")
    return codec.encode(_tbs(cert.delta.serial, cert.signature_algorithm, cert.issuer, cert.not_before,
                             cert.not_after, cert.subject, _spki(cert.kem_algorithm.oid, cert.kem_public), []))


def validate(cert: Certificate, ca_public: bytes, now: dt.datetime) -> ExtractedKeys:
    """Check CA signature(s) and validity window, then return the subject keys.

    Chameleon certificates carry two CA signatures; both must verify.
    """
    alg = cert.signature_algorithm
    if not dsa_verify(alg, ca_public, cert.tbs_der, cert.signature):
        raise BadCaSignature(f"CA signature on {cert.subject!r} ({cert.scheme.value}) does not verify")
    if cert.delta is not None and not dsa_verify(alg, ca_public, delta_tbs(cert), cert.delta.signature):
        raise BadCaSignature(f"CA signature on the delta certificate of {cert.subject!r} does not verify")
    if now > cert.not_after:
        raise Expired(f"certificate for {cert.subject!r} expired at {cert.not_after.isoformat()}")
    if now < cert.not_before:
        raise NotYetValid(f"certificate for {cert.subject!r} is valid from {cert.not_before.isoformat()}")
    return cert.keys


# -- armor ----------------------------------------------------------------------------

def to_pem(der: bytes, label: str = PEM_LABEL) -> str:
    body = base64.b64encode(der).decode("ascii")
    lines = [body[i:i + 64] for i in range(0, len(body), 64)]
    return "\n".join([f"-----BEGIN {label}-----", *lines, f"-----END {label}-----"]) + "\n"


def from_pem(text: str, label: str = PEM_LABEL) -> bytes:
    begin, end = f"-----BEGIN {label}-----", f"-----END {label}-----"
    try:
        start = text.index(begin) + len(begin)
        stop = text.index(end, start)
    except ValueError:
        raise MalformedCertificate(f"no {label} block found") from None
    try:
        return base64.b64decode("".join(text[start:stop].split()), validate=True)
    except binascii.Error as exc:
        raise MalformedCertificate(f"bad base64: {exc}") from None


def load_certificate(data: bytes) -> Certificate:
    """Parse either PEM-armored or raw DER certificate bytes."""
    if data.lstrip().startswith(b"-----BEGIN"):
        return parse(from_pem(data.decode("ascii", "replace")))
    return parse(data)
