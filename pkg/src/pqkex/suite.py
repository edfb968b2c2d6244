"""Algorithm suites and the PQC primitive seam.

Everything above this module talks to signatures, KEMs, the SHAKE-256 hash
and the demo AEAD through the functions defined here. The actual lattice and
hash-based arithmetic comes from a :class:`Provider`; the bundled one wraps
``pqcrypto``. A different (e.g. certified) implementation can be installed
with :func:`set_provider` without touching the protocol code.
"""

from __future__ import annotations

import contextlib
import contextvars
import enum
import hashlib
import hmac
from dataclasses import dataclass, field
from typing import Iterator, Protocol

from cryptography.exceptions import InvalidTag
from cryptography.hazmat.primitives.ciphers.aead import AESGCM

import pqcrypto


class SecurityLevel(enum.Enum):
    L1 = 1
    L3 = 3
    L5 = 5


class DsaFamily(enum.Enum):
    MLDSA = "mldsa"
    SLHDSA_SMALL = "slhdsa-s"
    SLHDSA_FAST = "slhdsa-f"


@dataclass(frozen=True)
class DsaAlgorithm:
    name: str
    oid: str
    level: SecurityLevel
    family: DsaFamily
    public_key_size: int
    private_key_size: int
    signature_size: int
    backend: str
    tag: bytes


@dataclass(frozen=True)
class KemAlgorithm:
    name: str
    oid: str
    level: SecurityLevel
    public_key_size: int
    private_key_size: int
    ciphertext_size: int
    backend: str
    tag: bytes
    shared_secret_size: int = 32


# Sizes from the FIPS 203/204/205 parameter tables. They are checked
# against the provider at runtime, never read from it.
_NIST_SIG = "2.16.840.1.101.3.4.3."
_NIST_KEM = "2.16.840.1.101.3.4.4."

DSA_ALGORITHMS: dict[str, DsaAlgorithm] = {
    a.name: a
    for a in (
        DsaAlgorithm("ML-DSA-44", _NIST_SIG + "17", SecurityLevel.L1, DsaFamily.MLDSA,
                     1312, 2560, 2420, "ml_dsa_44", b"MLDSA44 "),
        DsaAlgorithm("ML-DSA-65", _NIST_SIG + "18", SecurityLevel.L3, DsaFamily.MLDSA,
                     1952, 4032, 3309, "ml_dsa_65", b"MLDSA65 "),
        DsaAlgorithm("ML-DSA-87", _NIST_SIG + "19", SecurityLevel.L5, DsaFamily.MLDSA,
                     2592, 4896, 4627, "ml_dsa_87", b"MLDSA87 "),
        DsaAlgorithm("SLH-DSA-128s", _NIST_SIG + "20", SecurityLevel.L1, DsaFamily.SLHDSA_SMALL,
                     32, 64, 7856, "slh_dsa_sha2_128s", b"SLH128S "),
        DsaAlgorithm("SLH-DSA-128f", _NIST_SIG + "21", SecurityLevel.L1, DsaFamily.SLHDSA_FAST,
                     32, 64, 17088, "slh_dsa_sha2_128f", b"SLH128F "),
        DsaAlgorithm("SLH-DSA-192s", _NIST_SIG + "22", SecurityLevel.L3, DsaFamily.SLHDSA_SMALL,
                     48, 96, 16224, "slh_dsa_sha2_192s", b"SLH192S "),
        DsaAlgorithm("SLH-DSA-192f", _NIST_SIG + "23", SecurityLevel.L3, DsaFamily.SLHDSA_FAST,
                     48, 96, 35664, "slh_dsa_sha2_192f", b"SLH192F "),
        DsaAlgorithm("SLH-DSA-256s", _NIST_SIG + "24", SecurityLevel.L5, DsaFamily.SLHDSA_SMALL,
                     64, 128, 29792, "slh_dsa_sha2_256s", b"SLH256S "),
        DsaAlgorithm("SLH-DSA-256f", _NIST_SIG + "25", SecurityLevel.L5, DsaFamily.SLHDSA_FAST,
                     64, 128, 49856, "slh_dsa_sha2_256f", b"SLH256F "),
    )
}

KEM_ALGORITHMS: dict[str, KemAlgorithm] = {
    a.name: a
    for a in (
        KemAlgorithm("ML-KEM-512", _NIST_KEM + "1", SecurityLevel.L1, 800, 1632, 768,
                     "ml_kem_512", b"MLKEM512"),
        KemAlgorithm("ML-KEM-768", _NIST_KEM + "2", SecurityLevel.L3, 1184, 2400, 1088,
                     "ml_kem_768", b"MLKEM768"),
        KemAlgorithm("ML-KEM-1024", _NIST_KEM + "3", SecurityLevel.L5, 1568, 3168, 1568,
                     "ml_kem_1024", b"MLKEM1K "),
    )
}

SHAKE256_OID = "2.16.840.1.101.3.4.2.12"

_KEM_BY_LEVEL = {a.level: a for a in KEM_ALGORITHMS.values()}
_DSA_BY_LEVEL_FAMILY = {(a.level, a.family): a for a in DSA_ALGORITHMS.values()}


@dataclass(frozen=True)
class Suite:
    level: SecurityLevel
    dsa: DsaAlgorithm
    kem: KemAlgorithm

    def __post_init__(self):
        if self.dsa.level != self.level or self.kem.level != self.level:
            raise ValueError(f"{self.dsa.name} and {self.kem.name} are not both level {self.level.value}")

    @property
    def family(self) -> DsaFamily:
        return self.dsa.family

    @property
    def label(self) -> str:
        """Short CLI name, e.g. ``l3-mldsa``."""
        return f"l{self.level.value}-{self.family.value}"

    def __str__(self):
        return f"{self.dsa.name} + {self.kem.name}"


def suite_for(level: SecurityLevel, family: DsaFamily) -> Suite:
    return Suite(level, _DSA_BY_LEVEL_FAMILY[(level, family)], _KEM_BY_LEVEL[level])


def all_suites() -> list[Suite]:
    return [suite_for(level, family) for family in DsaFamily for level in SecurityLevel]


def parse_suite(label: str) -> Suite:
    """Inverse of :attr:`Suite.label`."""
    try:
        lvl, fam = label.lower().split("-", 1)
        return suite_for(SecurityLevel(int(lvl.lstrip("l"))), DsaFamily(fam))
    except (ValueError, KeyError):
        choices = ", ".join(s.label for s in all_suites())
        raise ValueError(f"unknown suite {label!r} (choose from {choices})") from None


def algorithm_by_tag(tag: bytes) -> DsaAlgorithm | KemAlgorithm:
    for alg in (*DSA_ALGORITHMS.values(), *KEM_ALGORITHMS.values()):
        if alg.tag == tag:
            return alg
    raise KeyError(f"unknown algorithm tag {tag!r}")


def algorithm_by_oid(oid: str) -> DsaAlgorithm | KemAlgorithm:
    for alg in (*DSA_ALGORITHMS.values(), *KEM_ALGORITHMS.values()):
        if alg.oid == oid:
            return alg
    raise KeyError(f"unknown algorithm OID {oid}")


# -- key material -----------------------------------------------------------

@dataclass(frozen=True)
class DsaKeyPair:
    algorithm: DsaAlgorithm
    public: bytes
    private: bytes = field(repr=False)


@dataclass(frozen=True)
class KemKeyPair:
    algorithm: KemAlgorithm
    public: bytes
    private: bytes = field(repr=False)


# -- provider seam ------------------------------------------------------------

class Provider(Protocol):
    def dsa_keygen(self, alg: DsaAlgorithm) -> tuple[bytes, bytes]: ...
    def dsa_sign(self, alg: DsaAlgorithm, private: bytes, message: bytes) -> bytes: ...
    def dsa_verify(self, alg: DsaAlgorithm, public: bytes, message: bytes, sig: bytes) -> bool: ...
    def kem_keygen(self, alg: KemAlgorithm) -> tuple[bytes, bytes]: ...
    def kem_encapsulate(self, alg: KemAlgorithm, public: bytes) -> tuple[bytes, bytes]: ...
    def kem_decapsulate(self, alg: KemAlgorithm, private: bytes, ct: bytes) -> bytes: ...


class PqcryptoProvider:
    """Default provider backed by the PQClean-derived ``pqcrypto`` wheels.

    All randomness is drawn by the backend from the OS CSPRNG.
    """

    def _mod(self, alg):
        return getattr(pqcrypto, alg.backend)

    def dsa_keygen(self, alg):
        pk, sk = self._mod(alg).keygen()
        return bytes(pk), bytes(sk)

    def dsa_sign(self, alg, private, message):
        return bytes(self._mod(alg).sign(private, message))

    def dsa_verify(self, alg, public, message, sig):
        try:
            self._mod(alg).verify(public, message, sig)
        except (pqcrypto.InvalidSignatureError, ValueError):
            return False
        return True

    def kem_keygen(self, alg):
        pk, sk = self._mod(alg).keygen()
        return bytes(pk), bytes(sk)

    def kem_encapsulate(self, alg, public):
        ct, ss = self._mod(alg).encaps(public)
        return bytes(ct), bytes(ss)

    def kem_decapsulate(self, alg, private, ct):
        return bytes(self._mod(alg).decaps(private, ct))


_provider: Provider = PqcryptoProvider()


def set_provider(provider: Provider) -> Provider:
    """Install *provider* and return the previous one."""
    global _provider
    previous, _provider = _provider, provider
    return previous


def get_provider() -> Provider:
    return _provider


# -- verification counter -----------------------------------------------------

class VerifyCounter:
    def __init__(self):
        self.count = 0


_counter: contextvars.ContextVar[VerifyCounter | None] = contextvars.ContextVar(
    "pqkex_verify_counter", default=None
)


@contextlib.contextmanager
def count_verifications() -> Iterator[VerifyCounter]:
    """Count every :func:`dsa_verify` call made inside the block (this context only)."""
    counter = VerifyCounter()
    token = _counter.set(counter)
    try:
        yield counter
    finally:
        _counter.reset(token)


# -- operations -----------------------------------------------------------------

class CryptoError(Exception):
    pass


def dsa_keygen(suite_or_alg: Suite | DsaAlgorithm) -> DsaKeyPair:
    alg = suite_or_alg.dsa if isinstance(suite_or_alg, Suite) else suite_or_alg
    pk, sk = _provider.dsa_keygen(alg)
    if len(pk) != alg.public_key_size or len(sk) != alg.private_key_size:
        raise CryptoError(f"{alg.name}: provider returned keys of unexpected size")
    return DsaKeyPair(alg, pk, sk)


def kem_keygen(suite_or_alg: Suite | KemAlgorithm) -> KemKeyPair:
    alg = suite_or_alg.kem if isinstance(suite_or_alg, Suite) else suite_or_alg
    pk, sk = _provider.kem_keygen(alg)
    if len(pk) != alg.public_key_size or len(sk) != alg.private_key_size:
        raise CryptoError(f"{alg.name}: provider returned keys of unexpected size")
    return KemKeyPair(alg, pk, sk)


def dsa_sign(keys: DsaKeyPair, message: bytes) -> bytes:
    sig = _provider.dsa_sign(keys.algorithm, keys.private, message)
    if len(sig) != keys.algorithm.signature_size:
        raise CryptoError(f"{keys.algorithm.name}: signature of unexpected size {len(sig)}")
    return sig


def dsa_verify(alg: DsaAlgorithm, public: bytes, message: bytes, sig: bytes) -> bool:
    """Return True iff *sig* is a valid signature; malformed lengths simply reject."""
    counter = _counter.get()
    if counter is not None:
        counter.count += 1
    if len(public) != alg.public_key_size or len(sig) != alg.signature_size:
        return False
    return _provider.dsa_verify(alg, public, message, sig)


def kem_encapsulate(alg: KemAlgorithm, public: bytes) -> tuple[bytes, bytes]:
    """Return ``(ciphertext, shared_secret)`` for *public*."""
    if len(public) != alg.public_key_size:
        raise CryptoError(f"{alg.name}: public key must be {alg.public_key_size} bytes")
    return _provider.kem_encapsulate(alg, public)


def kem_decapsulate(keys: KemKeyPair, ct: bytes) -> bytes:
    alg = keys.algorithm
    if len(ct) != alg.ciphertext_size:
        raise CryptoError(f"{alg.name}: ciphertext must be {alg.ciphertext_size} bytes, got {len(ct)}")
    return _provider.kem_decapsulate(alg, keys.private, ct)


def shake256(data: bytes, out_len: int = 32) -> bytes:
    return hashlib.shake_256(data).digest(out_len)


def hashed_id8(data: bytes) -> bytes:
    return shake256(data, 32)[-8:]


# -- demo AEAD --------------------------------------------------------------------

AEAD_KEY_SIZE = 32
AEAD_NONCE_SIZE = 12
AEAD_TAG_SIZE = 16


class AeadError(Exception):
    pass


def aead_seal(key: bytes, nonce: bytes, plaintext: bytes, aad: bytes = b"") -> bytes:
    if len(key) != AEAD_KEY_SIZE or len(nonce) != AEAD_NONCE_SIZE:
        raise ValueError("AES-256-GCM needs a 32-byte key and a 12-byte nonce")
    return AESGCM(key).encrypt(nonce, plaintext, aad)


def aead_open(key: bytes, nonce: bytes, ciphertext: bytes, aad: bytes = b"") -> bytes:
    if len(key) != AEAD_KEY_SIZE or len(nonce) != AEAD_NONCE_SIZE:
        raise ValueError("AES-256-GCM needs a 32-byte key and a 12-byte nonce")
    try:
        return AESGCM(key).decrypt(nonce, ciphertext, aad)
    except InvalidTag:
        raise AeadError("authentication failed") from None


def constant_time_equal(a: bytes, b: bytes) -> bool:
    return hmac.compare_digest(a, b)
