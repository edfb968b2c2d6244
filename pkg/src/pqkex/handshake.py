"""Initiator and responder state machines for the three-message key exchange.

::

    Alice                                   Bob
    R1 = kepReq(t1, certs_A, s1)      --->
                                      <---  R2 = kepResp(t2, h1, c_B, certs_B, s2)
    R3 = kepAck(t3, h2, c_A, s3)      --->
    k = r_A xor r_B                         k = r_A xor r_B

``h1``/``h2`` are HashedId8 values of R1/R2; ``c_B`` encapsulates ``r_B``
to Alice's KEM key and ``c_A`` encapsulates ``r_A`` to Bob's.
"""

from __future__ import annotations

import collections
import datetime as dt
import enum
import threading
from dataclasses import dataclass, field
from typing import Callable

from . import messages
from .certificates import CaContext, Certificate, CertScheme, CertTemplate, ExtractedKeys, issue, random_serial
from .messages import (
    DEFAULT_FRESHNESS,
    ContentInfo,
    MessageError,
    MessageType,
    SignedData,
)
from .suite import (
    CryptoError,
    DsaKeyPair,
    KemKeyPair,
    Suite,
    constant_time_equal,
    dsa_keygen,
    kem_decapsulate,
    kem_encapsulate,
    kem_keygen,
)

SESSION_KEY_SIZE = 32


class Method(enum.Enum):
    """Credential layout: one dual-usage certificate, or pure certificates."""

    COMPOSITE = "composite"
    CATALYST = "catalyst"
    CHAMELEON = "chameleon"
    COMPARED = "compared"

    @property
    def scheme(self) -> CertScheme | None:
        return None if self is Method.COMPARED else CertScheme(self.value)


class HandshakeError(MessageError):
    pass


class UnexpectedMessage(HandshakeError):
    pass


class MismatchedRequestId(HandshakeError):
    pass


class UnknownResponseId(HandshakeError):
    pass


class CredentialError(ValueError):
    pass


# -- credentials ----------------------------------------------------------------

@dataclass(frozen=True)
class Credential:
    method: Method
    dsa_keys: DsaKeyPair
    kem_keys: KemKeyPair
    certificates: tuple[Certificate, ...]
    ca_certificate: Certificate | None = None  # sent along when set

    def __post_init__(self):
        certs = self.certificates
        if self.method is Method.COMPARED:
            schemes = [c.scheme for c in certs]
            if schemes != [CertScheme.PURE_DSA, CertScheme.PURE_KEM]:
                raise CredentialError("pure credentials hold a pure-DSA then a pure-KEM certificate")
        elif len(certs) != 1 or certs[0].scheme is not self.method.scheme:
            raise CredentialError(f"{self.method.value} credentials hold one {self.method.value} certificate")
        if next(c.dsa_public for c in certs if c.dsa_public) != self.dsa_keys.public:
            raise CredentialError("certificate DSA key does not match the held key pair")
        if next(c.kem_public for c in certs if c.kem_public) != self.kem_keys.public:
            raise CredentialError("certificate KEM key does not match the held key pair")

    @property
    def subject(self) -> str:
        return self.certificates[0].subject

    def certificates_for(self, message_type: MessageType) -> list[Certificate]:
        """Certificates to attach; a pure-mode ack carries only the DSA certificate."""
        certs = list(self.certificates)
        if message_type is MessageType.KEP_ACK and self.method is Method.COMPARED:
            certs = certs[:1]
        if self.ca_certificate is not None:
            certs.insert(0, self.ca_certificate)
        return certs

    def matches(self, suite: Suite) -> bool:
        return self.dsa_keys.algorithm == suite.dsa and self.kem_keys.algorithm == suite.kem

    @classmethod
    def issue(cls, ca: CaContext, subject: str, method: Method, now: dt.datetime,
              lifetime: dt.timedelta = dt.timedelta(days=365), dsa_keys: DsaKeyPair | None = None,
              kem_keys: KemKeyPair | None = None, include_ca_certificate: bool = False) -> Credential:
        """Generate (or reuse) key pairs and have *ca* certify them for *method*."""
        dsa_keys = dsa_keys or dsa_keygen(ca.suite)
        kem_keys = kem_keys or kem_keygen(ca.suite)

        def template():
            return CertTemplate(subject, ca.name, random_serial(), now, now + lifetime)

        if method is Method.COMPARED:
            certs = (
                issue(ca, template(), CertScheme.PURE_DSA, dsa_pk=dsa_keys.public),
                issue(ca, template(), CertScheme.PURE_KEM, kem_pk=kem_keys.public),
            )
        else:
            certs = (issue(ca, template(), method.scheme, dsa_keys.public, kem_keys.public),)
        return cls(method, dsa_keys, kem_keys, certs, ca.certificate if include_ca_certificate else None)


# -- session key --------------------------------------------------------------------

def derive_session_key(r_a: bytes, r_b: bytes) -> bytes:
    """k = r_A xor r_B."""
    if len(r_a) != SESSION_KEY_SIZE or len(r_b) != SESSION_KEY_SIZE:
        raise ValueError("both shared secrets must be 32 bytes")
    return bytes(a ^ b for a, b in zip(r_a, r_b))


KeyDerivation = Callable[[bytes, bytes], bytes]


# -- responder session table -----------------------------------------------------------

@dataclass(frozen=True)
class ResponderSession:
    request_id: bytes
    response_id: bytes
    peer_keys: ExtractedKeys
    local_secret: bytes = field(repr=False)
    created_at: dt.datetime = None


class SessionTable:
    """Pending responder sessions keyed by response id (h2).

    Entries expire after *expiry*; inserting at capacity evicts the oldest.
    All operations take one lock, so :meth:`consume` is linearizable.
    """

    def __init__(self, capacity: int = 65536, expiry: dt.timedelta = dt.timedelta(seconds=600)):
        if capacity < 1:
            raise ValueError("capacity must be positive")
        self.capacity = capacity
        self.expiry = expiry
        self._entries: collections.OrderedDict[bytes, ResponderSession] = collections.OrderedDict()
        self._lock = threading.Lock()

    def __len__(self):
        with self._lock:
            return len(self._entries)

    def __contains__(self, response_id: bytes):
        with self._lock:
            return response_id in self._entries

    def _purge(self, now: dt.datetime) -> None:
        while self._entries:
            oldest = next(iter(self._entries.values()))
            if now - oldest.created_at <= self.expiry:
                break
            self._entries.popitem(last=False)

    def put(self, session: ResponderSession, now: dt.datetime) -> None:
        with self._lock:
            self._purge(now)
            self._entries.pop(session.response_id, None)
            while len(self._entries) >= self.capacity:
                self._entries.popitem(last=False)
            self._entries[session.response_id] = session

    def get(self, response_id: bytes, now: dt.datetime) -> ResponderSession | None:
        with self._lock:
            self._purge(now)
            return self._entries.get(response_id)

    def consume(self, session: ResponderSession) -> bool:
        """Remove *session* if it is still present; False if someone else got it first."""
        with self._lock:
            if self._entries.get(session.response_id) is not session:
                return False
            del self._entries[session.response_id]
            return True


# -- initiator ---------------------------------------------------------------------------

class State(enum.Enum):
    STARTED = "started"
    COMPLETED = "completed"
    FAILED = "failed"


@dataclass
class InitiatorSession:
    credential: Credential
    suite: Suite
    sent_request: SignedData
    state: State = State.STARTED
    result: bytes | None = field(default=None, repr=False)

    @property
    def request_id(self) -> bytes:
        return self.sent_request.message_id


def _check_suite(credential: Credential, suite: Suite) -> None:
    if not credential.matches(suite):
        raise CredentialError(f"credential keys are not {suite}")


def initiator_start(credential: Credential, suite: Suite, now: dt.datetime) -> tuple[InitiatorSession, SignedData]:
    _check_suite(credential, suite)
    r1 = messages.build(MessageType.KEP_REQ, ContentInfo(MessageType.KEP_REQ),
                        credential.certificates_for(MessageType.KEP_REQ), credential.dsa_keys, now)
    return InitiatorSession(credential, suite, r1), r1


def _as_message(msg: SignedData | bytes) -> SignedData:
    return msg if isinstance(msg, SignedData) else messages.parse(msg)


def _expect(msg: SignedData, message_type: MessageType) -> None:
    if msg.message_type is not message_type:
        raise UnexpectedMessage(f"expected {message_type.value}, got {msg.message_type.value}")


def _peer_kem(keys: ExtractedKeys, credential: Credential):
    if keys.kem_public is None:
        raise messages.CertInvalid(f"{keys.subject!r} presented no KEM key")
    if keys.kem_algorithm != credential.kem_keys.algorithm:
        raise messages.CertInvalid(f"peer uses {keys.kem_algorithm.name}, expected {credential.kem_keys.algorithm.name}")
    return keys.kem_algorithm, keys.kem_public


def _decapsulate(credential: Credential, ct: bytes) -> bytes:
    try:
        return kem_decapsulate(credential.kem_keys, ct)
    except CryptoError as exc:
        raise messages.MalformedMessage(str(exc)) from exc


def responder_on_request(r1: SignedData | bytes, credential: Credential, table: SessionTable,
                         ca_public: bytes, now: dt.datetime,
                         freshness_window: dt.timedelta = DEFAULT_FRESHNESS) -> SignedData:
    """Verify R1, encapsulate r_B to the initiator and answer with R2.

    The table is only touched after everything has succeeded.
    """
    r1 = _as_message(r1)
    _expect(r1, MessageType.KEP_REQ)
    verified = messages.verify(r1, ca_public, now, freshness_window)
    kem_alg, kem_pk = _peer_kem(verified.keys, credential)
    c_b, r_b = kem_encapsulate(kem_alg, kem_pk)
    h1 = r1.message_id
    r2 = messages.build(MessageType.KEP_RESP, ContentInfo(MessageType.KEP_RESP, c_b, h1),
                        credential.certificates_for(MessageType.KEP_RESP), credential.dsa_keys, now)
    table.put(ResponderSession(h1, r2.message_id, verified.keys, r_b, now), now)
    return r2


def initiator_on_response(session: InitiatorSession, r2: SignedData | bytes, ca_public: bytes,
                          now: dt.datetime, freshness_window: dt.timedelta = DEFAULT_FRESHNESS,
                          kdf: KeyDerivation = derive_session_key) -> tuple[SignedData, bytes]:
    """Verify R2 against our own R1, recover r_B, send r_A in R3 and derive k."""
    if session.state is not State.STARTED:
        raise HandshakeError(f"session is {session.state.value}")
    try:
        r2 = _as_message(r2)
        _expect(r2, MessageType.KEP_RESP)
        verified = messages.verify(r2, ca_public, now, freshness_window)
        if not constant_time_equal(r2.content.peer_message_id, session.request_id):
            raise MismatchedRequestId("response does not answer our request")
        kem_alg, kem_pk = _peer_kem(verified.keys, session.credential)
        r_b = _decapsulate(session.credential, r2.content.payload)
        c_a, r_a = kem_encapsulate(kem_alg, kem_pk)
        r3 = messages.build(MessageType.KEP_ACK, ContentInfo(MessageType.KEP_ACK, c_a, r2.message_id),
                            session.credential.certificates_for(MessageType.KEP_ACK),
                            session.credential.dsa_keys, now)
        key = kdf(r_a, r_b)
    except Exception:
        session.state = State.FAILED
        raise
    session.state, session.result = State.COMPLETED, key
    return r3, key


def responder_on_ack(r3: SignedData | bytes, credential: Credential, table: SessionTable,
                     ca_public: bytes, now: dt.datetime,
                     freshness_window: dt.timedelta = DEFAULT_FRESHNESS,
                     kdf: KeyDerivation = derive_session_key) -> bytes:
    """Find the pending session by h2, check s3 under the stored initiator key, derive k.

    The pending entry is consumed only on success.
    """
    r3 = _as_message(r3)
    _expect(r3, MessageType.KEP_ACK)
    pending = table.get(r3.content.peer_message_id, now)
    if pending is None:
        raise UnknownResponseId(f"no pending response {r3.content.peer_message_id.hex()}")
    messages.verify(r3, ca_public, now, freshness_window, expected_signer=pending.peer_keys)
    r_a = _decapsulate(credential, r3.content.payload)
    key = kdf(r_a, pending.local_secret)
    if not table.consume(pending):
        raise UnknownResponseId(f"response {pending.response_id.hex()} was already redeemed")
    return key


# -- convenience ---------------------------------------------------------------------------

@dataclass(frozen=True)
class Transcript:
    r1: SignedData
    r2: SignedData
    r3: SignedData
    initiator_key: bytes = field(repr=False)
    responder_key: bytes = field(repr=False)


def run_handshake(initiator: Credential, responder: Credential, suite: Suite, ca_public: bytes,
                  now: dt.datetime, table: SessionTable | None = None) -> Transcript:
    """Run one honest in-memory exchange (used by tests and the benchmark)."""
    table = table if table is not None else SessionTable()
    session, r1 = initiator_start(initiator, suite, now)
    r2 = responder_on_request(r1.encoded, responder, table, ca_public, now)
    r3, k_a = initiator_on_response(session, r2.encoded, ca_public, now)
    k_b = responder_on_ack(r3.encoded, responder, table, ca_public, now)
    return Transcript(r1, r2, r3, k_a, k_b)
