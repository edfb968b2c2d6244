"""Post-quantum bidirectional-authentication key exchange toolkit."""

from .certificates import CaContext, Certificate, CertScheme, CertTemplate, issue, validate
from .handshake import (
    Credential,
    Method,
    SessionTable,
    derive_session_key,
    initiator_on_response,
    initiator_start,
    responder_on_ack,
    responder_on_request,
    run_handshake,
)
from .messages import ContentInfo, MessageType, SignedData
from .suite import DsaFamily, SecurityLevel, Suite, all_suites, suite_for

__version__ = "0.1.0"

__all__ = [
    "CaContext", "Certificate", "CertScheme", "CertTemplate", "issue", "validate",
    "Credential", "Method", "SessionTable", "derive_session_key", "initiator_on_response",
    "initiator_start", "responder_on_ack", "responder_on_request", "run_handshake",
    "ContentInfo", "MessageType", "SignedData",
    "DsaFamily", "SecurityLevel", "Suite", "all_suites", "suite_for",
]
