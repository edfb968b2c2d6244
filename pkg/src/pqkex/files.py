"""On-disk formats for keys, certificates and credentials.

Key file: 8-byte ASCII algorithm tag, then the private key, then the public
key, both raw. Sizes are fixed by the tag, so no further framing is needed.
"""

from __future__ import annotations

import os
from pathlib import Path

from .certificates import CaContext, Certificate, load_certificate, validate
from .handshake import Credential, Method
from .suite import (
    DsaAlgorithm,
    DsaKeyPair,
    KemAlgorithm,
    KemKeyPair,
    Suite,
    algorithm_by_tag,
    suite_for,
)

TAG_SIZE = 8


class KeyFileError(ValueError):
    pass


def encode_key_pair(keys: DsaKeyPair | KemKeyPair) -> bytes:
    return keys.algorithm.tag + keys.private + keys.public


def decode_key_pair(data: bytes) -> DsaKeyPair | KemKeyPair:
    try:
        alg = algorithm_by_tag(data[:TAG_SIZE])
    except KeyError as exc:
        raise KeyFileError(str(exc)) from None
    if len(data) != TAG_SIZE + alg.private_key_size + alg.public_key_size:
        raise KeyFileError(f"{alg.name} key file must be {TAG_SIZE + alg.private_key_size + alg.public_key_size} bytes")
    private = data[TAG_SIZE:TAG_SIZE + alg.private_key_size]
    public = data[TAG_SIZE + alg.private_key_size:]
    cls = DsaKeyPair if isinstance(alg, DsaAlgorithm) else KemKeyPair
    return cls(alg, public, private)


def write_private(path: Path, data: bytes) -> None:
    path.parent.mkdir(parents=True, exist_ok=True)
    fd = os.open(path, os.O_WRONLY | os.O_CREAT | os.O_TRUNC, 0o600)
    with os.fdopen(fd, "wb") as fh:
        fh.write(data)


def key_paths(prefix: str | Path) -> tuple[Path, Path]:
    prefix = str(prefix)
    return Path(prefix + ".dsa.key"), Path(prefix + ".kem.key")


def save_key_pairs(prefix: str | Path, dsa: DsaKeyPair, kem: KemKeyPair | None = None) -> list[Path]:
    dsa_path, kem_path = key_paths(prefix)
    write_private(dsa_path, encode_key_pair(dsa))
    written = [dsa_path]
    if kem is not None:
        write_private(kem_path, encode_key_pair(kem))
        written.append(kem_path)
    return written


def load_key_pair(path: str | Path, kind: type) -> DsaKeyPair | KemKeyPair:
    keys = decode_key_pair(Path(path).read_bytes())
    if not isinstance(keys, kind):
        raise KeyFileError(f"{path} does not hold a {'DSA' if kind is DsaKeyPair else 'KEM'} key")
    return keys


def load_cert(path: str | Path) -> Certificate:
    return load_certificate(Path(path).read_bytes())


def save_cert(path: str | Path, cert: Certificate, pem: bool = True) -> None:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    if pem:
        path.write_text(cert.to_pem())
    else:
        path.write_bytes(cert.encoded)


def suite_of(dsa: DsaAlgorithm, kem: KemAlgorithm | None = None) -> Suite:
    suite = suite_for(dsa.level, dsa.family)
    if kem is not None and kem != suite.kem:
        raise KeyFileError(f"{dsa.name} and {kem.name} do not form a suite")
    return suite


def load_ca(prefix: str | Path) -> CaContext:
    keys = load_key_pair(key_paths(prefix)[0], DsaKeyPair)
    cert = load_cert(str(prefix) + ".crt")
    if cert.dsa_public != keys.public or not cert.self_signed:
        raise KeyFileError("CA certificate does not match the CA key")
    return CaContext(suite_of(keys.algorithm), keys, cert)


def load_credential(key_prefix: str | Path, cert_paths: list[str | Path],
                    ca_cert: Certificate | None = None) -> tuple[Credential, Suite]:
    """Load a credential; the method follows from the certificate schemes."""
    dsa_path, kem_path = key_paths(key_prefix)
    dsa = load_key_pair(dsa_path, DsaKeyPair)
    kem = load_key_pair(kem_path, KemKeyPair)
    certs = sorted((load_cert(p) for p in cert_paths), key=lambda c: c.scheme.value)
    if len(certs) == 2:
        method = Method.COMPARED
    elif len(certs) == 1 and certs[0].scheme.dual_usage:
        method = Method(certs[0].scheme.value)
    else:
        raise KeyFileError("need one dual-usage certificate or a pure-dsa + pure-kem pair")
    return Credential(method, dsa, kem, tuple(certs), ca_cert), suite_of(dsa.algorithm, kem.algorithm)


def self_check(credential: Credential, ca_public: bytes, now) -> None:
    """Raise if any certificate of *credential* does not validate under the CA."""
    for cert in credential.certificates:
        validate(cert, ca_public, now)
