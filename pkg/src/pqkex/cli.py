"""Command line front end: ``pqkex <command> ...``.

Usage errors exit with status 2, operational failures with status 1.
"""

from __future__ import annotations

import argparse
import datetime as dt
import json
import logging
import sys
import threading
from pathlib import Path

from . import bench, codec, files, messages, net
from .certificates import (
    CaContext,
    CertificateError,
    CertScheme,
    CertTemplate,
    Certificate,
    IssueError,
    issue,
    load_certificate,
    random_serial,
    validate,
)
from .handshake import CredentialError
from .messages import MessageError
from .suite import CryptoError, DsaFamily, DsaKeyPair, dsa_keygen, kem_keygen, parse_suite


def _now() -> dt.datetime:
    return dt.datetime.now(dt.timezone.utc)


def _parse_time(text: str) -> dt.datetime:
    when = dt.datetime.fromisoformat(text.replace("Z", "+00:00"))
    return when if when.tzinfo else when.replace(tzinfo=dt.timezone.utc)


def _address(text: str) -> tuple[str, int]:
    host, _, port = text.rpartition(":")
    if not port.isdigit():
        raise argparse.ArgumentTypeError(f"expected HOST:PORT, got {text!r}")
    return host or "127.0.0.1", int(port)


def _emit(args, data: dict, text: str) -> None:
    print(json.dumps(data, indent=2, sort_keys=True) if args.json else text)


# -- key and certificate commands ------------------------------------------------------------

def cmd_keygen(args) -> int:
    suite = parse_suite(args.suite)
    dsa, kem = dsa_keygen(suite), kem_keygen(suite)
    written = files.save_key_pairs(args.out, dsa, kem)
    data = {
        "suite": suite.label,
        "dsa": {"algorithm": dsa.algorithm.name, "public_size": len(dsa.public)},
        "kem": {"algorithm": kem.algorithm.name, "public_size": len(kem.public)},
        "files": [str(p) for p in written],
    }
    _emit(args, data, f"{dsa.algorithm.name} public key: {len(dsa.public):,} bytes\n"
                      f"{kem.algorithm.name} public key: {len(kem.public):,} bytes\n"
                      f"wrote {', '.join(data['files'])}")
    return 0


def cmd_ca_init(args) -> int:
    suite = parse_suite(args.suite)
    ca = CaContext.create(suite, _now(), name=args.name, lifetime=dt.timedelta(days=args.days))
    written = files.save_key_pairs(args.out, ca.keys)
    cert_path = Path(str(args.out) + ".crt")
    files.save_cert(cert_path, ca.certificate)
    _emit(args, {"suite": suite.label, "name": ca.name, "files": [str(p) for p in (*written, cert_path)]},
          f"CA {ca.name!r} ({ca.keys.algorithm.name}) -> {written[0]}, {cert_path}")
    return 0


def cmd_issue(args) -> int:
    ca = files.load_ca(args.ca)
    scheme = CertScheme(args.scheme)
    dsa_path, kem_path = files.key_paths(args.keys)
    dsa_pk = kem_pk = None
    if scheme is not CertScheme.PURE_KEM:
        dsa_pk = files.load_key_pair(dsa_path, DsaKeyPair).public
    if scheme is not CertScheme.PURE_DSA:
        kem_pk = files.load_key_pair(kem_path, files.KemKeyPair).public
    now = _now()
    template = CertTemplate(args.subject, ca.name, random_serial(), now, now + dt.timedelta(days=args.days))
    cert = issue(ca, template, scheme, dsa_pk, kem_pk)
    files.save_cert(args.out, cert, pem=not args.der)
    _emit(args, {"scheme": scheme.value, "subject": cert.subject, "length": cert.encoded_length,
                 "file": str(args.out)},
          f"issued {scheme.value} certificate for {cert.subject!r} ({cert.encoded_length:,} bytes) -> {args.out}")
    return 0


def _cert_info(cert: Certificate) -> dict:
    info = {
        "kind": "certificate",
        "scheme": cert.scheme.value,
        "serial": cert.serial,
        "issuer": cert.issuer,
        "subject": cert.subject,
        "not_before": cert.not_before.isoformat(),
        "not_after": cert.not_after.isoformat(),
        "signature_algorithm": cert.signature_algorithm.name,
        "length": cert.encoded_length,
        "dsa": cert.dsa_algorithm.name if cert.dsa_algorithm else None,
        "kem": cert.kem_algorithm.name if cert.kem_algorithm else None,
    }
    if cert.delta is not None:
        info["delta_serial"] = cert.delta.serial
    return info


def _message_info(msg: messages.SignedData) -> dict:
    content = msg.content
    info = {
        "kind": "signed-data",
        "message_type": msg.message_type.value,
        "message_id": msg.message_id.hex(),
        "length": msg.encoded_length,
        "payload_length": len(content.payload) if content.payload is not None else None,
        "signing_time": msg.signer.signing_time_raw.decode("ascii", "replace"),
        "message_digest": msg.signer.message_digest.hex(),
        "signer": {"issuer": msg.signer.issuer, "serial": msg.signer.serial,
                   "algorithm": msg.signer.signature_algorithm.name},
        "certificates": [_cert_info(c) for c in msg.certificates],
    }
    if content.peer_message_id is not None:
        key = "request_id" if msg.message_type is messages.MessageType.KEP_RESP else "response_id"
        info[key] = content.peer_message_id.hex()
    return info


def _load_any(data: bytes):
    if data.lstrip().startswith(b"-----BEGIN"):
        return load_certificate(data)
    root = codec.decode(data)
    if root.tag == codec.SEQUENCE and root.children and root[0].tag == codec.OBJECT_IDENTIFIER:
        return messages.parse(data)
    return load_certificate(data)


def _render(info: dict, indent: int = 0) -> str:
    pad = "  " * indent
    lines = []
    for key, value in info.items():
        if isinstance(value, dict):
            lines.append(f"{pad}{key}:")
            lines.append(_render(value, indent + 1))
        elif isinstance(value, list):
            lines.append(f"{pad}{key}: {len(value)}")
            for item in value:
                lines.append(_render(item, indent + 1))
                lines.append("")
        else:
            lines.append(f"{pad}{key}: {value}")
    return "\n".join(line for line in lines).rstrip("\n")


def cmd_inspect(args) -> int:
    obj = _load_any(Path(args.file).read_bytes())
    info = _cert_info(obj) if isinstance(obj, Certificate) else _message_info(obj)
    _emit(args, info, _render(info))
    return 0


def cmd_validate(args) -> int:
    cert = files.load_cert(args.cert)
    ca_cert = files.load_cert(args.ca_cert)
    when = _parse_time(args.at) if args.at else _now()
    keys = validate(cert, ca_cert.dsa_public, when)
    data = {
        "valid": True,
        "scheme": cert.scheme.value,
        "subject": keys.subject,
        "dsa": keys.dsa_algorithm.name if keys.dsa_algorithm else None,
        "kem": keys.kem_algorithm.name if keys.kem_algorithm else None,
    }
    _emit(args, data, f"{args.cert}: valid {cert.scheme.value} certificate for {keys.subject!r}")
    return 0


def cmd_decode(args) -> int:
    data = Path(args.file).read_bytes()
    if data.lstrip().startswith(b"-----BEGIN"):
        data = load_certificate(data).encoded
    print(codec.dump(codec.decode(data), max_bytes=args.bytes))
    return 0


# -- benchmark --------------------------------------------------------------------------------

def cmd_bench(args) -> int:
    config = bench.BenchConfig(include_ca_cert=args.include_ca_cert)
    rows = bench.run_family_tables(DsaFamily(args.family), config)
    out = [bench.emit_report(rows, args.format)]
    if args.iterations:
        timings = [bench.measure_timings(row.suite, row.method, args.iterations, config=config) for row in rows]
        out.append(bench.emit_timing_report(timings, args.format))
    text = "\n".join(out)
    if args.out:
        Path(args.out).write_text(text)
    else:
        sys.stdout.write(text)
    failures = bench.check_invariants(rows, config)
    if args.iterations:
        for t in timings:
            if t.method is bench.Method.COMPARED:
                continue
            compared = next(x for x in timings if x.suite == t.suite and x.method is bench.Method.COMPARED)
            if t.method is not bench.Method.CHAMELEON:
                for step in ("kepReq.verify", "kepResp.verify"):
                    if compared.verifications[step] != t.verifications[step] + 1:
                        failures.append(f"{t.suite} {t.method.value} {step}: {t.verifications[step]} "
                                        f"verifications vs compared {compared.verifications[step]}")
    for failure in failures:
        print(f"invariant violated: {failure}", file=sys.stderr)
    return 1 if failures else 0


# -- network demo ------------------------------------------------------------------------------

def _peer_config(args) -> net.PeerConfig:
    ca_cert = files.load_cert(args.ca_cert)
    credential, suite = files.load_credential(args.keys, args.cert, ca_cert if args.include_ca_cert else None)
    files.self_check(credential, ca_cert.dsa_public, _now())
    return net.PeerConfig.with_env(credential, suite, ca_cert.dsa_public)


def _chat(channel: net.SecureChannel, lines, out=None, wait_replies: int = 0) -> None:
    """Send *lines*; print whatever arrives. Returns when input and expected replies are done."""
    out = out or sys.stdout
    errors = []
    replies = threading.Semaphore(0)

    def reader():
        try:
            while (text := channel.recv_text()) is not None:
                print(f"{channel.peer}> {text}", file=out, flush=True)
                replies.release()
        except (net.ChannelError, net.FrameError, OSError) as exc:
            errors.append(exc)
        finally:
            replies.release()

    t = threading.Thread(target=reader, daemon=True)
    t.start()
    for line in lines:
        channel.send_text(line.rstrip("\n"))
    for _ in range(wait_replies):
        replies.acquire(timeout=30)
    channel.close()
    t.join(timeout=5)
    if errors:
        raise errors[0]


def cmd_serve(args) -> int:
    cfg = _peer_config(args)
    transcript = net.open_transcript(args.transcript)
    lock = threading.Lock()

    def interactive(channel):
        with lock:
            print(f"session with {channel.peer}, key fingerprint {channel.fingerprint}", flush=True)
            _chat(channel, sys.stdin)

    def echo(channel):
        print(f"session with {channel.peer}, key fingerprint {channel.fingerprint}", flush=True)
        net.echo_handler(channel)

    server = net.Server(args.listen, cfg, echo if args.echo else interactive, net.table_from_env(), transcript)
    print(f"listening on {server.address[0]}:{server.address[1]} as {cfg.credential.subject!r} "
          f"({cfg.suite}, {cfg.credential.method.value})", flush=True)
    try:
        if args.once:
            sock, peer = server.sock.accept()
            server._handle(sock, peer)
            return 1 if server.errors else 0
        server.serve_forever()
    except KeyboardInterrupt:
        pass
    finally:
        server.close()
    return 0


def cmd_connect(args) -> int:
    cfg = _peer_config(args)
    transcript = net.open_transcript(args.transcript)
    channel = net.connect(args.peer, cfg, timeout=args.timeout, transcript=transcript)
    print(f"session with {channel.peer}, key fingerprint {channel.fingerprint}", flush=True)
    if args.send:
        _chat(channel, args.send, wait_replies=len(args.send) if args.expect_echo else 0)
    else:
        _chat(channel, sys.stdin)
    return 0


# -- parser -------------------------------------------------------------------------------------

def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="pqkex", description="PQC bidirectional-authentication key exchange toolkit")
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)

    def add(name, fn, help_text, json_flag=True):
        p = sub.add_parser(name, help=help_text)
        p.set_defaults(func=fn)
        if json_flag:
            p.add_argument("--json", action="store_true", help="machine-readable output")
        return p

    p = add("keygen", cmd_keygen, "generate DSA and KEM key pairs")
    p.add_argument("--suite", required=True, help="e.g. l1-mldsa, l3-slhdsa-s, l5-slhdsa-f")
    p.add_argument("--out", required=True, help="output prefix (writes PREFIX.dsa.key, PREFIX.kem.key)")

    p = add("ca-init", cmd_ca_init, "create a CA key and self-signed certificate")
    p.add_argument("--suite", required=True)
    p.add_argument("--out", required=True, help="output prefix (writes PREFIX.dsa.key, PREFIX.crt)")
    p.add_argument("--name", default="PQC Demo CA")
    p.add_argument("--days", type=int, default=3650)

    p = add("issue", cmd_issue, "issue a certificate")
    p.add_argument("--ca", required=True, help="CA prefix (PREFIX.dsa.key, PREFIX.crt)")
    p.add_argument("--keys", required=True, help="subject key prefix")
    p.add_argument("--subject", required=True)
    p.add_argument("--scheme", required=True, choices=[s.value for s in CertScheme])
    p.add_argument("--out", required=True)
    p.add_argument("--days", type=int, default=365)
    p.add_argument("--der", action="store_true", help="write raw DER instead of PEM")

    p = add("inspect", cmd_inspect, "show a certificate or handshake message")
    p.add_argument("file")

    p = add("validate", cmd_validate, "validate a certificate against a CA certificate")
    p.add_argument("cert")
    p.add_argument("--ca-cert", required=True)
    p.add_argument("--at", help="ISO timestamp to validate at (default: now)")

    p = add("decode", cmd_decode, "dump a DER file as a TLV tree", json_flag=False)
    p.add_argument("file")
    p.add_argument("--dump", action="store_true", help="print the TLV tree (default)")
    p.add_argument("--bytes", type=int, default=16, help="bytes of each primitive value to show")

    p = add("bench", cmd_bench, "regenerate the message-length tables", json_flag=False)
    p.add_argument("--family", required=True, choices=[f.value for f in DsaFamily])
    p.add_argument("--format", default="markdown", choices=["markdown", "csv"])
    p.add_argument("--include-ca-cert", action="store_true")
    p.add_argument("--iterations", type=int, default=0, help="also time each step (N >= 30)")
    p.add_argument("--out")

    for name, fn, help_text in (("serve", cmd_serve, "run the responder"),
                                ("connect", cmd_connect, "run the initiator and chat")):
        p = add(name, fn, help_text, json_flag=False)
        p.add_argument("--keys", required=True, help="key prefix")
        p.add_argument("--cert", required=True, action="append",
                       help="certificate file (twice for pure-dsa + pure-kem)")
        p.add_argument("--ca-cert", required=True)
        p.add_argument("--include-ca-cert", action="store_true", help="send the CA certificate along")
        p.add_argument("--transcript", help="append raw frames to this file")
    serve = sub.choices["serve"]
    serve.add_argument("--listen", type=_address, default=("127.0.0.1", 7443))
    serve.add_argument("--echo", action="store_true", help="echo chat messages instead of reading stdin")
    serve.add_argument("--once", action="store_true", help="handle a single connection, then exit")
    connect = sub.choices["connect"]
    connect.add_argument("--peer", type=_address, required=True)
    connect.add_argument("--timeout", type=float, default=30.0)
    connect.add_argument("--send", action="append", help="send this line instead of reading stdin")
    connect.add_argument("--expect-echo", action="store_true", help="wait for one reply per --send")
    return parser


def main(argv: list[str] | None = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    if args.command == "bench" and args.iterations and args.iterations < 30:
        parser.error("--iterations must be at least 30")
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        return args.func(args)
    except (CertificateError, MessageError, IssueError, CredentialError, CryptoError, files.KeyFileError,
            codec.DecodeError, net.FrameError, net.ChannelError, EOFError, OSError, ValueError) as exc:
        print(f"error: {type(exc).__name__}: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
