"""Acceptance suite: one test per criterion, each printing a single PASS/FAIL line.

Run on its own with ``pytest tests/test_acceptance.py -s`` to see the verdicts
inline; they are also repeated in the terminal summary of any pytest run.
"""

import json
import random
import time

import pytest

from conftest import ACCEPTANCE_LINES, ALL_SUITES, GOLDEN, L3_MLDSA, NOW, ca_for, pair_for
from der_corpus import corpus
from pqkex import bench, certificates, codec, messages
from pqkex.handshake import Method, run_handshake
from pqkex.suite import DsaFamily, parse_suite
from scenarios import TAMPER_MATRIX, double_redemption, replayed_ack, replayed_response, tamper_outcome, \
    third_party_ack

DUAL = (Method.COMPOSITE, Method.CATALYST, Method.CHAMELEON)
PUBLISHED_RESP_MINUS_REQ = {"L1": 776, "L3": 1096, "L5": 1576}


def verdict(number, failures, detail=""):
    line = f"criterion {number}: {'PASS' if not failures else 'FAIL'}" + (f" ({detail})" if detail else "")
    ACCEPTANCE_LINES.append(line)
    print(line)
    assert not failures, "\n".join(str(f) for f in failures)


@pytest.fixture(scope="module")
def family_tables():
    """Length tables per family with the wall-clock time each took."""
    out = {}
    for family in DsaFamily:
        start = time.perf_counter()
        rows = bench.run_family_tables(family)
        out[family] = (rows, time.perf_counter() - start)
    return out


@pytest.fixture(scope="module")
def all_rows(family_tables):
    return [row for rows, _ in family_tables.values() for row in rows]


def table_failures(rows):
    failures = []
    devs = bench.reference_deviations(rows)
    if len(devs) != 36:
        failures.append(f"expected 36 compared values, got {len(devs)}")
    for row, message, published, dev in devs:
        if abs(dev) > bench.REFERENCE_TOLERANCE:
            failures.append(f"{row.suite.label} {row.method.value} {message}: "
                            f"{row.length(message)} vs {published} ({dev:+.2%})")
    return failures, max((abs(d) for *_, d in devs), default=0.0)


def by_level(rows):
    index = {}
    for row in rows:
        index.setdefault((row.suite.family, row.suite.level), {})[row.method] = row
    return index


def test_criterion_1_mldsa_tables(family_tables):
    rows, seconds = family_tables[DsaFamily.MLDSA]
    failures, worst = table_failures(rows)
    if seconds >= 120:
        failures.append(f"took {seconds:.1f} s, budget 120 s")
    verdict(1, failures, f"36 values, worst deviation {worst:.2%}, {seconds:.1f} s")


def test_criterion_2_slhdsa_tables(family_tables):
    failures, details, total = [], [], 0.0
    for family in (DsaFamily.SLHDSA_SMALL, DsaFamily.SLHDSA_FAST):
        rows, seconds = family_tables[family]
        fam_failures, worst = table_failures(rows)
        failures += fam_failures
        total += seconds
        details.append(f"{family.value} worst {worst:.2%}")
    if total >= 30 * 60:
        failures.append(f"took {total:.0f} s, budget 1800 s")
    verdict(2, failures, ", ".join(details) + f", {total:.1f} s")


def test_criterion_3_deltas(all_rows):
    failures = []
    table = by_level(all_rows)
    constants = set()
    for (family, level), methods in table.items():
        where = f"{family.value} L{level.value}"
        expected = PUBLISHED_RESP_MINUS_REQ[f"L{level.value}"]
        ct = methods[Method.COMPOSITE].suite.kem.ciphertext_size
        for method, row in methods.items():
            delta = row.resp_len - row.req_len
            constants.add((method, delta - ct))
            if abs(delta - expected) > bench.DELTA_TOLERANCE:
                failures.append(f"{where} {method.value}: resp-req {delta}, expected {expected} +/- 32")
            if method in DUAL and row.ack_len - row.resp_len != 2:
                failures.append(f"{where} {method.value}: ack-resp {row.ack_len - row.resp_len}")
    # the KEM term is exact: per method the remainder does not move with the level
    for method in Method:
        remainders = {k for m, k in constants if m is method}
        if len(remainders) != 1:
            failures.append(f"{method.value}: resp-req-ciphertext varies {sorted(remainders)}")
    for family in DsaFamily:
        for message in bench.MESSAGES:
            gaps = {table[(family, lvl)][Method.CATALYST].length(message)
                    - table[(family, lvl)][Method.COMPOSITE].length(message) for lvl in bench.LEVELS}
            if len(gaps) != 1:
                failures.append(f"{family.value} {message}: catalyst-composite gap varies {sorted(gaps)}")
    verdict(3, failures, "structural constants " + ", ".join(sorted(f"{m.value}={k}" for m, k in constants)))


def test_criterion_4_ordering(all_rows):
    failures = []
    order = [Method.COMPOSITE, Method.CATALYST, Method.CHAMELEON, Method.COMPARED]
    for (family, level), methods in by_level(all_rows).items():
        where = f"{family.value} L{level.value}"
        for message in ("req", "resp"):
            lengths = [methods[m].length(message) for m in order]
            if not all(a < b for a, b in zip(lengths, lengths[1:])):
                failures.append(f"{where} {message}: {lengths}")
        compared_ack = methods[Method.COMPARED].ack_len
        if not all(compared_ack < methods[m].ack_len for m in DUAL):
            failures.append(f"{where}: compared ack {compared_ack} is not the shortest")
        for m in (Method.COMPOSITE, Method.CATALYST):
            if not methods[m].total < methods[Method.COMPARED].total:
                failures.append(f"{where}: total {m.value} {methods[m].total} >= {methods[Method.COMPARED].total}")
    verdict(4, failures, "9 level x family cells")


def test_criterion_5_honest_handshakes():
    failures = []
    combos = [(s, m) for s in ALL_SUITES for m in Method]
    for suite, method in combos:
        alice, bob = pair_for(suite, method)
        t = run_handshake(alice, bob, suite, ca_for(suite).public, NOW)
        if t.initiator_key != t.responder_key or len(t.initiator_key) != 32:
            failures.append(f"{suite.label} {method.value}: keys differ")
    rng = random.Random(5)
    keys, equal = set(), 0
    for _ in range(100):
        suite, method = rng.choice(combos)
        alice, bob = pair_for(suite, method)
        t = run_handshake(alice, bob, suite, ca_for(suite).public, NOW)
        equal += t.initiator_key == t.responder_key
        keys.add(t.initiator_key)
    if equal != 100:
        failures.append(f"only {equal}/100 randomized runs agreed")
    if len(keys) != 100:
        failures.append("a session key repeated across runs")
    verdict(5, failures, f"{len(combos)} combinations, {equal}/100 randomized runs")


TAMPER_SUITES = [L3_MLDSA, parse_suite("l1-slhdsa-f")]


def test_criterion_6_tamper_and_replay():
    failures, checked, false_accepts = [], 0, 0
    for suite in TAMPER_SUITES:
        for method in Method:
            for (message, field), expected in TAMPER_MATRIX.items():
                outcome = tamper_outcome(suite, method, message, field)
                checked += 1
                where = f"{suite.label} {method.value} {message}.{field}"
                if outcome.error is None:
                    false_accepts += 1
                    failures.append(f"{where}: accepted")
                elif type(outcome.error) is not expected:
                    failures.append(f"{where}: {type(outcome.error).__name__}, expected {expected.__name__}")
                elif not outcome.recovered:
                    failures.append(f"{where}: state not left clean")
            for scenario in (replayed_response, replayed_ack, double_redemption, third_party_ack):
                checked += 1
                if scenario(suite, method) is None:
                    false_accepts += 1
                    failures.append(f"{suite.label} {method.value} {scenario.__name__}: accepted")
    distinct = {e.__name__ for e in TAMPER_MATRIX.values()}
    verdict(6, failures, f"{checked} attacks, {false_accepts} false accepts, errors {sorted(distinct)}")


@pytest.fixture(scope="module")
def timing_rows():
    return [bench.measure_timings(parse_suite(f"l{lvl}-mldsa"), m, iterations=30)
            for lvl in (1, 3, 5) for m in Method]


def count_failures(timing_rows):
    failures = []
    index = {(r.suite, r.method): r.verifications for r in timing_rows}
    for suite in {r.suite for r in timing_rows}:
        compared = index[(suite, Method.COMPARED)]
        for m in (Method.COMPOSITE, Method.CATALYST):
            for step in ("kepReq.verify", "kepResp.verify"):
                if compared[step] - index[(suite, m)][step] != 1:
                    failures.append(f"{suite.label} {step}: compared {compared[step]} vs "
                                    f"{m.value} {index[(suite, m)][step]}")
    return failures


def test_criterion_7_verification_counts(timing_rows):
    failures = count_failures(timing_rows)
    sample = next(r for r in timing_rows if r.method is Method.COMPARED).verifications
    verdict(7, failures, f"compared req/resp verifications {sample['kepReq.verify']}/{sample['kepResp.verify']}")


def test_criterion_8_der_round_trip():
    failures = []
    cases = corpus(10_000)
    for i, node in enumerate(cases):
        der = codec.encode(node)
        back = codec.decode(der)
        if back != node or codec.encode(back) != der:
            failures.append(f"corpus case {i} does not round trip")
    golden = {
        "3000": codec.seq(),
        "020100": codec.integer(0),
        "0202ff7f": codec.integer(-129),
        "060960864801650304020c": codec.oid("2.16.840.1.101.3.4.2.12"),
        "0c03426f62": codec.utf8("Bob"),
    }
    for hexed, node in golden.items():
        if codec.encode(node).hex() != hexed or codec.decode(bytes.fromhex(hexed)) != node:
            failures.append(f"golden vector {hexed}")
    meta = json.loads((GOLDEN / "golden.json").read_text())
    for name in ("ca", "kepReq", "kepResp"):
        data = (GOLDEN / f"{name}.der").read_bytes()
        if codec.encode(codec.decode(data)) != data:
            failures.append(f"golden file {name}.der")
    req = messages.parse((GOLDEN / "kepReq.der").read_bytes())
    if req.message_id.hex() != meta["kepReq"]["message_id"]:
        failures.append("golden kepReq message id")
    if certificates.parse((GOLDEN / "ca.der").read_bytes()).subject is None:
        failures.append("golden CA certificate")
    verdict(8, failures, f"{len(cases)} corpus trees, {len(golden)} vectors, 3 golden files")


def test_criterion_9_timing_report(timing_rows):
    failures = []
    for row in timing_rows:
        missing = [s for s in bench.TIMING_STEPS if not row.medians.get(s, 0) > 0]
        if missing:
            failures.append(f"{row.suite.label} {row.method.value}: no median for {missing}")
    for fmt in ("markdown", "csv"):
        text = bench.emit_timing_report(timing_rows, fmt)
        if len(text.strip().splitlines()) != len(timing_rows) + (2 if fmt == "markdown" else 1):
            failures.append(f"{fmt} report has the wrong number of lines")
    failures += count_failures(timing_rows)
    verdict(9, failures, f"{len(timing_rows)} timing rows, {len(bench.TIMING_STEPS)} steps each")
