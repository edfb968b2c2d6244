"""Message-length tables and per-step timings.

Lengths always come from messages built during a real, verifying handshake.
"""

from __future__ import annotations

import csv
import datetime as dt
import io
import statistics
import time
from dataclasses import dataclass, field

from . import messages
from .certificates import CaContext
from .handshake import Credential, Method, run_handshake
from .suite import (
    DsaFamily,
    DsaKeyPair,
    KemKeyPair,
    SecurityLevel,
    Suite,
    dsa_keygen,
    kem_decapsulate,
    kem_encapsulate,
    kem_keygen,
    suite_for,
)

LEVELS = (SecurityLevel.L1, SecurityLevel.L3, SecurityLevel.L5)
METHODS = (Method.COMPOSITE, Method.CATALYST, Method.CHAMELEON, Method.COMPARED)
MESSAGES = ("req", "resp", "ack")

# Published lengths in bytes: (family, message, method) -> (L1, L3, L5).
REFERENCE_LENGTHS: dict[tuple[DsaFamily, str, Method], tuple[int, int, int]] = {}


def _ref(family, message, rows):
    for method, values in zip(METHODS, rows):
        REFERENCE_LENGTHS[(family, message, method)] = values


_ref(DsaFamily.MLDSA, "req", [(7549, 10351, 14011), (7575, 10377, 14037),
                              (10050, 13741, 18719), (10180, 13871, 18849)])
_ref(DsaFamily.MLDSA, "resp", [(8325, 11447, 15587), (8351, 11473, 15613),
                               (10826, 14837, 20295), (10954, 14965, 20423)])
_ref(DsaFamily.MLDSA, "ack", [(8327, 11449, 15589), (8353, 11475, 15615),
                              (10828, 14839, 20297), (7511, 10249, 14005)])
_ref(DsaFamily.SLHDSA_SMALL, "req", [(17107, 34275, 61811), (17131, 34299, 61835),
                                     (25042, 50578, 91685), (25171, 50707, 91815)])
_ref(DsaFamily.SLHDSA_SMALL, "resp", [(17883, 35371, 63387), (17907, 35395, 63411),
                                      (25818, 51674, 93261), (25945, 51801, 93389)])
_ref(DsaFamily.SLHDSA_SMALL, "ack", [(17885, 35373, 63389), (17909, 35397, 63413),
                                     (25820, 51676, 93263), (17066, 34170, 61803)])
_ref(DsaFamily.SLHDSA_FAST, "req", [(35571, 73158, 101942), (35595, 73182, 101966),
                                    (52738, 108903, 151879), (52867, 109031, 152008)])
_ref(DsaFamily.SLHDSA_FAST, "resp", [(36347, 74254, 103518), (36371, 74278, 103542),
                                     (53514, 109999, 153455), (53641, 110125, 153582)])
_ref(DsaFamily.SLHDSA_FAST, "ack", [(36349, 74256, 103520), (36373, 74280, 103544),
                                    (53516, 110001, 153457), (35530, 73053, 101934)])

REFERENCE_TOLERANCE = 0.05
DELTA_TOLERANCE = 32


@dataclass(frozen=True)
class BenchConfig:
    initiator_name: str = "Alice"
    responder_name: str = "Bob"
    include_ca_cert: bool = False
    now: dt.datetime = dt.datetime(2025, 1, 1, tzinfo=dt.timezone.utc)
    lifetime: dt.timedelta = dt.timedelta(days=365)

    @property
    def default_names(self) -> bool:
        return (self.initiator_name, self.responder_name) == ("Alice", "Bob")


@dataclass(frozen=True)
class LengthRow:
    suite: Suite
    method: Method
    req_len: int
    resp_len: int
    ack_len: int

    @property
    def total(self) -> int:
        return self.req_len + self.resp_len + self.ack_len

    def length(self, message: str) -> int:
        return {"req": self.req_len, "resp": self.resp_len, "ack": self.ack_len, "total": self.total}[message]


@dataclass
class _Party:
    dsa: DsaKeyPair
    kem: KemKeyPair


class _LevelFixture:
    """CA and party key pairs shared by all four methods at one suite."""

    def __init__(self, suite: Suite, config: BenchConfig):
        self.suite = suite
        self.config = config
        self.ca = CaContext.create(suite, config.now)
        self.alice = _Party(dsa_keygen(suite), kem_keygen(suite))
        self.bob = _Party(dsa_keygen(suite), kem_keygen(suite))

    def credentials(self, method: Method) -> tuple[Credential, Credential]:
        cfg = self.config
        return tuple(
            Credential.issue(self.ca, name, method, cfg.now, cfg.lifetime, party.dsa, party.kem,
                             include_ca_certificate=cfg.include_ca_cert)
            for name, party in ((cfg.initiator_name, self.alice), (cfg.responder_name, self.bob))
        )


def _measure(fixture: _LevelFixture, method: Method) -> LengthRow:
    alice, bob = fixture.credentials(method)
    tr = run_handshake(alice, bob, fixture.suite, fixture.ca.public, fixture.config.now)
    if tr.initiator_key != tr.responder_key:
        raise RuntimeError(f"{fixture.suite} / {method.value}: session keys differ")
    return LengthRow(fixture.suite, method, tr.r1.encoded_length, tr.r2.encoded_length, tr.r3.encoded_length)


def measure_lengths(suite: Suite, method: Method, config: BenchConfig = BenchConfig()) -> LengthRow:
    return _measure(_LevelFixture(suite, config), method)


def run_family_tables(family: DsaFamily, config: BenchConfig = BenchConfig()) -> list[LengthRow]:
    """All 4 methods x 3 levels for one DSA family (12 rows, 36 lengths)."""
    rows = []
    for level in LEVELS:
        fixture = _LevelFixture(suite_for(level, family), config)
        rows += [_measure(fixture, method) for method in METHODS]
    return rows


# -- invariants ----------------------------------------------------------------------

def reference_deviations(rows: list[LengthRow]) -> list[tuple[LengthRow, str, int, float]]:
    """(row, message, published, relative deviation) for every measured length."""
    out = []
    for row in rows:
        level_idx = LEVELS.index(row.suite.level)
        for message in MESSAGES:
            published = REFERENCE_LENGTHS[(row.suite.family, message, row.method)][level_idx]
            out.append((row, message, published, (row.length(message) - published) / published))
    return out


def check_invariants(rows: list[LengthRow], config: BenchConfig = BenchConfig()) -> list[str]:
    """Return a description of every violated table property (empty if all hold)."""
    failures = []
    table: dict[tuple[DsaFamily, SecurityLevel], dict[Method, LengthRow]] = {}
    for row in rows:
        table.setdefault((row.suite.family, row.suite.level), {})[row.method] = row

    ks = []
    for (family, level), by_method in sorted(table.items(), key=lambda kv: (kv[0][0].value, kv[0][1].value)):
        where = f"{family.value} L{level.value}"
        ct = next(iter(by_method.values())).suite.kem.ciphertext_size
        for row in by_method.values():
            k = row.resp_len - row.req_len - ct
            ks.append(k)
            if row.method is not Method.COMPARED and config.default_names and row.ack_len - row.resp_len != 2:
                failures.append(f"{where} {row.method.value}: ack-resp = {row.ack_len - row.resp_len}, expected 2")
        if len(by_method) != len(METHODS):
            continue
        for message in ("req", "resp"):
            lengths = [by_method[m].length(message) for m in METHODS]
            if not lengths == sorted(set(lengths)):
                failures.append(f"{where} {message}: expected composite < catalyst < chameleon < compared, got {lengths}")
        acks = {m: by_method[m].ack_len for m in METHODS}
        if min(acks, key=acks.get) is not Method.COMPARED or list(acks.values()).count(acks[Method.COMPARED]) > 1:
            failures.append(f"{where}: compared ack is not the shortest ({acks[Method.COMPARED]})")
        for m in (Method.COMPOSITE, Method.CATALYST):
            if not by_method[m].total < by_method[Method.COMPARED].total:
                failures.append(f"{where}: total {m.value} {by_method[m].total} >= compared "
                                f"{by_method[Method.COMPARED].total}")

    if ks and max(ks) - min(ks) > DELTA_TOLERANCE:
        failures.append(f"resp-req-ciphertext constant varies: {min(ks)}..{max(ks)}")
    published_k = 8
    if ks and any(abs(k - published_k) > DELTA_TOLERANCE for k in ks):
        failures.append(f"resp-req exceeds ciphertext + {published_k} +/- {DELTA_TOLERANCE}: {sorted(set(ks))}")

    for family in {r.suite.family for r in rows}:
        gaps = {table[(family, lvl)][Method.CATALYST].req_len - table[(family, lvl)][Method.COMPOSITE].req_len
                for lvl in LEVELS
                if Method.CATALYST in table.get((family, lvl), {}) and Method.COMPOSITE in table[(family, lvl)]}
        if len(gaps) > 1:
            failures.append(f"{family.value}: catalyst-composite gap varies across levels: {sorted(gaps)}")
        if gaps and not all(0 < g <= 64 for g in gaps):
            failures.append(f"{family.value}: catalyst-composite gap {sorted(gaps)} outside (0, 64]")

    if not config.include_ca_cert and config.default_names:
        for row, message, published, dev in reference_deviations(rows):
            if abs(dev) > REFERENCE_TOLERANCE:
                failures.append(f"{row.suite} {row.method.value} {message}: {row.length(message)} vs "
                                f"published {published} ({dev:+.1%})")
    return failures


# -- timing ----------------------------------------------------------------------------

TIMING_STEPS = (
    "kepReq.build", "kepReq.verify",
    "kepResp.build", "kepResp.verify",
    "kepAck.build", "kepAck.verify",
    "kem.encapsulate", "kem.decapsulate",
)


@dataclass(frozen=True)
class TimingRow:
    suite: Suite
    method: Method
    iterations: int
    medians: dict[str, float] = field(default_factory=dict)
    verifications: dict[str, int] = field(default_factory=dict)


def measure_timings(suite: Suite, method: Method, iterations: int = 30, warmup: int = 1,
                    config: BenchConfig = BenchConfig()) -> TimingRow:
    """Median wall-clock seconds per step over *iterations* full handshakes."""
    if iterations < 30:
        raise ValueError("at least 30 iterations are required")
    fixture = _LevelFixture(suite, config)
    alice, bob = fixture.credentials(method)
    kem = fixture.alice.kem
    with messages.record_steps() as rec:
        for i in range(warmup + iterations):
            if i == warmup:
                rec.seconds.clear()
                rec.verifications.clear()
            run_handshake(alice, bob, suite, fixture.ca.public, config.now)
            start = time.perf_counter()
            ct, _ = kem_encapsulate(kem.algorithm, kem.public)
            mid = time.perf_counter()
            kem_decapsulate(kem, ct)
            end = time.perf_counter()
            rec.seconds["kem.encapsulate"].append(mid - start)
            rec.seconds["kem.decapsulate"].append(end - mid)
    medians = {step: statistics.median(rec.seconds[step]) for step in TIMING_STEPS}
    counts = {}
    for step, values in rec.verifications.items():
        if len(set(values)) != 1:
            raise RuntimeError(f"{step}: verification count varies between runs: {sorted(set(values))}")
        counts[step] = values[0]
    return TimingRow(suite, method, iterations, medians, counts)


# -- reports -----------------------------------------------------------------------------

_HEADER = ["family", "message", "method", "level_1", "level_3", "level_5"]
_MESSAGE_TITLES = {"req": "Key exchange request", "resp": "Key exchange response",
                   "ack": "Key exchange ack", "total": "Total of all three messages"}


def _grid(rows: list[LengthRow]):
    """Yield (family, message, method, [L1, L3, L5]) in table order."""
    index = {(r.suite.family, r.suite.level, r.method): r for r in rows}
    for family in DsaFamily:
        if not any(key[0] is family for key in index):
            continue
        for message in (*MESSAGES, "total"):
            for method in METHODS:
                cells = [index.get((family, lvl, method)) for lvl in LEVELS]
                if any(cells):
                    yield family, message, method, [c.length(message) if c else None for c in cells]


def emit_report(rows: list[LengthRow], fmt: str = "markdown") -> str:
    """Render rows as length tables (methods down, security levels across)."""
    if fmt == "csv":
        buf = io.StringIO()
        writer = csv.writer(buf, lineterminator="\n")
        writer.writerow(_HEADER)
        for family, message, method, cells in _grid(rows):
            writer.writerow([family.value, message, method.value, *("" if c is None else c for c in cells)])
        return buf.getvalue()
    if fmt != "markdown":
        raise ValueError(f"unknown format {fmt!r}")
    head = "| Method | Security Level 1 | Security Level 3 | Security Level 5 |\n|---|---:|---:|---:|\n"
    out, current = [], None
    for family, message, method, cells in _grid(rows):
        if (family, message) != current:
            current = (family, message)
            out.append(f"{'' if not out else chr(10)}### {family.value}: {_MESSAGE_TITLES[message]} (bytes)\n\n{head}")
        out.append(f"| {method.value.capitalize()} | " + " | ".join("" if c is None else f"{c:,}" for c in cells) + " |\n")
    return "".join(out) if out else head


def emit_timing_report(rows: list[TimingRow], fmt: str = "markdown") -> str:
    header = ["suite", "method", "iterations", *(f"{s} (ms)" for s in TIMING_STEPS),
              "verifications kepReq", "verifications kepResp", "verifications kepAck"]

    def values(row):
        return [row.suite.label, row.method.value, row.iterations,
                *(f"{row.medians[s] * 1000:.3f}" for s in TIMING_STEPS),
                *(row.verifications.get(f"{m}.verify", "") for m in ("kepReq", "kepResp", "kepAck"))]

    if fmt == "csv":
        buf = io.StringIO()
        writer = csv.writer(buf, lineterminator="\n")
        writer.writerow(header)
        writer.writerows(values(r) for r in rows)
        return buf.getvalue()
    if fmt != "markdown":
        raise ValueError(f"unknown format {fmt!r}")
    lines = ["| " + " | ".join(header) + " |", "|" + "---|" * len(header)]
    lines += ["| " + " | ".join(str(v) for v in values(r)) + " |" for r in rows]
    return "\n".join(lines) + "\n"
