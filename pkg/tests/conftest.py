import datetime as dt
import functools

import pytest

from pqkex import suite as suite_mod
from pqkex.certificates import CaContext
from pqkex.handshake import Credential, Method
from pqkex.suite import DsaFamily, SecurityLevel, all_suites, parse_suite

NOW = dt.datetime(2025, 1, 1, 12, 0, 0, tzinfo=dt.timezone.utc)
GOLDEN = __import__("pathlib").Path(__file__).parent / "golden"

L3_MLDSA = parse_suite("l3-mldsa")
ALL_SUITES = all_suites()
FAST_SUITES = [s for s in ALL_SUITES if s.family is not DsaFamily.SLHDSA_SMALL]
ALL_METHODS = list(Method)


@functools.lru_cache(maxsize=None)
def ca_for(suite):
    return CaContext.create(suite, NOW - dt.timedelta(days=1))


@functools.lru_cache(maxsize=None)
def credential_for(suite, method, subject, include_ca=False):
    return Credential.issue(ca_for(suite), subject, method, NOW - dt.timedelta(hours=1),
                            include_ca_certificate=include_ca)


def pair_for(suite, method):
    return credential_for(suite, method, "Alice"), credential_for(suite, method, "Bob")


@pytest.fixture
def now():
    return NOW


@pytest.fixture
def l3():
    return L3_MLDSA


class MemoSigner:
    """Provider wrapper that returns one signature per (key, message) pair.

    The backend signs in hedged mode, so two signatures over the same input
    differ. Memoizing makes builds reproducible for determinism checks.
    """

    def __init__(self, inner):
        self.inner = inner
        self.cache = {}

    def __getattr__(self, name):
        return getattr(self.inner, name)

    def dsa_sign(self, alg, private, message):
        key = (alg.name, private, message)
        if key not in self.cache:
            self.cache[key] = self.inner.dsa_sign(alg, private, message)
        return self.cache[key]


@pytest.fixture
def memo_signer():
    provider = MemoSigner(suite_mod.get_provider())
    previous = suite_mod.set_provider(provider)
    try:
        yield provider
    finally:
        suite_mod.set_provider(previous)


def suite_id(suite):
    return suite.label


def level_of(suite):
    return {SecurityLevel.L1: 0, SecurityLevel.L3: 1, SecurityLevel.L5: 2}[suite.level]


# acceptance verdicts, one line per criterion, repeated in the terminal summary
ACCEPTANCE_LINES = []


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in sorted(ACCEPTANCE_LINES, key=lambda text: int(text.split()[1].rstrip(":"))):
            terminalreporter.write_line(line)
