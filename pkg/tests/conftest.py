import random

import pytest

from ppknn.paillier import keygen
from ppknn.protocols import DataHost, ProtocolConfig, local_parties
from ppknn.runtime import ProtocolTag

KEY_BITS = 512


@pytest.fixture(scope="session")
def keys():
    return keygen(KEY_BITS, random.Random(20240611))


@pytest.fixture(scope="session")
def pk(keys):
    return keys[0]


@pytest.fixture(scope="session")
def sk(keys):
    return keys[1]


@pytest.fixture(scope="session")
def endpoint(sk):
    with local_parties(sk) as (p1, _):
        yield p1


@pytest.fixture
def recording(sk):
    """Fresh parties whose P2 records a transcript per session."""
    with local_parties(sk, record=True) as (p1, keyholder):
        yield p1, keyholder


@pytest.fixture
def open_host(pk, endpoint):
    hosts = []

    def make(l=32, tag=ProtocolTag.PPKNN, seed=None, ep=None, **kw):
        host = DataHost.open(ep or endpoint, ProtocolConfig(pk, l, seed), tag, **kw)
        hosts.append(host)
        return host

    yield make
    for host in hosts:
        if not host.session.closed:
            host.close()


@pytest.fixture
def rng(request):
    return random.Random(request.node.name)


# -- acceptance verdicts ------------------------------------------------------------

VERDICTS: list[str] = []


def pytest_terminal_summary(terminalreporter):
    if VERDICTS:
        terminalreporter.section("acceptance criteria")
        for line in VERDICTS:
            terminalreporter.write_line(line)
