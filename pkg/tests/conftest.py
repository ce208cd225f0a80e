import pathlib

import pytest

from subjekt.model_io import parse_definition
from subjekt.repository import Repository, UserRecord
from subjekt.scheduler import Scheduler

FIXTURES = pathlib.Path(__file__).parent / "fixtures"


@pytest.fixture(scope="session")
def internal_order_bytes() -> bytes:
    return (FIXTURES / "internal_order.json").read_bytes()


@pytest.fixture
def internal_order_doc(internal_order_bytes):
    return parse_definition(internal_order_bytes)


@pytest.fixture
def internal_order(internal_order_doc):
    return internal_order_doc.process


@pytest.fixture
def repo(internal_order_doc):
    """In-memory store preloaded with the Internal Order process and the two
    use-case users: jd (Employee) and nr (Supervisor)."""
    repository = Repository(":memory:")
    repository.add_process(internal_order_doc)
    repository.put_user(UserRecord("jd", frozenset({("internal-order", "Employee")})))
    repository.put_user(UserRecord("nr", frozenset({("internal-order", "Supervisor")})))
    repository.put_user(UserRecord("outsider", frozenset()))
    yield repository
    repository.close()


@pytest.fixture
def sched(repo):
    return Scheduler(repo)
