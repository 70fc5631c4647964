import pytest

from scorer_bridge.models import toy_registry
from scorer_bridge.service import start_server


@pytest.fixture(scope="session")
def bridge_url():
    server, thread, url = start_server(toy_registry())
    yield url
    server.should_exit = True
    thread.join(timeout=10)
