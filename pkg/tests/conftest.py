import pytest

from overlay_repo.store import Repository

from support import TickingClock


@pytest.fixture
def clock():
    return TickingClock()


@pytest.fixture
def repo(clock):
    return Repository(clock=clock)
