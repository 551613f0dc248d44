import pytest

from treedec.grammar import StaticMaskTable
from treedec.vocab import default_vocabulary


@pytest.fixture(scope="session")
def vocab():
    return default_vocabulary()


@pytest.fixture(scope="session")
def table(vocab):
    return StaticMaskTable(vocab)
