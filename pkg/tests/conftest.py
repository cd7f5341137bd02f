import os
import sys

import pytest

# Add root and tests to sys.path
sys.path.append(os.path.dirname(os.path.dirname(os.path.abspath(__file__))))
sys.path.append(os.path.dirname(os.path.abspath(__file__)))

from helpers import corpus_model


@pytest.fixture(scope="session")
def free_sqrt():
    return corpus_model("free-sqrt")


@pytest.fixture(scope="session")
def relativistic():
    return corpus_model("relativistic-particle")


@pytest.fixture(scope="session")
def double_root():
    return corpus_model("double-root")


@pytest.fixture(scope="session")
def rebased_q():
    return corpus_model("double-root-rebased-q")


@pytest.fixture(scope="session")
def rebased_p():
    return corpus_model("double-root-rebased-p")


@pytest.fixture(scope="session")
def triple_rebased():
    return corpus_model("triple-root-rebased")
