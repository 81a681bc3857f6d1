import sys
from pathlib import Path

import pytest

SRC = Path(__file__).resolve().parent.parent / "src"
if str(SRC) not in sys.path:
    try:
        import pulselut  # noqa: F401
    except ImportError:
        sys.path.insert(0, str(SRC))

from pulselut import builders  # noqa: E402
from pulselut.provider import GateProvider  # noqa: E402


@pytest.fixture
def context():
    return builders.CalibrationContext()


@pytest.fixture
def provider(context):
    return GateProvider(builders.standard_registry(), context)


@pytest.fixture
def compiler(provider):
    from pulselut.compiler import Compiler

    return Compiler(provider)
