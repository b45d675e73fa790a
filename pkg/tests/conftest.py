import json
from pathlib import Path

import pytest

from kwtorus.surface import build_torus

ORACLES = json.loads((Path(__file__).parent / "oracles" / "frozen.json").read_text())


@pytest.fixture(scope="session")
def oracles():
    return ORACLES


@pytest.fixture(scope="session")
def unit64():
    return build_torus(1.0, 1.0, 64)


@pytest.fixture(scope="session")
def unit128():
    return build_torus(1.0, 1.0, 128)


@pytest.fixture(scope="session")
def rect64():
    return build_torus(2.0, 1.0, 64)
