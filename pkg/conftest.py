import sys
from pathlib import Path

import numpy as np
import pytest

ROOT = Path(__file__).resolve().parent
if str(ROOT) not in sys.path:
    sys.path.insert(0, str(ROOT))

from core.grid_core import SpaceGrid, TimeGrid  # noqa: E402


@pytest.fixture
def scalar_space() -> SpaceGrid:
    return SpaceGrid.euclidean(1)


@pytest.fixture
def unit_grid() -> TimeGrid:
    return TimeGrid(1.0, 200)


@pytest.fixture
def rng() -> np.random.Generator:
    return np.random.default_rng(1234)


@pytest.fixture
def output_root(tmp_path, monkeypatch) -> Path:
    root = tmp_path / "runs"
    monkeypatch.setenv("PILAB_OUTPUT_ROOT", str(root))
    monkeypatch.setenv("PILAB_LOG_DIR", str(tmp_path / "logs"))
    monkeypatch.setenv("PILAB_DB_PATH", str(tmp_path / "pilab.db"))
    return root
