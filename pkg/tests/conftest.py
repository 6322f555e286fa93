from __future__ import annotations

import sys
from pathlib import Path

import numpy as np
import pytest

# Add project root to Python path
project_root = Path(__file__).parent.parent
sys.path.insert(0, str(project_root))

from src.coding.codecs import Level0Codec
from src.coding.enumcode import SourceModel
from src.schemes.multilevel import LevelPlan, make_plan


def _digits(*patterns: str) -> np.ndarray:
    return np.array([int(c) for c in "".join(patterns)], dtype=np.int64)


@pytest.fixture
def digits():
    """Concatenate digit strings into one symbol array."""
    return _digits


@pytest.fixture
def rng() -> np.random.Generator:
    return np.random.default_rng(12345)


@pytest.fixture
def binary() -> SourceModel:
    return SourceModel.uniform(2)


@pytest.fixture
def skewed() -> SourceModel:
    return SourceModel.from_probabilities(["1/4", "3/4"])


@pytest.fixture
def toy_plan(binary: SourceModel) -> LevelPlan:
    """b = (4, 2, 2), eps = 1/2 everywhere: k = (6, 10, 18) over 16 symbols."""
    codec = Level0Codec.typical(binary, 4, "1/2")
    return LevelPlan.from_ladder(binary, codec, 16, ["1/2", "1/2"], [2, 2])


@pytest.fixture
def small_plan(binary: SourceModel) -> LevelPlan:
    """b_0 = 8 standard ladder over 1024 symbols (one level above level 0)."""
    return make_plan(binary, "1/2", 1024, b0=8)


@pytest.fixture
def alternating():
    def build(n: int) -> np.ndarray:
        return np.tile(np.array([0, 1], dtype=np.int64), n // 2)

    return build
