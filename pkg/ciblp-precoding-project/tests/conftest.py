import os
import sys

import numpy as np
import pytest

# 상위 디렉토리의 precoding, simulation 패키지를 import 할 수 있도록 경로 추가
project_root = os.path.dirname(os.path.dirname(os.path.abspath(__file__)))
if project_root not in sys.path:
    sys.path.insert(0, project_root)

from simulation.validation import golden_block, random_block  # noqa: E402


@pytest.fixture
def golden():
    """h=1, s=(1+j)/√2, p0=1 QPSK 스칼라 인스턴스"""
    return golden_block()


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


@pytest.fixture
def make_block(rng):
    """무작위 BlockProblem 생성기. 키워드 인자는 random_block 으로 전달됩니다."""

    def factory(**kwargs):
        return random_block(rng, **kwargs)

    return factory
