"""
프리코딩 라이브러리 예외 정의
수치 오류는 ArithmeticError, 입력 오류는 ValueError 계열로도 잡을 수 있습니다.
"""

import numpy as np


class PrecodingError(Exception):
    """프리코딩 파이프라인의 모든 예외의 기반 클래스"""


class InvalidBlockProblem(PrecodingError, ValueError):
    """블록 문제(H, S, p0, 변조) 자체가 유효하지 않을 때"""


class DegenerateDecomposition(PrecodingError, ArithmeticError):
    """결정 경계 분해의 2x2 행렬식이 0에 가까울 때"""


class SingularD(PrecodingError, ArithmeticError):
    """D 행렬의 조건수가 허용치를 넘을 때"""

    def __init__(self, message: str, condition: float):
        super().__init__(message)
        self.condition = condition


class ZeroDual(PrecodingError, ArithmeticError):
    """δᵀUδ 가 0에 가까워 μ 를 계산할 수 없을 때"""


class NotSimplex(PrecodingError, ValueError):
    """Frank-Wolfe 에 부분 부호 제약 문제가 들어왔을 때"""


class RankDeficientChannel(PrecodingError, ArithmeticError):
    """H Hᴴ 가 사실상 특이 행렬일 때"""

    def __init__(self, message: str, condition: float):
        super().__init__(message)
        self.condition = condition


class MaxIterExceeded(PrecodingError, ArithmeticError):
    """
    반복 한도 안에 수렴하지 못했을 때 발생합니다.

    Attributes:
        best_x (np.ndarray): 지금까지 목적함수가 가장 작았던 반복점.
        residual (float): best_x 의 projected-gradient 잔차.
        iterations (int): 수행한 반복 횟수.
    """

    def __init__(self, message: str, best_x: np.ndarray, residual: float, iterations: int):
        super().__init__(message)
        self.best_x = best_x
        self.residual = residual
        self.iterations = iterations
