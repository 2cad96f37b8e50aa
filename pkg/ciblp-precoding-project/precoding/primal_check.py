"""
원문제(max t, CI 제약, 블록 전력 제약)를 cvxpy 로 직접 푸는 교차 검증용 모듈
쌍대 QP 경로와 t* 가 일치하는지 확인하는 데 씁니다.
"""

import logging
from typing import NamedTuple, Optional, Sequence

import cvxpy as cp
import numpy as np

from precoding.blp_assembly import BlockProblem, build_slot_geometry, minimum_scaling
from precoding.exceptions import PrecodingError
from precoding.symbol_geometry import from_W_hat

logger = logging.getLogger(__name__)

DEFAULT_SOLVERS = ("CLARABEL", "ECOS", "SCS")


class PrimalSolution(NamedTuple):
    W: np.ndarray
    W_hat: np.ndarray
    t_star: float
    block_power: float
    status: str


def solve_primal(block: BlockProblem, solvers: Optional[Sequence[str]] = None) -> PrimalSolution:
    """
    실수 변수 Ŵ (N_T x 2K) 와 t 에 대한 SOCP 를 풉니다.

    eligible 계수는 α ≥ t, locked 계수는 α = t, Σ_n ‖Ŵ s_E^n‖² + ‖Ŵ c_E^n‖² ≤ N·p0.

    Args:
        block (BlockProblem): 블록 문제.
        solvers (Optional[Sequence[str]]): 시도할 cvxpy 솔버 순서.

    Returns:
        PrimalSolution: 복소 프리코더, Ŵ, 최소 달성 계수, 블록 전력, 솔버 상태.

    Raises:
        PrecodingError: 모든 솔버가 실패했을 때.
    """
    slots = [build_slot_geometry(block, n) for n in range(block.n_block)]
    W_hat = cp.Variable((block.n_t, 2 * block.k))
    t = cp.Variable()

    constraints = []
    for slot in slots:
        alpha = slot.A @ (W_hat @ slot.s_E) + slot.B @ (W_hat @ slot.c_E)
        eligible = slot.eligibility.eligible
        locked = slot.eligibility.locked
        if eligible.size:
            constraints.append(alpha[eligible] >= t)
        if locked.size:
            constraints.append(alpha[locked] == t)
    Z = np.stack([slot.s_E for slot in slots], axis=1)
    C = np.stack([slot.c_E for slot in slots], axis=1)
    budget = block.n_block * block.p0
    constraints.append(cp.sum_squares(W_hat @ Z) + cp.sum_squares(W_hat @ C) <= budget)
    problem = cp.Problem(cp.Maximize(t), constraints)

    last_error = None
    for name in solvers or DEFAULT_SOLVERS:
        try:
            problem.solve(solver=name)
        except Exception as e:
            last_error = e
            logger.debug(f"cvxpy 솔버 {name} 실패: {e}")
            continue
        if problem.status in (cp.OPTIMAL, cp.OPTIMAL_INACCURATE) and W_hat.value is not None:
            break
        last_error = RuntimeError(f"솔버 상태: {problem.status}")
    else:
        raise PrecodingError(f"원문제 풀이에 실패했습니다: {last_error}")

    W_hat_value = np.asarray(W_hat.value, dtype=float)
    W = from_W_hat(W_hat_value)
    alpha = np.concatenate(
        [slot.A @ W_hat_value @ slot.s_E + slot.B @ W_hat_value @ slot.c_E for slot in slots]
    )
    mask = np.concatenate([slot.eligibility.mask for slot in slots])
    return PrimalSolution(
        W=W,
        W_hat=W_hat_value,
        t_star=minimum_scaling(alpha, mask),
        block_power=float(np.sum(np.abs(W @ block.S) ** 2)),
        status=str(problem.status),
    )
