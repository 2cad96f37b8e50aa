"""
사용자용 프리코더 생성기

CI-BLP (PSK/QAM), N=1 특수화인 CI-SLP, 블록 전력 정규화 ZF/RZF 를 제공합니다.
"""

import logging
import time
from dataclasses import replace
from enum import Enum
from typing import List, NamedTuple, Optional, Tuple

import numpy as np
from scipy.linalg import cho_factor, cho_solve, eigvalsh

from precoding import blp_assembly
from precoding.blp_assembly import BlockProblem, PrecodeResult
from precoding.exceptions import PrecodingError, RankDeficientChannel
from precoding.qp_solver import QpProblem, SolverConfig, kkt_certificate, solve_fw, solve_pg
from precoding.symbol_geometry import Modulation

logger = logging.getLogger(__name__)

CHANNEL_CONDITION_LIMIT = 1e12


class PrecoderKind(str, Enum):
    """프리코딩 방식. RZF 의 ρ 는 apply() 에 따로 넘깁니다 (ρ > 0)."""

    CI_BLP = "ci_blp"
    CI_SLP = "ci_slp"
    ZF = "zf"
    RZF = "rzf"
    CI_BLP_CVX = "ci_blp_cvx"

    @property
    def is_ci(self) -> bool:
        return self in (PrecoderKind.CI_BLP, PrecoderKind.CI_SLP, PrecoderKind.CI_BLP_CVX)


class Precoding(NamedTuple):
    """
    블록 한 개에 대한 송신 준비 결과

    Attributes:
        W (np.ndarray): (N, N_T, K) 슬롯별 프리코더.
        gain (np.ndarray): (K, N) 수신기가 나누는 genie 스케일 (CI 는 t*, ZF/RZF 는 diag(HW)).
        results (List[PrecodeResult]): CI 방식의 결과 (CI-SLP 는 슬롯별, 그 외는 비어 있거나 1개).
        solve_seconds (float): QP 풀이(또는 선형 프리코더 계산)에 쓴 시간.
    """

    W: np.ndarray
    gain: np.ndarray
    results: List[PrecodeResult]
    solve_seconds: float


def _solve(problem: QpProblem, config: SolverConfig, method: str):
    if method == "fw":
        return solve_fw(problem, config)
    return solve_pg(problem, config)


def ci_blp(
    block: BlockProblem,
    config: Optional[SolverConfig] = None,
    singular_policy: str = "pinv",
    method: str = "pg",
    certify: bool = True,
) -> PrecodeResult:
    """
    블록 단위 CI 프리코딩

    PSK 는 전체 부호 제약 쌍대 QP, QAM 은 CI-eligible 인덱스만 부호 제약인 QP 를 풀고,
    닫힌 형태로 프리코더를 복원한 뒤 KKT 잔차로 인증합니다. QAM 에서 t_star 는
    수신기에 알려줄 블록 상수 정규화 계수이기도 합니다.

    Args:
        block (BlockProblem): 블록 문제.
        config (Optional[SolverConfig]): QP 솔버 설정.
        singular_policy (str): D 가 특이일 때 'raise' 또는 'pinv'.
        method (str): 'pg' (projected gradient) 또는 'fw' (Frank-Wolfe, PSK 전용).
        certify (bool): KKT 잔차를 계산해 인증 실패 시 경고를 남길지 여부.

    Returns:
        PrecodeResult: 프리코더, t*, 쌍대 변수, 진단값. solve_seconds 는 QP 풀이 시간만 포함합니다.

    Raises:
        SingularD, MaxIterExceeded, ZeroDual: 블록 크기 정보와 함께 로그를 남기고 다시 발생시킵니다.
    """
    config = config or SolverConfig()
    try:
        geometry = blp_assembly.assemble_geometry(block, singular_policy)
        dual = blp_assembly.build_U(geometry, block.p0)
        problem = QpProblem.from_dual(dual)
        started = time.perf_counter()
        solution = _solve(problem, config, method)
        elapsed = time.perf_counter() - started
        result = blp_assembly.recover_precoder(solution.x, geometry, block, dual)
    except PrecodingError as e:
        logger.error(
            f"CI-BLP 실패 (K={block.k}, N_T={block.n_t}, N={block.n_block}, {block.modulation.name}): "
            f"{type(e).__name__}: {e}"
        )
        raise

    result = replace(result, qp=solution, solve_seconds=elapsed)
    if certify:
        report = kkt_certificate(block, geometry, result, dual)
        if not report.passes():
            logger.warning(f"KKT 인증 잔차가 기준을 넘었습니다: {report.as_dict()}")
    logger.debug(
        f"CI-BLP 완료: t*={result.t_star:.6f}, μ={result.mu:.6f}, 반복={solution.iterations}, "
        f"polish={solution.polished}, {elapsed * 1e3:.3f} ms"
    )
    return result


def ci_slp(
    H: np.ndarray,
    s_n: np.ndarray,
    p0: float,
    modulation: Modulation,
    config: Optional[SolverConfig] = None,
    singular_policy: str = "pinv",
    method: str = "pg",
) -> PrecodeResult:
    """심볼 벡터 하나(N=1)에 대한 CI 프리코딩. ci_blp 와 같은 코드 경로를 씁니다."""
    block = BlockProblem(H, np.asarray(s_n, dtype=complex).reshape(-1, 1), p0, modulation)
    return ci_blp(block, config, singular_policy, method)


def _channel_gram_factor(H: np.ndarray, loading: float = 0.0):
    gram = H @ H.conj().T + loading * np.eye(H.shape[0])
    eigenvalues = eigvalsh(gram)
    condition = float(eigenvalues[-1] / eigenvalues[0]) if eigenvalues[0] > 0 else float("inf")
    if condition > CHANNEL_CONDITION_LIMIT:
        raise RankDeficientChannel(f"H Hᴴ 의 조건수 {condition:.3e} 가 한계를 넘습니다.", condition)
    return cho_factor(gram, lower=True)


def zf_unnormalized(H: np.ndarray) -> np.ndarray:
    """Hᴴ (H Hᴴ)⁻¹"""
    H = np.asarray(H, dtype=complex)
    factor = _channel_gram_factor(H)
    return H.conj().T @ cho_solve(factor, np.eye(H.shape[0], dtype=complex))


def rzf_unnormalized(H: np.ndarray, rho: float) -> np.ndarray:
    """Hᴴ (H Hᴴ + (K/ρ) I)⁻¹"""
    if not rho > 0:
        raise ValueError(f"RZF 의 ρ 는 양수여야 합니다: {rho}")
    H = np.asarray(H, dtype=complex)
    factor = _channel_gram_factor(H, H.shape[0] / rho)
    return H.conj().T @ cho_solve(factor, np.eye(H.shape[0], dtype=complex))


def block_normalize(W: np.ndarray, S: np.ndarray, p0: float) -> Tuple[np.ndarray, float]:
    """f = sqrt(Σ_n ‖W s^n‖² / (N p0)) 로 나눠 블록 전력을 N·p0 로 맞춥니다."""
    n_block = S.shape[1]
    scaling = float(np.sqrt(np.sum(np.abs(W @ S) ** 2) / (n_block * p0)))
    return W / scaling, scaling


def zf(block: BlockProblem) -> Tuple[np.ndarray, float]:
    """블록 전력 정규화 ZF. (W, f_ZF) 를 돌려줍니다."""
    return block_normalize(zf_unnormalized(block.H), block.S, block.p0)


def rzf(block: BlockProblem, rho: float) -> Tuple[np.ndarray, float]:
    """블록 전력 정규화 RZF. (W, f_RZF) 를 돌려줍니다."""
    return block_normalize(rzf_unnormalized(block.H, rho), block.S, block.p0)


def apply(
    kind: PrecoderKind,
    block: BlockProblem,
    rho: Optional[float] = None,
    config: Optional[SolverConfig] = None,
    singular_policy: str = "pinv",
    method: str = "pg",
) -> Precoding:
    """
    방식에 따라 블록을 프리코딩하고 검출에 필요한 genie 스케일을 함께 돌려줍니다.

    CI-SLP 는 슬롯마다 따로 최적화하므로 슬롯별 W 와 t* 를 가집니다.
    """
    kind = PrecoderKind(kind)
    n_block, k = block.n_block, block.k

    if kind is PrecoderKind.CI_BLP:
        result = ci_blp(block, config, singular_policy, method)
        W = np.broadcast_to(result.W, (n_block,) + result.W.shape)
        return Precoding(W, np.full((k, n_block), result.t_star), [result], result.solve_seconds)

    if kind is PrecoderKind.CI_SLP:
        results = [ci_blp(block.slot(n), config, singular_policy, method) for n in range(n_block)]
        W = np.stack([r.W for r in results])
        gain = np.tile(np.array([r.t_star for r in results]), (k, 1))
        return Precoding(W, gain, results, float(sum(r.solve_seconds for r in results)))

    if kind is PrecoderKind.CI_BLP_CVX:
        from precoding.primal_check import solve_primal

        started = time.perf_counter()
        primal = solve_primal(block)
        elapsed = time.perf_counter() - started
        W = np.broadcast_to(primal.W, (n_block,) + primal.W.shape)
        return Precoding(W, np.full((k, n_block), primal.t_star), [], elapsed)

    started = time.perf_counter()
    if kind is PrecoderKind.ZF:
        W, _ = zf(block)
    else:
        if rho is None:
            raise ValueError("RZF 에는 ρ 가 필요합니다.")
        W, _ = rzf(block, rho)
    elapsed = time.perf_counter() - started
    gain = np.real(np.diag(block.H @ W))
    return Precoding(
        np.broadcast_to(W, (n_block,) + W.shape),
        np.tile(gain[:, None], (1, n_block)),
        [],
        elapsed,
    )
