"""
불변식 검증 배터리 (validate 명령)

시드 고정 무작위 인스턴스에서 F + G = U 항등식, U 의 대칭/PSD, 계수 경로 일치, KKT 인증,
사영 정확도, 솔버 간 일치, N=1 축약을 확인하고 검사별 최악 잔차를 보고합니다.
"""

import itertools
import logging
from dataclasses import asdict, dataclass
from typing import Callable, List, Optional

import numpy as np
import pandas as pd

from precoding import blp_assembly
from precoding.blp_assembly import BlockProblem
from precoding.exceptions import MaxIterExceeded
from precoding.precoders import PrecoderKind, apply, ci_blp
from precoding.qp_solver import QpProblem, SolverConfig, kkt_certificate, project_partial_simplex, solve_fw, solve_pg
from precoding.symbol_geometry import Modulation, decompose, scaling_from_received, to_W_hat
from simulation.sim_harness import count_symbol_errors, gen_channel, gen_noise, gen_symbols, transmit_detect

logger = logging.getLogger(__name__)

VALIDATION_MODULATIONS = ("qpsk", "8psk", "16qam")


@dataclass(frozen=True)
class CheckResult:
    name: str
    worst: float
    threshold: float
    passed: bool
    detail: str = ""


def golden_block() -> BlockProblem:
    """손으로 추적한 스칼라 인스턴스: h=1, s=(1+j)/√2, p0=1, QPSK"""
    return BlockProblem(np.array([[1.0]]), np.array([[(1 + 1j) / np.sqrt(2.0)]]), 1.0, Modulation.parse("qpsk"))


def random_block(
    rng: np.random.Generator,
    modulations=VALIDATION_MODULATIONS,
    max_k: int = 4,
    max_n_t: int = 6,
    max_n: int = 8,
) -> BlockProblem:
    """K ∈ [1, max_k], N_T ∈ [K, max_n_t], N ∈ [K, max_n] 인 무작위 블록"""
    modulation = Modulation.parse(modulations[rng.integers(len(modulations))])
    k = int(rng.integers(1, max_k + 1))
    n_t = int(rng.integers(k, max(k, max_n_t) + 1))
    n_block = int(rng.integers(k, max(k, max_n) + 1))
    H = gen_channel(k, n_t, rng)
    S = gen_symbols(k, n_block, modulation, rng)
    return BlockProblem(H, S, 1.0, modulation)


def brute_force_projection(v: np.ndarray, mask: np.ndarray) -> np.ndarray:
    """
    부호 제약 인덱스 중 0 으로 고정할 부분집합을 모두 열거하는 사영 오라클 (작은 n 전용).
    """
    v = np.asarray(v, dtype=float)
    signed = np.flatnonzero(mask)
    best, best_dist = None, np.inf
    for r in range(len(signed) + 1):
        for zeroed in itertools.combinations(signed, r):
            keep = np.ones(v.size, dtype=bool)
            keep[list(zeroed)] = False
            if not keep.any():
                continue
            theta = (v[keep].sum() - 1.0) / keep.sum()
            x = np.where(keep, v - theta, 0.0)
            if np.any(x[mask] < -1e-12):
                continue
            dist = float(np.sum((x - v) ** 2))
            if dist < best_dist:
                best, best_dist = x, dist
    return best


def _relative(a: float, b: float) -> float:
    return abs(a - b) / max(abs(a), abs(b), np.finfo(float).tiny)


def check_golden() -> CheckResult:
    result = ci_blp(golden_block(), SolverConfig(tol=1e-12))
    deviations = [
        np.max(np.abs(result.delta_E - 0.5)),
        abs(result.mu - 0.5),
        np.max(np.abs(result.W - 1.0)),
        abs(result.t_star - 1.0),
    ]
    worst = float(max(deviations))
    return CheckResult("golden_instance", worst, 1e-8, worst <= 1e-8, f"δ={result.delta_E}, μ={result.mu:.12f}")


def check_f_plus_g(blocks: List[BlockProblem]) -> CheckResult:
    worst = 0.0
    for block in blocks:
        geometry = blp_assembly.assemble_geometry(block, "pinv")
        U = blp_assembly.build_U(geometry, block.p0).U
        F, G = blp_assembly.build_F_G(geometry)
        worst = max(worst, float(np.linalg.norm(F + G - U) / max(np.linalg.norm(U), np.finfo(float).tiny)))
    return CheckResult("F_plus_G_identity", worst, 1e-10, worst <= 1e-10)


def check_u_structure(blocks: List[BlockProblem]) -> List[CheckResult]:
    symmetry, psd = 0.0, 0.0
    for block in blocks:
        dual = blp_assembly.build_U(blp_assembly.assemble_geometry(block, "pinv"), block.p0)
        symmetry = max(symmetry, dual.symmetry_error)
        psd = max(psd, -dual.psd_margin)
    return [
        CheckResult("U_symmetry", symmetry, 1e-12, symmetry <= 1e-12),
        CheckResult("U_psd", max(psd, 0.0), 1e-8, psd <= 1e-8),
    ]


def check_path_equivalence(rng: np.random.Generator, trials: int) -> CheckResult:
    """M^n Ŵ 경로의 계수가 사용자별 2x2 풀이 계수와 같은지"""
    worst = 0.0
    for _ in range(trials):
        block = random_block(rng)
        W = gen_channel(block.n_t, block.k, rng)
        geometry = blp_assembly.assemble_geometry(block, "pinv")
        alpha = blp_assembly.achieved_coefficients(geometry, to_W_hat(W)).reshape(block.n_block, 2, block.k)
        received = block.H @ W @ block.S
        for n in range(block.n_block):
            for k in range(block.k):
                dec = decompose(block.S[k, n], block.modulation)
                a_A, a_B = scaling_from_received(received[k, n], dec)
                scale = max(1.0, abs(a_A), abs(a_B))
                worst = max(worst, abs(alpha[n, 0, k] - a_A) / scale, abs(alpha[n, 1, k] - a_B) / scale)
    return CheckResult("coefficient_path_equivalence", worst, 1e-10, worst <= 1e-10)


def check_kkt(blocks: List[BlockProblem], solver: SolverConfig) -> List[CheckResult]:
    worst = {"stationarity": 0.0, "primal_feasibility": 0.0, "complementary_slackness": 0.0, "power_gap": 0.0, "t_gap": 0.0}
    for block in blocks:
        result = ci_blp(block, solver, singular_policy="pinv", certify=False)
        geometry = blp_assembly.assemble_geometry(block, "pinv")
        report = kkt_certificate(block, geometry, result).as_dict()
        for key in worst:
            worst[key] = max(worst[key], report[key])
    thresholds = {
        "stationarity": 1e-6,
        "primal_feasibility": 1e-8,
        "complementary_slackness": 1e-6,
        "power_gap": 1e-6,
        "t_gap": 1e-6,
    }
    return [CheckResult(f"kkt_{key}", worst[key], thresholds[key], worst[key] <= thresholds[key]) for key in worst]


def check_projection(rng: np.random.Generator, trials: int) -> CheckResult:
    worst = 0.0
    for _ in range(trials):
        n = int(rng.integers(1, 9))
        v = rng.normal(scale=2.0, size=n)
        mask = rng.random(n) < 0.7
        x = project_partial_simplex(v, mask)
        oracle = brute_force_projection(v, mask)
        worst = max(worst, float(np.max(np.abs(x - oracle))))
    return CheckResult("projection_vs_oracle", worst, 1e-9, worst <= 1e-9)


def check_solver_agreement(rng: np.random.Generator, trials: int, solver: SolverConfig) -> CheckResult:
    """
    전체 심플렉스 QP 에서 projected gradient 와 Frank-Wolfe 목적함수의 상대 차이.
    어느 한쪽이 반복 한도를 넘기면 그 시행은 실패(inf)로 칩니다.
    """
    worst, failures = 0.0, []
    for trial in range(trials):
        n = int(rng.integers(2, 33))
        G = rng.standard_normal((max(1, n // 2), n))
        problem = QpProblem(G.T @ G + 1e-3 * np.eye(n), None)
        try:
            f_pg = solve_pg(problem, solver).objective
            f_fw = solve_fw(problem, solver).objective
        except MaxIterExceeded as e:
            failures.append(f"trial {trial} (n={n}): {e}")
            worst = np.inf
            continue
        worst = max(worst, _relative(f_pg, f_fw))
    return CheckResult("pg_fw_agreement", worst, 1e-6, worst <= 1e-6, "; ".join(failures[:3]))


def check_single_slot(rng: np.random.Generator, trials: int, solver: SolverConfig) -> CheckResult:
    """N=1 에서 CI-BLP 와 CI-SLP 의 W, 오류 수가 같은지"""
    worst = 0.0
    for _ in range(trials):
        block = random_block(rng, max_n=1)
        block = block.slot(0)
        noise = gen_noise(block.k, 1, rng)
        blp = apply(PrecoderKind.CI_BLP, block, config=solver)
        slp = apply(PrecoderKind.CI_SLP, block, config=solver)
        worst = max(worst, float(np.max(np.abs(blp.W - slp.W))))
        errors = [
            count_symbol_errors(transmit_detect(block, p.W, p.gain, 0.5, noise=noise), block.S) for p in (blp, slp)
        ]
        if errors[0] != errors[1]:
            worst = np.inf
    return CheckResult("single_slot_reduction", worst, 1e-8, worst <= 1e-8)


def check_primal(blocks: List[BlockProblem]) -> CheckResult:
    """cvxpy 로 푼 원문제 t* 와 쌍대 경로 t* 의 상대 차이"""
    try:
        from precoding.primal_check import solve_primal
    except ImportError:
        return CheckResult("primal_cross_check", 0.0, 1e-5, True, "cvxpy 미설치, 건너뜀")

    worst = 0.0
    for block in blocks:
        worst = max(worst, _relative(solve_primal(block).t_star, ci_blp(block, certify=False).t_star))
    return CheckResult("primal_cross_check", worst, 1e-5, worst <= 1e-5)


def _guarded(name: str, fn: Callable[[], object]) -> List[CheckResult]:
    try:
        out = fn()
        return out if isinstance(out, list) else [out]
    except Exception as e:
        logger.error(f"검사 '{name}' 실행 중 오류 발생: {e}", exc_info=True)
        return [CheckResult(name, float("inf"), 0.0, False, f"{type(e).__name__}: {e}")]


def run_validation(seed: int = 0, instances: int = 40, solver: Optional[SolverConfig] = None) -> List[CheckResult]:
    """
    검증 배터리 전체를 실행합니다. 검사 하나가 예외를 내도 나머지는 계속 실행됩니다.

    Args:
        seed (int): 인스턴스 생성 시드.
        instances (int): 무작위 블록 수 (다른 검사의 시행 횟수도 이 값에 비례).
        solver (Optional[SolverConfig]): CI-BLP 솔버 설정.

    Returns:
        List[CheckResult]: 검사별 결과.
    """
    solver = solver or SolverConfig(tol=1e-10)
    rng = np.random.default_rng(np.random.SeedSequence([int(seed), 0]))
    blocks = [random_block(rng) for _ in range(instances)]

    def sub(i: int) -> np.random.Generator:
        return np.random.default_rng(np.random.SeedSequence([int(seed), i]))

    logger.info(f"검증 배터리 시작: seed={seed}, 인스턴스 {instances}개")
    results: List[CheckResult] = []
    results += _guarded("golden_instance", check_golden)
    results += _guarded("F_plus_G_identity", lambda: check_f_plus_g(blocks))
    results += _guarded("U_structure", lambda: check_u_structure(blocks))
    results += _guarded("coefficient_path_equivalence", lambda: check_path_equivalence(sub(1), instances))
    results += _guarded("kkt", lambda: check_kkt(blocks, solver))
    results += _guarded("projection_vs_oracle", lambda: check_projection(sub(2), 25 * instances))
    results += _guarded("pg_fw_agreement", lambda: check_solver_agreement(sub(3), instances, solver))
    results += _guarded("single_slot_reduction", lambda: check_single_slot(sub(4), instances, solver))
    results += _guarded("primal_cross_check", lambda: check_primal(blocks[: min(5, len(blocks))]))

    for r in results:
        level = logging.INFO if r.passed else logging.ERROR
        logger.log(level, f"{'PASS' if r.passed else 'FAIL'} {r.name}: worst={r.worst:.3e} (기준 {r.threshold:.1e}) {r.detail}")
    return results


def report_frame(results: List[CheckResult]) -> pd.DataFrame:
    return pd.DataFrame([asdict(r) for r in results], columns=["name", "worst", "threshold", "passed", "detail"])
