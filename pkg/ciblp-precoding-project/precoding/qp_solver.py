"""
부분 부호 제약 심플렉스 위의 QP 솔버

min xᵀUx  s.t.  1ᵀx = 1,  x_m ≥ 0 (m ∈ sign_set)

주 알고리즘은 (가속) projected gradient, 교차 검증용은 away-step Frank-Wolfe 입니다.
복원된 프리코더의 최적성은 kkt_certificate 로 확인합니다.
"""

import logging
from dataclasses import dataclass, field
from typing import Iterable, Optional, Tuple, Union

import numpy as np
from scipy.linalg import lstsq

from precoding.blp_assembly import (
    BlockGeometry,
    BlockProblem,
    DualQp,
    PrecodeResult,
    achieved_coefficients,
    build_U,
    stationarity_rhs,
)
from precoding.exceptions import MaxIterExceeded, NotSimplex
from precoding.symbol_geometry import to_W_hat

logger = logging.getLogger(__name__)

BISECTION_TOL = 1e-12
STEP_POLICIES = ("power_iteration",)
NUMERIC_FLOOR = 1e-13
POLISH_ROUNDS = 10

SignSet = Union[np.ndarray, Iterable[int], None]


def _as_mask(sign_set: SignSet, n: int) -> np.ndarray:
    if sign_set is None:
        return np.ones(n, dtype=bool)
    arr = np.asarray(sign_set)
    if arr.dtype == bool:
        if arr.shape != (n,):
            raise ValueError(f"sign_set 마스크 길이 {arr.shape} 가 n={n} 과 다릅니다.")
        return arr.copy()
    mask = np.zeros(n, dtype=bool)
    mask[arr.astype(int)] = True
    return mask


@dataclass(frozen=True)
class QpProblem:
    """
    Attributes:
        U (np.ndarray): n x n 대칭 PSD 행렬.
        sign_set (np.ndarray): 부호 제약 인덱스의 boolean 마스크.
    """

    U: np.ndarray
    sign_set: np.ndarray

    def __post_init__(self):
        U = np.asarray(self.U, dtype=float)
        if U.ndim != 2 or U.shape[0] != U.shape[1]:
            raise ValueError(f"U 는 정방 행렬이어야 합니다: {U.shape}")
        object.__setattr__(self, "U", U)
        object.__setattr__(self, "sign_set", _as_mask(self.sign_set, U.shape[0]))

    @classmethod
    def from_dual(cls, dual: DualQp) -> "QpProblem":
        return cls(dual.U, dual.sign_set)

    @property
    def n(self) -> int:
        return self.U.shape[0]

    @property
    def is_simplex(self) -> bool:
        return bool(np.all(self.sign_set))

    def objective(self, x: np.ndarray) -> float:
        return float(x @ self.U @ x)


@dataclass(frozen=True)
class SolverConfig:
    """
    Attributes:
        tol (float): 상대 정상성 허용치 (잔차 ≤ tol·2f, stationarity_tolerance 참고).
        max_iter (Optional[int]): 반복 한도. None 이면 50·n + 5000.
        step_policy (str): 'power_iteration' (1/L, L 은 2U 의 최대 고유값 추정, 증가 시 backtracking).
        accelerate (bool): FISTA 가속 사용 여부 (목적함수 증가 시 재시작).
        polish (bool): support 에서 출발하는 active-set 으로 해를 다듬을지 여부.
        polish_every (int): 잔차 확인 및 polish 주기.
        power_tol (float): 거듭제곱법 상대 허용치.
        power_seed (int): 거듭제곱법 시작 벡터 시드.
        record_trace (bool): 반복별 목적함수 기록 여부.
    """

    tol: float = 1e-8
    max_iter: Optional[int] = None
    step_policy: str = "power_iteration"
    accelerate: bool = True
    polish: bool = True
    polish_every: int = 10
    power_tol: float = 1e-6
    power_seed: int = 0
    record_trace: bool = False

    def __post_init__(self):
        if not self.tol > 0:
            raise ValueError(f"tol 은 양수여야 합니다: {self.tol}")
        if self.step_policy not in STEP_POLICIES:
            raise ValueError(f"알 수 없는 step policy 입니다: {self.step_policy}")
        if self.polish_every < 1:
            raise ValueError(f"polish_every 는 1 이상이어야 합니다: {self.polish_every}")

    def iteration_limit(self, n: int) -> int:
        return self.max_iter if self.max_iter is not None else 50 * n + 5000


@dataclass(frozen=True)
class QpSolution:
    x: np.ndarray
    objective: float
    iterations: int
    pg_residual: float
    polished: bool = False
    trace: Tuple[float, ...] = field(default=(), repr=False)


@dataclass(frozen=True)
class KktReport:
    """kkt_certificate 의 잔차 보고서. 임계값 판정은 passes() 가 합니다."""

    stationarity: float
    dual_feasibility: float
    primal_feasibility: float
    complementary_slackness: float
    power_slackness: float
    power_gap: float
    t_gap: float

    def passes(
        self,
        stationarity: float = 1e-6,
        primal: float = 1e-8,
        complementary: float = 1e-6,
        power: float = 1e-6,
        dual: float = 1e-10,
    ) -> bool:
        return (
            self.stationarity <= stationarity
            and self.dual_feasibility <= dual
            and self.primal_feasibility <= primal
            and self.complementary_slackness <= complementary
            and self.power_gap <= power
        )

    def as_dict(self) -> dict:
        return {
            "stationarity": self.stationarity,
            "dual_feasibility": self.dual_feasibility,
            "primal_feasibility": self.primal_feasibility,
            "complementary_slackness": self.complementary_slackness,
            "power_slackness": self.power_slackness,
            "power_gap": self.power_gap,
            "t_gap": self.t_gap,
        }


def project_partial_simplex(v: np.ndarray, sign_set: SignSet = None, tol: float = BISECTION_TOL) -> np.ndarray:
    """
    {x : 1ᵀx = 1, x_m ≥ 0 (m ∈ sign_set)} 로의 유클리드 사영

    x_m = max(v_m − θ, 0) (부호 제약), x_m = v_m − θ (자유 변수) 이고,
    θ 는 Σx(θ) = 1 의 근을 이분법으로 1e-12 까지 좁힌 뒤 활성 집합 위에서 정확히 다시 풉니다.

    Args:
        v (np.ndarray): 사영할 벡터.
        sign_set: boolean 마스크, 인덱스 목록, 또는 None (전체 심플렉스).
        tol (float): θ 이분법 허용치.

    Returns:
        np.ndarray: 사영된 벡터.
    """
    v = np.asarray(v, dtype=float)
    n = v.size
    mask = _as_mask(sign_set, n)
    if not mask.any():
        return v - (v.sum() - 1.0) / n

    signed = v[mask]
    free_sum = float(v[~mask].sum())
    n_free = int((~mask).sum())

    def excess(theta: float) -> float:
        return float(np.maximum(signed - theta, 0.0).sum()) + free_sum - n_free * theta - 1.0

    lo, hi = float(v.min()) - 1.0, float(v.max())
    for _ in range(200):
        if hi - lo <= tol:
            break
        mid = 0.5 * (lo + hi)
        if mid <= lo or mid >= hi:
            break
        if excess(mid) > 0.0:
            lo = mid
        else:
            hi = mid

    theta = lo
    active = None
    for _ in range(5):
        current = ~mask | (v > theta)
        if active is not None and np.array_equal(current, active):
            break
        active = current
        theta = (float(v[active].sum()) - 1.0) / int(active.sum())

    x = v - theta
    x[mask] = np.maximum(x[mask], 0.0)
    return x


def estimate_lipschitz(U: np.ndarray, tol: float = 1e-6, seed: int = 0, max_iter: int = 1000) -> float:
    """2U 의 최대 고유값을 고정 시드 거듭제곱법으로 추정합니다."""
    M = 2.0 * U
    v = np.random.default_rng(seed).standard_normal(M.shape[0])
    v /= np.linalg.norm(v)
    estimate = 0.0
    for _ in range(max_iter):
        w = M @ v
        norm = float(np.linalg.norm(w))
        if norm == 0.0:
            return 0.0
        v = w / norm
        if abs(norm - estimate) <= tol * norm:
            return norm
        estimate = norm
    return estimate


def pg_residual(problem: QpProblem, x: np.ndarray, lipschitz: float) -> float:
    """L·‖x − Π(x − ∇f(x)/L)‖ (기울기 단위의 projected-gradient 잔차)"""
    if lipschitz <= 0.0:
        return 0.0
    grad = 2.0 * problem.U @ x
    step = x - project_partial_simplex(x - grad / lipschitz, problem.sign_set)
    return float(lipschitz * np.linalg.norm(step))


def stationarity_tolerance(objective: float, lipschitz: float, tol: float) -> float:
    """
    잔차 판정 기준 tol·2f. 최적점에서 등식 제약의 승수가 2f 이므로 상대 기준입니다.
    기울기를 그보다 정확히 계산할 수 없는 경우를 위해 NUMERIC_FLOOR·L 아래로는 내려가지 않습니다.
    """
    return max(tol * 2.0 * abs(objective), NUMERIC_FLOOR * lipschitz)


def _equality_qp(U: np.ndarray, idx: np.ndarray) -> Tuple[np.ndarray, float]:
    """idx 위에서 min zᵀUz, 1ᵀz = 1 의 KKT 연립방정식 2Uz − ν1 = 0 을 최소제곱으로 풉니다."""
    m = idx.size
    kkt = np.zeros((m + 1, m + 1))
    kkt[:m, :m] = 2.0 * U[np.ix_(idx, idx)]
    kkt[:m, m] = -1.0
    kkt[m, :m] = 1.0
    rhs = np.zeros(m + 1)
    rhs[m] = 1.0
    z = lstsq(kkt, rhs)[0]
    return z[:m], float(z[m])


def _polish(
    problem: QpProblem, x: np.ndarray, lipschitz: float, tol: float, max_rounds: int
) -> Optional[np.ndarray]:
    """
    x 의 support 에서 출발하는 primal active-set 으로 정확한 해를 만듭니다.

    working set 위의 등식 제약 QP 를 풀고, 부호 제약 성분이 음수가 되면 그 방향으로
    ratio test 를 해 막힌 인덱스를 빼고, 모두 실현가능하면 working set 밖 부호 제약 성분의
    기울기가 승수 ν 보다 tol·|ν| 이상 작은 인덱스를 하나 넣습니다. 넣을 인덱스가 없으면
    KKT 조건이 성립한 것이므로 그 점을 돌려줍니다. max_rounds 안에 끝나지 않으면 None.
    """
    mask = problem.sign_set
    x = x.copy()
    x[mask] = np.maximum(x[mask], 0.0)
    working = ~mask | (x > 0.0)
    stalled = -1
    for _ in range(max_rounds):
        idx = np.flatnonzero(working)
        if idx.size == 0:
            return None
        z, nu = _equality_qp(problem.U, idx)
        candidate = np.zeros_like(x)
        candidate[idx] = z
        blocked = mask & working & (candidate < 0.0)
        if blocked.any():
            rows = np.flatnonzero(blocked)
            ratios = x[rows] / (x[rows] - candidate[rows])
            j = int(rows[np.argmin(ratios)])
            ratio = float(np.min(ratios))
            stalled = j if ratio == 0.0 else -1
            x = x + ratio * (candidate - x)
            x[j] = 0.0
            x[mask] = np.maximum(x[mask], 0.0)
            working[j] = False
            continue

        x = candidate
        outside = np.flatnonzero(mask & ~working)
        if outside.size == 0:
            return x
        slack = 2.0 * problem.U[outside] @ x - nu
        j = int(np.argmin(slack))
        # 방금 길이 0 으로 뺀 인덱스를 다시 넣으려 하면 반올림 수준의 퇴화이므로 멈춤
        if slack[j] >= -tol * max(abs(nu), NUMERIC_FLOOR * lipschitz) or outside[j] == stalled:
            return x
        working[outside[j]] = True
    return None


def _finish(
    problem: QpProblem,
    x: np.ndarray,
    f: float,
    iteration: int,
    lipschitz: float,
    config: SolverConfig,
    trace: list,
) -> QpSolution:
    """종료 직전 polish. 실패하면 현재 반복점을 그대로 돌려줍니다."""
    if config.polish:
        candidate = _polish(problem, x, lipschitz, config.tol, 2 * problem.n + 10)
        if candidate is not None:
            f_c = problem.objective(candidate)
            if config.record_trace:
                trace.append(f_c)
            return QpSolution(candidate, f_c, iteration, pg_residual(problem, candidate, lipschitz), True, tuple(trace))
    return QpSolution(x, f, iteration, pg_residual(problem, x, lipschitz), False, tuple(trace))


def _step(problem: QpProblem, point: np.ndarray, lipschitz: float) -> np.ndarray:
    return project_partial_simplex(point - 2.0 * problem.U @ point / lipschitz, problem.sign_set)


def solve_pg(problem: QpProblem, config: SolverConfig = SolverConfig(), x0: Optional[np.ndarray] = None) -> QpSolution:
    """
    (가속) projected gradient 로 QP 를 풉니다.

    목적함수는 반복마다 증가하지 않습니다: 가속 단계가 목적함수를 올리면 모멘텀을 버리고
    현재 점에서 일반 사영 경사 단계를 밟으며, 그래도 오르면 L 을 두 배로 늘립니다.
    잔차가 stationarity_tolerance 이하가 되거나 중간 polish 가 KKT 조건을 만족하면 종료하고,
    반환 직전에는 항상 polish 를 시도합니다.

    Args:
        problem (QpProblem): 풀 문제.
        config (SolverConfig): 솔버 설정.
        x0 (Optional[np.ndarray]): 시작점 (없으면 균등 분포 1/n).

    Returns:
        QpSolution: 해, 목적함수 값, 반복 수, 종료 시 잔차.

    Raises:
        MaxIterExceeded: 반복 한도 안에 수렴하지 않을 때.
    """
    n = problem.n
    x = np.full(n, 1.0 / n) if x0 is None else project_partial_simplex(x0, problem.sign_set)
    f = problem.objective(x)
    lipschitz = estimate_lipschitz(problem.U, config.power_tol, config.power_seed)
    if lipschitz <= 0.0:
        return QpSolution(x=x, objective=f, iterations=0, pg_residual=0.0, trace=(f,))

    trace = [f] if config.record_trace else []
    residual = pg_residual(problem, x, lipschitz)
    if residual <= stationarity_tolerance(f, lipschitz, config.tol):
        return _finish(problem, x, f, 0, lipschitz, config, trace)

    limit = config.iteration_limit(n)
    y = x.copy()
    momentum = 1.0
    last_support = None
    iteration = 0

    for iteration in range(1, limit + 1):
        x_new = _step(problem, y, lipschitz)
        f_new = problem.objective(x_new)
        if f_new > f:
            momentum = 1.0
            for _ in range(30):
                x_new = _step(problem, x, lipschitz)
                f_new = problem.objective(x_new)
                if f_new <= f:
                    break
                lipschitz *= 2.0
            else:
                x_new, f_new = x, f

        if config.accelerate:
            momentum_next = 0.5 * (1.0 + np.sqrt(1.0 + 4.0 * momentum**2))
            y = x_new + ((momentum - 1.0) / momentum_next) * (x_new - x)
            momentum = momentum_next
        else:
            y = x_new
        x, f = x_new, f_new
        if config.record_trace:
            trace.append(f)

        if iteration % config.polish_every and iteration != limit:
            continue
        residual = pg_residual(problem, x, lipschitz)
        if residual <= stationarity_tolerance(f, lipschitz, config.tol) or iteration == limit:
            break
        if config.polish:
            support = ~problem.sign_set | (x > 0.0)
            if last_support is None or not np.array_equal(support, last_support):
                last_support = support
                candidate = _polish(problem, x, lipschitz, config.tol, POLISH_ROUNDS)
                if candidate is not None:
                    f_c = problem.objective(candidate)
                    if config.record_trace:
                        trace.append(f_c)
                    logger.debug(f"polish 로 {iteration}회 반복 후 종료 (n={n})")
                    return QpSolution(
                        candidate, f_c, iteration, pg_residual(problem, candidate, lipschitz), True, tuple(trace)
                    )

    solution = _finish(problem, x, f, iteration, lipschitz, config, trace)
    if solution.polished or residual <= stationarity_tolerance(f, lipschitz, config.tol):
        return solution
    raise MaxIterExceeded(
        f"projected gradient 가 {limit}회 안에 수렴하지 않았습니다 (잔차 {residual:.3e}, n={n}).",
        best_x=x,
        residual=residual,
        iterations=limit,
    )


def solve_fw(problem: QpProblem, config: SolverConfig = SolverConfig(), x0: Optional[np.ndarray] = None) -> QpSolution:
    """
    away-step Frank-Wolfe (이차식 정확 line search). 전체 심플렉스 문제에서만 동작합니다.

    Frank-Wolfe gap 이 stationarity_tolerance 이하가 되거나, support 가 바뀔 때 시도하는
    polish 가 KKT 조건을 만족하면 종료합니다. drop step 은 해당 좌표를 정확히 0 으로 만듭니다.

    Raises:
        NotSimplex: sign_set 이 전체가 아닐 때.
        MaxIterExceeded: 반복 한도 초과.
    """
    if not problem.is_simplex:
        raise NotSimplex("Frank-Wolfe 는 전체 부호 제약(심플렉스) 문제에서만 쓸 수 있습니다.")
    n = problem.n
    U = problem.U
    if n == 1:
        x = np.ones(1)
        return QpSolution(x=x, objective=problem.objective(x), iterations=0, pg_residual=0.0)

    x = np.full(n, 1.0 / n) if x0 is None else project_partial_simplex(x0, None)
    lipschitz = estimate_lipschitz(U, config.power_tol, config.power_seed)
    f = problem.objective(x)
    if lipschitz <= 0.0:
        return QpSolution(x=x, objective=f, iterations=0, pg_residual=0.0, trace=(f,))

    trace = [f] if config.record_trace else []
    limit = config.iteration_limit(n)
    last_support = None
    rounds = 2 * n + 10

    for iteration in range(1, limit + 1):
        Ux = U @ x
        grad = 2.0 * Ux
        toward = int(np.argmin(grad))
        support = np.flatnonzero(x > 0.0)
        away = int(support[np.argmax(grad[support])])
        inner = float(grad @ x)
        fw_gap = inner - grad[toward]
        away_gap = grad[away] - inner

        if fw_gap <= stationarity_tolerance(f, lipschitz, config.tol):
            return _finish(problem, x, f, iteration, lipschitz, config, trace)

        drop = False
        if fw_gap >= away_gap:
            d = -x.copy()
            d[toward] += 1.0
            gamma_max = 1.0
        else:
            d = x.copy()
            d[away] -= 1.0
            gamma_max = x[away] / (1.0 - x[away])

        curvature = float(d @ U @ d)
        slope = float(Ux @ d)
        gamma = gamma_max if curvature <= 0.0 else min(max(-slope / curvature, 0.0), gamma_max)
        if fw_gap < away_gap and gamma >= gamma_max:
            drop = True
        x = x + gamma * d
        if drop:
            x[away] = 0.0
        x[x < 0.0] = 0.0
        x /= x.sum()
        f = problem.objective(x)
        if config.record_trace:
            trace.append(f)

        if iteration % config.polish_every or not config.polish:
            continue
        support_mask = x > 0.0
        if last_support is None or not np.array_equal(support_mask, last_support):
            last_support = support_mask
            candidate = _polish(problem, x, lipschitz, config.tol, rounds)
            if candidate is not None:
                f_c = problem.objective(candidate)
                if config.record_trace:
                    trace.append(f_c)
                return QpSolution(
                    candidate, f_c, iteration, pg_residual(problem, candidate, lipschitz), True, tuple(trace)
                )

    solution = _finish(problem, x, f, limit, lipschitz, config, trace)
    if solution.polished:
        return solution
    raise MaxIterExceeded(
        f"Frank-Wolfe 가 {limit}회 안에 수렴하지 않았습니다 (잔차 {solution.pg_residual:.3e}, n={n}).",
        best_x=x,
        residual=solution.pg_residual,
        iterations=limit,
    )


def kkt_certificate(
    block: BlockProblem,
    geometry: BlockGeometry,
    result: PrecodeResult,
    dual: Optional[DualQp] = None,
) -> KktReport:
    """
    복원된 (W, t*, δ_E, μ) 에 대해 원문제의 KKT 잔차를 계산합니다.

    Ŵ 는 result.W 에서 다시 만들기 때문에 W 를 바꾸면 전력·정상성 잔차가 그대로 반영됩니다.

    Returns:
        KktReport: 정상성(상대 Frobenius), 쌍대 실현가능성, 원 실현가능성(CI 제약과
        QAM 등식 제약, 전력 초과), 상보 여유성, 전력 여유성, 전력 상대 오차, t* 와 쌍대 최적값 차이.
    """
    if dual is None:
        dual = build_U(geometry, block.p0)
    delta = np.asarray(result.delta_E, dtype=float)
    mask = geometry.sign_mask
    W_hat = to_W_hat(result.W)
    budget = block.n_block * block.p0

    rhs = stationarity_rhs(geometry, delta)
    lhs = 2.0 * result.mu * W_hat @ geometry.D
    scale = max(np.linalg.norm(rhs), np.linalg.norm(lhs), np.finfo(float).tiny)
    stationarity = float(np.linalg.norm(lhs - rhs) / scale)

    dual_feasibility = float(max(0.0, -np.min(delta[mask]))) if mask.any() else 0.0

    alpha = achieved_coefficients(geometry, W_hat)
    t = result.t_star
    violations = [0.0]
    if mask.any():
        violations.append(float(np.max(t - alpha[mask])))
    if (~mask).any():
        violations.append(float(np.max(np.abs(alpha[~mask] - t))))
    block_power = float(np.sum(np.abs(result.W @ block.S) ** 2))
    violations.append((block_power - budget) / budget)
    primal_feasibility = max(0.0, max(violations))

    complementary = float(np.max(np.abs(delta * (t - alpha))))
    power_slackness = abs(result.mu * (block_power - budget))
    power_gap = abs(block_power - budget) / budget
    t_gap = abs(t - result.t_dual) / max(abs(t), np.finfo(float).tiny)

    return KktReport(
        stationarity=stationarity,
        dual_feasibility=dual_feasibility,
        primal_feasibility=primal_feasibility,
        complementary_slackness=complementary,
        power_slackness=power_slackness,
        power_gap=power_gap,
        t_gap=t_gap,
    )
