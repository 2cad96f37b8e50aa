"""
블록 단위 행렬 조립 모듈

D, 계수 p/f/g/q, 쌍대 행렬 U (및 진단용 F, G) 를 만들고,
쌍대 해 δ_E 로부터 닫힌 형태의 프리코더를 복원합니다.
"""

import logging
from dataclasses import dataclass, field, replace
from functools import cached_property
from typing import List, NamedTuple, Optional, Tuple

import numpy as np
from scipy.linalg import cho_factor, cho_solve, eigvalsh, pinvh

from precoding.exceptions import InvalidBlockProblem, SingularD, ZeroDual
from precoding.symbol_geometry import (
    Modulation,
    SlotGeometry,
    expand_real,
    from_W_hat,
    slot_eligibility,
    stack_M,
)

logger = logging.getLogger(__name__)

D_CONDITION_LIMIT = 1e12
ZERO_DUAL_TOL = 1e-14
SINGULAR_POLICIES = ("raise", "pinv")


@dataclass(frozen=True)
class BlockProblem:
    """
    하나의 coherence interval 에 해당하는 문제 인스턴스

    Attributes:
        H (np.ndarray): K x N_T 복소 채널 (행이 사용자 채널 h_kᵀ).
        S (np.ndarray): K x N 심볼 블록 (열이 슬롯 심볼 벡터 s^n).
        p0 (float): 슬롯당 전력 예산.
        modulation (Modulation): 변조 방식.
    """

    H: np.ndarray
    S: np.ndarray
    p0: float
    modulation: Modulation

    def __post_init__(self):
        H = np.atleast_2d(np.asarray(self.H, dtype=complex))
        S = np.asarray(self.S, dtype=complex)
        if S.ndim == 1:
            S = S.reshape(-1, 1)
        object.__setattr__(self, "H", H)
        object.__setattr__(self, "S", S)
        k, n_t = H.shape
        if k > n_t:
            raise InvalidBlockProblem(f"사용자 수 K={k} 가 송신 안테나 수 N_T={n_t} 보다 많습니다.")
        if S.shape[0] != k:
            raise InvalidBlockProblem(f"심볼 블록의 행 수 {S.shape[0]} 가 K={k} 와 다릅니다.")
        if S.shape[1] < 1:
            raise InvalidBlockProblem("블록 길이 N 은 1 이상이어야 합니다.")
        if not self.p0 > 0:
            raise InvalidBlockProblem(f"p0 는 양수여야 합니다: {self.p0}")
        points = self.modulation.constellation()
        distance = np.min(np.abs(S[..., None] - points), axis=-1)
        if np.any(distance > 1e-9):
            raise InvalidBlockProblem(f"{self.modulation.name} 성상점이 아닌 심볼이 있습니다.")

    @property
    def k(self) -> int:
        return self.H.shape[0]

    @property
    def n_t(self) -> int:
        return self.H.shape[1]

    @property
    def n_block(self) -> int:
        return self.S.shape[1]

    def slot(self, n: int) -> "BlockProblem":
        """슬롯 n 하나만 담은 N=1 블록"""
        return BlockProblem(self.H, self.S[:, n : n + 1], self.p0, self.modulation)


class DFactor(NamedTuple):
    D: np.ndarray
    Dinv: np.ndarray
    rank: int
    condition: float
    pseudo: bool


class Coefficients(NamedTuple):
    p: np.ndarray
    f: np.ndarray
    g: np.ndarray
    q: np.ndarray


@dataclass(frozen=True)
class BlockGeometry:
    """슬롯 기하량, D 와 그 (의사)역행렬, 계수 p/f/g/q"""

    slots: List[SlotGeometry]
    D: np.ndarray
    Dinv: np.ndarray
    coeffs: Optional[Coefficients] = None
    d_rank: int = 0
    d_condition: float = 1.0
    d_pseudo: bool = False

    @property
    def n_block(self) -> int:
        return len(self.slots)

    @property
    def k(self) -> int:
        return self.slots[0].s_E.size // 2

    @cached_property
    def A(self) -> np.ndarray:
        return np.stack([slot.A for slot in self.slots])

    @cached_property
    def B(self) -> np.ndarray:
        return np.stack([slot.B for slot in self.slots])

    @cached_property
    def s_E(self) -> np.ndarray:
        return np.stack([slot.s_E for slot in self.slots])

    @cached_property
    def c_E(self) -> np.ndarray:
        return np.stack([slot.c_E for slot in self.slots])

    @cached_property
    def sign_mask(self) -> np.ndarray:
        """슬롯 우선 순서로 쌓은 2NK 개의 CI-eligible 표시"""
        return np.concatenate([slot.eligibility.mask for slot in self.slots])


@dataclass(frozen=True)
class DualQp:
    """
    쌍대 QP: min δᵀUδ, 1ᵀδ = 1, sign_set 위에서 δ ≥ 0

    Attributes:
        U (np.ndarray): 2NK x 2NK 대칭 PSD 행렬.
        sign_set (np.ndarray): 부호 제약이 걸린 인덱스의 boolean 마스크.
        n_block (int): 블록 길이 N (μ 복원용).
        p0 (float): 슬롯당 전력 예산 (μ 복원용).
    """

    U: np.ndarray
    sign_set: np.ndarray
    n_block: int
    p0: float

    @property
    def sign_indices(self) -> np.ndarray:
        return np.flatnonzero(self.sign_set)

    @property
    def symmetry_error(self) -> float:
        scale = max(np.linalg.norm(self.U), np.finfo(float).tiny)
        return float(np.linalg.norm(self.U - self.U.T) / scale)

    @property
    def psd_margin(self) -> float:
        """최소 고유값 / ‖U‖ (−1e-8 이상이면 PSD 로 간주)"""
        scale = max(np.linalg.norm(self.U), np.finfo(float).tiny)
        sym = 0.5 * (self.U + self.U.T)
        return float(eigvalsh(sym, subset_by_index=[0, 0])[0] / scale)


@dataclass(frozen=True)
class PrecodeResult:
    """
    프리코딩 결과와 쌍대 변수, 진단값

    block_power 는 N·p0 와 같아야 하고 (전력 제약 활성),
    t_star 는 슬롯과 CI-eligible 인덱스 전체에서의 최소 달성 계수입니다.
    """

    W: np.ndarray
    W_hat: np.ndarray
    t_star: float
    mu: float
    delta_E: np.ndarray
    block_power: float
    alpha: np.ndarray
    slot_min_alpha: np.ndarray
    t_dual: float
    qp: Optional[object] = field(default=None, compare=False)
    solve_seconds: float = 0.0


def build_slot_geometry(block: BlockProblem, n: int) -> SlotGeometry:
    """슬롯 n 의 M^n, A^n = M^n P, B^n = M^n Q, s_E^n, c_E^n 을 계산합니다."""
    if not 0 <= n < block.n_block:
        raise IndexError(f"슬롯 인덱스 {n} 가 범위 [0, {block.n_block}) 밖입니다.")
    s = block.S[:, n]
    M = stack_M(block.H, s, block.modulation)
    n_t = block.n_t
    s_E = np.concatenate([s.real, s.imag])
    c_E = np.concatenate([s.imag, -s.real])
    return SlotGeometry(
        M=M,
        A=M[:, :n_t],
        B=M[:, n_t:],
        s_E=s_E,
        c_E=c_E,
        eligibility=slot_eligibility(s, block.modulation),
    )


def build_D(slots: List[SlotGeometry], policy: str = "raise") -> DFactor:
    """
    D = Σ_n (s_E s_Eᵀ + c_E c_Eᵀ) 와 그 역행렬을 계산합니다.

    조건수가 1e12 이하이면 Cholesky 분해로 역행렬을 구합니다. 그 이상이면
    policy='raise' 는 SingularD 를, policy='pinv' 는 대칭 고유분해 기반
    의사역행렬을 사용합니다. D 의 행공간이 정상성 조건 우변의 행을 모두 포함하므로
    의사역행렬로도 복원식, 전력 항등식, F + G = U 항등식이 그대로 성립합니다.

    Args:
        slots (List[SlotGeometry]): 블록의 슬롯 기하량.
        policy (str): 'raise' 또는 'pinv'.

    Returns:
        DFactor: D, Dinv, 수치 rank, 조건수, 의사역행렬 사용 여부.

    Raises:
        SingularD: policy='raise' 이고 조건수가 1e12 를 넘을 때.
    """
    if policy not in SINGULAR_POLICIES:
        raise ValueError(f"알 수 없는 singular policy 입니다: {policy}")
    Z = np.stack([slot.s_E for slot in slots], axis=1)
    C = np.stack([slot.c_E for slot in slots], axis=1)
    D = Z @ Z.T + C @ C.T
    eigenvalues = eigvalsh(D)
    top = eigenvalues[-1]
    condition = float(top / eigenvalues[0]) if eigenvalues[0] > 0 else float("inf")
    rank = int(np.sum(eigenvalues > D_CONDITION_LIMIT ** -1 * top))

    if condition <= D_CONDITION_LIMIT:
        factor = cho_factor(D, lower=True)
        Dinv = cho_solve(factor, np.eye(D.shape[0]))
        return DFactor(D, 0.5 * (Dinv + Dinv.T), rank, condition, False)

    if policy == "raise":
        raise SingularD(
            f"D 의 조건수 {condition:.3e} 가 한계 {D_CONDITION_LIMIT:.0e} 를 넘습니다 (N={len(slots)}, rank={rank}).",
            condition,
        )
    logger.debug(f"D 가 특이 행렬이라 의사역행렬을 사용합니다: rank={rank}/{D.shape[0]}, cond={condition:.3e}")
    Dinv = pinvh(D, atol=0.0, rtol=D_CONDITION_LIMIT ** -1)
    return DFactor(D, 0.5 * (Dinv + Dinv.T), rank, condition, True)


def build_coeffs(geometry: BlockGeometry) -> Coefficients:
    """
    N x N 계수 행렬을 계산합니다.

    p_{m,n} = s^nᵀ D⁻¹ s^m, f_{m,n} = c^nᵀ D⁻¹ s^m,
    g_{m,n} = s^nᵀ D⁻¹ c^m, q_{m,n} = c^nᵀ D⁻¹ c^m.
    """
    Z = geometry.s_E.T
    C = geometry.c_E.T
    Dinv = geometry.Dinv
    p = Z.T @ Dinv @ Z
    f = Z.T @ Dinv @ C
    g = C.T @ Dinv @ Z
    q = C.T @ Dinv @ C
    return Coefficients(p, f, g, q)


def assemble_geometry(block: BlockProblem, singular_policy: str = "raise") -> BlockGeometry:
    """슬롯 기하량, D, 계수를 한 번에 조립합니다."""
    slots = [build_slot_geometry(block, n) for n in range(block.n_block)]
    factor = build_D(slots, singular_policy)
    geometry = BlockGeometry(
        slots=slots,
        D=factor.D,
        Dinv=factor.Dinv,
        d_rank=factor.rank,
        d_condition=factor.condition,
        d_pseudo=factor.pseudo,
    )
    return replace(geometry, coeffs=build_coeffs(geometry))


def _assemble_blocks(
    geometry: BlockGeometry,
    c_aa: np.ndarray,
    c_ab: np.ndarray,
    c_ba: np.ndarray,
    c_bb: np.ndarray,
) -> np.ndarray:
    """(m, n) 블록이 c_aa·A^m A^nᵀ + c_ab·A^m B^nᵀ + c_ba·B^m A^nᵀ + c_bb·B^m B^nᵀ 인 행렬"""
    A, B = geometry.A, geometry.B
    n_block, two_k, _ = A.shape
    AA = np.einsum("mit,njt->minj", A, A)
    AB = np.einsum("mit,njt->minj", A, B)
    BA = np.einsum("mit,njt->minj", B, A)
    BB = np.einsum("mit,njt->minj", B, B)
    blocks = (
        c_aa[:, None, :, None] * AA
        + c_ab[:, None, :, None] * AB
        + c_ba[:, None, :, None] * BA
        + c_bb[:, None, :, None] * BB
    )
    size = n_block * two_k
    return blocks.reshape(size, size)


def build_U(geometry: BlockGeometry, p0: float = 1.0) -> DualQp:
    """
    쌍대 행렬 U 를 블록 단위로 조립합니다.

    U_{m,n} = p_{m,n} A^m A^nᵀ + f_{m,n} A^m B^nᵀ + g_{m,n} B^m A^nᵀ + q_{m,n} B^m B^nᵀ.
    부호 제약 집합은 PSK 이면 전체, QAM 이면 CI-eligible 인덱스입니다.
    """
    if geometry.coeffs is None:
        geometry = replace(geometry, coeffs=build_coeffs(geometry))
    p, f, g, q = geometry.coeffs
    U = _assemble_blocks(geometry, p, f, g, q)
    return DualQp(U=U, sign_set=geometry.sign_mask.copy(), n_block=geometry.n_block, p0=p0)


def build_F_G(geometry: BlockGeometry) -> Tuple[np.ndarray, np.ndarray]:
    """
    진단용 F = Σ_l F^l, G = Σ_l G^l 을 슬롯 l 별로 누적합니다 (F + G = U 검증용).

    F^l_{m,n} = p_{l,n}p_{m,l} AAᵀ + f_{l,n}p_{m,l} ABᵀ + p_{l,n}g_{m,l} BAᵀ + f_{l,n}g_{m,l} BBᵀ
    G^l_{m,n} = g_{l,n}f_{m,l} AAᵀ + q_{l,n}f_{m,l} ABᵀ + g_{l,n}q_{m,l} BAᵀ + q_{l,n}q_{m,l} BBᵀ
    """
    if geometry.coeffs is None:
        geometry = replace(geometry, coeffs=build_coeffs(geometry))
    p, f, g, q = geometry.coeffs
    size = geometry.n_block * 2 * geometry.k
    F = np.zeros((size, size))
    G = np.zeros((size, size))
    for l in range(geometry.n_block):
        F += _assemble_blocks(
            geometry,
            np.outer(p[:, l], p[l, :]),
            np.outer(p[:, l], f[l, :]),
            np.outer(g[:, l], p[l, :]),
            np.outer(g[:, l], f[l, :]),
        )
        G += _assemble_blocks(
            geometry,
            np.outer(f[:, l], g[l, :]),
            np.outer(f[:, l], q[l, :]),
            np.outer(q[:, l], g[l, :]),
            np.outer(q[:, l], q[l, :]),
        )
    return F, G


def stationarity_rhs(geometry: BlockGeometry, delta_E: np.ndarray) -> np.ndarray:
    """R = Σ_n (A^nᵀ δ^n s^nᵀ + B^nᵀ δ^n c^nᵀ), 정상성 조건 2μŴD = R 의 우변 (N_T x 2K)"""
    delta = np.asarray(delta_E, dtype=float).reshape(geometry.n_block, -1)
    a = np.einsum("nit,ni->nt", geometry.A, delta)
    b = np.einsum("nit,ni->nt", geometry.B, delta)
    return a.T @ geometry.s_E + b.T @ geometry.c_E


def achieved_coefficients(geometry: BlockGeometry, W_hat: np.ndarray) -> np.ndarray:
    """슬롯 우선 순서의 달성 계수 α^n = A^n Ŵ s^n + B^n Ŵ c^n (길이 2NK)"""
    ws = geometry.s_E @ W_hat.T
    wc = geometry.c_E @ W_hat.T
    alpha = np.einsum("nit,nt->ni", geometry.A, ws) + np.einsum("nit,nt->ni", geometry.B, wc)
    return alpha.ravel()


def minimum_scaling(alpha: np.ndarray, mask: np.ndarray) -> float:
    """
    원문제 쪽에서 다시 계산한 블록 scaling t*.

    PSK 는 CI-eligible 계수의 최소값입니다. locked 인덱스가 있는 QAM 블록에서는
    locked 계수가 모두 t* 와 같아야 하므로 그 평균과 eligible 최소값 중 작은 쪽을 씁니다.
    최적점에서 locked 계수는 쌍대 최적값 t_dual 과 같고 eligible 계수는 그 이상이므로 t* = t_dual
    입니다. 솔버 오차만큼의 차이는 kkt_certificate 의 t_gap 과 primal_feasibility 로 드러납니다.
    """
    locked = ~mask
    if not np.any(locked):
        return float(np.min(alpha))
    t = float(np.mean(alpha[locked]))
    if np.any(mask):
        t = min(t, float(np.min(alpha[mask])))
    return t


def recover_precoder(
    delta_E: np.ndarray,
    geometry: BlockGeometry,
    block: BlockProblem,
    dual: Optional[DualQp] = None,
) -> PrecodeResult:
    """
    쌍대 해로부터 μ, Ŵ, W 와 진단값을 복원합니다.

    μ = sqrt(δᵀUδ / (4Np0)), Ŵ = R·D⁻¹ / (2μ), W = Ŵ·P̂ − j·Ŵ·Q̂.

    Args:
        delta_E (np.ndarray): 쌍대 해 (길이 2NK). 변경하지 않습니다.
        geometry (BlockGeometry): 조립된 블록 기하량.
        block (BlockProblem): 원래 블록 문제.
        dual (Optional[DualQp]): 이미 만든 DualQp (없으면 새로 조립).

    Returns:
        PrecodeResult: 복원된 프리코더와 진단값.

    Raises:
        ZeroDual: δᵀUδ ≤ 1e-14 일 때.
    """
    if dual is None:
        dual = build_U(geometry, block.p0)
    delta = np.array(delta_E, dtype=float, copy=True)
    quad = float(delta @ dual.U @ delta)
    if quad <= ZERO_DUAL_TOL:
        raise ZeroDual(f"δᵀUδ = {quad:.3e} 로 μ 를 정할 수 없습니다.")

    n_block, p0 = block.n_block, block.p0
    mu = float(np.sqrt(quad / (4.0 * n_block * p0)))
    W_hat = stationarity_rhs(geometry, delta) @ geometry.Dinv / (2.0 * mu)
    W = from_W_hat(W_hat)
    block_power = float(np.sum(np.abs(W @ block.S) ** 2))

    alpha = achieved_coefficients(geometry, W_hat)
    mask = geometry.sign_mask
    per_slot = alpha.reshape(n_block, -1)
    per_mask = mask.reshape(n_block, -1)
    slot_min = np.array([minimum_scaling(a, m) for a, m in zip(per_slot, per_mask)])

    delta.setflags(write=False)
    return PrecodeResult(
        W=W,
        W_hat=W_hat,
        t_star=minimum_scaling(alpha, mask),
        mu=mu,
        delta_E=delta,
        block_power=block_power,
        alpha=alpha,
        slot_min_alpha=slot_min,
        t_dual=float(np.sqrt(n_block * p0 * quad)),
    )
