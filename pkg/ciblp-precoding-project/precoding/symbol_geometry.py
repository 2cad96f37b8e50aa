"""
성상도(constellation), 결정 경계 분해, 슬롯별 M 행렬, 실수 확장 도우미,
QAM CI 적용 가능 여부 분류를 담당하는 모듈
"""

import logging
from dataclasses import dataclass
from functools import lru_cache
from typing import TYPE_CHECKING, Tuple

import numpy as np

from precoding.exceptions import DegenerateDecomposition

if TYPE_CHECKING:
    from precoding.blp_assembly import BlockProblem

logger = logging.getLogger(__name__)

DEGENERACY_TOL = 1e-12
POINT_TOL = 1e-9

PSK_ORDERS = (4, 8, 16)
QAM_ORDERS = (16, 64)

_NAMED = {
    "qpsk": ("psk", 4),
    "4psk": ("psk", 4),
    "8psk": ("psk", 8),
    "16psk": ("psk", 16),
    "16qam": ("qam", 16),
    "64qam": ("qam", 64),
}


@lru_cache(maxsize=None)
def _constellation(kind: str, order: int) -> np.ndarray:
    if kind == "psk":
        k = np.arange(order)
        return np.exp(1j * (np.pi / order + 2 * np.pi * k / order))
    side = int(round(np.sqrt(order)))
    levels = np.arange(-(side - 1), side, 2, dtype=float)
    step = np.sqrt(3.0 / (2.0 * (order - 1)))
    re, im = np.meshgrid(levels, levels)
    return ((re + 1j * im) * step).ravel()


@dataclass(frozen=True)
class Modulation:
    """
    단위 평균 에너지로 정규화된 PSK / square-QAM 변조 방식

    Attributes:
        kind (str): 'psk' 또는 'qam'.
        order (int): 성상점 개수 (PSK 4/8/16, QAM 16/64).
    """

    kind: str
    order: int

    def __post_init__(self):
        if self.kind == "psk" and self.order not in PSK_ORDERS:
            raise ValueError(
                f"지원하지 않는 PSK 차수입니다: {self.order} (허용: {PSK_ORDERS}, BPSK는 결정 경계가 일직선이라 제외)"
            )
        if self.kind == "qam" and self.order not in QAM_ORDERS:
            raise ValueError(f"지원하지 않는 QAM 차수입니다: {self.order} (허용: {QAM_ORDERS})")
        if self.kind not in ("psk", "qam"):
            raise ValueError(f"알 수 없는 변조 방식입니다: {self.kind}")

    @classmethod
    def parse(cls, name: str) -> "Modulation":
        """'qpsk', '8psk', '16qam' 같은 설정 문자열을 Modulation 으로 변환합니다."""
        key = str(name).strip().lower()
        if key not in _NAMED:
            raise ValueError(f"알 수 없는 변조 이름입니다: '{name}' (허용: {sorted(_NAMED)})")
        kind, order = _NAMED[key]
        return cls(kind, order)

    @property
    def name(self) -> str:
        if self.kind == "psk" and self.order == 4:
            return "qpsk"
        return f"{self.order}{self.kind}"

    @property
    def is_psk(self) -> bool:
        return self.kind == "psk"

    @property
    def unit_average_energy(self) -> bool:
        return True

    @property
    def grid_step(self) -> float:
        """QAM 격자 간격 g (16QAM 은 1/√10). PSK 에서는 의미가 없습니다."""
        if self.is_psk:
            raise AttributeError("PSK 변조에는 격자 간격이 없습니다.")
        return float(np.sqrt(3.0 / (2.0 * (self.order - 1))))

    @property
    def max_component(self) -> float:
        """QAM 성분(실수부/허수부)의 최대 크기 (√order − 1)·g"""
        side = int(round(np.sqrt(self.order)))
        return (side - 1) * self.grid_step

    def constellation(self) -> np.ndarray:
        return _constellation(self.kind, self.order).copy()

    def is_point(self, s: complex) -> bool:
        return bool(np.min(np.abs(_constellation(self.kind, self.order) - s)) < POINT_TOL)


@dataclass(frozen=True)
class SymbolDecomposition:
    """결정 경계 방향으로 분해된 심볼 s = s_A + s_B"""

    s_A: complex
    s_B: complex

    @property
    def determinant(self) -> float:
        return self.s_A.real * self.s_B.imag - self.s_A.imag * self.s_B.real

    def recompose(self) -> complex:
        return self.s_A + self.s_B


@dataclass(frozen=True)
class CiEligibility:
    """
    한 슬롯의 2K 개 인덱스(실수부 K개 다음 허수부 K개)에 대한 CI 적용 가능 표시.
    True 는 집합 O (CI-eligible), False 는 집합 I (boundary-locked) 입니다.
    """

    mask: np.ndarray

    @property
    def eligible(self) -> np.ndarray:
        return np.flatnonzero(self.mask)

    @property
    def locked(self) -> np.ndarray:
        return np.flatnonzero(~self.mask)


@dataclass(frozen=True)
class SlotGeometry:
    """
    슬롯 n 의 실수 확장 기하량

    Attributes:
        M (np.ndarray): 2K x 2N_T, 행 순서는 사용자별 j 행 전체 다음 l 행 전체.
        A (np.ndarray): M·P (2K x N_T).
        B (np.ndarray): M·Q (2K x N_T).
        s_E (np.ndarray): [Re(s); Im(s)] (2K).
        c_E (np.ndarray): T·s_E (2K).
        eligibility (CiEligibility): 인덱스별 CI 적용 가능 여부.
    """

    M: np.ndarray
    A: np.ndarray
    B: np.ndarray
    s_E: np.ndarray
    c_E: np.ndarray
    eligibility: CiEligibility


@dataclass(frozen=True)
class RealExpansion:
    """블록 전체의 실수 확장 결과. s_E, c_E 는 (N, 2K) 로 슬롯별 행입니다."""

    s_E: np.ndarray
    c_E: np.ndarray
    P: np.ndarray
    Q: np.ndarray
    T: np.ndarray


def decompose_psk(s: complex, order: int) -> SymbolDecomposition:
    """
    PSK 심볼을 시계 방향 경계(φ−π/M)와 반시계 방향 경계(φ+π/M) 성분으로 분해합니다.

    Args:
        s (complex): PSK 성상점 (양의 실수배도 허용).
        order (int): PSK 차수 M (4 이상).

    Returns:
        SymbolDecomposition: s_A 는 시계 방향 경계, s_B 는 반시계 방향 경계와 평행.

    Raises:
        ValueError: order < 4 일 때.
        DegenerateDecomposition: s 가 0 일 때.
    """
    if order < 4:
        raise ValueError(f"PSK 차수는 4 이상이어야 합니다: {order}")
    radius = abs(s)
    if radius < DEGENERACY_TOL:
        raise DegenerateDecomposition("크기가 0인 심볼은 분해할 수 없습니다.")
    phi = np.angle(s)
    half = np.pi / order
    # 대칭성 때문에 두 성분의 크기는 같다
    magnitude = radius / (2.0 * np.cos(half))
    s_A = complex(magnitude * np.exp(1j * (phi - half)))
    s_B = complex(magnitude * np.exp(1j * (phi + half)))
    return SymbolDecomposition(s_A, s_B)


def decompose_qam(s: complex) -> SymbolDecomposition:
    """QAM 심볼을 실수부 s_A 와 허수부 s_B = j·Im(s) 로 나눕니다. 축 위의 점은 거부합니다."""
    if abs(s.real) < DEGENERACY_TOL or abs(s.imag) < DEGENERACY_TOL:
        raise DegenerateDecomposition(f"square QAM 에 축 위의 점은 없습니다: {s}")
    return SymbolDecomposition(complex(s.real, 0.0), complex(0.0, s.imag))


def decompose(s: complex, modulation: Modulation) -> SymbolDecomposition:
    if modulation.is_psk:
        return decompose_psk(s, modulation.order)
    return decompose_qam(s)


def classify_qam(s: complex, order: int) -> Tuple[bool, bool]:
    """
    QAM 심볼의 (실수부, 허수부) 인덱스가 CI-eligible 인지 판정합니다.
    성분 크기가 최대 성분 크기와 같을 때만 바깥쪽으로 밀어낼 수 있습니다.
    """
    edge = Modulation("qam", order).max_component
    return (
        bool(abs(abs(s.real) - edge) < POINT_TOL),
        bool(abs(abs(s.imag) - edge) < POINT_TOL),
    )


def slot_eligibility(s: np.ndarray, modulation: Modulation) -> CiEligibility:
    """슬롯 심볼 벡터 s (K) 에 대한 2K 마스크. PSK 는 전부 eligible 입니다."""
    s = np.asarray(s, dtype=complex)
    if modulation.is_psk:
        return CiEligibility(np.ones(2 * s.size, dtype=bool))
    flags = np.array([classify_qam(x, modulation.order) for x in s], dtype=bool).reshape(-1, 2)
    return CiEligibility(np.concatenate([flags[:, 0], flags[:, 1]]))


def build_M(h: np.ndarray, s: complex, modulation: Modulation) -> np.ndarray:
    """
    사용자 k 의 M^n 두 행 (j_k, l_k) 을 만듭니다.

    두 행은 [Re(Ws); Im(Ws)] 에 곱해져 각각 α_A, α_B 를 돌려줍니다.

    Args:
        h (np.ndarray): 사용자 채널 벡터 (N_T, 복소수).
        s (complex): 해당 사용자의 심볼.
        modulation (Modulation): 변조 방식.

    Returns:
        np.ndarray: (2, 2N_T) 실수 행렬, 0행이 j_k, 1행이 l_k.

    Raises:
        DegenerateDecomposition: 분모 |Re(s_A)Im(s_B) − Im(s_A)Re(s_B)| < 1e-12 일 때.
    """
    h = np.asarray(h, dtype=complex)
    dec = decompose(s, modulation)
    det = dec.determinant
    if abs(det) < DEGENERACY_TOL:
        raise DegenerateDecomposition(f"결정 경계 분해의 행렬식이 0에 가깝습니다: {det:.3e}")
    a_re, a_im = dec.s_A.real, dec.s_A.imag
    b_re, b_im = dec.s_B.real, dec.s_B.imag
    j_row = np.concatenate([b_im * h.real - b_re * h.imag, -(b_im * h.imag + b_re * h.real)])
    l_row = np.concatenate([a_re * h.imag - a_im * h.real, a_re * h.real + a_im * h.imag])
    return np.vstack([j_row, l_row]) / det


def stack_M(H: np.ndarray, s: np.ndarray, modulation: Modulation) -> np.ndarray:
    """사용자별 build_M 결과를 j 행 전체, l 행 전체 순서로 쌓아 M^n (2K x 2N_T) 을 만듭니다."""
    rows = [build_M(H[k], s[k], modulation) for k in range(H.shape[0])]
    j_rows = np.vstack([r[0] for r in rows])
    l_rows = np.vstack([r[1] for r in rows])
    return np.vstack([j_rows, l_rows])


def scaling_from_received(r: complex, dec: SymbolDecomposition) -> Tuple[float, float]:
    """r = α_A·s_A + α_B·s_B 를 만족하는 실수 쌍 (α_A, α_B) 를 2x2 풀이로 구합니다."""
    det = dec.determinant
    if abs(det) < DEGENERACY_TOL:
        raise DegenerateDecomposition(f"결정 경계 분해의 행렬식이 0에 가깝습니다: {det:.3e}")
    alpha_A = (dec.s_B.imag * r.real - dec.s_B.real * r.imag) / det
    alpha_B = (dec.s_A.real * r.imag - dec.s_A.imag * r.real) / det
    return float(alpha_A), float(alpha_B)


def selection_matrices(n_t: int, k: int) -> Tuple[np.ndarray, np.ndarray, np.ndarray]:
    """P, Q (2N_T x N_T) 와 T (2K x 2K) 를 돌려줍니다."""
    eye_t = np.eye(n_t)
    zeros_t = np.zeros((n_t, n_t))
    P = np.vstack([eye_t, zeros_t])
    Q = np.vstack([zeros_t, eye_t])
    eye_k = np.eye(k)
    zeros_k = np.zeros((k, k))
    T = np.block([[zeros_k, eye_k], [-eye_k, zeros_k]])
    return P, Q, T


def expand_real(block: "BlockProblem") -> RealExpansion:
    """블록의 심볼을 슬롯별 s_E = [Re(s); Im(s)], c_E = T·s_E 로 확장합니다."""
    k, n_t = block.H.shape
    P, Q, T = selection_matrices(n_t, k)
    S = np.asarray(block.S, dtype=complex)
    s_E = np.vstack([S.real, S.imag]).T
    c_E = s_E @ T.T
    return RealExpansion(s_E=s_E, c_E=c_E, P=P, Q=Q, T=T)


def to_W_hat(W: np.ndarray) -> np.ndarray:
    """복소 프리코더 W (N_T x K) 를 Ŵ = [Re(W), −Im(W)] (N_T x 2K) 로 바꿉니다."""
    W = np.asarray(W, dtype=complex)
    return np.hstack([W.real, -W.imag])


def from_W_hat(W_hat: np.ndarray) -> np.ndarray:
    """W = Ŵ·P̂ − j·Ŵ·Q̂"""
    k = W_hat.shape[1] // 2
    return W_hat[:, :k] - 1j * W_hat[:, k:]
