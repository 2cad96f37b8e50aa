"""
실험 설정과 실행 매니페스트 스키마 정의
Pydantic 모델을 사용하여 설정 구조와 검증 규칙을 정의합니다.
"""

from datetime import datetime
from typing import Dict, List, Literal, Optional, Tuple, Union

from pydantic import BaseModel, ConfigDict, Field, PositiveFloat, ValidationInfo, field_validator

from precoding.precoders import PrecoderKind
from precoding.qp_solver import SolverConfig
from precoding.symbol_geometry import Modulation


class SolverSettings(BaseModel):
    """QP 솔버 설정 (precoding.qp_solver.SolverConfig 로 변환됩니다)"""

    model_config = ConfigDict(extra="forbid")

    tol: float = Field(1e-8, gt=0, description="projected-gradient 잔차 허용치")
    max_iter: Optional[int] = Field(None, ge=1, description="반복 한도 (없으면 50·n + 5000)")
    accelerate: bool = Field(True, description="FISTA 가속 사용 여부")
    polish: bool = Field(True, description="support 위 KKT polish 사용 여부")
    polish_every: int = Field(10, ge=1, description="잔차 확인 및 polish 주기")
    method: Literal["pg", "fw"] = Field("pg", description="주 솔버 (fw 는 PSK 전용)")

    def to_solver_config(self) -> SolverConfig:
        return SolverConfig(
            tol=self.tol,
            max_iter=self.max_iter,
            accelerate=self.accelerate,
            polish=self.polish,
            polish_every=self.polish_every,
        )


class TrackingSettings(BaseModel):
    """MLflow 실험 추적 설정"""

    model_config = ConfigDict(extra="forbid")

    enabled: bool = Field(False, description="MLflow 로깅 사용 여부")
    tracking_uri: str = Field("file:./mlruns", description="MLflow tracking URI (환경변수 MLFLOW_TRACKING_URI 우선)")
    experiment_name: str = Field("CI-BLP-Precoding", description="MLflow 실험 이름")
    run_name: Optional[str] = Field(None, description="MLflow run 이름 (없으면 명령 이름)")


class SimConfig(BaseModel):
    """
    Monte Carlo 실험 설정
    seed 가 같으면 CSV 출력이 바이트 단위로 같아야 합니다.
    """

    model_config = ConfigDict(extra="forbid")

    k: int = Field(..., ge=1, description="사용자 수 K", examples=[4])
    n_t: int = Field(..., ge=1, description="송신 안테나 수 N_T", examples=[4])
    n_block: Optional[int] = Field(None, ge=1, description="블록 길이 N (ser-sweep)")
    n_block_list: Optional[List[int]] = Field(None, min_length=1, description="블록 길이 목록 (block-sweep, timing)")
    modulation: str = Field(..., description="qpsk, 8psk, 16psk, 16qam, 64qam", examples=["qpsk"])
    snr_db: List[float] = Field(..., min_length=1, description="SNR = p0/σ² (dB) 격자")
    n_channels: int = Field(..., ge=1, description="채널 실현 수")
    n_blocks_per_channel: int = Field(1, ge=1, description="채널당 블록 수")
    schemes: List[PrecoderKind] = Field(..., min_length=1, description="비교할 프리코딩 방식")
    seed: int = Field(..., ge=0, lt=2**64, description="64-bit RNG 시드")
    p0: PositiveFloat = Field(1.0, description="슬롯당 전력 예산")
    rzf_rho: Union[Literal["snr"], PositiveFloat] = Field("snr", description="RZF ρ: 'snr' 이면 p0/σ²")
    sizes: Optional[List[Tuple[int, int]]] = Field(None, description="timing 용 (K, N_T) 목록")
    record_timing: bool = Field(False, description="True 이면 SER/블록 스윕 CSV 에 mean_solve_ms 를 기록 (재실행 시 CSV 가 달라짐)")
    singular_policy: Literal["raise", "pinv"] = Field("pinv", description="D 가 특이일 때의 처리")
    solver: SolverSettings = Field(default_factory=SolverSettings)
    tracking: TrackingSettings = Field(default_factory=TrackingSettings)

    @field_validator("modulation")
    @classmethod
    def _check_modulation(cls, value: str) -> str:
        Modulation.parse(value)
        return value.strip().lower()

    @field_validator("n_t")
    @classmethod
    def _check_antennas(cls, value: int, info: ValidationInfo) -> int:
        k = info.data.get("k")
        if k is not None and k > value:
            raise ValueError(f"n_t={value} 는 k={k} 이상이어야 합니다")
        return value

    @field_validator("n_block_list")
    @classmethod
    def _check_block_list(cls, value: Optional[List[int]]) -> Optional[List[int]]:
        if value is not None and any(n < 1 for n in value):
            raise ValueError("블록 길이는 모두 1 이상이어야 합니다")
        return value

    @field_validator("sizes")
    @classmethod
    def _check_sizes(cls, value: Optional[List[Tuple[int, int]]]) -> Optional[List[Tuple[int, int]]]:
        if value is not None:
            for k, n_t in value:
                if not 1 <= k <= n_t:
                    raise ValueError(f"(k, n_t)=({k}, {n_t}) 는 1 ≤ k ≤ n_t 를 만족해야 합니다")
        return value

    @property
    def modulation_spec(self) -> Modulation:
        return Modulation.parse(self.modulation)

    def solver_config(self) -> SolverConfig:
        return self.solver.to_solver_config()

    def rho_for(self, snr_db: float) -> float:
        """RZF ρ. 'snr' 정책이면 선형 SNR p0/σ² 입니다."""
        if self.rzf_rho == "snr":
            return float(10.0 ** (snr_db / 10.0))
        return float(self.rzf_rho)


class RunManifest(BaseModel):
    """
    출력 디렉토리마다 함께 기록되는 실행 정보
    config 와 seed 만으로 실행을 그대로 재현할 수 있어야 합니다.
    """

    command: str = Field(..., description="실행한 하위 명령", examples=["ser-sweep"])
    config: dict = Field(..., description="검증을 거친 최종 설정 (seed 덮어쓰기 반영)")
    version: str = Field(..., description="git describe 형식 버전 문자열", examples=["v0.1.0-3-gabc1234"])
    seed: int = Field(..., description="사용한 RNG 시드")
    started_at: datetime = Field(..., description="시작 시각 (UTC)")
    finished_at: datetime = Field(..., description="종료 시각 (UTC)")
    failures: Dict[str, int] = Field(default_factory=dict, description="방식별 솔버 실패 수")
    attempts: Dict[str, int] = Field(default_factory=dict, description="방식별 시도한 블록 수")
    outputs: List[str] = Field(default_factory=list, description="생성된 파일 이름")
    exit_code: int = Field(0, description="프로세스 종료 코드")
    mlflow_run_id: Optional[str] = Field(None, description="MLflow 로깅 시 run ID")
