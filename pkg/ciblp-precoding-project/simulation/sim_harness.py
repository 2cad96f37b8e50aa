"""
Monte Carlo SER 시뮬레이션 하네스

채널/심볼/잡음 생성, 프리코딩된 블록 전송과 검출, SER 집계, QP 풀이 시간 측정을 담당합니다.
채널 실현마다 (seed, channel_index) 로 만든 독립 난수 스트림을 쓰므로 스레드 수와 무관하게
결과가 같습니다.
"""

import hashlib
import logging
from collections import defaultdict
from dataclasses import dataclass, field
from typing import Dict, List, Optional, Sequence, Tuple, Union

import numpy as np
import pandas as pd
from joblib import Parallel, delayed
from scipy.stats import norm

from precoding.blp_assembly import BlockProblem
from precoding.exceptions import PrecodingError
from precoding.precoders import PrecoderKind, Precoding, apply
from precoding.symbol_geometry import Modulation
from simulation.exceptions import ConfigError, FailureBudgetExceeded, SerSanityError
from simulation.schemas import SimConfig

logger = logging.getLogger(__name__)

SER_COLUMNS = ["scheme", "snr_db", "symbols", "errors", "ser", "mean_solve_ms"]
BLOCK_COLUMNS = ["scheme", "n_block", "snr_db", "symbols", "errors", "ser"]
TIMING_COLUMNS = ["k", "n_t", "n_block", "scheme", "mean_solve_ms", "std_solve_ms"]

FAILURE_BUDGET = 0.01
MONOTONE_SIGMAS = 3.0
SYMBOL_MATCH_TOL = 1e-6


def trial_rng(seed: int, channel_index: int) -> np.random.Generator:
    """채널 실현 하나가 쓰는 결정적 난수 스트림"""
    return np.random.default_rng(np.random.SeedSequence([int(seed), int(channel_index)]))


def _complex_gaussian(shape: Tuple[int, int], rng: np.random.Generator) -> np.ndarray:
    return (rng.standard_normal(shape) + 1j * rng.standard_normal(shape)) / np.sqrt(2.0)


def gen_channel(k: int, n_t: int, rng: np.random.Generator) -> np.ndarray:
    """i.i.d. CN(0, 1) Rayleigh flat-fading 채널 (K x N_T)"""
    return _complex_gaussian((k, n_t), rng)


def gen_symbols(k: int, n_block: int, modulation: Modulation, rng: np.random.Generator) -> np.ndarray:
    """균등 분포 성상점으로 채운 K x N 심볼 블록"""
    points = modulation.constellation()
    return points[rng.integers(0, modulation.order, size=(k, n_block))]


def gen_noise(k: int, n_block: int, rng: np.random.Generator) -> np.ndarray:
    """단위 분산 복소 가우시안 잡음. 실제 잡음은 σ 를 곱해 씁니다."""
    return _complex_gaussian((k, n_block), rng)


def snr_to_noise_variance(snr_db: float, p0: float = 1.0) -> float:
    """SNR = p0/σ² (dB) 에서 σ². +inf dB 는 잡음 없음(0) 입니다."""
    if np.isposinf(snr_db):
        return 0.0
    return float(p0 / 10.0 ** (snr_db / 10.0))


def detect(y: np.ndarray, modulation: Modulation, gain: Union[float, np.ndarray] = 1.0) -> np.ndarray:
    """
    수신 신호를 심볼로 판정합니다.

    PSK 는 위상이 가장 가까운 성상점, QAM 은 genie 스케일로 나눈 뒤 공칭 격자의
    최근접점 (바깥 성상점은 경계 밖으로 열려 있음) 입니다.
    """
    y = np.asarray(y, dtype=complex)
    if modulation.is_psk:
        points = modulation.constellation()
        nearest = np.argmax(np.real(y[..., None] * np.conj(points)), axis=-1)
        return points[nearest]

    x = y / np.asarray(gain, dtype=float)
    g = modulation.grid_step
    top = int(round(np.sqrt(modulation.order))) - 1

    def level(v):
        return np.clip(2.0 * np.floor(v / (2.0 * g)) + 1.0, -top, top) * g

    return level(x.real) + 1j * level(x.imag)


def transmit_detect(
    block: BlockProblem,
    W: np.ndarray,
    t_star: Union[float, np.ndarray],
    sigma2: float,
    rng: Optional[np.random.Generator] = None,
    noise: Optional[np.ndarray] = None,
) -> np.ndarray:
    """
    블록을 전송하고 슬롯별 판정 심볼(K x N)을 돌려줍니다.

    Args:
        block (BlockProblem): 채널과 심볼 블록.
        W (np.ndarray): N_T x K 블록 공통 프리코더 또는 (N, N_T, K) 슬롯별 프리코더.
        t_star (float | np.ndarray): 수신기가 나누는 스케일 (스칼라 또는 K x N).
        sigma2 (float): 잡음 분산.
        rng (Optional[np.random.Generator]): noise 가 없을 때 잡음을 뽑을 스트림.
        noise (Optional[np.ndarray]): 단위 분산 잡음 (K x N). rng 와 함께 없으면 잡음 없음.
    """
    k, n_block, n_t = block.k, block.n_block, block.n_t
    W = np.asarray(W, dtype=complex)
    if W.shape == (n_t, k):
        received = block.H @ W @ block.S
    elif W.shape == (n_block, n_t, k):
        received = np.einsum("kt,ntj,jn->kn", block.H, W, block.S)
    else:
        raise ValueError(f"프리코더 크기 {W.shape} 가 ({n_t}, {k}) 또는 ({n_block}, {n_t}, {k}) 가 아닙니다.")

    if noise is None:
        noise = gen_noise(k, n_block, rng) if rng is not None else np.zeros((k, n_block), dtype=complex)
    y = received + np.sqrt(sigma2) * noise
    gain = np.broadcast_to(np.asarray(t_star, dtype=float), (k, n_block))
    return detect(y, block.modulation, gain)


def count_symbol_errors(detected: np.ndarray, S: np.ndarray) -> int:
    return int(np.count_nonzero(np.abs(detected - S) > SYMBOL_MATCH_TOL))


def wilson_interval(errors, symbols, level: float = 0.95) -> Tuple[np.ndarray, np.ndarray]:
    """SER 에 대한 Wilson score 신뢰구간 (배열 입력 가능). symbols=0 이면 [0, 1]."""
    errors = np.asarray(errors, dtype=float)
    symbols = np.asarray(symbols, dtype=float)
    z = norm.ppf(0.5 + level / 2.0)
    n = np.maximum(symbols, 1.0)
    p = errors / n
    denom = 1.0 + z**2 / n
    center = (p + z**2 / (2.0 * n)) / denom
    half = z * np.sqrt(p * (1.0 - p) / n + z**2 / (4.0 * n**2)) / denom
    low = np.where(symbols > 0, np.clip(center - half, 0.0, 1.0), 0.0)
    high = np.where(symbols > 0, np.clip(center + half, 0.0, 1.0), 1.0)
    # 경계는 반올림 없이 정확히
    low = np.where(errors <= 0, 0.0, low)
    high = np.where((symbols > 0) & (errors >= symbols), 1.0, high)
    return low, high


def input_digest(S: np.ndarray, noise: np.ndarray) -> str:
    """심볼과 잡음 바이트의 SHA-256. 모든 방식이 같은 입력을 봤는지 확인합니다."""
    sha = hashlib.sha256()
    sha.update(np.ascontiguousarray(S, dtype=complex).tobytes())
    sha.update(np.ascontiguousarray(noise, dtype=complex).tobytes())
    return sha.hexdigest()


@dataclass
class SerCurve:
    """방식 하나의 SNR 별 오류 수/심볼 수와 평균 풀이 시간"""

    scheme: str
    snr_db: np.ndarray
    symbols: np.ndarray
    errors: np.ndarray
    mean_solve_ms: float = 0.0

    @property
    def ser(self) -> np.ndarray:
        with np.errstate(invalid="ignore", divide="ignore"):
            return np.where(self.symbols > 0, self.errors / np.maximum(self.symbols, 1), np.nan)

    def interval(self, level: float = 0.95) -> Tuple[np.ndarray, np.ndarray]:
        return wilson_interval(self.errors, self.symbols, level)


@dataclass
class SweepResult:
    """ser-sweep 결과. 방식별 실패 수와 시도한 블록 수를 함께 가집니다."""

    n_block: int
    curves: Dict[str, SerCurve]
    failures: Dict[str, int] = field(default_factory=dict)
    attempts: Dict[str, int] = field(default_factory=dict)

    def to_frame(self) -> pd.DataFrame:
        rows = []
        for name, curve in self.curves.items():
            low, high = curve.interval()
            for i, snr in enumerate(curve.snr_db):
                rows.append(
                    {
                        "scheme": name,
                        "n_block": self.n_block,
                        "snr_db": float(snr),
                        "symbols": int(curve.symbols[i]),
                        "errors": int(curve.errors[i]),
                        "ser": float(curve.ser[i]),
                        "mean_solve_ms": float(curve.mean_solve_ms),
                        "ci_low": float(low[i]),
                        "ci_high": float(high[i]),
                    }
                )
        return pd.DataFrame(rows)

    def csv_frame(self) -> pd.DataFrame:
        return self.to_frame()[SER_COLUMNS]


@dataclass
class BlockSweepResult:
    """block-sweep 결과 (블록 길이별 SweepResult)"""

    sweeps: Dict[int, SweepResult]

    @property
    def failures(self) -> Dict[str, int]:
        return _sum_counts(s.failures for s in self.sweeps.values())

    @property
    def attempts(self) -> Dict[str, int]:
        return _sum_counts(s.attempts for s in self.sweeps.values())

    def to_frame(self) -> pd.DataFrame:
        frames = [sweep.to_frame() for sweep in self.sweeps.values()]
        return pd.concat(frames, ignore_index=True)

    def csv_frame(self) -> pd.DataFrame:
        return self.to_frame()[BLOCK_COLUMNS]


@dataclass
class TimingTable:
    """(K, N_T, N, 방식) 별 QP 풀이 시간 통계"""

    rows: List[dict]
    failures: Dict[str, int] = field(default_factory=dict)
    attempts: Dict[str, int] = field(default_factory=dict)

    def to_frame(self) -> pd.DataFrame:
        return pd.DataFrame(self.rows, columns=TIMING_COLUMNS + ["mean_slot_ms"])

    def csv_frame(self) -> pd.DataFrame:
        return self.to_frame()[TIMING_COLUMNS]


def _sum_counts(counts) -> Dict[str, int]:
    total: Dict[str, int] = defaultdict(int)
    for c in counts:
        for key, value in c.items():
            total[key] += value
    return dict(total)


@dataclass
class ChannelOutcome:
    """채널 실현 하나에서 집계한 정수 카운트와 풀이 시간"""

    errors: Dict[str, np.ndarray]
    symbols: Dict[str, np.ndarray]
    solve_seconds: Dict[str, List[float]]
    failures: Dict[str, int]
    attempts: Dict[str, int]

    @classmethod
    def empty(cls, schemes: Sequence[str], n_snr: int) -> "ChannelOutcome":
        return cls(
            errors={s: np.zeros(n_snr, dtype=np.int64) for s in schemes},
            symbols={s: np.zeros(n_snr, dtype=np.int64) for s in schemes},
            solve_seconds={s: [] for s in schemes},
            failures={s: 0 for s in schemes},
            attempts={s: 0 for s in schemes},
        )


def _precode(kind: PrecoderKind, block: BlockProblem, config: SimConfig) -> List[Precoding]:
    """SNR 격자의 각 점에 쓸 Precoding. ρ 가 SNR 에 따라 바뀌는 RZF 만 SNR 마다 다시 계산합니다."""
    solver = config.solver_config()
    options = dict(config=solver, singular_policy=config.singular_policy, method=config.solver.method)
    if kind is PrecoderKind.RZF and config.rzf_rho == "snr":
        return [apply(kind, block, rho=config.rho_for(snr), **options) for snr in config.snr_db]
    rho = config.rho_for(config.snr_db[0]) if kind is PrecoderKind.RZF else None
    return [apply(kind, block, rho=rho, **options)] * len(config.snr_db)


def _simulate_channel(config: SimConfig, channel_index: int, n_block: int) -> ChannelOutcome:
    """
    채널 실현 하나에 대한 작업 단위

    뽑는 순서는 H, 그리고 블록마다 S, 단위 잡음 Z 입니다. 같은 (채널, 블록) 에서는
    모든 방식과 모든 SNR 이 같은 S 와 Z 를 씁니다.
    """
    rng = trial_rng(config.seed, channel_index)
    modulation = config.modulation_spec
    schemes = [PrecoderKind(s) for s in config.schemes]
    names = [s.value for s in schemes]
    sigma2 = [snr_to_noise_variance(snr, config.p0) for snr in config.snr_db]
    outcome = ChannelOutcome.empty(names, len(sigma2))

    H = gen_channel(config.k, config.n_t, rng)
    for b in range(config.n_blocks_per_channel):
        S = gen_symbols(config.k, n_block, modulation, rng)
        Z = gen_noise(config.k, n_block, rng)
        reference = input_digest(S, Z)
        block = BlockProblem(H, S, config.p0, modulation)

        for kind in schemes:
            name = kind.value
            outcome.attempts[name] += 1
            try:
                precoded = _precode(kind, block, config)
            except PrecodingError as e:
                outcome.failures[name] += 1
                logger.warning(
                    f"솔버 실패 집계: scheme={name}, channel={channel_index}, block={b}: {type(e).__name__}: {e}"
                )
                continue

            if input_digest(block.S, Z) != reference:
                raise RuntimeError(f"'{name}' 방식이 공통 입력(심볼/잡음)을 변경했습니다 (channel={channel_index}).")
            for i, (precoding, s2) in enumerate(zip(precoded, sigma2)):
                detected = transmit_detect(block, precoding.W, precoding.gain, s2, noise=Z)
                outcome.errors[name][i] += count_symbol_errors(detected, block.S)
                outcome.symbols[name][i] += block.S.size
            distinct = {id(p): p for p in precoded}.values()
            outcome.solve_seconds[name].extend(p.solve_seconds for p in distinct)
    return outcome


def _run_channels(config: SimConfig, n_block: int, threads: int) -> List[ChannelOutcome]:
    jobs = (delayed(_simulate_channel)(config, c, n_block) for c in range(config.n_channels))
    return Parallel(n_jobs=threads, prefer="threads")(jobs)


def run_ser_sweep(config: SimConfig, threads: int = 1, n_block: Optional[int] = None) -> SweepResult:
    """
    SNR 격자 전체에 대한 SER 곡선을 계산합니다.

    Args:
        config (SimConfig): 검증된 실험 설정.
        threads (int): 채널 실현을 나눠 처리할 스레드 수. 결과에는 영향이 없습니다.
        n_block (Optional[int]): 블록 길이 (없으면 config.n_block).

    Returns:
        SweepResult: 방식별 SerCurve 와 실패/시도 수.

    Raises:
        ConfigError: 블록 길이가 설정되지 않았을 때.
    """
    n_block = n_block if n_block is not None else config.n_block
    if n_block is None:
        raise ConfigError("n_block", "ser-sweep 에는 n_block 이 필요합니다.")

    names = [PrecoderKind(s).value for s in config.schemes]
    logger.info(
        f"SER sweep 시작: K={config.k}, N_T={config.n_t}, N={n_block}, {config.modulation}, "
        f"채널 {config.n_channels}개, 방식 {names}, SNR {list(config.snr_db)}"
    )
    outcomes = _run_channels(config, n_block, threads)

    snr = np.asarray(config.snr_db, dtype=float)
    curves = {}
    for name in names:
        errors = np.sum([o.errors[name] for o in outcomes], axis=0)
        symbols = np.sum([o.symbols[name] for o in outcomes], axis=0)
        seconds = [t for o in outcomes for t in o.solve_seconds[name]]
        mean_ms = float(np.mean(seconds) * 1e3) if (seconds and config.record_timing) else 0.0
        curves[name] = SerCurve(name, snr, symbols, errors, mean_ms)

    result = SweepResult(
        n_block=n_block,
        curves=curves,
        failures=_sum_counts(o.failures for o in outcomes),
        attempts=_sum_counts(o.attempts for o in outcomes),
    )
    logger.info(f"SER sweep 완료: N={n_block}, 실패 {result.failures}")
    return result


def run_block_sweep(config: SimConfig, threads: int = 1) -> BlockSweepResult:
    """블록 길이 목록 각각에 대해 run_ser_sweep 을 실행합니다. 채널 실현은 N 에 관계없이 같습니다."""
    n_list = config.n_block_list or ([config.n_block] if config.n_block else None)
    if not n_list:
        raise ConfigError("n_block_list", "block-sweep 에는 n_block_list 가 필요합니다.")
    return BlockSweepResult({n: run_ser_sweep(config, threads, n_block=n) for n in n_list})


def run_timing(config: SimConfig) -> TimingTable:
    """
    QP 풀이 시간 비교: 블록당 CI-BLP 한 번 대 슬롯마다 CI-SLP N 번

    간섭을 피하려고 순차 실행합니다. 시간은 precoders 가 잰 QP 단계(선형 프리코더는
    계산 전체) 만 포함하고, 채널 실현에 대한 평균과 표준편차를 보고합니다.
    """
    n_list = config.n_block_list or ([config.n_block] if config.n_block else None)
    if not n_list:
        raise ConfigError("n_block_list", "timing 에는 n_block_list 가 필요합니다.")
    sizes = config.sizes or [(config.k, config.n_t)]
    modulation = config.modulation_spec
    schemes = [PrecoderKind(s) for s in config.schemes]
    solver = config.solver_config()
    rho = config.rho_for(config.snr_db[0])

    rows = []
    failures: Dict[str, int] = defaultdict(int)
    attempts: Dict[str, int] = defaultdict(int)
    for k, n_t in sizes:
        for n_block in n_list:
            logger.info(f"timing: K={k}, N_T={n_t}, N={n_block}, 채널 {config.n_channels}개")
            totals: Dict[str, List[float]] = {s.value: [] for s in schemes}
            slot_times: Dict[str, List[float]] = {s.value: [] for s in schemes}
            for c in range(config.n_channels):
                rng = trial_rng(config.seed, c)
                H = gen_channel(k, n_t, rng)
                block = BlockProblem(H, gen_symbols(k, n_block, modulation, rng), config.p0, modulation)
                for kind in schemes:
                    attempts[kind.value] += 1
                    try:
                        precoding = apply(
                            kind,
                            block,
                            rho=rho,
                            config=solver,
                            singular_policy=config.singular_policy,
                            method=config.solver.method,
                        )
                    except PrecodingError as e:
                        failures[kind.value] += 1
                        logger.warning(f"timing 중 솔버 실패: scheme={kind.value}, channel={c}: {e}")
                        continue
                    totals[kind.value].append(precoding.solve_seconds)
                    if kind is PrecoderKind.CI_SLP:
                        slot_times[kind.value].extend(r.solve_seconds for r in precoding.results)
                    else:
                        slot_times[kind.value].append(precoding.solve_seconds)

            for kind in schemes:
                seconds = np.asarray(totals[kind.value])
                if seconds.size == 0:
                    continue
                rows.append(
                    {
                        "k": k,
                        "n_t": n_t,
                        "n_block": n_block,
                        "scheme": kind.value,
                        "mean_solve_ms": float(seconds.mean() * 1e3),
                        "std_solve_ms": float(seconds.std(ddof=1) * 1e3) if seconds.size > 1 else 0.0,
                        "mean_slot_ms": float(np.mean(slot_times[kind.value]) * 1e3),
                    }
                )
    return TimingTable(rows, dict(failures), dict(attempts))


def enforce_failure_budget(result, budget: float = FAILURE_BUDGET):
    """
    방식별 실패율이 budget 을 넘으면 FailureBudgetExceeded 를 발생시킵니다.
    result 는 failures/attempts 속성을 가진 SweepResult, BlockSweepResult, TimingTable 입니다.
    """
    for scheme, attempted in result.attempts.items():
        failed = result.failures.get(scheme, 0)
        rate = failed / attempted if attempted else 0.0
        if rate > budget:
            logger.error(f"'{scheme}' 실패율 {rate:.2%} ({failed}/{attempted}) 가 허용치를 넘었습니다.")
            raise FailureBudgetExceeded(scheme, rate, result)


def _monotone_violation(curve: SerCurve, sigmas: float) -> Optional[Tuple[float, float]]:
    order = np.argsort(curve.snr_db, kind="stable")
    n = np.maximum(curve.symbols[order].astype(float), 1.0)
    smoothed = (curve.errors[order] + 1.0) / (n + 2.0)
    se = np.sqrt(smoothed * (1.0 - smoothed) / n)
    ser = curve.errors[order] / n
    snr = curve.snr_db[order]
    for i in range(len(order) - 1):
        if ser[i + 1] - ser[i] > sigmas * np.hypot(se[i], se[i + 1]):
            return float(snr[i]), float(snr[i + 1])
    return None


def check_ser_monotone(result: Union[SweepResult, BlockSweepResult], sigmas: float = MONOTONE_SIGMAS):
    """
    SNR 이 커질 때 SER 이 결합 표준오차 sigmas 배 이상 늘어나면 SerSanityError 를 발생시킵니다.
    표준오차는 (e+1)/(n+2) 로 평활한 비율로 계산해 오류 0 개인 점도 다룹니다.
    """
    sweeps = result.sweeps.values() if isinstance(result, BlockSweepResult) else [result]
    for sweep in sweeps:
        for name, curve in sweep.curves.items():
            violation = _monotone_violation(curve, sigmas)
            if violation is not None:
                logger.error(f"SER 단조성 위반: scheme={name}, N={sweep.n_block}, SNR {violation}")
                raise SerSanityError(name, violation[0], violation[1], result)
