"""시뮬레이션/CLI 계층 예외. CLI 는 이 예외들을 종료 코드로 바꿉니다."""

from typing import Optional


class ConfigError(ValueError):
    """설정 파일 오류. key 는 문제가 된 설정 키입니다."""

    def __init__(self, key: str, message: str):
        super().__init__(f"설정 키 '{key}' 오류: {message}")
        self.key = key


class FailureBudgetExceeded(RuntimeError):
    """어떤 방식의 솔버 실패율이 1% 를 넘었을 때"""

    def __init__(self, scheme: str, rate: float, result: Optional[object] = None):
        super().__init__(f"'{scheme}' 방식의 실패율 {rate:.2%} 가 허용치 1% 를 넘었습니다.")
        self.scheme = scheme
        self.rate = rate
        self.result = result


class SerSanityError(RuntimeError):
    """SNR 이 커졌는데 SER 이 Monte Carlo 오차(표준오차 3배)보다 크게 늘었을 때"""

    def __init__(self, scheme: str, snr_low: float, snr_high: float, result: Optional[object] = None):
        super().__init__(
            f"'{scheme}' 방식의 SER 이 SNR {snr_low:g} dB → {snr_high:g} dB 에서 유의하게 증가했습니다."
        )
        self.scheme = scheme
        self.snr_low = snr_low
        self.snr_high = snr_high
        self.result = result
