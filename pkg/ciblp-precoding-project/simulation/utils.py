import logging
import subprocess
import sys
from pathlib import Path
from typing import Any, Dict, Mapping, Optional

import pandas as pd
import yaml

from simulation import __version__
from simulation.exceptions import ConfigError

logger = logging.getLogger(__name__)

LOG_FORMAT = '%(asctime)s - %(name)s - %(levelname)s - %(message)s'
_MISSING = object()


def setup_logging(level: str = "INFO"):
    """
    루트 로거를 설정합니다. 진입점(CLI, 스크립트)에서만 호출합니다.

    Args:
        level (str): 로그 레벨 이름 (DEBUG, INFO, WARNING, ERROR).
    """
    root = logging.getLogger()
    root.setLevel(getattr(logging, str(level).upper(), logging.INFO))
    for handler in list(root.handlers):
        root.removeHandler(handler)
    handler = logging.StreamHandler(sys.stdout)
    handler.setFormatter(logging.Formatter(LOG_FORMAT))
    root.addHandler(handler)


def load_yaml(path: str) -> Dict[str, Any]:
    """
    YAML 파일을 dict 로 로드합니다. 빈 파일은 빈 dict 입니다.

    Raises:
        FileNotFoundError: 파일이 존재하지 않을 때 발생합니다.
        yaml.YAMLError: YAML 문법 오류일 때 발생합니다.
    """
    try:
        with open(path, 'r', encoding='utf-8') as f:
            data = yaml.safe_load(f) or {}
        logger.debug(f"YAML 로드 성공: {path}")
        return data
    except FileNotFoundError:
        logger.error(f"설정 파일을 찾을 수 없습니다: {path}")
        raise
    except yaml.YAMLError as e:
        logger.error(f"YAML 파싱 중 오류 발생: {path}: {e}")
        raise


def config_value(config: Mapping[str, Any], key_path: str, default: Any = _MISSING) -> Any:
    """
    이미 로드한 설정 dict 에서 점(.) 경로 값을 꺼냅니다 (예: 'validation.seed').

    Args:
        config (Mapping[str, Any]): load_yaml 또는 deep_merge 결과.
        key_path (str): 점으로 구분된 키 경로.
        default (Any): 경로가 없을 때 돌려줄 값. 주지 않으면 ConfigError.

    Raises:
        ConfigError: 경로가 없고 default 도 없을 때. key 는 전체 경로입니다.
    """
    value: Any = config
    for key in key_path.split('.'):
        if not isinstance(value, Mapping) or key not in value:
            if default is not _MISSING:
                logger.debug(f"설정에 '{key_path}' 가 없어 기본값 {default!r} 을 사용합니다.")
                return default
            raise ConfigError(key_path, f"'{key}' 를 찾을 수 없습니다.")
        value = value[key]
    return value


def deep_merge(base: Dict[str, Any], override: Dict[str, Any]) -> Dict[str, Any]:
    """override 가 이기는 재귀 dict 병합. 입력은 변경하지 않습니다."""
    merged = dict(base)
    for key, value in override.items():
        if isinstance(value, dict) and isinstance(merged.get(key), dict):
            merged[key] = deep_merge(merged[key], value)
        else:
            merged[key] = value
    return merged


def flatten_dict(data: Dict[str, Any], prefix: str = "") -> Dict[str, Any]:
    """{'solver': {'tol': 1e-8}} -> {'solver.tol': 1e-8}. MLflow params 용."""
    flat = {}
    for key, value in data.items():
        name = f"{prefix}.{key}" if prefix else str(key)
        if isinstance(value, dict):
            flat.update(flatten_dict(value, name))
        else:
            flat[name] = value
    return flat


def load_table(filepath: str) -> pd.DataFrame:
    """
    결과 CSV 를 로드합니다.

    Raises:
        FileNotFoundError: 파일이 존재하지 않을 때 발생합니다.
    """
    try:
        df = pd.read_csv(filepath)
        logger.info(f"결과 테이블 로드 성공: {filepath}, Shape: {df.shape}")
        return df
    except FileNotFoundError:
        logger.error(f"파일을 찾을 수 없습니다: {filepath}")
        raise


def save_table(df: pd.DataFrame, filepath: str, float_format: str = "%.6e") -> Path:
    """
    결과 테이블을 UTF-8, LF 줄바꿈, 고정 실수 형식의 CSV 로 저장합니다.
    같은 DataFrame 이면 항상 같은 바이트가 기록됩니다.
    """
    path = Path(filepath)
    try:
        path.parent.mkdir(parents=True, exist_ok=True)
        df.to_csv(path, index=False, float_format=float_format, lineterminator="\n", encoding="utf-8")
        logger.info(f"결과 테이블 저장: {path} ({len(df)} rows)")
        return path
    except OSError as e:
        logger.error(f"결과 테이블 저장 중 오류 발생: {path}: {e}")
        raise


def git_version(cwd: Optional[str] = None) -> str:
    """`git describe --tags --always --dirty` 결과. git 이 없으면 패키지 버전."""
    try:
        out = subprocess.run(
            ["git", "describe", "--tags", "--always", "--dirty"],
            cwd=cwd or Path(__file__).resolve().parent,
            capture_output=True,
            text=True,
            timeout=10,
            check=True,
        )
        described = out.stdout.strip()
        if described:
            return described
    except (OSError, subprocess.SubprocessError) as e:
        logger.debug(f"git describe 실패, 패키지 버전을 사용합니다: {e}")
    return f"v{__version__}"
