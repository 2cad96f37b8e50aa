"""MLflow 실험 추적 (tracking.enabled 일 때만 사용)"""

import logging
import os
from pathlib import Path
from typing import Dict, Iterable, Optional

import mlflow
import pandas as pd

from simulation.schemas import TrackingSettings
from simulation.utils import flatten_dict

logger = logging.getLogger(__name__)


def _metric_name(*parts) -> str:
    # MLflow metric 이름에 쓸 수 없는 문자를 정리합니다.
    raw = "_".join(str(p) for p in parts)
    return "".join(ch if ch.isalnum() or ch in "_-./" else "_" for ch in raw)


def frame_metrics(frame: pd.DataFrame) -> Dict[str, float]:
    """결과 테이블의 SER/시간 열을 metric 이름으로 펼칩니다."""
    metrics = {}
    for row in frame.to_dict(orient="records"):
        if "ser" in row:
            n_part = f"N{row['n_block']}_" if "n_block" in row else ""
            key = _metric_name("ser", row["scheme"], f"{n_part}snr{row['snr_db']:g}")
            if pd.notna(row["ser"]):
                metrics[key] = float(row["ser"])
        elif "mean_solve_ms" in row:
            key = _metric_name("solve_ms", row["scheme"], f"K{row['k']}_NT{row['n_t']}_N{row['n_block']}")
            metrics[key] = float(row["mean_solve_ms"])
    return metrics


def log_run(
    settings: TrackingSettings,
    command: str,
    config: dict,
    frame: Optional[pd.DataFrame],
    artifacts: Iterable[Path],
) -> Optional[str]:
    """
    명령 하나를 MLflow run 하나로 기록합니다.

    params 는 평탄화한 설정, metrics 는 SER 또는 풀이 시간, artifacts 는 CSV/SVG/매니페스트입니다.
    추적 서버 오류는 시뮬레이션 결과를 무효로 만들지 않으므로 로그만 남기고 None 을 돌려줍니다.

    Returns:
        Optional[str]: MLflow run ID.
    """
    if not settings.enabled:
        return None

    tracking_uri = os.getenv("MLFLOW_TRACKING_URI", settings.tracking_uri)
    try:
        mlflow.set_tracking_uri(tracking_uri)
        mlflow.set_experiment(settings.experiment_name)
        with mlflow.start_run(run_name=settings.run_name or command) as run:
            run_id = run.info.run_id
            logger.info(f"MLflow Run ID: {run_id} ({tracking_uri})")
            params = {k: str(v) for k, v in flatten_dict(config).items()}
            mlflow.log_params(params)
            mlflow.set_tag("command", command)
            if frame is not None:
                mlflow.log_metrics(frame_metrics(frame))
            for path in artifacts:
                mlflow.log_artifact(str(path))
            return run_id
    except Exception as e:
        logger.error(f"MLflow 로깅 중 오류 발생: {e}", exc_info=True)
        return None
