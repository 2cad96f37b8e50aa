import argparse
import logging
import os
import sys
from datetime import datetime, timezone
from pathlib import Path
from typing import List, Optional

from dotenv import load_dotenv
from pydantic import ValidationError

# 루트 경로 설정
project_root = os.path.abspath(os.path.join(os.path.dirname(__file__), '..'))
if project_root not in sys.path:
    sys.path.append(project_root)

from simulation import plots, sim_harness  # noqa: E402
from simulation.exceptions import ConfigError, FailureBudgetExceeded, SerSanityError  # noqa: E402
from simulation.schemas import RunManifest, SimConfig  # noqa: E402
from simulation.tracking import log_run  # noqa: E402
from simulation.utils import config_value, deep_merge, git_version, load_yaml, save_table, setup_logging  # noqa: E402
from simulation.validation import report_frame, run_validation  # noqa: E402

logger = logging.getLogger(__name__)

DEFAULT_CONFIG = os.path.join(project_root, 'config', 'config.yaml')
MANIFEST_FILE = "run_manifest.json"

EXIT_OK = 0
EXIT_UNEXPECTED = 1
EXIT_CONFIG = 2
EXIT_FAILURE_BUDGET = 3
EXIT_SER_SANITY = 4
EXIT_VALIDATION = 5


def load_sim_config(config_path: str, seed: Optional[int] = None, defaults_path: str = DEFAULT_CONFIG) -> SimConfig:
    """
    기본 설정(config.yaml 의 simulation, tracking 섹션)에 실험 파일을 덮어쓰고 검증합니다.

    Args:
        config_path (str): 실험 YAML 경로.
        seed (Optional[int]): --seed 로 받은 시드 (설정 파일보다 우선).
        defaults_path (str): 기본 설정 파일 경로.

    Returns:
        SimConfig: 검증된 설정.

    Raises:
        ConfigError: 파일이 없거나, YAML 이 잘못되었거나, 검증에 실패했을 때 (첫 번째 문제 키를 담습니다).
    """
    try:
        defaults = load_yaml(defaults_path) if os.path.exists(defaults_path) else {}
        experiment = load_yaml(config_path)
    except FileNotFoundError as e:
        raise ConfigError("--config", f"파일을 찾을 수 없습니다: {e.filename or config_path}") from e
    except Exception as e:
        raise ConfigError("--config", f"YAML 을 읽을 수 없습니다: {e}") from e
    if not isinstance(experiment, dict):
        raise ConfigError("--config", "최상위가 key-value 매핑이어야 합니다.")

    base = deep_merge(defaults.get('simulation') or {}, {'tracking': defaults.get('tracking') or {}})
    merged = deep_merge(base, experiment)
    if seed is not None:
        merged['seed'] = seed
        logger.info(f"seed 인자 오버라이드: {seed}")

    try:
        return SimConfig.model_validate(merged)
    except ValidationError as e:
        first = e.errors()[0]
        key = ".".join(str(part) for part in first['loc']) or "(root)"
        raise ConfigError(key, first['msg']) from e


def _defaults() -> dict:
    """config.yaml 전체. 파일이 없으면 빈 dict."""
    try:
        return load_yaml(DEFAULT_CONFIG)
    except FileNotFoundError:
        return {}


def _output_dir(args, command: str) -> Path:
    if args.out:
        return Path(args.out)
    return Path(project_root) / config_value(_defaults(), 'output.dir', "outputs") / command


def _write_manifest(out_dir: Path, manifest: RunManifest) -> Path:
    path = out_dir / MANIFEST_FILE
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(manifest.model_dump_json(indent=2) + "\n", encoding="utf-8")
    logger.info(f"실행 매니페스트 저장: {path}")
    return path


def _run_sweep(command: str, args) -> int:
    """ser-sweep, block-sweep, timing 공통 흐름: 설정 → 실행 → CSV → 그래프 → 검사 → 매니페스트"""
    started_at = datetime.now(timezone.utc)
    config = load_sim_config(args.config, args.seed)
    out_dir = _output_dir(args, command)
    out_dir.mkdir(parents=True, exist_ok=True)

    manifest = dict(
        command=command,
        config=config.model_dump(mode="json"),
        version=git_version(project_root),
        seed=config.seed,
        started_at=started_at,
    )
    outputs: List[Path] = []
    result = None
    exit_code = EXIT_OK
    try:
        if command == "ser-sweep":
            result = sim_harness.run_ser_sweep(config, args.threads)
            csv_path = save_table(result.csv_frame(), out_dir / "ser_sweep.csv")
            outputs += [csv_path, plots.plot_ser_sweep(csv_path, out_dir / "ser_sweep.svg")]
        elif command == "block-sweep":
            result = sim_harness.run_block_sweep(config, args.threads)
            csv_path = save_table(result.csv_frame(), out_dir / "block_sweep.csv")
            outputs += [csv_path, plots.plot_block_sweep(csv_path, out_dir / "block_sweep.svg")]
        else:
            result = sim_harness.run_timing(config)
            csv_path = save_table(result.csv_frame(), out_dir / "timing.csv")
            outputs += [csv_path, plots.plot_timing(csv_path, out_dir / "timing.svg")]

        sim_harness.enforce_failure_budget(result)
        if command != "timing":
            sim_harness.check_ser_monotone(result)
    except FailureBudgetExceeded as e:
        logger.error(f"솔버 실패 허용치 초과: {e}")
        exit_code = EXIT_FAILURE_BUDGET
    except SerSanityError as e:
        logger.error(f"SER 단조성 검사 실패: {e}")
        exit_code = EXIT_SER_SANITY

    manifest_model = RunManifest(
        **manifest,
        finished_at=datetime.now(timezone.utc),
        failures=result.failures if result is not None else {},
        attempts=result.attempts if result is not None else {},
        outputs=[p.name for p in outputs],
        exit_code=exit_code,
    )
    manifest_path = _write_manifest(out_dir, manifest_model)

    frame = result.csv_frame() if result is not None else None
    run_id = log_run(config.tracking, command, manifest['config'], frame, outputs + [manifest_path])
    if run_id:
        _write_manifest(out_dir, manifest_model.model_copy(update={"mlflow_run_id": run_id}))
    return exit_code


def _run_validate(args) -> int:
    started_at = datetime.now(timezone.utc)
    defaults = _defaults()
    seed = args.seed if args.seed is not None else int(config_value(defaults, 'validation.seed', 0))
    instances = args.instances
    if instances is None:
        instances = int(config_value(defaults, 'validation.instances', 40))

    results = run_validation(seed, instances)
    report = report_frame(results)
    print(report.to_string(index=False))
    failed = [r.name for r in results if not r.passed]
    exit_code = EXIT_VALIDATION if failed else EXIT_OK
    if failed:
        logger.error(f"검증 실패: {failed}")
    else:
        logger.info(f"✅ 검증 통과: {len(results)}개 검사")

    if args.out:
        out_dir = Path(args.out)
        csv_path = save_table(report, out_dir / "validation_report.csv")
        _write_manifest(
            out_dir,
            RunManifest(
                command="validate",
                config={"seed": seed, "instances": instances},
                version=git_version(project_root),
                seed=seed,
                started_at=started_at,
                finished_at=datetime.now(timezone.utc),
                outputs=[csv_path.name],
                exit_code=exit_code,
            ),
        )
    return exit_code


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(description="CI-BLP 프리코딩 Monte Carlo 시뮬레이션")
    parser.add_argument("--log-level", default="INFO", help="로그 레벨 (DEBUG, INFO, WARNING, ERROR)")
    sub = parser.add_subparsers(dest="command", required=True)

    for name, help_text in (
        ("ser-sweep", "SNR 에 따른 SER 곡선"),
        ("block-sweep", "블록 길이 N 에 따른 SER"),
        ("timing", "블록 길이 N 에 따른 QP 풀이 시간"),
    ):
        p = sub.add_parser(name, help=help_text)
        p.add_argument("--config", required=True, help="실험 설정 YAML 경로")
        p.add_argument("--out", help="출력 디렉토리 (기본값: config.yaml 의 output.dir/<명령>)")
        p.add_argument("--seed", type=int, help="설정 파일의 seed 를 오버라이드")
        p.add_argument("--threads", type=int, default=1, help="채널 실현 병렬 처리 스레드 수")
        p.add_argument("--log-level", default=argparse.SUPPRESS, help=argparse.SUPPRESS)

    p = sub.add_parser("validate", help="불변식 검증 배터리")
    p.add_argument("--out", help="validation_report.csv 를 저장할 디렉토리")
    p.add_argument("--seed", type=int, help="인스턴스 생성 시드")
    p.add_argument("--instances", type=int, help="무작위 인스턴스 수")
    p.add_argument("--log-level", default=argparse.SUPPRESS, help=argparse.SUPPRESS)
    return parser


def main(argv: Optional[List[str]] = None) -> int:
    args = build_parser().parse_args(argv)
    setup_logging(args.log_level)
    load_dotenv()

    if getattr(args, "seed", None) is not None and not 0 <= args.seed < 2**64:
        logger.error(f"설정 키 'seed' 오류: 64-bit 부호 없는 정수여야 합니다 ({args.seed})")
        return EXIT_CONFIG
    if getattr(args, "threads", 1) < 1:
        logger.error(f"--threads 는 1 이상이어야 합니다: {args.threads}")
        return EXIT_CONFIG

    try:
        if args.command == "validate":
            return _run_validate(args)
        return _run_sweep(args.command, args)
    except ConfigError as e:
        logger.error(f"{e}")
        return EXIT_CONFIG
    except Exception as e:
        logger.error(f"스크립트 실행 중 오류 발생: {e}", exc_info=True)
        return EXIT_UNEXPECTED


if __name__ == "__main__":
    sys.exit(main())
