"""
acceptance 규모 실행 (수 분). `pytest -m slow` 로만 실행합니다.
"""

import pytest

from simulation.schemas import SimConfig
from simulation.sim_harness import check_ser_monotone, run_block_sweep, run_ser_sweep, run_timing
from simulation.validation import run_validation

pytestmark = pytest.mark.slow


def _row(frame, scheme, snr_db):
    return frame[(frame["scheme"] == scheme) & (frame["snr_db"] == snr_db)].iloc[0]


def test_qpsk_ci_blp_beats_linear_precoders():
    """4x4 QPSK, N=8, 30 dB, 2e5 심볼: Wilson 95% 구간이 겹치지 않아야 합니다."""
    config = SimConfig(
        k=4,
        n_t=4,
        n_block=8,
        modulation="qpsk",
        snr_db=[30.0],
        n_channels=6250,
        schemes=["ci_blp", "zf", "rzf"],
        seed=20240601,
        record_timing=False,
    )
    frame = run_ser_sweep(config, threads=4).to_frame()
    blp = _row(frame, "ci_blp", 30.0)
    assert blp["symbols"] >= 200_000
    for linear in ("zf", "rzf"):
        other = _row(frame, linear, 30.0)
        assert blp["ser"] < other["ser"]
        assert blp["ci_high"] < other["ci_low"]


def test_16qam_pipeline():
    config = SimConfig(
        k=4,
        n_t=4,
        n_block=8,
        modulation="16qam",
        snr_db=[35.0, float("inf")],
        n_channels=2000,
        schemes=["ci_blp", "zf"],
        seed=11,
        record_timing=False,
    )
    frame = run_ser_sweep(config, threads=4).to_frame()
    assert _row(frame, "ci_blp", float("inf"))["errors"] == 0
    blp, zf = _row(frame, "ci_blp", 35.0), _row(frame, "zf", 35.0)
    assert blp["ci_low"] <= zf["ci_high"]


def test_block_precoder_is_cheaper_than_per_slot_for_long_blocks():
    config = SimConfig(
        k=6,
        n_t=6,
        n_block_list=[20, 30, 40],
        modulation="qpsk",
        snr_db=[10.0],
        n_channels=50,
        schemes=["ci_blp", "ci_slp"],
        seed=3,
    )
    frame = run_timing(config).to_frame().set_index(["n_block", "scheme"])
    for n_block in (20, 30, 40):
        assert frame.loc[(n_block, "ci_blp"), "mean_solve_ms"] < frame.loc[(n_block, "ci_slp"), "mean_solve_ms"]


def test_block_sweep_reports_every_block_length():
    config = SimConfig(
        k=4,
        n_t=4,
        n_block_list=[1, 2, 4, 8, 16],
        modulation="8psk",
        snr_db=[20.0],
        n_channels=200,
        schemes=["ci_blp", "ci_slp"],
        seed=5,
        record_timing=False,
    )
    result = run_block_sweep(config, threads=4)
    check_ser_monotone(result)
    frame = result.csv_frame()
    assert sorted(frame["n_block"].unique()) == [1, 2, 4, 8, 16]
    single = frame[frame["n_block"] == 1].set_index("scheme")
    assert single.loc["ci_blp", "errors"] == single.loc["ci_slp", "errors"]


def test_full_validation_battery():
    results = run_validation(seed=20240601, instances=200)
    failed = [(r.name, r.worst) for r in results if not r.passed]
    assert failed == []
