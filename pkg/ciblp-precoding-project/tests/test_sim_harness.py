import numpy as np
import pandas as pd
import pytest
from numpy.testing import assert_allclose

from precoding.blp_assembly import BlockProblem
from precoding.exceptions import ZeroDual
from precoding.precoders import PrecoderKind, apply, ci_blp, zf
from precoding.symbol_geometry import Modulation
from simulation import sim_harness
from simulation.exceptions import ConfigError, FailureBudgetExceeded, SerSanityError
from simulation.schemas import SimConfig
from simulation.sim_harness import (
    SerCurve,
    SweepResult,
    check_ser_monotone,
    count_symbol_errors,
    detect,
    enforce_failure_budget,
    gen_channel,
    gen_noise,
    gen_symbols,
    input_digest,
    run_block_sweep,
    run_ser_sweep,
    run_timing,
    snr_to_noise_variance,
    transmit_detect,
    trial_rng,
    wilson_interval,
)


def make_config(**overrides) -> SimConfig:
    base = dict(
        k=2,
        n_t=2,
        n_block=2,
        modulation="qpsk",
        snr_db=[0.0, 10.0],
        n_channels=6,
        schemes=["ci_blp", "zf"],
        seed=7,
        record_timing=False,
    )
    base.update(overrides)
    return SimConfig(**base)


def test_channel_statistics():
    rng = np.random.default_rng(2024)
    H = gen_channel(2, 200_000, rng)
    power = np.mean(np.abs(H) ** 2, axis=1)
    assert np.all((power > 0.99) & (power < 1.01))
    cross = np.abs(np.mean(H[0] * np.conj(H[1])))
    assert cross < 0.02


def test_trial_rng_streams_are_independent_of_order():
    a = gen_channel(2, 3, trial_rng(5, 1))
    gen_channel(2, 3, trial_rng(5, 0))
    b = gen_channel(2, 3, trial_rng(5, 1))
    assert_allclose(a, b)
    assert not np.allclose(a, gen_channel(2, 3, trial_rng(5, 2)))


def test_snr_to_noise_variance():
    assert snr_to_noise_variance(10.0) == pytest.approx(0.1)
    assert snr_to_noise_variance(0.0, p0=2.0) == pytest.approx(2.0)
    assert snr_to_noise_variance(float("inf")) == 0.0


@pytest.mark.parametrize("name", ["qpsk", "8psk", "16qam"])
def test_noiseless_ci_blp_has_no_symbol_errors(name, make_block):
    for _ in range(10):
        block = make_block(modulations=(name,))
        result = ci_blp(block)
        detected = transmit_detect(block, result.W, result.t_star, 0.0)
        assert count_symbol_errors(detected, block.S) == 0


def test_noiseless_zf_has_no_symbol_errors(make_block):
    block = make_block(modulations=("16qam",))
    precoding = apply(PrecoderKind.ZF, block)
    detected = transmit_detect(block, precoding.W, precoding.gain, 0.0)
    assert count_symbol_errors(detected, block.S) == 0


@pytest.mark.parametrize("name", ["qpsk", "8psk"])
def test_huge_noise_approaches_random_guessing(name):
    """σ² 가 매우 크면 SER 은 (M−1)/M 에 가까워집니다."""
    rng = np.random.default_rng(99)
    modulation = Modulation.parse(name)
    H = gen_channel(2, 2, rng)
    block = BlockProblem(H, gen_symbols(2, 20_000, modulation, rng), 1.0, modulation)
    W, scaling = zf(block)
    detected = transmit_detect(block, W, 1.0 / scaling, 1e8, rng=rng)
    ser = count_symbol_errors(detected, block.S) / block.S.size
    expected = (modulation.order - 1) / modulation.order
    assert ser == pytest.approx(expected, rel=0.02)


def test_qam_detection_grid_and_outer_regions():
    modulation = Modulation.parse("16qam")
    g = modulation.grid_step
    points = modulation.constellation()
    jitter = 0.3 * g * (1 + 1j)
    assert_allclose(detect(points + jitter, modulation), points)
    far = np.array([10.0 + 10.0j, -10.0 + 0.1j])
    assert_allclose(detect(far, modulation), [3 * g + 3j * g, -3 * g + g * 1j])
    assert_allclose(detect(2.0 * points, modulation, gain=2.0), points)


def test_psk_detection_picks_nearest_phase():
    modulation = Modulation.parse("8psk")
    points = modulation.constellation()
    rotated = 5.0 * points * np.exp(1j * np.pi / 10)
    assert_allclose(detect(rotated, modulation), points)


def test_transmit_detect_rejects_bad_precoder_shape(golden):
    with pytest.raises(ValueError):
        transmit_detect(golden, np.ones((2, 2)), 1.0, 0.0)


def test_wilson_interval():
    low, high = wilson_interval(0, 100)
    assert low == 0.0
    assert 0.0 < high < 0.05
    low, high = wilson_interval(np.array([10, 0]), np.array([100, 0]))
    assert low[0] < 0.1 < high[0]
    assert (low[1], high[1]) == (0.0, 1.0)
    low, high = wilson_interval(50, 50)
    assert high == 1.0
    assert 0.9 < low < 1.0


def test_input_digest_detects_changes(rng):
    S = gen_symbols(2, 4, Modulation.parse("qpsk"), rng)
    Z = gen_noise(2, 4, rng)
    digest = input_digest(S, Z)
    assert digest == input_digest(S.copy(), Z.copy())
    Z[0, 0] += 1e-12
    assert input_digest(S, Z) != digest


def test_ser_sweep_is_reproducible_across_threads():
    config = make_config()
    first = run_ser_sweep(config, threads=1).csv_frame()
    again = run_ser_sweep(config, threads=1).csv_frame()
    threaded = run_ser_sweep(config, threads=2).csv_frame()
    pd.testing.assert_frame_equal(first, again)
    pd.testing.assert_frame_equal(first, threaded)
    assert list(first.columns) == sim_harness.SER_COLUMNS
    assert len(first) == 4
    assert (first["symbols"] == 6 * 2 * 2).all()
    assert (first["mean_solve_ms"] == 0.0).all()


def test_ser_sweep_noiseless_snr_point():
    config = make_config(snr_db=[float("inf")], schemes=["ci_blp", "ci_slp", "zf", "rzf"])
    frame = run_ser_sweep(config).to_frame()
    assert (frame["errors"] == 0).all()
    assert {"ci_low", "ci_high", "n_block"} <= set(frame.columns)


def test_ser_sweep_requires_block_length():
    with pytest.raises(ConfigError) as err:
        run_ser_sweep(make_config(n_block=None))
    assert err.value.key == "n_block"


def test_ser_sweep_leaves_timing_out_by_default():
    config = SimConfig(k=2, n_t=2, n_block=2, modulation="qpsk", snr_db=[0.0], n_channels=3, schemes=["ci_blp"], seed=7)
    assert not config.record_timing
    assert run_ser_sweep(config).curves["ci_blp"].mean_solve_ms == 0.0


def test_ser_sweep_records_solve_time():
    result = run_ser_sweep(make_config(record_timing=True, schemes=["ci_blp"]))
    assert result.curves["ci_blp"].mean_solve_ms > 0.0


def test_block_sweep_single_slot_schemes_coincide():
    config = make_config(n_block=None, n_block_list=[1, 2], snr_db=[0.0, 5.0], schemes=["ci_blp", "ci_slp"])
    result = run_block_sweep(config)
    frame = result.csv_frame()
    assert list(frame.columns) == sim_harness.BLOCK_COLUMNS
    single = frame[frame["n_block"] == 1]
    blp = single[single["scheme"] == "ci_blp"]["errors"].to_numpy()
    slp = single[single["scheme"] == "ci_slp"]["errors"].to_numpy()
    assert_allclose(blp, slp)
    assert result.attempts == {"ci_blp": 12, "ci_slp": 12}


def test_failures_are_counted_and_budget_enforced(monkeypatch):
    def failing(kind, block, **kwargs):
        if kind is PrecoderKind.CI_BLP:
            raise ZeroDual("δᵀUδ = 0")
        return apply(kind, block, **kwargs)

    monkeypatch.setattr(sim_harness, "apply", failing)
    result = run_ser_sweep(make_config())
    assert result.failures == {"ci_blp": 6, "zf": 0}
    assert result.attempts == {"ci_blp": 6, "zf": 6}
    assert (result.curves["ci_blp"].symbols == 0).all()
    with pytest.raises(FailureBudgetExceeded) as err:
        enforce_failure_budget(result)
    assert err.value.scheme == "ci_blp"


def test_failure_budget_threshold():
    curve = SerCurve("ci_blp", np.array([0.0]), np.array([400]), np.array([10]))
    ok = SweepResult(2, {"ci_blp": curve}, failures={"ci_blp": 1}, attempts={"ci_blp": 200})
    enforce_failure_budget(ok)
    bad = SweepResult(2, {"ci_blp": curve}, failures={"ci_blp": 3}, attempts={"ci_blp": 200})
    with pytest.raises(FailureBudgetExceeded):
        enforce_failure_budget(bad)


def _sweep(errors, symbols=1000):
    snr = np.arange(len(errors), dtype=float) * 5.0
    curve = SerCurve("zf", snr, np.full(len(errors), symbols), np.asarray(errors))
    return SweepResult(2, {"zf": curve})


def test_ser_monotone_check():
    check_ser_monotone(_sweep([500, 100, 0]))
    check_ser_monotone(_sweep([100, 110]))
    check_ser_monotone(_sweep([0, 0, 0]))
    with pytest.raises(SerSanityError) as err:
        check_ser_monotone(_sweep([100, 500]))
    assert (err.value.snr_low, err.value.snr_high) == (0.0, 5.0)


def test_timing_table():
    config = make_config(
        n_block=None,
        n_block_list=[2, 4],
        sizes=[(2, 2)],
        n_channels=5,
        schemes=["ci_blp", "ci_slp"],
        record_timing=True,
    )
    table = run_timing(config)
    frame = table.to_frame()
    assert len(frame) == 4
    assert list(table.csv_frame().columns) == sim_harness.TIMING_COLUMNS
    assert (frame["mean_solve_ms"] > 0.0).all()
    assert (frame["std_solve_ms"] >= 0.0).all()
    slp = frame[frame["scheme"] == "ci_slp"]
    assert_allclose(slp["mean_solve_ms"], slp["n_block"] * slp["mean_slot_ms"], rtol=1e-9)
    assert table.attempts == {"ci_blp": 10, "ci_slp": 10}
