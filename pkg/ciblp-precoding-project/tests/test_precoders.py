import numpy as np
import pytest
from numpy.testing import assert_allclose

from precoding import blp_assembly, precoders
from precoding.blp_assembly import BlockProblem
from precoding.exceptions import RankDeficientChannel, SingularD
from precoding.precoders import PrecoderKind, apply, block_normalize, ci_blp, ci_slp, rzf, zf, zf_unnormalized
from precoding.qp_solver import SolverConfig
from precoding.symbol_geometry import Modulation, to_W_hat


def test_ci_blp_golden(golden):
    result = ci_blp(golden)
    assert_allclose(result.delta_E, [0.5, 0.5], atol=1e-8)
    assert result.mu == pytest.approx(0.5, abs=1e-8)
    assert_allclose(result.W, [[1.0]], atol=1e-8)
    assert result.t_star == pytest.approx(1.0, abs=1e-8)
    assert result.solve_seconds >= 0.0
    assert result.qp is not None


def test_ci_blp_power_and_constructive_margin(make_block):
    for _ in range(10):
        block = make_block(modulations=("qpsk", "8psk"))
        result = ci_blp(block)
        assert result.block_power == pytest.approx(block.n_block * block.p0, rel=1e-6)
        assert result.t_star > 0.0
        assert np.min(result.alpha) >= result.t_star - 1e-9


def test_ci_blp_fw_matches_pg(make_block):
    for _ in range(5):
        block = make_block(modulations=("qpsk",), max_k=3, max_n=4)
        pg = ci_blp(block, method="pg")
        fw = ci_blp(block, method="fw")
        assert fw.t_star == pytest.approx(pg.t_star, rel=1e-6)


def test_ci_blp_raise_policy_propagates(rng):
    qpsk = Modulation.parse("qpsk")
    H = rng.standard_normal((3, 3)) + 1j * rng.standard_normal((3, 3))
    block = BlockProblem(H, qpsk.constellation()[rng.integers(4, size=(3, 1))], 1.0, qpsk)
    with pytest.raises(SingularD):
        ci_blp(block, singular_policy="raise")


def test_ci_blp_logs_kkt_warning(golden, monkeypatch, caplog):
    """복원된 프리코더가 KKT 를 만족하지 않으면 경고 로그를 남깁니다."""
    original = blp_assembly.recover_precoder

    def skewed(delta, geometry, block, dual=None):
        from dataclasses import replace

        result = original(delta, geometry, block, dual)
        return replace(result, W=0.5 * result.W)

    monkeypatch.setattr(blp_assembly, "recover_precoder", skewed)
    with caplog.at_level("WARNING", logger="precoding.precoders"):
        ci_blp(golden)
    assert any("KKT" in message for message in caplog.messages)


def test_single_slot_ci_blp_equals_ci_slp(make_block):
    for _ in range(10):
        block = make_block(max_n=1).slot(0)
        blp = ci_blp(block)
        slp = ci_slp(block.H, block.S[:, 0], block.p0, block.modulation)
        assert_allclose(blp.W, slp.W, atol=1e-8)
        assert blp.t_star == pytest.approx(slp.t_star, abs=1e-8)


def test_ci_slp_over_block_uses_per_slot_power(make_block):
    block = make_block(modulations=("8psk",), max_k=2)
    precoding = apply(PrecoderKind.CI_SLP, block)
    assert precoding.W.shape == (block.n_block, block.n_t, block.k)
    assert len(precoding.results) == block.n_block
    for n, result in enumerate(precoding.results):
        power = np.sum(np.abs(precoding.W[n] @ block.S[:, n]) ** 2)
        assert power == pytest.approx(block.p0, rel=1e-6)
        assert_allclose(precoding.gain[:, n], result.t_star)


def test_zf_block_normalization(make_block):
    for _ in range(5):
        block = make_block(modulations=("qpsk", "16qam"))
        W, scaling = zf(block)
        assert scaling > 0.0
        assert np.sum(np.abs(W @ block.S) ** 2) == pytest.approx(block.n_block * block.p0, rel=1e-10)
        HW = block.H @ W
        assert_allclose(HW, np.eye(block.k) / scaling, atol=1e-8)


def test_rzf_tends_to_zf_at_high_snr(make_block):
    block = make_block(modulations=("qpsk",))
    W_zf, _ = zf(block)
    W_rzf, _ = rzf(block, 1e12)
    assert_allclose(W_rzf, W_zf, atol=1e-5)
    with pytest.raises(ValueError):
        rzf(block, 0.0)


def test_zf_rejects_rank_deficient_channel():
    H = np.array([[1.0, 1.0], [1.0, 1.0]])
    with pytest.raises(RankDeficientChannel):
        zf_unnormalized(H)


def test_block_normalize_scaling():
    W = 2.0 * np.eye(2)
    S = np.ones((2, 3))
    normalized, scaling = block_normalize(W, S, 1.0)
    assert scaling == pytest.approx(np.sqrt(4.0 * 6 / 3))
    assert np.sum(np.abs(normalized @ S) ** 2) == pytest.approx(3.0)


def test_apply_gain_for_linear_and_ci_schemes(make_block):
    block = make_block(modulations=("qpsk",))
    linear = apply(PrecoderKind.ZF, block)
    assert linear.gain.shape == (block.k, block.n_block)
    assert linear.W.shape == (block.n_block, block.n_t, block.k)
    ci = apply(PrecoderKind.CI_BLP, block)
    assert_allclose(ci.gain, ci.results[0].t_star)
    with pytest.raises(ValueError):
        apply(PrecoderKind.RZF, block)


def test_precoder_kind_values():
    assert PrecoderKind("ci_blp") is PrecoderKind.CI_BLP
    assert PrecoderKind.CI_SLP.is_ci and not PrecoderKind.ZF.is_ci
    with pytest.raises(ValueError):
        PrecoderKind("mmse")


def test_solve_time_excludes_assembly(golden, monkeypatch):
    """solve_seconds 는 QP 풀이 구간만 측정합니다."""
    import time

    original = blp_assembly.assemble_geometry

    def slow_assembly(block, policy="raise"):
        time.sleep(0.05)
        return original(block, policy)

    monkeypatch.setattr(blp_assembly, "assemble_geometry", slow_assembly)
    result = precoders.ci_blp(golden)
    assert result.solve_seconds < 0.05


def test_primal_cross_check_matches_dual_path(make_block):
    pytest.importorskip("cvxpy")
    from precoding.primal_check import solve_primal

    for _ in range(3):
        block = make_block(modulations=("qpsk", "16qam"), max_k=2, max_n=4)
        primal = solve_primal(block)
        dual = ci_blp(block, SolverConfig(tol=1e-10))
        assert primal.t_star == pytest.approx(dual.t_star, rel=1e-4)
        assert primal.block_power <= block.n_block * block.p0 * (1 + 1e-6)


def test_doubling_power_budget_scales_precoder(make_block):
    for _ in range(3):
        block = make_block(modulations=("qpsk", "8psk"))
        doubled = BlockProblem(block.H, block.S, 2.0 * block.p0, block.modulation)
        base, scaled = ci_blp(block), ci_blp(doubled)
        assert_allclose(scaled.delta_E, base.delta_E, atol=1e-10)
        assert_allclose(scaled.W, np.sqrt(2.0) * base.W, rtol=1e-8, atol=1e-12)
        assert scaled.t_star == pytest.approx(np.sqrt(2.0) * base.t_star, rel=1e-8)


def test_ci_blp_scaling_is_at_least_block_normalized_zf(make_block):
    """ZF 도 같은 블록 전력 제약을 만족하는 실현가능 해이므로 CI-BLP 의 t* 보다 클 수 없습니다."""
    for _ in range(10):
        block = make_block(modulations=("qpsk", "8psk"))
        geometry = blp_assembly.assemble_geometry(block, "pinv")
        W_zf, _ = zf(block)
        alpha = blp_assembly.achieved_coefficients(geometry, to_W_hat(W_zf))
        t_zf = blp_assembly.minimum_scaling(alpha, geometry.sign_mask)
        assert t_zf > 0.0
        assert ci_blp(block).t_star >= t_zf * (1.0 - 1e-7)
