from dataclasses import replace

import numpy as np
import pytest
from numpy.testing import assert_allclose

from precoding.blp_assembly import (
    BlockGeometry,
    BlockProblem,
    achieved_coefficients,
    assemble_geometry,
    build_D,
    build_F_G,
    build_coeffs,
    build_slot_geometry,
    build_U,
    minimum_scaling,
    recover_precoder,
)
from precoding.exceptions import InvalidBlockProblem, SingularD, ZeroDual
from precoding.symbol_geometry import Modulation


def test_golden_geometry(golden):
    """h=1, s=(1+j)/√2: A=[√2,0]ᵀ, B=[0,√2]ᵀ, D=I, U=2I"""
    slot = build_slot_geometry(golden, 0)
    assert_allclose(slot.A.ravel(), [np.sqrt(2.0), 0.0], atol=1e-12)
    assert_allclose(slot.B.ravel(), [0.0, np.sqrt(2.0)], atol=1e-12)

    geometry = assemble_geometry(golden)
    assert_allclose(geometry.D, np.eye(2), atol=1e-12)
    dual = build_U(geometry, golden.p0)
    assert_allclose(dual.U, 2.0 * np.eye(2), atol=1e-12)
    assert dual.sign_set.all()


def test_golden_recovery(golden):
    geometry = assemble_geometry(golden)
    result = recover_precoder(np.array([0.5, 0.5]), geometry, golden)
    assert result.mu == pytest.approx(0.5, abs=1e-12)
    assert_allclose(result.W, [[1.0]], atol=1e-12)
    assert result.t_star == pytest.approx(1.0, abs=1e-12)
    assert result.t_dual == pytest.approx(1.0, abs=1e-12)
    assert result.block_power == pytest.approx(1.0, abs=1e-12)
    assert not result.delta_E.flags.writeable


def test_block_problem_validation():
    qpsk = Modulation.parse("qpsk")
    s = (1 + 1j) / np.sqrt(2.0)
    with pytest.raises(InvalidBlockProblem):
        BlockProblem(np.ones((3, 2)), np.full((3, 1), s), 1.0, qpsk)
    with pytest.raises(InvalidBlockProblem):
        BlockProblem(np.ones((1, 2)), np.full((2, 1), s), 1.0, qpsk)
    with pytest.raises(InvalidBlockProblem):
        BlockProblem(np.ones((1, 2)), np.full((1, 1), s), 0.0, qpsk)
    with pytest.raises(InvalidBlockProblem):
        BlockProblem(np.ones((1, 2)), np.array([[0.3 + 0.1j]]), 1.0, qpsk)


def test_slot_index_out_of_range(golden):
    with pytest.raises(IndexError):
        build_slot_geometry(golden, 1)


def test_singular_D_policy(rng):
    """N < K 이면 D 는 rank 2N 이라 특이 행렬입니다."""
    qpsk = Modulation.parse("qpsk")
    H = rng.standard_normal((3, 4)) + 1j * rng.standard_normal((3, 4))
    S = qpsk.constellation()[rng.integers(4, size=(3, 1))]
    block = BlockProblem(H, S, 1.0, qpsk)
    slots = [build_slot_geometry(block, 0)]
    with pytest.raises(SingularD) as err:
        build_D(slots, "raise")
    assert err.value.condition > 1e12

    factor = build_D(slots, "pinv")
    assert factor.pseudo
    assert factor.rank == 2
    with pytest.raises(ValueError):
        build_D(slots, "ignore")


def test_D_inverse_is_exact_for_full_rank_blocks(make_block):
    block = make_block(max_k=2, max_n=8)
    while block.n_block < 2 * block.k:
        block = make_block(max_k=2, max_n=8)
    geometry = assemble_geometry(block, "pinv")
    if not geometry.d_pseudo:
        assert_allclose(geometry.D @ geometry.Dinv, np.eye(2 * block.k), atol=1e-8)


@pytest.mark.parametrize("name", ["qpsk", "8psk", "16qam"])
def test_F_plus_G_equals_U(name, rng):
    """F + G = U 를 무작위 인스턴스에서 상대 오차 1e-10 이하로 확인합니다."""
    modulation = Modulation.parse(name)
    for _ in range(15):
        k = int(rng.integers(1, 5))
        n_t = int(rng.integers(k, 7))
        n_block = int(rng.integers(k, 9))
        H = rng.standard_normal((k, n_t)) + 1j * rng.standard_normal((k, n_t))
        S = modulation.constellation()[rng.integers(modulation.order, size=(k, n_block))]
        geometry = assemble_geometry(BlockProblem(H, S, 1.0, modulation), "pinv")
        U = build_U(geometry).U
        F, G = build_F_G(geometry)
        assert np.linalg.norm(F + G - U) / np.linalg.norm(U) <= 1e-10


def test_U_symmetric_psd_and_qam_sign_set(rng):
    qam = Modulation.parse("16qam")
    g = qam.grid_step
    H = rng.standard_normal((2, 3)) + 1j * rng.standard_normal((2, 3))
    S = np.array([[3 * g + 3j * g, g + g * 1j, -g - 3j * g], [g - g * 1j, -3 * g + g * 1j, 3 * g - 3j * g]])
    geometry = assemble_geometry(BlockProblem(H, S, 1.0, qam), "pinv")
    dual = build_U(geometry)
    assert dual.symmetry_error <= 1e-12
    assert dual.psd_margin >= -1e-8
    expected = [True, False, True, False, False, True, False, False, False, True, True, True]
    assert dual.sign_set.tolist() == expected
    assert dual.sign_indices.tolist() == [i for i, e in enumerate(expected) if e]


def test_recovery_power_identity_for_any_feasible_dual(make_block, rng):
    """δ 가 (부분) 심플렉스 위의 임의 점이어도 블록 전력은 정확히 N·p0 입니다."""
    for _ in range(10):
        block = make_block()
        geometry = assemble_geometry(block, "pinv")
        n = 2 * block.n_block * block.k
        delta = rng.random(n)
        delta /= delta.sum()
        result = recover_precoder(delta, geometry, block)
        assert result.block_power == pytest.approx(block.n_block * block.p0, rel=1e-9)
        alpha = achieved_coefficients(geometry, result.W_hat)
        assert_allclose(alpha, result.alpha)
        assert result.slot_min_alpha.shape == (block.n_block,)


def test_recover_rejects_zero_dual(golden):
    geometry = assemble_geometry(golden)
    with pytest.raises(ZeroDual):
        recover_precoder(np.zeros(2), geometry, golden)


def test_recover_does_not_modify_input(golden):
    delta = np.array([0.5, 0.5])
    recover_precoder(delta, assemble_geometry(golden), golden)
    assert delta.flags.writeable
    assert_allclose(delta, [0.5, 0.5])


def test_cross_coefficients_are_transposes(make_block):
    """f_{m,n} = c^nᵀD⁻¹s^m 와 g_{m,n} = s^nᵀD⁻¹c^m 이므로 f = gᵀ"""
    for _ in range(10):
        coeffs = assemble_geometry(make_block(), "pinv").coeffs
        assert_allclose(coeffs.f, coeffs.g.T, rtol=1e-10, atol=1e-10)
        assert_allclose(coeffs.p, coeffs.p.T, rtol=1e-10, atol=1e-10)
        assert_allclose(coeffs.q, coeffs.q.T, rtol=1e-10, atol=1e-10)


def test_symbol_scaling_scales_D_and_keeps_dual_path(make_block):
    """s_E, c_E 를 c 배 하면 D 는 c² 배가 되고 계수, U, 달성 계수는 그대로입니다."""
    c = 2.0
    block = make_block(modulations=("qpsk", "8psk"))
    geometry = assemble_geometry(block, "pinv")
    slots = [replace(slot, s_E=c * slot.s_E, c_E=c * slot.c_E) for slot in geometry.slots]
    factor = build_D(slots, "pinv")
    assert_allclose(factor.D, c**2 * geometry.D, rtol=1e-12, atol=1e-12)

    scaled = BlockGeometry(slots=slots, D=factor.D, Dinv=factor.Dinv, d_rank=factor.rank)
    scaled = replace(scaled, coeffs=build_coeffs(scaled))
    for original, rescaled in zip(geometry.coeffs, scaled.coeffs):
        assert_allclose(rescaled, original, rtol=1e-8, atol=1e-10)
    assert_allclose(build_U(scaled).U, build_U(geometry).U, rtol=1e-8, atol=1e-10)

    n = 2 * block.n_block * block.k
    delta = np.full(n, 1.0 / n)
    base = recover_precoder(delta, geometry, block)
    moved = recover_precoder(delta, scaled, block)
    assert_allclose(moved.W_hat, base.W_hat / c, rtol=1e-8, atol=1e-10)
    assert_allclose(moved.alpha, base.alpha, rtol=1e-8, atol=1e-10)
    assert moved.t_dual == pytest.approx(base.t_dual, rel=1e-8)


def test_t_star_uses_locked_coefficients_for_qam():
    mask = np.array([True, False, True, False])
    alpha = np.array([1.4, 1.0, 1.2, 1.0])
    assert minimum_scaling(alpha, mask) == pytest.approx(1.0)
    # eligible 계수가 locked 보다 작으면 그 값이 t*
    assert minimum_scaling(np.array([0.9, 1.0, 1.2, 1.0]), mask) == pytest.approx(0.9)
    assert minimum_scaling(np.array([2.0, 3.0]), np.array([True, True])) == pytest.approx(2.0)
    assert minimum_scaling(np.array([2.0, 2.0]), np.array([False, False])) == pytest.approx(2.0)
