import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from vitt.data import MicrostructureSpec, generate_image, random_walk_strain
from vitt.material import (
    ElasticParams,
    J2Params,
    MaterialState,
    ValidationError,
    elastic_stress,
    fiber_fraction,
    homogenize_path,
    j2_path,
    j2_step,
    mixture_path,
    uniaxial_stress_path,
    von_mises,
)

M, F = J2Params(), ElasticParams()


def stiffness(p: ElasticParams) -> np.ndarray:
    """6x6 isotropic stiffness acting on tensor-shear Voigt strain."""
    C = np.zeros((6, 6))
    C[:3, :3] = p.lam
    C[:3, :3] += np.eye(3) * 2 * p.mu
    C[3:, 3:] = np.eye(3) * 2 * p.mu
    return C


def test_elastic_stress_matches_stiffness_matrix():
    e = np.random.default_rng(0).normal(size=(5, 6)) * 1e-3
    np.testing.assert_allclose(elastic_stress(e, F), e @ stiffness(F).T, rtol=1e-14)


def test_lame_constants():
    p = ElasticParams(200.0, 0.25)
    assert p.lam == pytest.approx(80.0) and p.mu == pytest.approx(80.0)


def test_invalid_parameters():
    with pytest.raises(ValidationError):
        ElasticParams(-1.0, 0.2)
    with pytest.raises(ValidationError):
        J2Params(sigma_y=0.0)


def test_von_mises_of_uniaxial_stress_is_its_magnitude():
    assert von_mises(np.array([2.0, 0, 0, 0, 0, 0])) == pytest.approx(2.0)
    # pure shear tau: sqrt(3) tau
    assert von_mises(np.array([0, 0, 0, 1.0, 0, 0])) == pytest.approx(np.sqrt(3))


def test_uniaxial_ramp_matches_closed_form():
    eps = np.linspace(0, 0.03, 301)[1:]
    strains, stresses, _ = uniaxial_stress_path(eps, M)
    ey = M.sigma_y / M.E
    Et = M.E * M.H / (M.E + M.H)
    exact = np.where(eps <= ey, M.E * eps, M.sigma_y + Et * (eps - ey))
    np.testing.assert_allclose(stresses[:, 0], exact, rtol=1e-8)
    assert np.abs(stresses[:, 1:]).max() < 1e-12


def test_elastic_step_below_yield_is_elastic():
    eps = np.array([1e-4, 0, 0, 0, 0, 0])
    sig, st_ = j2_step(MaterialState.zeros(), eps, M)
    np.testing.assert_allclose(sig, elastic_stress(eps, M.elastic))
    assert st_.alpha == 0.0


@settings(max_examples=20, deadline=None)
@given(st.integers(0, 2**31 - 1))
def test_return_mapping_lands_on_yield_surface(seed):
    E = random_walk_strain(60, 2e-3, seed)
    state = MaterialState.zeros()
    for e in E:
        sig, new = j2_step(state, e, M)
        q, limit = von_mises(sig), M.sigma_y + M.H * new.alpha
        if new.alpha > state.alpha:
            assert abs(q - limit) < 1e-8 * M.sigma_y
        else:
            assert q <= limit * (1 + 1e-12)
        state = new


def test_plastic_flow_is_isochoric():
    E = random_walk_strain(50, 2e-3, 4)
    state = MaterialState.zeros()
    for e in E:
        _, state = j2_step(state, e, M)
    assert abs(state.eps_p[:3].sum()) < 1e-16


def test_vectorised_step_equals_pointwise():
    rng = np.random.default_rng(1)
    E = rng.normal(size=(4, 6)) * 5e-3
    sig, st_ = j2_step(MaterialState.zeros((4,)), E, M)
    for i in range(4):
        s1, t1 = j2_step(MaterialState.zeros(), E[i], M)
        np.testing.assert_array_equal(sig[i], s1)
        assert st_.alpha[i] == t1.alpha


def test_step_does_not_mutate_state():
    st0 = MaterialState.zeros()
    j2_step(st0, np.full(6, 1e-2), M)
    assert st0.alpha == 0.0 and not st0.eps_p.any()


def test_homogenization_identities():
    E = random_walk_strain(40, 1e-3, 7)
    side = 32
    ones = np.ones((side, side), np.uint8)
    zeros = np.zeros((side, side), np.uint8)
    np.testing.assert_array_equal(homogenize_path(ones, E, M, F), elastic_stress(E, F))
    np.testing.assert_array_equal(homogenize_path(zeros, E, M, F), j2_path(E, M))
    img = generate_image(MicrostructureSpec(3, 0.175, side, 11))
    f = fiber_fraction(img)
    mixed = homogenize_path(img, E, M, F)
    np.testing.assert_allclose(mixed, f * elastic_stress(E, F) + (1 - f) * j2_path(E, M), rtol=0, atol=1e-12)
    np.testing.assert_allclose(mixture_path(img, E, M, F), mixed, rtol=0, atol=1e-12)


def test_zero_shear_loading_gives_zero_shear_stress():
    E = np.zeros((30, 6))
    E[:, 2] = np.linspace(0, 0.02, 30)
    E[:, :2] = -0.5 * E[:, 2:3]
    img = generate_image(MicrostructureSpec(5, 0.13, 32, 2))
    assert np.all(mixture_path(img, E, M, F)[:, 3:] == 0.0)


def test_non_binary_image_rejected():
    with pytest.raises(ValidationError):
        homogenize_path(np.full((4, 4), 0.5), np.zeros((2, 6)), M, F)
