import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from kicktop.classical import (
    ChaoticMask,
    PhaseGrid,
    cartesian_to_spherical,
    chaotic_fraction,
    classical_map,
    classical_map_inverse,
    classify_phase_space,
    involution,
    jacobian,
    read_mask,
    read_mask_header,
    rotation_x,
    sali_trajectory,
    spherical_to_cartesian,
    write_mask,
)
from kicktop.spin import SpinSystem

ALPHA = 11 * np.pi / 19


def random_states(n, seed=0):
    v = np.random.default_rng(seed).standard_normal((n, 3))
    return v / np.linalg.norm(v, axis=1, keepdims=True)


def test_grid_weights_cover_sphere():
    g = PhaseGrid()
    assert g.weights.sum() == pytest.approx(4 * np.pi, rel=1e-6)
    assert g.theta[0] == pytest.approx(g.dtheta / 2)
    assert g.n_points == 80000


def test_grid_rejects_bad_sizes():
    with pytest.raises(ValueError):
        PhaseGrid(0, 4)


def test_spherical_roundtrip():
    s = random_states(50)
    th, ph = cartesian_to_spherical(s)
    np.testing.assert_allclose(spherical_to_cartesian(th, ph), s, atol=1e-14)


def test_gamma_zero_is_rotation():
    sys = SpinSystem(1, ALPHA, 0.0)
    out = classical_map(np.array([0.0, 0.0, 1.0]), sys)
    np.testing.assert_allclose(out, [0, -np.sin(ALPHA), np.cos(ALPHA)], atol=1e-15)


def test_equator_fixed_point_without_rotation():
    sys = SpinSystem(1, 0.0, 2.0)
    np.testing.assert_allclose(classical_map(np.array([1.0, 0, 0]), sys), [1, 0, 0], atol=1e-15)


def test_reversibility_example():
    sys = SpinSystem(1, ALPHA, 2.6)
    s = np.array([0.3, -0.4, np.sqrt(1 - 0.25)])
    back = involution(classical_map(involution(classical_map(s, sys), "T1", sys), sys), "T1", sys)
    np.testing.assert_allclose(back, s, atol=1e-12)


def test_inverse_map():
    sys = SpinSystem(1, ALPHA, 3.7)
    s = random_states(100)
    np.testing.assert_allclose(classical_map_inverse(classical_map(s, sys), sys), s, atol=1e-12)


def test_jacobian_gamma_zero():
    sys = SpinSystem(1, ALPHA, 0.0)
    np.testing.assert_array_equal(jacobian(random_states(3), sys), np.broadcast_to(rotation_x(ALPHA), (3, 3, 3)))


@pytest.mark.parametrize("gamma", [2.0, 4.0, 6.0])
def test_jacobian_unit_determinant(gamma):
    sys = SpinSystem(1, ALPHA, gamma)
    det = np.linalg.det(jacobian(random_states(1000, 3), sys))
    assert np.abs(det - 1).max() <= 1e-10


def test_jacobian_finite_difference():
    sys = SpinSystem(1, ALPHA, 3.0)
    rng = np.random.default_rng(7)
    h = 1e-7
    for s in random_states(20, 11):
        d = rng.standard_normal(3)
        # unnormalised map for the derivative check
        def raw(x):
            return classical_map(x, sys) * np.linalg.norm(x)
        fd = (raw(s + h * d) - raw(s - h * d)) / (2 * h)
        exact = jacobian(s, sys) @ d
        assert np.linalg.norm(fd - exact) <= 1e-6 * max(1.0, np.linalg.norm(exact))


@pytest.mark.parametrize("which", ["T1", "T2"])
def test_involutions(which):
    sys = SpinSystem(1, ALPHA, 2.6)
    s = random_states(200, 2)
    np.testing.assert_allclose(involution(involution(s, which, sys), which, sys), s, atol=1e-12)
    tf = involution(classical_map(involution(classical_map(s, sys), which, sys), sys), which, sys)
    np.testing.assert_allclose(tf, s, atol=1e-10)


def test_t2_fixed_set_relation():
    sys = SpinSystem(1, ALPHA, 2.6)
    s = random_states(500, 4)
    fixed = 0.5 * (s + involution(s, "T2", sys))
    fixed /= np.linalg.norm(fixed, axis=1, keepdims=True)
    np.testing.assert_allclose(involution(fixed, "T2", sys), fixed, atol=1e-12)
    y, z = fixed[:, 1], fixed[:, 2]
    np.testing.assert_allclose(y * np.sin(ALPHA) + z * np.cos(ALPHA), -z, atol=1e-12)


def test_sali_range_and_rotation():
    sys = SpinSystem(1, ALPHA, 0.0)
    hist = sali_trajectory(np.array([0.6, 0.0, 0.8]), sys, 300)
    assert hist.shape == (300,)
    assert np.all((hist >= 0) & (hist <= 2))
    assert hist.min() > 0.1


def test_sali_regular_and_chaotic():
    regular = sali_trajectory(np.array([1.0, 0.0, 0.0]), SpinSystem(1, ALPHA, 4.0), 300)
    # trajectory seeded inside the large island of the gamma = 4 map
    mask = classify_phase_space(SpinSystem(1, ALPHA, 4.0), PhaseGrid(20, 40))
    i, k = np.argwhere(mask.chi == 0)[0]
    s0 = spherical_to_cartesian(PhaseGrid(20, 40).theta[i], PhaseGrid(20, 40).phi[k])
    assert sali_trajectory(s0, SpinSystem(1, ALPHA, 4.0), 300)[-1] > 1e-4
    chaotic = sali_trajectory(np.array([0.3, -0.4, np.sqrt(0.75)]), SpinSystem(1, ALPHA, 6.0), 300)
    assert chaotic[-1] <= 1e-8
    assert regular.shape == (300,)


def test_classify_extremes():
    g = PhaseGrid(40, 80)
    assert chaotic_fraction(classify_phase_space(SpinSystem(1, ALPHA, 1.0), g)) <= 0.02
    assert chaotic_fraction(classify_phase_space(SpinSystem(1, ALPHA, 6.0), g)) >= 0.99
    mu3 = chaotic_fraction(classify_phase_space(SpinSystem(1, ALPHA, 3.0), g))
    assert 0.5 < mu3 < 1.0


def test_gamma4_island():
    g = PhaseGrid(40, 80)
    mask = classify_phase_space(SpinSystem(1, ALPHA, 4.0), g)
    mu = chaotic_fraction(mask)
    assert 0.5 < mu < 0.995
    assert mask.chi.sum() < g.n_points  # a regular island survives


def test_gamma_zero_fully_regular():
    mask = classify_phase_space(SpinSystem(1, ALPHA, 0.0), PhaseGrid(20, 40))
    assert chaotic_fraction(mask) == 0.0


def test_parallel_classification_matches_serial():
    g = PhaseGrid(10, 20)
    sys = SpinSystem(1, ALPHA, 3.0)
    a = classify_phase_space(sys, g, n_kicks=100)
    b = classify_phase_space(sys, g, n_kicks=100, workers=2)
    np.testing.assert_array_equal(a.sali_log10, b.sali_log10)


def test_threshold_validation():
    with pytest.raises(ValueError):
        classify_phase_space(SpinSystem(1), PhaseGrid(4, 8), threshold=1.5)


def test_chaotic_fraction_trivial_masks():
    g = PhaseGrid()
    zeros = ChaoticMask(g, np.zeros((200, 400)), np.zeros((200, 400)))
    assert chaotic_fraction(zeros) == 0.0
    assert chaotic_fraction(zeros.complement()) == pytest.approx(1.0, abs=1e-6)


def test_mask_roundtrip(tmp_path):
    g = PhaseGrid(6, 12)
    mask = classify_phase_space(SpinSystem(1, ALPHA, 3.0), g, n_kicks=50)
    path = tmp_path / "mask.csv"
    write_mask(path, mask)
    back = read_mask(path)
    assert back.grid == g
    np.testing.assert_array_equal(back.chi, mask.chi)
    np.testing.assert_array_equal(back.sali_log10, mask.sali_log10)
    assert back.gamma == 3.0 and back.n_kicks == 50
    assert read_mask_header(path)["n_theta"] == "6"


@settings(max_examples=30, deadline=None)
@given(gamma=st.floats(0, 8), x=st.floats(-1, 1), y=st.floats(-1, 1), z=st.floats(-1, 1))
def test_map_stays_on_sphere(gamma, x, y, z):
    s = np.array([x, y, z])
    if np.linalg.norm(s) < 1e-3:
        return
    s /= np.linalg.norm(s)
    out = classical_map(s, SpinSystem(1, ALPHA, gamma))
    assert abs(np.linalg.norm(out) - 1) < 1e-14
