import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from scipy.optimize import linprog

from helpers import random_structure, structures
from tvcs import _kernels
from tvcs.penalty import (
    LIPSCHITZ_SAFETY,
    OpCounter,
    block_steps,
    estimate_step_size,
    majorant_matrix,
    penalty_gradient,
    penalty_value,
)
from tvcs.structure import TvcsStructure, build_constraint_system


@pytest.fixture
def sys4():
    return build_constraint_system(TvcsStructure(4, 2, [([0, 1], 1), ([2, 3], 1)]))


V2 = np.array([9.0, 1.0, 4.0, 25.0])


def lp_dual(system, v2):
    """Optimal (yG, yI) of min s.yG + 1.yI s.t. A^T yG + yI >= v2, y >= 0."""
    A = system.A.toarray()
    G, p = A.shape
    c = np.concatenate([system.s, np.ones(p)])
    res = linprog(c, A_ub=-np.hstack([A.T, np.eye(p)]), b_ub=-v2, bounds=(0, None), method="highs")
    assert res.status == 0
    return res.x


def test_zero_everywhere(sys4):
    assert penalty_value((np.zeros(4), np.zeros(7)), sys4, np.zeros(4)) == 0.0


def test_optimal_pair_is_zero(sys4):
    x = np.array([1.0, 0, 0, 1])
    y = lp_dual(sys4, V2)
    assert penalty_value((x, y), sys4, V2) == pytest.approx(0.0, abs=1e-12)
    gx, gy = penalty_gradient((x, y), sys4, V2)
    assert np.allclose(gx, 0, atol=1e-9) and np.allclose(gy, 0, atol=1e-9)


def test_all_ones_hand_value(sys4):
    assert penalty_value((np.ones(4), np.zeros(7)), sys4, V2) == pytest.approx(1125.0, abs=1e-12)


def test_single_active_duality_term(sys4):
    y = np.zeros(7)
    y[0] = 1.0
    gx, gy = penalty_gradient((np.zeros(4), y), sys4, np.zeros(4))
    s1 = sys4.s[0]
    np.testing.assert_array_equal(gx, 0.0)
    np.testing.assert_allclose(gy, s1 * np.concatenate([sys4.s, np.ones(4)]))


def test_dual_length_checked(sys4):
    with pytest.raises(ValueError):
        penalty_value((np.zeros(4), np.zeros(3)), sys4, V2)


def _random_point(system, rng):
    x = rng.uniform(-0.5, 1.5, system.p)
    y = rng.uniform(-0.5, 2.0, system.n_rows + system.p)
    return x, y


def test_gradient_matches_central_differences():
    rng = np.random.default_rng(11)
    h = 1e-6
    checked = 0
    for _ in range(20):
        system = build_constraint_system(random_structure(int(rng.integers(2, 9)), rng))
        v2 = rng.normal(size=system.p) ** 2
        x, y = _random_point(system, rng)
        z = np.concatenate([x, y])
        p = system.p
        f = lambda z: penalty_value((z[:p], z[p:]), system, v2)
        gx, gy = penalty_gradient((x, y), system, v2)
        g = np.concatenate([gx, gy])
        for i in range(z.size):
            e = np.zeros_like(z)
            e[i] = h
            fd = (f(z + e) - f(z - e)) / (2 * h)
            assert abs(fd - g[i]) <= 1e-5 * max(1.0, abs(g[i]))
            checked += 1
    assert checked > 100


def test_kernel_agrees_with_reference():
    rng = np.random.default_rng(5)
    system = build_constraint_system(random_structure(9, rng))
    v2 = rng.random(9)
    x, y = _random_point(system, rng)
    G, p = system.n_rows, system.p
    out = [np.empty(p), np.empty(G), np.empty(p), np.empty(G), np.empty(p)]
    fval = _kernels.penalty_and_gradient(
        x, y[:G].copy(), y[G:].copy(), v2, system.s.astype(float),
        system.view1_of, system.view2_of, out[0], out[1], out[2], out[3], out[4])
    gx, gy = penalty_gradient((x, y), system, v2)
    assert fval == pytest.approx(penalty_value((x, y), system, v2), rel=1e-12)
    np.testing.assert_allclose(out[0], gx, atol=1e-12)
    np.testing.assert_allclose(np.concatenate([out[1], out[2]]), gy, atol=1e-12)


def test_step_size_single_coordinate_hand_value():
    system = build_constraint_system(TvcsStructure(1, 1))
    gamma = estimate_step_size(system, np.array([1.0]))
    exact = 1.0 / (3.0 + np.sqrt(3.0))
    assert gamma == pytest.approx(exact, rel=0.05)
    assert gamma <= exact


def test_step_size_bounds_majorant_eigenvalue():
    rng = np.random.default_rng(2)
    for _ in range(20):
        system = build_constraint_system(random_structure(int(rng.integers(1, 10)), rng))
        v2 = rng.random(system.p) * 3
        lam = np.linalg.eigvalsh(majorant_matrix(system, v2)).max()
        L = block_steps(system, v2)[3]
        assert lam <= L <= LIPSCHITZ_SAFETY * lam * (1 + 1e-6)


def test_larger_weights_give_smaller_step(sys4):
    assert estimate_step_size(sys4, 10 * V2) < estimate_step_size(sys4, V2)


def test_step_size_deterministic(sys4):
    assert estimate_step_size(sys4, V2) == estimate_step_size(sys4, V2)


def test_gradient_is_lipschitz_under_majorant():
    rng = np.random.default_rng(8)
    system = build_constraint_system(random_structure(7, rng))
    v2 = rng.random(7)
    L = block_steps(system, v2)[3]
    p = system.p
    for _ in range(50):
        a = rng.normal(size=2 * p + system.n_rows)
        b = rng.normal(size=a.size)
        ga = np.concatenate(penalty_gradient((a[:p], a[p:]), system, v2))
        gb = np.concatenate(penalty_gradient((b[:p], b[p:]), system, v2))
        assert np.linalg.norm(ga - gb) <= L * np.linalg.norm(a - b) + 1e-12


def test_op_counter_linear():
    counts = []
    for side in (10, 20, 40):
        s = TvcsStructure.matrix_view(side, side, 1, 1, side)
        system = build_constraint_system(s)
        c = OpCounter()
        penalty_gradient((np.zeros(system.p), np.zeros(system.n_rows + system.p)), system,
                         np.ones(system.p), counter=c)
        counts.append(c.count / (system.p + system.n_rows))
    # nnz <= 3p, so the tally is at most 18p + 2|G|
    assert max(counts) <= 18


@settings(max_examples=50, deadline=None)
@given(structures(), st.integers(0, 2**32 - 1))
def test_penalty_nonnegative_and_zero_gradient_at_zero(s, seed):
    rng = np.random.default_rng(seed)
    system = build_constraint_system(s)
    v2 = rng.random(s.p)
    x, y = _random_point(system, rng)
    assert penalty_value((x, y), system, v2) >= 0.0
    z = (np.zeros(s.p), np.zeros(system.n_rows + s.p))
    gx, gy = penalty_gradient(z, system, np.zeros(s.p))
    assert not gx.any() and not gy.any()
