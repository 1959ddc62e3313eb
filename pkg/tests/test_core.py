import numpy as np
import pytest

from stiefelcd import core
from stiefelcd.errors import DimensionError, NumericalError


# ---------------------------------------------------------------------------
# independent scalar oracles used to freeze expected values
# ---------------------------------------------------------------------------

def poly_oracle(t):
    # direct evaluation of t*(15 - 10 t^2 + 3 t^4)/8, written out so a
    # coefficient typo in the library cannot leak into the expectation
    return (15.0 * t - 10.0 * t**3 + 3.0 * t**5) / 8.0


def poly_deriv_oracle(t):
    # d/dt of the oracle above, expanded term by term
    return (15.0 - 30.0 * t**2 + 15.0 * t**4) / 8.0


def bisect_oracle(target, lo=-10.0, hi=10.0, iters=200):
    # monotone bisection for poly_oracle(t) = target
    for _ in range(iters):
        mid = 0.5 * (lo + hi)
        if poly_oracle(mid) <= target:
            lo = mid
        else:
            hi = mid
    return 0.5 * (lo + hi)


def fd_jacobian_oracle(x, d, t=1e-5):
    return (core.apply_A(x + t * d) - core.apply_A(x - t * d)) / (2.0 * t)


def random_orthonormal(rng, n, p):
    q, _ = np.linalg.qr(rng.standard_normal((n, p)))
    return q


# ---------------------------------------------------------------------------
# sym and validation
# ---------------------------------------------------------------------------

def test_sym_averages_off_diagonal():
    out = core.sym([[1.0, 2.0], [4.0, 3.0]])
    assert np.array_equal(out, np.array([[1.0, 3.0], [3.0, 3.0]]))


def test_sym_fixes_symmetric_input():
    m = np.array([[2.0, -1.0], [-1.0, 5.0]])
    assert np.array_equal(core.sym(m), m)


def test_sym_rejects_nonsquare():
    with pytest.raises(DimensionError):
        core.sym(np.ones((3, 2)))


def test_validate_matrix_rejects_wide_and_nonfinite():
    with pytest.raises(DimensionError):
        core.validate_matrix(np.ones((2, 3)))
    with pytest.raises(ValueError):
        core.validate_matrix(np.array([[np.nan], [1.0]]))
    with pytest.raises(DimensionError):
        core.validate_matrix(np.ones(4))


# ---------------------------------------------------------------------------
# apply_A
# ---------------------------------------------------------------------------

def test_apply_A_scalar_matches_polynomial_oracle():
    expected = poly_oracle(2.0)
    assert expected == 5.75  # 2*(15 - 40 + 48)/8, frozen by hand
    out = core.apply_A([[2.0]])
    assert out.shape == (1, 1)
    assert out[0, 0] == pytest.approx(expected, abs=1e-14)


def test_apply_A_fixes_orthonormal_columns():
    rng = np.random.default_rng(7)
    for n, p in [(2, 1), (5, 3), (20, 5)]:
        q = random_orthonormal(rng, n, p)
        assert np.linalg.norm(core.apply_A(q) - q) <= 1e-13 * np.sqrt(p)


def test_apply_A_matches_singular_value_action():
    # A acts on singular values only: A(U s V') = U poly(s) V'
    rng = np.random.default_rng(3)
    u = random_orthonormal(rng, 6, 3)
    v = random_orthonormal(rng, 3, 3)
    s = np.array([0.3, 1.0, 2.5])
    x = (u * s) @ v.T
    expected = (u * poly_oracle(s)) @ v.T
    assert np.linalg.norm(core.apply_A(x) - expected) <= 1e-12


def test_scalar_map_and_deriv_match_oracles():
    ts = np.linspace(-3, 3, 41)
    assert np.allclose(core.scalar_map(ts), poly_oracle(ts), atol=1e-13)
    assert np.allclose(core.scalar_map_deriv(ts), poly_deriv_oracle(ts), atol=1e-12)
    assert core.scalar_map_deriv(1.0) == 0.0
    assert core.scalar_map_deriv(2.0) == pytest.approx(16.875, abs=1e-14)


# ---------------------------------------------------------------------------
# feasibility and shells
# ---------------------------------------------------------------------------

def test_feasibility_violation_values():
    assert core.feasibility_violation([[2.0]]) == pytest.approx(3.0, abs=1e-15)
    rng = np.random.default_rng(0)
    q = random_orthonormal(rng, 8, 2)
    assert core.feasibility_violation(q) <= 1e-13


def test_shell_membership():
    shell = core.FeasibilityShell(0.5)
    rng = np.random.default_rng(1)
    q = random_orthonormal(rng, 6, 2)
    assert shell.contains(q)
    assert not shell.contains(1.5 * q)
    with pytest.raises(ValueError):
        core.FeasibilityShell(0.0)


def test_random_shell_point_hits_requested_radius():
    rng = np.random.default_rng(5)
    for radius in [1e-6, 0.1, 0.5, 1.0]:
        for n, p in [(4, 1), (9, 4)]:
            x = core.random_shell_point(rng, n, p, radius)
            assert core.feasibility_violation(x) == pytest.approx(radius, rel=1e-10)


# ---------------------------------------------------------------------------
# Gram residual factorization
# ---------------------------------------------------------------------------

def test_ata_identity_scalar_value():
    # both sides at X = [[2]]: psi(2)^2 - 1 and 27*(9*16 - 33*4 + 64)/64
    lhs, rhs = core.ata_residual_identity([[2.0]])
    hand_lhs = poly_oracle(2.0) ** 2 - 1.0
    hand_rhs = (4.0 - 1.0) ** 3 * (9.0 * 16.0 - 33.0 * 4.0 + 64.0) / 64.0
    assert hand_lhs == hand_rhs == 32.0625
    assert float(lhs[0, 0]) == pytest.approx(32.0625, abs=1e-15)
    assert float(rhs[0, 0]) == pytest.approx(32.0625, abs=1e-15)


def test_ata_identity_random_inputs():
    rng = np.random.default_rng(11)
    for _ in range(200):
        n = int(rng.choice([3, 10, 20]))
        p = min(n, int(rng.choice([1, 3, 5])))
        x = rng.uniform(-2.0, 2.0, (n, p))
        lhs, rhs = core.ata_residual_identity(x)
        resid = float(np.sqrt(np.sum((lhs - rhs) ** 2)))
        assert resid <= 1e-11 * max(1.0, np.linalg.norm(x) ** 2)


def test_cubic_feasibility_contraction():
    rng = np.random.default_rng(13)
    for _ in range(300):
        n = int(rng.integers(2, 15))
        p = int(rng.integers(1, min(n, 5) + 1))
        radius = rng.uniform(0.0, 1.0) or 1e-3
        x = core.random_shell_point(rng, n, p, radius)
        v = core.feasibility_violation(x)
        assert core.feasibility_violation(core.apply_A(x)) <= v**3 + 1e-12


# ---------------------------------------------------------------------------
# Jacobian
# ---------------------------------------------------------------------------

def test_jacobian_scalar_matches_derivative_oracle():
    out = core.jacobian_apply([[2.0]], [[1.0]])
    assert out[0, 0] == pytest.approx(poly_deriv_oracle(2.0), abs=1e-13)
    assert poly_deriv_oracle(2.0) == 16.875


def test_jacobian_matches_central_differences():
    rng = np.random.default_rng(17)
    for _ in range(50):
        n = int(rng.integers(2, 12))
        p = int(rng.integers(1, min(n, 5) + 1))
        x = rng.uniform(-2.0, 2.0, (n, p))
        d = rng.standard_normal((n, p))
        d /= np.linalg.norm(d)
        jd = core.jacobian_apply(x, d)
        fd = fd_jacobian_oracle(x, d)
        assert np.linalg.norm(jd - fd) <= 1e-6 * max(1.0, np.linalg.norm(fd))


def test_jacobian_reduces_to_tangent_projection_on_manifold():
    rng = np.random.default_rng(19)
    for _ in range(50):
        n = int(rng.integers(2, 12))
        p = int(rng.integers(1, min(n, 5) + 1))
        q = random_orthonormal(rng, n, p)
        d = rng.standard_normal((n, p))
        jd = core.jacobian_apply(q, d)
        closed = d - q @ core.sym(d.T @ q)
        assert np.linalg.norm(jd - closed) <= 1e-12 * max(1.0, np.linalg.norm(d))
        assert np.linalg.norm(jd - core.project_tangent(q, d)) <= 1e-12 * max(
            1.0, np.linalg.norm(d)
        )


def _jacobian_scale(x):
    # crude bound on the operator norm of the Jacobian, used to scale
    # roundoff tolerances for inner products against it
    gn = np.linalg.norm(x.T @ x)
    return (15.0 + 10.0 * gn + 3.0 * gn * gn) / 8.0 + 3.0 * gn


def test_jacobian_self_adjoint():
    rng = np.random.default_rng(23)
    for _ in range(200):
        n = int(rng.integers(2, 20))
        p = int(rng.integers(1, min(n, 5) + 1))
        x = rng.uniform(-2.0, 2.0, (n, p))
        d = rng.standard_normal((n, p))
        w = rng.standard_normal((n, p))
        lhs = np.sum(core.jacobian_apply(x, d) * w)
        rhs = np.sum(d * core.jacobian_apply(x, w))
        scale = np.linalg.norm(d) * np.linalg.norm(w) * max(1.0, _jacobian_scale(x))
        assert abs(lhs - rhs) <= 1e-12 * scale


def test_jacobian_normal_component_identity_scalar():
    # <J(x)[w], x(x^2-1)> = (15/8) <x w, (x^2-1)^3> at x = 2, w = 1:
    # 16.875 * 6 = 101.25 and (15/8) * 2 * 27 = 101.25
    x = np.array([[2.0]])
    w = np.array([[1.0]])
    lhs = np.sum(core.jacobian_apply(x, w) * (x * (4.0 - 1.0)))
    rhs = (15.0 / 8.0) * 2.0 * 27.0
    assert lhs == pytest.approx(rhs, abs=1e-12)
    assert rhs == 101.25


def test_jacobian_normal_component_identity_random():
    rng = np.random.default_rng(29)
    eyec = np.eye
    for _ in range(200):
        n = int(rng.integers(2, 15))
        p = int(rng.integers(1, min(n, 5) + 1))
        x = rng.uniform(-2.0, 2.0, (n, p))
        w = rng.standard_normal((n, p))
        g = core.sym(x.T @ x)
        r = g - eyec(p)
        lhs = np.sum(core.jacobian_apply(x, w) * (x @ r))
        rhs = (15.0 / 8.0) * np.sum(core.sym(x.T @ w) * (r @ r @ r))
        scale = 1.0 + abs(lhs) + abs(rhs) + np.linalg.norm(w) * max(1.0, _jacobian_scale(x))
        assert abs(lhs - rhs) <= 1e-12 * scale


# ---------------------------------------------------------------------------
# projection
# ---------------------------------------------------------------------------

def test_project_stiefel_rescales_scaled_orthonormal():
    rng = np.random.default_rng(31)
    q = random_orthonormal(rng, 7, 3)
    pt = core.project_stiefel(2.0 * q)
    assert np.linalg.norm(pt.matrix - q) <= 1e-12
    assert not pt.rank_deficient


def test_project_stiefel_flags_rank_deficiency():
    x = np.array([[1.0, 0.0], [0.0, 0.0], [0.0, 0.0]])
    pt = core.project_stiefel(x)
    assert pt.rank_deficient
    assert core.feasibility_violation(pt.matrix) <= 1e-12


def test_projection_distance_bounds():
    rng = np.random.default_rng(37)
    for _ in range(300):
        n = int(rng.integers(2, 15))
        p = int(rng.integers(1, min(n, 5) + 1))
        radius = rng.uniform(0.0, 0.5) or 1e-3
        x = core.random_shell_point(rng, n, p, radius)
        v = core.feasibility_violation(x)
        pt = core.project_stiefel(x).matrix
        assert np.linalg.norm(x - pt) <= v
        assert np.linalg.norm(core.apply_A(x) - pt) <= 4.0 * v**3 + 1e-15


def test_stiefel_point_validates_feasibility():
    with pytest.raises(ValueError):
        core.StiefelPoint(matrix=np.array([[2.0]]))
    rng = np.random.default_rng(41)
    q = random_orthonormal(rng, 5, 2)
    pt = core.StiefelPoint(matrix=q)
    assert pt.shape == (5, 2)


# ---------------------------------------------------------------------------
# inverse map
# ---------------------------------------------------------------------------

def test_inverse_scalar_matches_bisection_oracle():
    root = bisect_oracle(5.75)
    assert root == pytest.approx(2.0, abs=1e-12)
    out = core.inverse_A([[5.75]])
    assert out[0, 0] == pytest.approx(root, abs=1e-12)


def test_inverse_of_zero_is_zero():
    out = core.inverse_A(np.zeros((4, 2)))
    assert np.array_equal(out, np.zeros((4, 2)))


def test_inverse_roundtrip_on_sampled_spectra():
    rng = np.random.default_rng(1)
    worst = 0.0
    for _ in range(300):
        n, p = 12, 4
        u = random_orthonormal(rng, n, p)
        v = random_orthonormal(rng, p, p)
        s = rng.uniform(0.0, 3.0, p)
        x = (u * s) @ v.T
        back = core.inverse_A(core.apply_A(x))
        worst = max(worst, np.linalg.norm(back - x) / max(1.0, np.linalg.norm(x)))
    assert worst <= 1e-10


def test_inverse_respects_tolerance_argument():
    y = np.array([[3.0, 0.1], [0.0, 0.5], [0.2, 0.0]])
    x = core.inverse_A(y, tol=1e-14)
    assert np.linalg.norm(core.apply_A(x) - y) <= 1e-14 * max(1.0, np.linalg.norm(y)) * 10


# ---------------------------------------------------------------------------
# dissolved objective
# ---------------------------------------------------------------------------

def test_ncdf_value_penalty_only():
    cfg = core.PenaltyConfig(beta=1.0)
    # f == 0, X = [[2]]: h = (1/4) * 3^2
    val = core.ncdf_value(lambda a: 0.0, [[2.0]], cfg)
    assert val == pytest.approx(2.25, abs=1e-14)


def test_ncdf_value_with_entry_sum():
    cfg = core.PenaltyConfig(beta=1.0)
    val = core.ncdf_value(lambda a: float(np.sum(a)), [[2.0]], cfg)
    assert val == pytest.approx(poly_oracle(2.0) + 2.25, abs=1e-14)
    assert poly_oracle(2.0) + 2.25 == 8.0


def test_ncdf_subgradient_linear_objective():
    cfg = core.PenaltyConfig(beta=1.0)
    out = core.ncdf_subgradient(lambda a: np.ones((1, 1)), [[2.0]], cfg)
    # derivative oracle 16.875 plus penalty 1 * 2 * 3
    assert out[0, 0] == pytest.approx(poly_deriv_oracle(2.0) + 6.0, abs=1e-13)
    assert poly_deriv_oracle(2.0) + 6.0 == 22.875


def test_ncdf_subgradient_zero_objective():
    cfg = core.PenaltyConfig(beta=2.0)
    out = core.ncdf_subgradient(lambda a: np.zeros((1, 1)), [[2.0]], cfg)
    assert out[0, 0] == pytest.approx(12.0, abs=1e-13)


def test_ncdf_matches_projected_subgradient_on_manifold():
    rng = np.random.default_rng(43)
    cfg = core.PenaltyConfig(beta=0.7)
    for _ in range(20):
        q = random_orthonormal(rng, 8, 3)
        w = rng.standard_normal((8, 3))
        out = core.ncdf_subgradient(lambda a: w, q, cfg)
        assert np.linalg.norm(out - core.project_tangent(q, w)) <= 1e-11


def test_penalty_config_requires_positive_beta():
    with pytest.raises(ValueError):
        core.PenaltyConfig(beta=0.0)


# ---------------------------------------------------------------------------
# generalized and product variants
# ---------------------------------------------------------------------------

def test_generalized_reduces_to_plain_map_for_identity_weight():
    rng = np.random.default_rng(47)
    x = rng.standard_normal((6, 2))
    out = core.apply_A_generalized(x, np.eye(6))
    assert np.linalg.norm(out - core.apply_A(x)) <= 1e-13


def test_generalized_fixes_weighted_feasible_points():
    rng = np.random.default_rng(53)
    n, p = 6, 2
    m = rng.standard_normal((n, n))
    b = m @ m.T + n * np.eye(n)
    w, v = np.linalg.eigh(b)
    b_inv_half = (v / np.sqrt(w)) @ v.T
    q = random_orthonormal(rng, n, p)
    x = b_inv_half @ q  # satisfies X'BX = I
    assert np.linalg.norm(x.T @ b @ x - np.eye(p)) <= 1e-12
    assert np.linalg.norm(core.apply_A_generalized(x, b) - x) <= 1e-12


def test_generalized_rejects_bad_weight():
    x = np.ones((3, 1))
    asym = np.array([[1.0, 1.0, 0.0], [0.0, 1.0, 0.0], [0.0, 0.0, 1.0]])
    with pytest.raises(ValueError):
        core.apply_A_generalized(x, asym)
    with pytest.raises(ValueError):
        core.apply_A_generalized(x, -np.eye(3))


def test_product_maps_blocks_independently():
    rng = np.random.default_rng(59)
    blocks = [rng.standard_normal((5, 2)), rng.standard_normal((3, 3))]
    extra = rng.standard_normal(7)
    mapped, passthrough = core.apply_A_product(blocks, extra)
    for b, m in zip(blocks, mapped):
        assert np.linalg.norm(m - core.apply_A(b)) == 0.0
    assert np.array_equal(passthrough, extra)
    passthrough[0] += 1.0
    assert passthrough[0] != extra[0]  # pass-through is a copy


def test_scalar_root_solver_failure_is_detectable():
    with pytest.raises(NumericalError):
        core._scalar_map_inverse(np.array([2.0]), tol=1e-25)
