"""Numerical kernels for dissolving orthogonality constraints.

The central object is the polynomial map

    A(X) = (1/8) * X * (15*I - 10*(X'X) + 3*(X'X)^2),

which fixes every matrix with orthonormal columns and pulls a neighborhood
of the Stiefel manifold onto it at a cubic rate: the Gram residual of A(X)
is bounded by the cube of the Gram residual of X.  Composing an objective
f with A and adding the quartic penalty (beta/4)*||X'X - I||_F^2 yields an
unconstrained surrogate whose values and (generalized) gradients agree
with the constrained problem on the manifold.

All matrices are dense float64 arrays with at least as many rows as
columns.  Gram matrices are formed once per call and symmetrized before
use so that downstream polynomials act on exactly symmetric inputs.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import DimensionError, NumericalError

# Coefficients of the degree-five map, lowest Gram power first.  This is
# the unique choice that both fixes the manifold to second order and keeps
# the map's Jacobian self-adjoint; flipping any sign breaks every identity
# checked by the diagnostics suite.
_A_COEFFS = (15.0, -10.0, 3.0)

# Factor polynomial of the Gram residual identity, see ata_residual_identity.
_RESIDUAL_COEFFS = (9.0, -33.0, 64.0)


def validate_matrix(x, name: str = "matrix") -> np.ndarray:
    """Return x as a float64 array after checking shape and finiteness.

    Accepts tall or square 2-d input (rows >= columns >= 1).
    """
    arr = np.asarray(x, dtype=float)
    if arr.ndim != 2:
        raise DimensionError(f"{name} must be 2-d, got ndim={arr.ndim}")
    n, p = arr.shape
    if p < 1 or n < p:
        raise DimensionError(f"{name} must be tall or square, got shape {arr.shape}")
    if not np.all(np.isfinite(arr)):
        raise ValueError(f"{name} contains non-finite entries")
    return arr


def sym(m) -> np.ndarray:
    """Symmetric part (M + M') / 2 of a square matrix."""
    arr = np.asarray(m, dtype=float)
    if arr.ndim != 2 or arr.shape[0] != arr.shape[1]:
        raise DimensionError(f"sym expects a square matrix, got shape {arr.shape}")
    if not np.all(np.isfinite(arr)):
        raise ValueError("sym input contains non-finite entries")
    return 0.5 * (arr + arr.T)


def _gram(x: np.ndarray) -> np.ndarray:
    # X'X symmetrized once; every polynomial below works on this copy.
    g = x.T @ x
    return 0.5 * (g + g.T)


@dataclass(frozen=True, eq=False)
class StiefelPoint:
    """A matrix certified to have orthonormal columns up to feas_tol.

    rank_deficient flags projections of inputs whose smallest singular
    value was below 1e-12; the projected matrix is still orthonormal but
    no longer unique.
    """

    matrix: np.ndarray
    feas_tol: float = 1e-12
    rank_deficient: bool = False

    def __post_init__(self):
        m = validate_matrix(self.matrix, "stiefel point")
        object.__setattr__(self, "matrix", m.copy())
        if not self.feas_tol > 0:
            raise ValueError(f"feas_tol must be positive, got {self.feas_tol}")
        v = feasibility_violation(self.matrix)
        if v > self.feas_tol:
            raise ValueError(
                f"point is not feasible: ||X'X - I||_F = {v:.3e} > {self.feas_tol:.3e}"
            )

    @property
    def shape(self):
        return self.matrix.shape


@dataclass(frozen=True)
class FeasibilityShell:
    """Set of matrices with Gram residual at most radius."""

    radius: float

    def __post_init__(self):
        if not self.radius > 0:
            raise ValueError(f"shell radius must be positive, got {self.radius}")

    def contains(self, x) -> bool:
        return feasibility_violation(x) <= self.radius


OMEGA_1 = FeasibilityShell(1.0)
OMEGA_HALF = FeasibilityShell(0.5)
OMEGA_SIXTH = FeasibilityShell(1.0 / 6.0)


@dataclass(frozen=True)
class PenaltyConfig:
    """Weight of the quartic Gram penalty (beta/4)*||X'X - I||_F^2."""

    beta: float = 0.1

    def __post_init__(self):
        if not self.beta > 0:
            raise ValueError(f"beta must be positive, got {self.beta}")


def apply_A(x) -> np.ndarray:
    """Evaluate the constraint-dissolving map X (15 I - 10 G + 3 G^2) / 8."""
    x = validate_matrix(x)
    c0, c1, c2 = _A_COEFFS
    g = _gram(x)
    eye = np.eye(x.shape[1])
    return x @ (c0 * eye + c1 * g + c2 * (g @ g)) / 8.0


def feasibility_violation(x) -> float:
    """Gram residual ||X'X - I_p||_F; zero exactly on the manifold."""
    x = validate_matrix(x)
    return float(np.linalg.norm(_gram(x) - np.eye(x.shape[1])))


def ata_residual_identity(x):
    """Both sides of the exact factorization of the mapped Gram residual.

    Returns the pair (lhs, rhs) with

        lhs = A(X)'A(X) - I
        rhs = (1/64) (X'X - I)^3 (9 (X'X)^2 - 33 X'X + 64 I),

    which agree identically.  Both sides are evaluated and returned in
    extended precision: at the largest admissible inputs their common
    magnitude reaches ~1e8, where float64 rounding alone (~1e-8) would
    swamp the identity, so the comparison is meaningful only above
    double's representation floor.
    """
    x = validate_matrix(x)
    ld = np.longdouble
    xl = x.astype(ld)
    eye = np.eye(x.shape[1], dtype=ld)
    g = xl.T @ xl
    g = 0.5 * (g + g.T)
    c0, c1, c2 = (ld(c) for c in _A_COEFFS)
    a = xl @ (c0 * eye + c1 * g + c2 * (g @ g)) / ld(8)
    lhs = a.T @ a - eye
    r = g - eye
    d0, d1, d2 = (ld(c) for c in _RESIDUAL_COEFFS)
    rhs = (r @ r @ r) @ (d0 * (g @ g) + d1 * g + d2 * eye) / ld(64)
    return lhs, rhs


def jacobian_apply(x, d) -> np.ndarray:
    """Directional derivative of apply_A at x along d.

    J(X)[D] = (1/8) D (15 I - 10 G + 3 G^2) - X S + (3/2) X sym(S (G - I))
    with G = X'X and S = sym(X'D).  The operator is self-adjoint, and on
    the manifold it reduces to the tangent projection D - X sym(X'D).
    """
    x = validate_matrix(x, "x")
    d = validate_matrix(d, "d")
    if d.shape != x.shape:
        raise DimensionError(f"direction shape {d.shape} != base shape {x.shape}")
    c0, c1, c2 = _A_COEFFS
    g = _gram(x)
    eye = np.eye(x.shape[1])
    s = 0.5 * (x.T @ d + d.T @ x)
    poly = d @ (c0 * eye + c1 * g + c2 * (g @ g)) / 8.0
    mix = s @ (g - eye)
    return poly - x @ s + 1.5 * (x @ (0.5 * (mix + mix.T)))


def project_tangent(x, w) -> np.ndarray:
    """Tangent-space component W - X sym(X'W) at a feasible point x."""
    x = validate_matrix(x, "x")
    w = validate_matrix(w, "w")
    if w.shape != x.shape:
        raise DimensionError(f"shape {w.shape} != base shape {x.shape}")
    return w - x @ (0.5 * (x.T @ w + w.T @ x))


def project_stiefel(x) -> StiefelPoint:
    """Closest matrix with orthonormal columns, via the economical SVD.

    For X = U diag(s) V' the projection is U V'.  When the smallest
    singular value is below 1e-12 the projection is not unique; the
    returned point carries rank_deficient=True in that case.
    """
    x = validate_matrix(x)
    u, s, vt = np.linalg.svd(x, full_matrices=False)
    return StiefelPoint(matrix=u @ vt, rank_deficient=bool(s[-1] < 1e-12))


def scalar_map(t):
    """Polynomial t (15 - 10 t^2 + 3 t^4) / 8 applied to each singular value."""
    t = np.asarray(t)
    c0, c1, c2 = _A_COEFFS
    t2 = t * t
    return t * (c0 + c1 * t2 + c2 * t2 * t2) / 8.0


def scalar_map_deriv(t):
    """Derivative (15/8) (t^2 - 1)^2 of scalar_map; vanishes only at |t| = 1."""
    t = np.asarray(t)
    q = t * t - 1.0
    return 1.875 * q * q


def _scalar_map_inverse(sigma, tol):
    """Solve scalar_map(t) = sigma per entry, sigma >= 0, in extended precision.

    Safeguarded bisection on [-(1 + sigma), 1 + max(sigma, 1)] followed by
    a few Newton polish steps.  The map is strictly increasing, so the
    bracket always contains exactly one root.
    """
    ld = np.longdouble
    sigma = np.asarray(sigma, dtype=ld)
    c0, c1, c2 = (ld(c) for c in _A_COEFFS)

    def f(t):
        t2 = t * t
        return t * (c0 + c1 * t2 + c2 * t2 * t2) / ld(8)

    def fprime(t):
        q = t * t - ld(1)
        return ld(1.875) * q * q

    lo = -(ld(1) + sigma)
    hi = ld(1) + np.maximum(sigma, ld(1))
    for _ in range(60):
        mid = ld(0.5) * (lo + hi)
        below = f(mid) <= sigma
        lo = np.where(below, mid, lo)
        hi = np.where(below, hi, mid)
    t = ld(0.5) * (lo + hi)
    for _ in range(8):
        deriv = fprime(t)
        step = np.where(deriv > ld(1e-30), (f(t) - sigma) / np.maximum(deriv, ld(1e-30)), ld(0))
        t = np.clip(t - step, lo, hi)
    resid = np.abs(f(t) - sigma)
    bound = ld(tol) * np.maximum(ld(1), sigma)
    if np.any(resid > bound):
        worst = float(np.max(resid / np.maximum(bound, ld(1e-300))))
        raise NumericalError(
            f"scalar root solve missed its target by {worst:.2e}x the tolerance"
        )
    return t


def inverse_A(y, tol: float = 1e-14) -> np.ndarray:
    """Invert apply_A: the unique X with A(X) = Y.

    Works on the singular values: for Y = U diag(s) V' the preimage is
    U diag(t) V' with scalar_map(t) = s.  Singular values are refined by
    one extended-precision Rayleigh step before the root solve, because
    near s = 1 the inverse map has unbounded slope and plain double SVD
    accuracy would be amplified there.
    """
    y = validate_matrix(y)
    u, s, vt = np.linalg.svd(y, full_matrices=False)
    ld = np.longdouble
    yl = y.astype(ld)
    ul = u.astype(ld)
    vl = vt.astype(ld)
    refined = np.array(
        [max(ul[:, i] @ yl @ vl[i], ld(0)) for i in range(s.size)], dtype=ld
    )
    t = _scalar_map_inverse(refined, tol)
    return np.asarray((ul * t) @ vl, dtype=float)


def ncdf_value(f_value, x, penalty: PenaltyConfig) -> float:
    """Dissolved objective h(X) = f(A(X)) + (beta/4) ||X'X - I||_F^2."""
    x = validate_matrix(x)
    v = feasibility_violation(x)
    return float(f_value(apply_A(x))) + 0.25 * penalty.beta * v * v


def ncdf_subgradient(f_subgrad, x, penalty: PenaltyConfig) -> np.ndarray:
    """One element of the dissolved subdifferential at x.

    Chain rule through the map plus the penalty gradient:
    J(X)[W] + beta X (X'X - I) with W drawn from the subdifferential of f
    at A(X).  On the manifold this equals the projected subgradient of f.
    """
    x = validate_matrix(x)
    w = validate_matrix(np.asarray(f_subgrad(apply_A(x)), dtype=float), "subgradient")
    if w.shape != x.shape:
        raise DimensionError(f"subgradient shape {w.shape} != point shape {x.shape}")
    g = _gram(x)
    eye = np.eye(x.shape[1])
    return jacobian_apply(x, w) + penalty.beta * (x @ (g - eye))


def apply_A_generalized(x, b) -> np.ndarray:
    """Variant of apply_A for the constraint X'BX = I with B symmetric positive definite.

    Same polynomial with the B-weighted Gram matrix X'BX in place of X'X.
    """
    x = validate_matrix(x)
    b = np.asarray(b, dtype=float)
    n = x.shape[0]
    if b.ndim != 2 or b.shape != (n, n):
        raise DimensionError(f"B must be {n}x{n}, got {b.shape}")
    if not np.all(np.isfinite(b)):
        raise ValueError("B contains non-finite entries")
    bnorm = np.linalg.norm(b)
    if np.linalg.norm(b - b.T) > 1e-12 * max(1.0, bnorm):
        raise ValueError("B must be symmetric to 1e-12")
    bs = 0.5 * (b + b.T)
    try:
        np.linalg.cholesky(bs)
    except np.linalg.LinAlgError as exc:
        raise ValueError("B must be positive definite") from exc
    g = x.T @ bs @ x
    g = 0.5 * (g + g.T)
    c0, c1, c2 = _A_COEFFS
    eye = np.eye(x.shape[1])
    return x @ (c0 * eye + c1 * g + c2 * (g @ g)) / 8.0


def apply_A_product(blocks, euclidean=None):
    """Apply the map blockwise over a product of Stiefel factors.

    blocks is a sequence of tall matrices, each mapped independently; the
    optional euclidean part is passed through unchanged (as a copy).
    Returns (mapped_blocks, euclidean).
    """
    mapped = [apply_A(b) for b in blocks]
    passthrough = None
    if euclidean is not None:
        passthrough = np.array(euclidean, dtype=float)
        if not np.all(np.isfinite(passthrough)):
            raise ValueError("euclidean part contains non-finite entries")
    return mapped, passthrough


def random_stiefel(rng: np.random.Generator, n: int, p: int) -> np.ndarray:
    """Haar-ish random feasible point: polar factor of a Gaussian matrix."""
    if n < p or p < 1:
        raise DimensionError(f"need n >= p >= 1, got ({n}, {p})")
    g = rng.standard_normal((n, p))
    u, _, vt = np.linalg.svd(g, full_matrices=False)
    return u @ vt


def random_shell_point(rng: np.random.Generator, n: int, p: int, radius: float) -> np.ndarray:
    """Random point whose Gram residual equals radius (up to roundoff).

    Construction: X = Q (I + Delta)^{1/2} for a feasible Q and a random
    symmetric Delta scaled to Frobenius norm radius, so that
    X'X - I = Delta exactly.  Requires radius < 1 in spectral norm for the
    square root to exist; radius <= 1 in Frobenius norm suffices.
    """
    if radius < 0:
        raise ValueError(f"radius must be nonnegative, got {radius}")
    q = random_stiefel(rng, n, p)
    if radius == 0:
        return q
    s = rng.standard_normal((p, p))
    s = 0.5 * (s + s.T)
    fro = np.linalg.norm(s)
    if fro == 0:
        s = np.eye(p)
        fro = np.sqrt(p)
    delta = (radius / fro) * s
    w, v = np.linalg.eigh(np.eye(p) + delta)
    root = (v * np.sqrt(np.clip(w, 0.0, None))) @ v.T
    return q @ root
