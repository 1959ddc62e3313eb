"""Benchmark objectives over matrices with orthonormal columns.

Each factory returns a ProblemDefinition bundling value and subgradient
oracles for an objective f = phi + (optional) separable regularizer.
Oracles are stateless: stochastic ones draw from the generator handed in
by the caller, so a run's randomness is owned entirely by the solver.
"""

from __future__ import annotations

from dataclasses import dataclass, replace
from typing import Callable, Optional

import numpy as np

from .core import apply_A, jacobian_apply, random_shell_point

SubgradOracle = Callable[[np.ndarray, np.random.Generator], np.ndarray]


@dataclass(frozen=True)
class Regularizer:
    """Weighted convex regularization term gamma * r(X).

    value returns the weighted term, prox(X, tau) is the proximal map of
    tau * gamma * r, subgrad returns the minimum-norm element of the
    weighted subdifferential, and lipschitz bounds the weighted term's
    Frobenius Lipschitz constant.
    """

    value: Callable[[np.ndarray], float]
    prox: Optional[Callable[[np.ndarray, float], np.ndarray]]
    subgrad: Callable[[np.ndarray], np.ndarray]
    lipschitz: float
    gamma: float


@dataclass(frozen=True)
class ProblemDefinition:
    """Objective f(X) = phi(X) + reg.value(X) on n x p matrices."""

    n: int
    p: int
    phi_value: Callable[[np.ndarray], float]
    phi_subgrad: SubgradOracle
    reg: Optional[Regularizer] = None
    lipschitz_est: float = 0.0
    smooth: bool = False

    def __post_init__(self):
        if self.p < 1 or self.n < self.p:
            raise ValueError(f"need n >= p >= 1, got ({self.n}, {self.p})")
        if self.lipschitz_est < 0:
            raise ValueError("lipschitz_est must be nonnegative")

    def f_value(self, x) -> float:
        val = float(self.phi_value(x))
        if self.reg is not None:
            val += float(self.reg.value(x))
        return val

    def f_subgrad(self, x, rng: Optional[np.random.Generator] = None) -> np.ndarray:
        if rng is None:
            rng = np.random.default_rng(0)
        w = np.asarray(self.phi_subgrad(x, rng), dtype=float)
        if self.reg is not None:
            w = w + self.reg.subgrad(x)
        return w


def l1_regularizer(gamma: float, n_entries: int) -> Regularizer:
    """Entrywise term gamma * sum |X_ij| with soft-threshold prox."""
    if gamma < 0:
        raise ValueError(f"gamma must be nonnegative, got {gamma}")

    def value(x):
        return gamma * float(np.sum(np.abs(x)))

    def prox(x, tau):
        x = np.asarray(x, dtype=float)
        return np.sign(x) * np.maximum(np.abs(x) - tau * gamma, 0.0)

    def subgrad(x):
        # minimum-norm selection: zero on exact zeros
        return gamma * np.sign(np.asarray(x, dtype=float))

    return Regularizer(
        value=value,
        prox=prox,
        subgrad=subgrad,
        lipschitz=gamma * float(np.sqrt(n_entries)),
        gamma=gamma,
    )


def spectral_norm(a) -> float:
    """Largest singular value, by power iteration on A'A."""
    a = np.asarray(a, dtype=float)
    if a.size == 0:
        return 0.0
    v = np.full(a.shape[1], 1.0 / np.sqrt(a.shape[1]))
    sq = 0.0
    for _ in range(500):
        w = a.T @ (a @ v)
        nrm = np.linalg.norm(w)
        if nrm == 0.0:
            return 0.0
        v_new = w / nrm
        if np.linalg.norm(v_new - v) < 1e-14:
            v = v_new
            sq = nrm
            break
        v = v_new
        sq = nrm
    return float(np.sqrt(sq))


def _check_symmetric(a, name):
    a = np.asarray(a, dtype=float)
    if a.ndim != 2 or a.shape[0] != a.shape[1]:
        raise ValueError(f"{name} must be square, got shape {a.shape}")
    if not np.all(np.isfinite(a)):
        raise ValueError(f"{name} contains non-finite entries")
    if np.linalg.norm(a - a.T) > 1e-12 * max(1.0, np.linalg.norm(a)):
        raise ValueError(f"{name} must be symmetric")
    return 0.5 * (a + a.T)


def make_quadratic_trace(a_mat, p: int) -> ProblemDefinition:
    """Smooth benchmark phi(X) = -trace(X' A X) with gradient -2 A X.

    The Lipschitz estimate 2 ||A||_2 sqrt(2p) bounds the gradient norm on
    the unit feasibility shell, where ||X||_F <= sqrt(2p).
    """
    a = _check_symmetric(a_mat, "A")
    n = a.shape[0]

    def phi_value(x):
        x = np.asarray(x, dtype=float)
        return -float(np.sum(x * (a @ x)))

    def phi_subgrad(x, rng):
        return -2.0 * (a @ np.asarray(x, dtype=float))

    return ProblemDefinition(
        n=n,
        p=p,
        phi_value=phi_value,
        phi_subgrad=phi_subgrad,
        lipschitz_est=2.0 * spectral_norm(a) * float(np.sqrt(2 * p)),
        smooth=True,
    )


def make_sparse_pca(cov, p: int, gamma: float) -> ProblemDefinition:
    """Sparse PCA surrogate: -trace(X' S X) + gamma * sum |X_ij|, S PSD."""
    s = _check_symmetric(cov, "covariance")
    if gamma < 0:
        raise ValueError(f"gamma must be nonnegative, got {gamma}")
    w = np.linalg.eigvalsh(s)
    if w[0] < -1e-8 * max(1.0, float(w[-1])):
        raise ValueError(f"covariance is not positive semidefinite (min eig {w[0]:.3e})")
    base = make_quadratic_trace(s, p)
    if gamma == 0.0:
        return base
    return replace(
        base,
        reg=l1_regularizer(gamma, base.n * p),
        smooth=False,
    )


def make_l1_pca(data, p: int) -> ProblemDefinition:
    """Robust PCA-style objective phi(X) = -sum_ij |(D X)_ij|.

    A subgradient is -D' sign(D X), with the zero selection at exact
    zeros of D X.  phi is positively homogeneous of degree one.
    """
    d = np.asarray(data, dtype=float)
    if d.ndim != 2:
        raise ValueError(f"data must be 2-d, got ndim={d.ndim}")
    if not np.all(np.isfinite(d)):
        raise ValueError("data contains non-finite entries")
    m, n = d.shape
    if p < 1 or p > n:
        raise ValueError(f"need 1 <= p <= {n}, got {p}")

    def phi_value(x):
        return -float(np.sum(np.abs(d @ np.asarray(x, dtype=float))))

    def phi_subgrad(x, rng):
        return -d.T @ np.sign(d @ np.asarray(x, dtype=float))

    return ProblemDefinition(
        n=n,
        p=p,
        phi_value=phi_value,
        phi_subgrad=phi_subgrad,
        lipschitz_est=spectral_norm(d) * float(np.sqrt(m * p)),
        smooth=False,
    )


def make_orthogonal_mlp(
    dataset,
    widths,
    second_layer=None,
    hidden_bias=None,
    output_bias=None,
    seed: int = 0,
) -> ProblemDefinition:
    """Two-layer ReLU regression with the first layer on the Stiefel manifold.

    The optimization variable is the tall matrix X of shape (d_in, hidden)
    holding the transposed first-layer weight; the network computes
    W2 relu(X' x + b1) + b2 per sample and the objective is the mean
    squared error.  Second-layer parameters default to a seeded Gaussian
    and zero biases.  The ReLU derivative uses the zero branch at the
    kink, so the subgradient at zero preactivations is zero.
    """
    d_in, hidden, d_out = (int(w) for w in widths)
    if d_in < hidden or hidden < 1:
        raise ValueError(f"first layer must be tall: need d_in >= hidden >= 1, got {widths}")
    if d_out < 1:
        raise ValueError(f"output width must be positive, got {d_out}")
    pairs = list(dataset)
    if not pairs:
        raise ValueError("dataset is empty")
    xs = np.atleast_2d(np.asarray([np.ravel(x) for x, _ in pairs], dtype=float))
    ys = np.atleast_2d(np.asarray([np.ravel(y) for _, y in pairs], dtype=float))
    if xs.shape[1] != d_in:
        raise ValueError(f"inputs have dimension {xs.shape[1]}, expected {d_in}")
    if ys.shape[1] != d_out:
        raise ValueError(f"targets have dimension {ys.shape[1]}, expected {d_out}")
    if not (np.all(np.isfinite(xs)) and np.all(np.isfinite(ys))):
        raise ValueError("dataset contains non-finite entries")

    init_rng = np.random.default_rng(seed)
    if second_layer is None:
        second_layer = init_rng.standard_normal((d_out, hidden)) / np.sqrt(hidden)
    w2 = np.asarray(second_layer, dtype=float)
    if w2.shape != (d_out, hidden):
        raise ValueError(f"second layer must be {(d_out, hidden)}, got {w2.shape}")
    b1 = np.zeros(hidden) if hidden_bias is None else np.asarray(hidden_bias, dtype=float)
    b2 = np.zeros(d_out) if output_bias is None else np.asarray(output_bias, dtype=float)
    if b1.shape != (hidden,) or b2.shape != (d_out,):
        raise ValueError("bias shapes do not match the widths")
    n_samples = xs.shape[0]

    def forward(x):
        z = np.asarray(x, dtype=float).T @ xs.T + b1[:, None]  # hidden x N
        act = np.maximum(z, 0.0)
        resid = w2 @ act + b2[:, None] - ys.T  # d_out x N
        return z, act, resid

    def phi_value(x):
        _, _, resid = forward(x)
        return float(np.sum(resid * resid)) / n_samples

    def phi_subgrad(x, rng):
        z, _, resid = forward(x)
        dz = (w2.T @ (2.0 * resid / n_samples)) * (z > 0.0)
        return xs.T @ dz.T

    return ProblemDefinition(
        n=d_in,
        p=hidden,
        phi_value=phi_value,
        phi_subgrad=phi_subgrad,
        smooth=False,
    )


@dataclass(frozen=True)
class NoiseModel:
    """Truncated Gaussian oracle noise: iid N(0, sigma^2) entries with the
    whole draw rescaled onto the Frobenius ball of the given bound."""

    sigma: float
    bound: Optional[float] = None
    seed: int = 0

    def __post_init__(self):
        if self.sigma < 0:
            raise ValueError(f"sigma must be nonnegative, got {self.sigma}")
        if self.bound is None:
            object.__setattr__(self, "bound", 10.0 * self.sigma)
        if self.sigma > 0 and not self.bound > 0:
            raise ValueError(f"bound must be positive, got {self.bound}")

    def draw(self, rng: np.random.Generator, shape) -> np.ndarray:
        g = rng.normal(0.0, self.sigma, shape)
        nrm = np.linalg.norm(g)
        if nrm > self.bound:
            g *= self.bound / nrm
        return g

    def rng(self) -> np.random.Generator:
        return np.random.default_rng(self.seed)


def attach_noise(problem: ProblemDefinition, model: NoiseModel) -> ProblemDefinition:
    """Wrap the smooth-part oracle with additive truncated Gaussian noise.

    sigma = 0 returns the problem unchanged.  The wrapped problem is no
    longer marked smooth because its oracle is stochastic.
    """
    if model.sigma == 0.0:
        return problem
    base = problem.phi_subgrad

    def noisy(x, rng):
        w = np.asarray(base(x, rng), dtype=float)
        return w + model.draw(rng, w.shape)

    return replace(problem, phi_subgrad=noisy, smooth=False)


def estimate_constants(problem: ProblemDefinition, samples: int = 200, seed: int = 0):
    """Sampled bounds (M1, Mt, Mh) for safeguard configuration.

    Over random points X of the unit feasibility shell: M1 bounds
    subgradient norms at the mapped points A(X), Mt bounds the norms of
    directions transported through the map's Jacobian, and Mh bounds raw
    subgradient norms at X itself.  Sampled maxima are lower bounds of
    the true suprema and are inflated by 1.5 before being returned.
    """
    if samples < 1:
        raise ValueError(f"samples must be >= 1, got {samples}")
    rng = np.random.default_rng(seed)
    m1 = mt = mh = 0.0
    for _ in range(samples):
        radius = 1.0 - rng.random()  # uniform on (0, 1]
        x = random_shell_point(rng, problem.n, problem.p, radius)
        y = apply_A(x)
        w_img = problem.f_subgrad(y, rng)
        m1 = max(m1, float(np.linalg.norm(w_img)))
        if np.linalg.norm(w_img) > 0:
            mt = max(mt, float(np.linalg.norm(jacobian_apply(x, w_img))))
        w_raw = problem.f_subgrad(x, rng)
        mh = max(mh, float(np.linalg.norm(w_raw)))
    return 1.5 * m1, 1.5 * mt, 1.5 * mh


# ---------------------------------------------------------------------------
# data helpers
# ---------------------------------------------------------------------------

def gaussian_matrix(rows: int, cols: int, seed: int, scale: float = 1.0) -> np.ndarray:
    """Seeded iid Gaussian matrix."""
    rng = np.random.default_rng(seed)
    return scale * rng.standard_normal((rows, cols))


def spiked_covariance(n: int, top_eigenvalues, seed: int, bulk_scale: float = 1.0) -> np.ndarray:
    """Seeded PSD matrix with prescribed leading eigenvalues.

    The remaining spectrum is uniform on (0, bulk_scale); eigenvectors
    come from the QR factor of a seeded Gaussian matrix.
    """
    top = np.asarray(top_eigenvalues, dtype=float)
    if top.ndim != 1 or top.size > n:
        raise ValueError("need at most n leading eigenvalues")
    if np.any(top < 0):
        raise ValueError("eigenvalues must be nonnegative")
    rng = np.random.default_rng(seed)
    q, _ = np.linalg.qr(rng.standard_normal((n, n)))
    evals = np.concatenate([top, bulk_scale * rng.random(n - top.size)])
    s = (q * evals) @ q.T
    return 0.5 * (s + s.T)


def synthetic_mlp_dataset(n_samples: int, widths, seed: int):
    """Regression pairs from a planted two-layer ReLU network."""
    d_in, hidden, d_out = (int(w) for w in widths)
    rng = np.random.default_rng(seed)
    q, _ = np.linalg.qr(rng.standard_normal((d_in, hidden)))
    w2 = rng.standard_normal((d_out, hidden)) / np.sqrt(hidden)
    xs = rng.standard_normal((n_samples, d_in))
    ys = (w2 @ np.maximum(q.T @ xs.T, 0.0)).T
    return [(xs[i], ys[i]) for i in range(n_samples)]


def load_matrix_csv(path) -> np.ndarray:
    """Dense matrix from a header-free comma-separated file."""
    arr = np.loadtxt(path, delimiter=",", ndmin=2, dtype=float)
    if not np.all(np.isfinite(arr)):
        raise ValueError(f"{path} contains non-finite entries")
    return arr
