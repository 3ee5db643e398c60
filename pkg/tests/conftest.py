"""Shared builders for the test suite.

Random instances are always drawn from an explicitly seeded generator so
every failure is reproducible. Dense reference quantities are assembled
from stacked blocks with plain numpy solves; in particular the posterior
covariance uses the downdate form

    Sigma = K - K B (I + B^T K B)^{-1} B^T K

rather than inverting K^{-1} + B B^T directly, which loses eight digits
on badly conditioned kernel matrices and would test the oracle instead of
the code.
"""

import numpy as np

from addgp import ComponentSpec, Dataset, Gaussian, KernelParams, SquaredExp
from addgp.model import init_state


def make_specs(rng, c, m, d=1, ls_range=(0.1, 0.35), X=None, grid_z=False):
    """Random squared-exponential components on shared columns 0..d-1.

    When ``X`` is given the inducing inputs are copies of it (the dense
    parameterization); otherwise each component gets its own random Z,
    either uniform or, with ``grid_z``, jittered grid points. The grid
    keeps inducing points separated so the prior Gram matrices stay well
    conditioned; dense reference computations need that to hit 1e-8.
    """
    specs = []
    for _ in range(c):
        kern = SquaredExp(
            KernelParams(
                np.log(rng.uniform(0.5, 2.0)),
                np.log(rng.uniform(*ls_range, size=d)),
            ),
            active_dims=tuple(range(d)),
        )
        if X is not None:
            Z = X.copy()
        elif grid_z:
            Z = (np.arange(m)[:, None] + rng.uniform(0.1, 0.9, size=(m, d))) / m
        else:
            Z = rng.uniform(0.0, 1.0, size=(m, d))
        specs.append(ComponentSpec(kern, tuple(range(d)), Z))
    return specs


def random_sparse_state(rng, specs, r=None, scale=0.7):
    """A generic (non-degenerate) coupled state for the given components."""
    state = init_state(specs, r=r)
    mc = len(state.alpha)
    state.alpha = rng.normal(size=mc)
    state.B = rng.normal(size=(mc, state.r)) * scale
    return state


def gaussian_dataset(rng, n, d=1, noise_sd=0.7):
    X = rng.uniform(0.0, 1.0, size=(n, d))
    Y = rng.normal(0.0, 1.0, size=n) + rng.normal(0.0, noise_sd, size=n)
    return Dataset(X, Y)


def dense_blocks(specs, X=None):
    """Stacked dense prior pieces: block-diagonal K over inducing variables
    and, when X is given, the cross matrix F with F[:, block_c] = K_c(X, Z_c)."""
    c = len(specs)
    m = specs[0].m
    K = np.zeros((m * c, m * c))
    for ci, s in enumerate(specs):
        K[ci * m : (ci + 1) * m, ci * m : (ci + 1) * m] = s.kernel.eval(s.Z)
    if X is None:
        return K
    F = np.zeros((X.shape[0], m * c))
    for ci, s in enumerate(specs):
        F[:, ci * m : (ci + 1) * m] = s.kernel.eval(s.project(X), s.Z)
    return K, F


def woodbury_cov(K, B):
    """Sigma = (K^{-1} + B B^T)^{-1} without forming K^{-1}."""
    r = B.shape[1]
    KB = K @ B
    inner = np.eye(r) + B.T @ KB
    return K - KB @ np.linalg.solve(inner, KB.T)


def central_diff(fun, x0, eps=1e-6):
    """Dense central finite-difference gradient of a scalar function."""
    x0 = np.asarray(x0, dtype=float)
    g = np.empty_like(x0)
    for i in range(x0.size):
        xp = x0.copy()
        xp[i] += eps
        xm = x0.copy()
        xm[i] -= eps
        g[i] = (fun(xp) - fun(xm)) / (2.0 * eps)
    return g


def conjugate_instance(seed, n, c, d=3, ls_range=(0.2, 0.5), noise=(0.3, 0.8)):
    """A Gaussian-noise instance with the dense parameterization (Z == X)."""
    rng = np.random.default_rng(seed)
    X = rng.uniform(0.0, 1.0, size=(n, d))
    specs = make_specs(rng, c, n, d=d, ls_range=ls_range, X=X)
    sigma2 = float(rng.uniform(*noise))
    Y = rng.normal(0.0, 1.0, size=n) + rng.normal(0.0, np.sqrt(sigma2), size=n)
    return specs, Dataset(X, Y), sigma2, Gaussian(np.log(sigma2))
