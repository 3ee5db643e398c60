"""Synthetic regression benchmark: the Friedman test function on the unit
box, with one deliberately inert input for sensitivity checks."""

from __future__ import annotations

import numpy as np

from .errors import DimensionMismatch

# Recorded in outputs so runs can be reproduced bit-for-bit.
RNG_ALGORITHM = "numpy-pcg64"


def friedman(X):
    """f(x) = 10 sin(pi x1 x2) + 20 (x3 - 1/2)^2 + 10 x4 + 5 x5.

    Defined for D >= 5 input columns; any further columns (x6, ...) do not
    enter, which makes them useful nulls for decomposition diagnostics.
    """
    X = np.atleast_2d(np.asarray(X, dtype=float))
    if X.shape[1] < 5:
        raise DimensionMismatch(
            f"friedman needs at least 5 input columns, got {X.shape[1]}"
        )
    return (
        10.0 * np.sin(np.pi * X[:, 0] * X[:, 1])
        + 20.0 * (X[:, 2] - 0.5) ** 2
        + 10.0 * X[:, 3]
        + 5.0 * X[:, 4]
    )


def sample_friedman(n, noise_sd=1.0, seed=0, d=6):
    """Draw (X, y): X uniform on [0, 1]^d, y = friedman(X) + noise.

    Returns ``(X, y)``; the generator is numpy's PCG64 seeded with ``seed``.
    """
    rng = np.random.default_rng(seed)
    X = rng.uniform(size=(n, d))
    y = friedman(X) + noise_sd * rng.standard_normal(n)
    return X, y
