"""Covariance functions with closed-form log-hyperparameter gradients.

Besides the usual squared-exponential and constant kernels this module
provides the building blocks for additive functional decomposition on the
unit box: a univariate squared-exponential kernel recentred so that every
draw integrates to zero over [0, 1],

    s(x, y) = g(x, y) - m(x) m(y) / q,

with ``m(x) = int_0^1 g(x, t) dt`` and ``q = int_0^1 int_0^1 g(s, t) ds dt``
available in closed form through the error function. Sums and products of
such components give main effects and interactions whose posterior means
are directly interpretable as sensitivity-analysis effects.

All hyperparameters are carried in log space. ``eval_with_grads`` returns
the Gram matrix together with one derivative matrix per trainable
log-parameter, in the order reported by ``param_names``.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
from scipy.special import erf

from .errors import DimensionMismatch, DomainError

_SQRT_HALF_PI = np.sqrt(np.pi / 2.0)
_UNIT_BOX_TOL = 1e-12


@dataclass
class KernelParams:
    """Log-space amplitude and lengthscale(s) of a stationary kernel."""

    log_variance: float = 0.0
    log_lengthscales: np.ndarray = field(default_factory=lambda: np.zeros(1))

    def __post_init__(self):
        self.log_lengthscales = np.atleast_1d(
            np.asarray(self.log_lengthscales, dtype=float)
        ).copy()
        self.log_variance = float(self.log_variance)

    @property
    def variance(self):
        return np.exp(self.log_variance)

    @property
    def lengthscales(self):
        return np.exp(self.log_lengthscales)


class Kernel:
    """Base covariance function.

    A kernel owns its log-hyperparameters and evaluates cross-covariances
    on the columns of its inputs selected by the subclass's active
    dimensions (indices into the arrays it is handed, not into any wider
    dataset). Composite kernels concatenate the parameter vectors of their
    parts.
    """

    def eval(self, X, X2=None):
        raise NotImplementedError

    def diag(self, X):
        raise NotImplementedError

    def eval_with_grads(self, X, X2=None):
        """Gram matrix and its derivatives w.r.t. each trainable log-param."""
        raise NotImplementedError

    def diag_with_grads(self, X):
        raise NotImplementedError

    def get_params(self):
        raise NotImplementedError

    def set_params(self, values):
        raise NotImplementedError

    def param_names(self):
        raise NotImplementedError

    @property
    def n_params(self):
        return len(self.param_names())

    def leaves(self):
        """Yield the leaf kernels of the composition tree."""
        yield self


def _as_2d(X):
    X = np.asarray(X, dtype=float)
    if X.ndim == 1:
        X = X[:, None]
    if X.ndim != 2:
        raise DimensionMismatch(f"inputs must be 2-d arrays, got shape {X.shape}")
    return X


class SquaredExp(Kernel):
    """Anisotropic squared-exponential kernel
    ``k(x, y) = v * exp(-0.5 * sum_d ((x_d - y_d) / l_d)^2)``."""

    def __init__(self, params, active_dims=(0,)):
        self.params = params
        self.active_dims = tuple(int(d) for d in active_dims)
        if len(self.params.log_lengthscales) != len(self.active_dims):
            raise DimensionMismatch(
                "need one lengthscale per active dimension "
                f"({len(self.params.log_lengthscales)} vs {len(self.active_dims)})"
            )

    def _scaled_diffs(self, X, X2):
        X = _as_2d(X)
        X2 = X if X2 is None else _as_2d(X2)
        ell = self.params.lengthscales
        # (n, m, d) array of per-dimension scaled differences
        a = X[:, None, list(self.active_dims)]
        b = X2[None, :, list(self.active_dims)]
        return (a - b) / ell

    def eval(self, X, X2=None):
        d = self._scaled_diffs(X, X2)
        return self.params.variance * np.exp(-0.5 * np.sum(d * d, axis=2))

    def diag(self, X):
        X = _as_2d(X)
        return np.full(X.shape[0], self.params.variance)

    def eval_with_grads(self, X, X2=None):
        d = self._scaled_diffs(X, X2)
        sq = d * d
        K = self.params.variance * np.exp(-0.5 * np.sum(sq, axis=2))
        grads = [K]  # d/d log v
        for j in range(sq.shape[2]):
            grads.append(K * sq[:, :, j])  # d/d log l_j
        return K, grads

    def diag_with_grads(self, X):
        dg = self.diag(X)
        zeros = np.zeros_like(dg)
        return dg, [dg] + [zeros] * len(self.active_dims)

    def get_params(self):
        return np.concatenate(
            ([self.params.log_variance], self.params.log_lengthscales)
        )

    def set_params(self, values):
        values = np.asarray(values, dtype=float)
        self.params.log_variance = float(values[0])
        self.params.log_lengthscales = values[1:].copy()

    def param_names(self):
        return ["log_variance"] + [
            f"log_lengthscale[{d}]" for d in range(len(self.active_dims))
        ]


class Constant(Kernel):
    """Constant covariance ``k(x, y) = v``; optionally frozen."""

    def __init__(self, log_variance=0.0, trainable=True):
        self.log_variance = float(log_variance)
        self.trainable = bool(trainable)
        self.active_dims = ()

    @property
    def variance(self):
        return np.exp(self.log_variance)

    def eval(self, X, X2=None):
        X = _as_2d(X)
        X2 = X if X2 is None else _as_2d(X2)
        return np.full((X.shape[0], X2.shape[0]), self.variance)

    def diag(self, X):
        X = _as_2d(X)
        return np.full(X.shape[0], self.variance)

    def eval_with_grads(self, X, X2=None):
        K = self.eval(X, X2)
        return K, ([K] if self.trainable else [])

    def diag_with_grads(self, X):
        dg = self.diag(X)
        return dg, ([dg] if self.trainable else [])

    def get_params(self):
        return np.array([self.log_variance]) if self.trainable else np.zeros(0)

    def set_params(self, values):
        if self.trainable:
            self.log_variance = float(np.asarray(values, dtype=float)[0])
        elif len(np.atleast_1d(values)):
            raise DimensionMismatch("constant kernel is frozen, expected no params")

    def param_names(self):
        return ["log_variance"] if self.trainable else []


def se_mean_embedding(params, x):
    """``int_0^1 g(x, t) dt`` for the univariate squared-exponential g.

    Closed form: ``v * l * sqrt(pi/2) * (erf((1-x)/(sqrt(2) l)) + erf(x/(sqrt(2) l)))``.
    """
    x = np.asarray(x, dtype=float)
    v = params.variance
    ell = float(params.lengthscales[0])
    u = (1.0 - x) / (np.sqrt(2.0) * ell)
    w = x / (np.sqrt(2.0) * ell)
    return v * ell * _SQRT_HALF_PI * (erf(u) + erf(w))


def _se_mean_embedding_dlogl(params, x):
    """Derivative of the mean embedding w.r.t. log-lengthscale."""
    x = np.asarray(x, dtype=float)
    v = params.variance
    ell = float(params.lengthscales[0])
    u = (1.0 - x) / (np.sqrt(2.0) * ell)
    w = x / (np.sqrt(2.0) * ell)
    m = v * ell * _SQRT_HALF_PI * (erf(u) + erf(w))
    # d/d log l of erf terms: each erf(a/l) contributes -(2/sqrt(pi)) a/l e^{-(a/l)^2}
    return m - v * np.sqrt(2.0) * ell * (u * np.exp(-u * u) + w * np.exp(-w * w))


def se_double_integral(params):
    """``int_0^1 int_0^1 g(s, t) ds dt`` for the univariate SE kernel g.

    Closed form: ``2 v (l sqrt(pi/2) erf(1/(sqrt(2) l)) - l^2 (1 - e^{-1/(2 l^2)}))``.
    Always positive; tends to v as l grows (the kernel flattens to a
    constant) and to 0 as l -> 0.
    """
    v = params.variance
    ell = float(params.lengthscales[0])
    a = 1.0 / (np.sqrt(2.0) * ell)
    # -expm1 keeps l^2 * (1 - e^{-a^2}) accurate for large lengthscales
    return 2.0 * v * (ell * _SQRT_HALF_PI * erf(a) - ell * ell * (-np.expm1(-a * a)))


def _se_double_integral_dlogl(params):
    """Derivative of the double integral w.r.t. log-lengthscale."""
    v = params.variance
    ell = float(params.lengthscales[0])
    a = 1.0 / (np.sqrt(2.0) * ell)
    # The chain-rule terms through a cancel pairwise, leaving:
    return 2.0 * v * ell * (_SQRT_HALF_PI * erf(a) - 2.0 * ell * (-np.expm1(-a * a)))


def _check_unit_interval(x, what):
    if x.size and (x.min() < -_UNIT_BOX_TOL or x.max() > 1.0 + _UNIT_BOX_TOL):
        raise DomainError(
            f"{what} must lie in [0, 1] for zero-mean components "
            f"(observed range [{x.min():.6g}, {x.max():.6g}])"
        )


class ZeroMeanSE(Kernel):
    """Univariate squared-exponential kernel recentred to zero mean on [0, 1].

    ``s(x, y) = g(x, y) - m(x) m(y) / q`` with g the SE kernel, m its mean
    embedding over [0, 1] and q its double integral. Draws from s integrate
    to zero over the unit interval in each argument, which pins down the
    additive decomposition. Inputs outside [0, 1] (beyond 1e-12) raise
    DomainError.
    """

    def __init__(self, params, active_dim=0):
        if len(params.log_lengthscales) != 1:
            raise DimensionMismatch("zero-mean component is univariate")
        self.params = params
        self.active_dim = int(active_dim)
        self.active_dims = (self.active_dim,)

    def _column(self, X, what):
        X = _as_2d(X)
        x = X[:, self.active_dim]
        _check_unit_interval(x, what)
        return x

    def _se(self, x, y):
        ell = float(self.params.lengthscales[0])
        d = (x[:, None] - y[None, :]) / ell
        return self.params.variance * np.exp(-0.5 * d * d), d * d

    def eval(self, X, X2=None):
        x = self._column(X, "inputs")
        y = x if X2 is None else self._column(X2, "inputs")
        g, _ = self._se(x, y)
        mx = se_mean_embedding(self.params, x)
        my = mx if X2 is None else se_mean_embedding(self.params, y)
        q = se_double_integral(self.params)
        return g - np.outer(mx, my) / q

    def diag(self, X):
        x = self._column(X, "inputs")
        m = se_mean_embedding(self.params, x)
        q = se_double_integral(self.params)
        return self.params.variance - m * m / q

    def eval_with_grads(self, X, X2=None):
        x = self._column(X, "inputs")
        y = x if X2 is None else self._column(X2, "inputs")
        g, sq = self._se(x, y)
        mx = se_mean_embedding(self.params, x)
        my = mx if X2 is None else se_mean_embedding(self.params, y)
        q = se_double_integral(self.params)
        K = g - np.outer(mx, my) / q

        # log-variance: every term scales linearly with v
        dv = K.copy()

        dmx = _se_mean_embedding_dlogl(self.params, x)
        dmy = dmx if X2 is None else _se_mean_embedding_dlogl(self.params, y)
        dq = _se_double_integral_dlogl(self.params)
        dl = (
            g * sq
            - (np.outer(dmx, my) + np.outer(mx, dmy)) / q
            + np.outer(mx, my) * (dq / (q * q))
        )
        return K, [dv, dl]

    def diag_with_grads(self, X):
        x = self._column(X, "inputs")
        m = se_mean_embedding(self.params, x)
        q = se_double_integral(self.params)
        d = self.params.variance - m * m / q
        dm = _se_mean_embedding_dlogl(self.params, x)
        dq = _se_double_integral_dlogl(self.params)
        dl = -2.0 * m * dm / q + m * m * (dq / (q * q))
        return d, [d.copy(), dl]

    def get_params(self):
        return np.array(
            [self.params.log_variance, self.params.log_lengthscales[0]]
        )

    def set_params(self, values):
        values = np.asarray(values, dtype=float)
        self.params.log_variance = float(values[0])
        self.params.log_lengthscales = np.array([float(values[1])])

    def param_names(self):
        return ["log_variance", "log_lengthscale"]


class _Composite(Kernel):
    def __init__(self, parts):
        self.parts = list(parts)
        if not self.parts:
            raise DimensionMismatch("composite kernel needs at least one part")
        dims = set()
        for p in self.parts:
            dims.update(p.active_dims)
        self.active_dims = tuple(sorted(dims))

    def leaves(self):
        for p in self.parts:
            yield from p.leaves()

    def get_params(self):
        vecs = [p.get_params() for p in self.parts]
        return np.concatenate(vecs) if vecs else np.zeros(0)

    def set_params(self, values):
        values = np.asarray(values, dtype=float)
        i = 0
        for p in self.parts:
            n = p.n_params
            p.set_params(values[i : i + n])
            i += n
        if i != len(values):
            raise DimensionMismatch(
                f"expected {i} kernel parameters, got {len(values)}"
            )

    def param_names(self):
        names = []
        for j, p in enumerate(self.parts):
            names.extend(f"part{j}.{n}" for n in p.param_names())
        return names


class Sum(_Composite):
    """Sum of kernels; parameter vector is the concatenation of the parts'."""

    def eval(self, X, X2=None):
        out = self.parts[0].eval(X, X2)
        for p in self.parts[1:]:
            out = out + p.eval(X, X2)
        return out

    def diag(self, X):
        out = self.parts[0].diag(X)
        for p in self.parts[1:]:
            out = out + p.diag(X)
        return out

    def eval_with_grads(self, X, X2=None):
        K = None
        grads = []
        for p in self.parts:
            Kp, gp = p.eval_with_grads(X, X2)
            K = Kp if K is None else K + Kp
            grads.extend(gp)
        return K, grads

    def diag_with_grads(self, X):
        d = None
        grads = []
        for p in self.parts:
            dp, gp = p.diag_with_grads(X)
            d = dp if d is None else d + dp
            grads.extend(gp)
        return d, grads


class Product(_Composite):
    """Elementwise product of kernels."""

    def eval(self, X, X2=None):
        out = self.parts[0].eval(X, X2)
        for p in self.parts[1:]:
            out = out * p.eval(X, X2)
        return out

    def diag(self, X):
        out = self.parts[0].diag(X)
        for p in self.parts[1:]:
            out = out * p.diag(X)
        return out

    def eval_with_grads(self, X, X2=None):
        evals = []
        part_grads = []
        for p in self.parts:
            Kp, gp = p.eval_with_grads(X, X2)
            evals.append(Kp)
            part_grads.append(gp)
        # prefix/suffix products avoid dividing by possibly-zero entries
        n = len(evals)
        prefix = [None] * n
        suffix = [None] * n
        acc = 1.0
        for i in range(n):
            prefix[i] = acc
            acc = acc * evals[i]
        K = acc
        acc = 1.0
        for i in range(n - 1, -1, -1):
            suffix[i] = acc
            acc = acc * evals[i]
        grads = []
        for i in range(n):
            rest = prefix[i] * suffix[i]
            grads.extend(g * rest for g in part_grads[i])
        return K, grads

    def diag_with_grads(self, X):
        evals = []
        part_grads = []
        for p in self.parts:
            dp, gp = p.diag_with_grads(X)
            evals.append(dp)
            part_grads.append(gp)
        n = len(evals)
        prefix = [None] * n
        suffix = [None] * n
        acc = 1.0
        for i in range(n):
            prefix[i] = acc
            acc = acc * evals[i]
        d = acc
        acc = 1.0
        for i in range(n - 1, -1, -1):
            suffix[i] = acc
            acc = acc * evals[i]
        grads = []
        for i in range(n):
            rest = prefix[i] * suffix[i]
            grads.extend(g * rest for g in part_grads[i])
        return d, grads


def zero_mean_component(params, active_dim=0):
    """Convenience constructor for a univariate zero-mean SE component."""
    return ZeroMeanSE(params, active_dim=active_dim)


def build_anova_kernel(g_params, sigma0, ndim=6, learn_sigma0=True):
    """Additive component kernels for main effects plus one pairwise
    interaction on the unit box.

    ``g_params`` supplies one univariate SE base kernel per input dimension
    plus two extra for the interaction factors, ``ndim + 2`` in total. The
    constant offset ``sigma0`` is folded into the first component (so the
    number of additive components stays ``ndim + 1``); ``sigma0 == 0`` omits
    it. Returns a list of ``(kernel, global_dims)`` pairs: each kernel's
    active dims are local to the projected columns listed in
    ``global_dims``.
    """
    g_params = list(g_params)
    if len(g_params) != ndim + 2:
        raise DimensionMismatch(
            f"need {ndim + 2} base kernels for {ndim} inputs, got {len(g_params)}"
        )
    if sigma0 < 0:
        raise ValueError("sigma0 must be nonnegative")
    first = ZeroMeanSE(g_params[0], active_dim=0)
    if sigma0 > 0:
        first = Sum([Constant(np.log(sigma0), trainable=learn_sigma0), first])
    comps = [(first, (0,))]
    for i in range(1, ndim):
        comps.append((ZeroMeanSE(g_params[i], active_dim=0), (i,)))
    inter = Product(
        [
            ZeroMeanSE(g_params[ndim], active_dim=0),
            ZeroMeanSE(g_params[ndim + 1], active_dim=1),
        ]
    )
    comps.append((inter, (0, 1)))
    return comps
