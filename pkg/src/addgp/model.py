"""Shared data model: datasets, additive components, variational states.

A model is a list of components, each owning a kernel, the global input
columns it looks at, and (for the sparse parameterization) its inducing
inputs in the projected space. States carry the posterior parameters: the
whitened mean coefficients ``alpha`` and either the coupling factor ``B``
(sparse) or the per-datum coupling diagonal ``lambda`` (dense). Block
layout is component-major throughout: entries ``c*M:(c+1)*M`` of alpha,
and the same rows of B, belong to component c.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from . import kernels as _kernels
from .errors import DimensionMismatch, InvalidRank

COUPLED = "coupled"
MEAN_FIELD = "meanfield"
FULL = "full"

STRUCTURES = (COUPLED, MEAN_FIELD)


@dataclass
class Dataset:
    """Supervised regression data; X is (N, D), Y is (N,)."""

    X: np.ndarray
    Y: np.ndarray
    column_names: tuple = ()

    def __post_init__(self):
        self.X = np.atleast_2d(np.asarray(self.X, dtype=float))
        self.Y = np.asarray(self.Y, dtype=float).ravel()
        if self.X.shape[0] != self.Y.shape[0]:
            raise DimensionMismatch(
                f"X has {self.X.shape[0]} rows but Y has {self.Y.shape[0]}"
            )
        if self.X.shape[0] == 0:
            raise DimensionMismatch("dataset is empty")

    @property
    def n(self):
        return self.X.shape[0]

    @property
    def d(self):
        return self.X.shape[1]


@dataclass
class ComponentSpec:
    """One additive component: a kernel over selected input columns plus
    its inducing inputs (in the projected space of those columns)."""

    kernel: _kernels.Kernel
    active_dims: tuple
    Z: np.ndarray

    def __post_init__(self):
        self.active_dims = tuple(int(d) for d in self.active_dims)
        self.Z = np.atleast_2d(np.asarray(self.Z, dtype=float))
        if self.Z.shape[1] != len(self.active_dims):
            raise DimensionMismatch(
                f"Z has {self.Z.shape[1]} columns for {len(self.active_dims)} "
                "active dims"
            )

    @property
    def m(self):
        return self.Z.shape[0]

    def project(self, X):
        """Select this component's columns from a full-width input array."""
        X = np.atleast_2d(np.asarray(X, dtype=float))
        return X[:, list(self.active_dims)]


@dataclass
class VariationalState:
    """Posterior parameters of the sparse model.

    ``alpha`` has length M*C; ``B`` is (M*C, R) and adds the low-rank term
    ``B B^T`` to the prior precision of the inducing variables. Under the
    mean-field structure R equals M*C and rows of component c may be
    nonzero only in column block c.
    """

    alpha: np.ndarray
    B: np.ndarray
    structure: str = COUPLED

    def __post_init__(self):
        self.alpha = np.asarray(self.alpha, dtype=float).ravel()
        self.B = np.atleast_2d(np.asarray(self.B, dtype=float))
        if self.B.shape[0] != self.alpha.shape[0]:
            raise DimensionMismatch(
                f"B has {self.B.shape[0]} rows but alpha has {len(self.alpha)}"
            )
        if self.structure not in STRUCTURES:
            raise ValueError(f"unknown structure {self.structure!r}")

    @property
    def r(self):
        return self.B.shape[1]


@dataclass
class FullVariationalState:
    """Posterior parameters of the dense model: alpha (N*C) and the
    per-datum coupling diagonal lambda (N)."""

    alpha: np.ndarray
    lam: np.ndarray

    def __post_init__(self):
        self.alpha = np.asarray(self.alpha, dtype=float).ravel()
        self.lam = np.asarray(self.lam, dtype=float).ravel()
        if len(self.alpha) % len(self.lam):
            raise DimensionMismatch(
                f"alpha length {len(self.alpha)} is not a multiple of "
                f"lambda length {len(self.lam)}"
            )


@dataclass
class PredictorMarginals:
    """Gaussian marginals of the summed predictor at a set of points, plus
    optional per-component marginals as (mean, variance) pairs."""

    mu_sum: np.ndarray
    var_sum: np.ndarray
    per_component: list = None


def mean_field_mask(m, c):
    """Boolean (M*C, M*C) mask of the entries a block-diagonal B may use."""
    mask = np.zeros((m * c, m * c), dtype=bool)
    for j in range(c):
        mask[j * m : (j + 1) * m, j * m : (j + 1) * m] = True
    return mask


def init_state(specs, structure=COUPLED, r=None):
    """Prior-matching start for the sparse model: alpha = 0, B = 0, so the
    posterior equals the prior and the KL term is exactly zero.

    ``r`` defaults to M for the coupled structure; the mean-field structure
    always uses R = M*C (block-diagonal layout).
    """
    m = specs[0].m
    c = len(specs)
    if structure == MEAN_FIELD:
        if r is not None and r != m * c:
            raise InvalidRank("mean-field structure requires R == M*C")
        r = m * c
    else:
        r = m if r is None else int(r)
        if r < 1:
            raise InvalidRank(f"coupling rank must be >= 1, got {r}")
    return VariationalState(
        alpha=np.zeros(m * c), B=np.zeros((m * c, r)), structure=structure
    )


def init_full_state(n, c):
    """Prior-matching start for the dense model."""
    return FullVariationalState(alpha=np.zeros(n * c), lam=np.zeros(n))


@dataclass
class ValidationIssue:
    code: str
    message: str


@dataclass
class ValidationReport:
    issues: list = field(default_factory=list)

    @property
    def ok(self):
        return not self.issues

    def add(self, code, message):
        self.issues.append(ValidationIssue(code, message))

    def __str__(self):
        if self.ok:
            return "ok"
        return "; ".join(f"{i.code}: {i.message}" for i in self.issues)


def validate_model(specs, dataset):
    """Cheap structural checks on a component list against a dataset.

    Collects issues instead of raising, so callers can report all problems
    at once. Codes: DimensionMismatch, SharedMViolation, DomainError,
    NonFinite.
    """
    report = ValidationReport()
    if not specs:
        report.add("DimensionMismatch", "model has no components")
        return report
    d = dataset.d
    if not np.all(np.isfinite(dataset.X)) or not np.all(np.isfinite(dataset.Y)):
        report.add("NonFinite", "dataset contains NaN or infinite entries")
    ms = [s.m for s in specs]
    if len(set(ms)) > 1:
        report.add(
            "SharedMViolation",
            f"components must share one inducing count, got {ms}",
        )
    for ci, spec in enumerate(specs):
        bad = [j for j in spec.active_dims if j < 0 or j >= d]
        if bad:
            report.add(
                "DimensionMismatch",
                f"component {ci} references input columns {bad} "
                f"outside 0..{d - 1}",
            )
            continue
        if spec.m < 1:
            report.add(
                "DimensionMismatch", f"component {ci} has no inducing points"
            )
        if not np.all(np.isfinite(spec.Z)):
            report.add("NonFinite", f"component {ci} has non-finite inducing inputs")
        # zero-mean components are only defined on the unit interval
        for leaf in spec.kernel.leaves():
            if isinstance(leaf, _kernels.ZeroMeanSE):
                local = leaf.active_dim
                if local >= len(spec.active_dims):
                    report.add(
                        "DimensionMismatch",
                        f"component {ci} kernel indexes local column {local} "
                        f"but only {len(spec.active_dims)} are projected",
                    )
                    continue
                col = dataset.X[:, spec.active_dims[local]]
                if col.size and (col.min() < -1e-12 or col.max() > 1 + 1e-12):
                    report.add(
                        "DomainError",
                        f"input column {spec.active_dims[local]} must lie in "
                        f"[0, 1] for component {ci} (range "
                        f"[{col.min():.4g}, {col.max():.4g}])",
                    )
                zcol = spec.Z[:, local]
                if zcol.size and (zcol.min() < -1e-12 or zcol.max() > 1 + 1e-12):
                    report.add(
                        "DomainError",
                        f"inducing inputs of component {ci} leave [0, 1]",
                    )
    return report


def _grid_points(m, lo=0.0, hi=1.0):
    return np.linspace(lo, hi, m)


def inducing_grid(m, active_dims, lo=0.0, hi=1.0):
    """Regularly spaced inducing inputs for a component.

    One dimension: m points on [lo, hi]. Two dimensions: the smallest g x g
    product grid with g*g >= m, truncated to the first m points in
    row-major order (g*g == m gives the exact grid).
    """
    nd = len(active_dims)
    if nd == 1:
        return _grid_points(m, lo, hi)[:, None]
    if nd == 2:
        g = int(np.ceil(np.sqrt(m)))
        axis = _grid_points(g, lo, hi)
        xx, yy = np.meshgrid(axis, axis, indexing="ij")
        pts = np.column_stack([xx.ravel(), yy.ravel()])
        return pts[:m]
    raise DimensionMismatch(
        f"regular inducing grids support 1 or 2 dims, got {nd}"
    )


def anova_specs(g_params, sigma0, m=16, ndim=6, learn_sigma0=True):
    """Component specs for the additive main-effects-plus-interaction model
    on the unit box, with regularly spaced inducing grids (shared size m)."""
    comps = _kernels.build_anova_kernel(
        g_params, sigma0, ndim=ndim, learn_sigma0=learn_sigma0
    )
    specs = []
    for kern, dims in comps:
        specs.append(
            ComponentSpec(kernel=kern, active_dims=dims, Z=inducing_grid(m, dims))
        )
    return specs
