"""Coupled vs mean-field posteriors on overlapping additive components.

When components share input columns, the likelihood only constrains their
sum, so the exact posterior carries strong negative correlations between
them: one component can move up if another moves down. A mean-field
(block-diagonal) variational family cannot represent that, and its bound
suffers. The coupled family keeps a joint low-rank precision correction
across all components; with full rank it contains every mean-field
candidate, so its optimized bound can only be better.

This script fits both families from the same initialization on data where
two of the three components live on the same column, then compares bounds
and per-component posterior variances.
"""

import copy

import numpy as np

from addgp import (
    ComponentSpec,
    Dataset,
    Gaussian,
    KernelParams,
    SparseModel,
    SquaredExp,
    TrainConfig,
)
from addgp.model import MEAN_FIELD, mean_field_mask


def main():
    rng = np.random.default_rng(1)
    n, m = 150, 8
    X = rng.uniform(0.0, 1.0, size=(n, 2))
    f = np.sin(2.0 * np.pi * X[:, 0]) + 0.8 * np.cos(3.0 * X[:, 0]) + X[:, 1]
    sigma2 = 0.25
    Y = f + rng.normal(0.0, np.sqrt(sigma2), size=n)
    dataset = Dataset(X, Y)

    def build_specs():
        grid = np.linspace(0.03, 0.97, m)[:, None]
        hypers = [(0.8, 0.15, 0), (0.8, 0.4, 0), (1.0, 0.3, 1)]
        return [
            ComponentSpec(
                SquaredExp(KernelParams(np.log(v), np.log([ls]))),
                (col,),
                grid.copy(),
            )
            for v, ls, col in hypers
        ]

    config = TrainConfig(
        train_hypers=False, max_iter=6000, rel_tol=1e-13, tol_window=8
    )
    c = 3
    b0 = np.where(
        mean_field_mask(m, c),
        np.random.default_rng(7).normal(size=(m * c, m * c)) * 0.01,
        0.0,
    )

    mf = SparseModel(build_specs(), Gaussian(np.log(sigma2)), dataset,
                     structure=MEAN_FIELD)
    mf.state.B = b0.copy()
    res_mf = mf.train(config)

    cp = SparseModel(build_specs(), Gaussian(np.log(sigma2)), dataset, r=m * c)
    cp.state.B = b0.copy()
    res_cp = cp.train(config)

    print("mean-field:", res_mf.summary())
    print("coupled:   ", res_cp.summary())
    print(f"bound improvement from coupling: "
          f"{res_cp.final_elbo - res_mf.final_elbo:+.4f} nats")
    print()

    marg_mf = mf.marginals(include_components=True)
    marg_cp = cp.marginals(include_components=True)
    print("posterior variance of the sum vs per-component variances")
    print("(mean over training points):")
    labels = ["x1 (short ls)", "x1 (long ls)", "x2"]
    print(f"{'':>14} {'mean-field':>12} {'coupled':>12}")
    for ci, label in enumerate(labels):
        v_mf = np.mean(marg_mf.per_component[ci][1])
        v_cp = np.mean(marg_cp.per_component[ci][1])
        print(f"{label:>14} {v_mf:12.4f} {v_cp:12.4f}")
    print(f"{'sum':>14} {np.mean(marg_mf.var_sum):12.4f} "
          f"{np.mean(marg_cp.var_sum):12.4f}")
    print()
    print("the coupled fit keeps individual components uncertain (their")
    print("difference is unidentified) while the variance of the sum stays")
    print("small; mean-field has to shrink each component separately")


if __name__ == "__main__":
    main()
