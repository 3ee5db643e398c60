"""Acceptance checks for the package's headline properties.

Eight end-to-end checks, one per claim: conjugate recovery, dense-formula
equivalence, determinant/trace identities, gradient correctness, the
coupled-dominates-mean-field guarantee, the synthetic-benchmark workflow,
cost scaling, and the sparse-to-dense collapse. Each test prints a single
[PASS]/[FAIL] line with the measured quantities (forced past pytest's
capture so the tee'd log always shows them), then asserts the pinned
thresholds.
"""

import time

import numpy as np

from addgp import (
    ComponentSpec,
    Dataset,
    FullModel,
    Gaussian,
    KernelParams,
    Poisson,
    SparseModel,
    SquaredExp,
    dense_gaussian_kl,
    exact_sum_posterior,
)
from addgp.cli import main, read_csv, write_csv
from addgp.data import friedman
from addgp.model import MEAN_FIELD, mean_field_mask
from addgp.optimize import TrainConfig
from conftest import (
    central_diff,
    conjugate_instance,
    dense_blocks,
    gaussian_dataset,
    make_specs,
    random_sparse_state,
    woodbury_cov,
)

# tight enough that the flat directions near a conjugate optimum are
# fully resolved; the 1e-4 recovery tolerances need the bound converged
# to roughly 1e-10
TIGHT = TrainConfig(
    train_hypers=False,
    max_iter=20000,
    rel_tol=1e-15,
    tol_window=10,
    ftol=1e-16,
    gtol=1e-12,
    seed=0,
)


def _emit(capsys, ok, label, detail):
    with capsys.disabled():
        print(f"\n[{'PASS' if ok else 'FAIL'}] {label}: {detail}", flush=True)


def test_conjugate_recovery_matches_exact_posterior(capsys):
    t0 = time.perf_counter()
    mu_err = var_err = lam_err = 0.0
    for i in range(10):
        specs, ds, sigma2, lik = conjugate_instance(100 + i, n=50, c=2)
        model = FullModel(specs, lik, ds)
        model.train(TIGHT)
        exact = exact_sum_posterior(specs, ds, sigma2)
        marg = model.marginals()
        mu_err = max(mu_err, float(np.max(np.abs(marg.mu_sum - exact.mean))))
        var_err = max(
            var_err, float(np.max(np.abs(marg.var_sum - np.diag(exact.cov))))
        )
        lam_err = max(
            lam_err, float(np.max(np.abs(model.state.lam**2 - 1.0 / sigma2)))
        )
    wall = time.perf_counter() - t0
    ok = mu_err < 1e-4 and var_err < 1e-4 and lam_err < 1e-4 and wall < 60.0
    _emit(
        capsys, ok, "conjugate recovery",
        f"10 instances (n=50, c=2): max mean err {mu_err:.2e}, "
        f"max var err {var_err:.2e}, max precision err {lam_err:.2e} "
        f"(tol 1e-4 each), {wall:.1f}s (cap 60s)",
    )
    assert mu_err < 1e-4
    assert var_err < 1e-4
    assert lam_err < 1e-4
    assert wall < 60.0


def test_variational_terms_match_dense_formulas(capsys):
    rng = np.random.default_rng(2000)
    kl_err = marg_err = 0.0
    for t in range(50):
        c = int(rng.integers(1, 4))
        m = int(rng.integers(2, 12 // c + 1))
        n = int(rng.integers(3, 12 // c + 1))
        seed = int(rng.integers(1 << 31))
        srng = np.random.default_rng(seed)

        # factored model: KL against the covariance downdate, marginals
        # against a densely assembled capacitance
        specs = make_specs(srng, c, m, d=1, ls_range=(0.1, 0.3), grid_z=True)
        ds = gaussian_dataset(srng, n)
        state = random_sparse_state(srng, specs)
        model = SparseModel(specs, Gaussian(np.log(0.5)), ds, state=state)
        K, F = dense_blocks(specs, ds.X)
        cov = woodbury_cov(K, state.B)
        ref = dense_gaussian_kl(K @ state.alpha, cov, np.zeros(m * c), K)
        kl_err = max(kl_err, abs(model.kl() - ref))
        A = np.eye(state.r) + state.B.T @ K @ state.B
        J = F @ state.B
        d0 = sum(s.kernel.diag(s.project(ds.X)) for s in specs)
        var_ref = d0 - np.einsum("ij,ji->i", J, np.linalg.solve(A, J.T))
        marg = model.marginals()
        marg_err = max(
            marg_err, float(np.max(np.abs(marg.mu_sum - F @ state.alpha)))
        )
        marg_err = max(marg_err, float(np.max(np.abs(marg.var_sum - var_ref))))

        # dense model: same checks with the diagonal-precision coupling;
        # jittered-grid training inputs and lengthscales comparable to the
        # grid spacing keep the stacked Gram matrix far from singular so
        # the reference Cholesky keeps its digits
        xf = (np.arange(n)[:, None] + srng.uniform(0.1, 0.9, size=(n, 1))) / n
        fspecs = make_specs(srng, c, n, d=1, ls_range=(0.1, 0.3), X=xf)
        fds = Dataset(fspecs[0].Z.copy(), srng.normal(size=n))
        fmodel = FullModel(fspecs, Gaussian(np.log(0.5)), fds)
        fmodel.state.alpha = srng.normal(size=c * n)
        fmodel.state.lam = srng.uniform(0.5, 2.0, size=n)
        Kf = dense_blocks(fspecs)
        U = np.tile(np.diag(fmodel.state.lam), (c, 1))
        covf = woodbury_cov(Kf, U)
        reff = dense_gaussian_kl(
            Kf @ fmodel.state.alpha, covf, np.zeros(c * n), Kf
        )
        kl_err = max(kl_err, abs(fmodel.kl() - reff))
        margf = fmodel.marginals()
        ones = np.tile(np.eye(n), (1, c))  # sums the per-component blocks
        mu_ref = ones @ (Kf @ fmodel.state.alpha)
        var_reff = np.diag(ones @ covf @ ones.T)
        marg_err = max(marg_err, float(np.max(np.abs(margf.mu_sum - mu_ref))))
        marg_err = max(
            marg_err, float(np.max(np.abs(margf.var_sum - var_reff)))
        )
    ok = kl_err < 1e-8 and marg_err < 1e-8
    _emit(
        capsys, ok, "dense-formula equivalence",
        f"50 instances, both parameterizations: max KL err {kl_err:.2e}, "
        f"max marginal err {marg_err:.2e} (tol 1e-8)",
    )
    assert kl_err < 1e-8
    assert marg_err < 1e-8


def test_determinant_and_trace_identities(capsys):
    rng = np.random.default_rng(3000)
    logdet_err = trace_err = 0.0
    for t in range(20):
        c = int(rng.integers(1, 4))
        m = int(rng.integers(2, 6))
        srng = np.random.default_rng(int(rng.integers(1 << 31)))
        specs = make_specs(srng, c, m, d=1, ls_range=(0.1, 0.3), grid_z=True)
        state = random_sparse_state(srng, specs)
        K = dense_blocks(specs)
        cov = woodbury_cov(K, state.B)
        A = np.eye(state.r) + state.B.T @ K @ state.B

        # |K^{-1} Sigma| = 1 / |A|
        s_cov = np.linalg.slogdet(cov)[1]
        s_k = np.linalg.slogdet(K)[1]
        s_a = np.linalg.slogdet(A)[1]
        logdet_err = max(logdet_err, abs((s_cov - s_k) + s_a))

        # tr(K^{-1} Sigma) = MC - R + tr(A^{-1})
        #                  = MC - sum_c tr(B_c A^{-1} B_c^T K_c)
        lhs = float(np.trace(np.linalg.solve(K, cov)))
        ainv = np.linalg.inv(A)
        rhs1 = m * c - state.r + float(np.trace(ainv))
        rhs2 = m * c
        for ci in range(c):
            bc = state.B[ci * m : (ci + 1) * m]
            kc = K[ci * m : (ci + 1) * m, ci * m : (ci + 1) * m]
            rhs2 -= float(np.trace(bc @ ainv @ bc.T @ kc))
        trace_err = max(trace_err, abs(lhs - rhs1), abs(lhs - rhs2))

        # dense parameterization: same identities with the stacked
        # diagonal coupling, capacitance of size n
        n = int(srng.integers(3, 7))
        X = (np.arange(n)[:, None] + srng.uniform(0.1, 0.9, size=(n, 1))) / n
        fspecs = make_specs(srng, c, n, d=1, ls_range=(0.15, 0.4), X=X)
        lam = srng.uniform(0.5, 2.0, size=n)
        Kf = dense_blocks(fspecs)
        U = np.tile(np.diag(lam), (c, 1))
        covf = woodbury_cov(Kf, U)
        ksum = sum(s.kernel.eval(X) for s in fspecs)
        Af = np.eye(n) + np.diag(lam) @ ksum @ np.diag(lam)
        logdet_err = max(
            logdet_err,
            abs(
                np.linalg.slogdet(covf)[1]
                - np.linalg.slogdet(Kf)[1]
                + np.linalg.slogdet(Af)[1]
            ),
        )
        lhsf = float(np.trace(np.linalg.solve(Kf, covf)))
        rhsf = n * c - n + float(np.trace(np.linalg.inv(Af)))
        trace_err = max(trace_err, abs(lhsf - rhsf))
    ok = logdet_err < 1e-8 and trace_err < 1e-8
    _emit(
        capsys, ok, "determinant and trace identities",
        f"20 instances: max log-det err {logdet_err:.2e}, "
        f"max trace err {trace_err:.2e} (tol 1e-8)",
    )
    assert logdet_err < 1e-8
    assert trace_err < 1e-8


def _sparse_fd_error(seed, lik):
    srng = np.random.default_rng(seed)
    c, m, n, d = 2, 3, 7, 2
    specs = make_specs(srng, c, m, d=d, ls_range=(0.15, 0.4), grid_z=True)
    if lik == "gaussian":
        ds = gaussian_dataset(srng, n, d=d)
        likelihood = Gaussian(np.log(0.5))
    else:
        ds = Dataset(
            srng.uniform(0, 1, size=(n, d)),
            srng.poisson(2.0, size=n).astype(float),
        )
        likelihood = Poisson()
    state = random_sparse_state(srng, specs)
    model = SparseModel(specs, likelihood, ds, state=state)
    _, g = model.elbo_with_grads(train_hypers=True)
    st = model.state
    mc, r = st.alpha.size, st.r

    def elbo_at(vec):
        k = mc
        st.alpha = vec[:mc].copy()
        st.B = vec[k : k + mc * r].reshape(mc, r).copy()
        k += mc * r
        for s in model.specs:
            s.kernel.set_params(vec[k : k + s.kernel.n_params])
            k += s.kernel.n_params
        if model.likelihood.n_params:
            model.likelihood.set_params(vec[k:])
        return model.elbo()

    base = np.concatenate(
        [st.alpha, st.B.ravel()]
        + [s.kernel.get_params() for s in model.specs]
        + [model.likelihood.get_params()]
    )
    ana = np.concatenate(
        [g["alpha"].ravel(), g["B"].ravel()]
        + list(g["kernels"])
        + ([g["lik"]] if model.likelihood.n_params else [])
    )
    fd = central_diff(elbo_at, base)
    elbo_at(base)
    return float(np.max(np.abs(ana - fd) / np.maximum(1e-6, np.abs(fd))))


def _full_fd_error(seed, lik):
    srng = np.random.default_rng(seed)
    c, n, d = 2, 6, 2
    X = srng.uniform(0, 1, size=(n, d))
    specs = make_specs(srng, c, n, d=d, ls_range=(0.15, 0.4), X=X)
    if lik == "gaussian":
        ds = Dataset(X, srng.normal(size=n))
        likelihood = Gaussian(np.log(0.5))
    else:
        ds = Dataset(X, srng.poisson(2.0, size=n).astype(float))
        likelihood = Poisson()
    model = FullModel(specs, likelihood, ds)
    model.state.alpha = srng.normal(size=c * n) * 0.5
    model.state.lam = srng.uniform(0.5, 2.0, size=n)
    _, g = model.elbo_with_grads(train_hypers=True)
    st = model.state

    def elbo_at(vec):
        st.alpha = vec[: c * n].copy()
        k = c * n
        st.lam = vec[k : k + n].copy()
        k += n
        for s in model.specs:
            s.kernel.set_params(vec[k : k + s.kernel.n_params])
            k += s.kernel.n_params
        if model.likelihood.n_params:
            model.likelihood.set_params(vec[k:])
        return model.elbo()

    base = np.concatenate(
        [st.alpha, st.lam]
        + [s.kernel.get_params() for s in model.specs]
        + [model.likelihood.get_params()]
    )
    ana = np.concatenate(
        [g["alpha"].ravel(), g["lam"]]
        + list(g["kernels"])
        + ([g["lik"]] if model.likelihood.n_params else [])
    )
    fd = central_diff(elbo_at, base)
    elbo_at(base)
    return float(np.max(np.abs(ana - fd) / np.maximum(1e-6, np.abs(fd))))


def test_analytic_gradients_match_finite_differences(capsys):
    worst = 0.0
    cases = [
        (kind, lik)
        for kind in ("sparse", "full")
        for lik in ("gaussian", "poisson")
    ]
    for j, (kind, lik) in enumerate(cases * 5):
        err = (
            _sparse_fd_error(4000 + j, lik)
            if kind == "sparse"
            else _full_fd_error(4000 + j, lik)
        )
        worst = max(worst, err)
    ok = worst < 1e-4
    _emit(
        capsys, ok, "gradient correctness",
        f"20 configurations (both models, both likelihoods): "
        f"max relative error vs central differences {worst:.2e} (tol 1e-4)",
    )
    assert worst < 1e-4


def test_coupled_bound_dominates_mean_field(capsys):
    import copy

    cfg = TrainConfig(
        train_hypers=False,
        max_iter=6000,
        rel_tol=1e-13,
        tol_window=8,
        ftol=1e-16,
        gtol=1e-12,
        seed=0,
    )
    n, c, m = 200, 3, 8
    worst_gap = np.inf
    for i in range(5):
        rng = np.random.default_rng(500 + i)
        specs_a = make_specs(rng, c, m, d=1, ls_range=(0.15, 0.4), grid_z=True)
        specs_b = copy.deepcopy(specs_a)
        ds = gaussian_dataset(rng, n)
        # identical block-diagonal start for both posterior families
        pert = np.random.default_rng(1000 + i).normal(size=(m * c, m * c)) * 0.01
        b0 = np.where(mean_field_mask(m, c), pert, 0.0)

        mf = SparseModel(
            specs_a, Gaussian(np.log(0.4)), ds, structure=MEAN_FIELD
        )
        mf.state.B = b0.copy()
        res_mf = mf.train(cfg)

        cp = SparseModel(specs_b, Gaussian(np.log(0.4)), ds, r=m * c)
        cp.state.B = b0.copy()
        res_cp = cp.train(cfg)

        worst_gap = min(worst_gap, res_cp.final_elbo - res_mf.final_elbo)
    ok = worst_gap >= -1e-6
    _emit(
        capsys, ok, "coupled dominates mean-field",
        f"5 instances (n=200, c=3, m=8): min(coupled - mean-field) "
        f"{worst_gap:+.3e} (floor -1e-6)",
    )
    assert worst_gap >= -1e-6


def test_friedman_workflow_recovers_structure(capsys, tmp_path):
    t0 = time.perf_counter()
    data = tmp_path / "train.csv"
    model = tmp_path / "model.addgp"
    assert main(["synth", "--out", str(data), "--n", "5000", "--seed", "0"]) == 0
    assert main(
        ["fit", str(data), "--kernel", "anova", "--m", "16", "--seed", "0",
         "--out", str(model)]
    ) == 0

    # held-out accuracy against the noiseless generating function
    rng = np.random.default_rng(9001)
    xq = rng.uniform(0.0, 1.0, size=(1000, 6))
    fq = friedman(xq)
    query = tmp_path / "query.csv"
    write_csv(query, [f"x{j + 1}" for j in range(6)], [xq[:, j] for j in range(6)])
    preds = tmp_path / "preds.csv"
    assert main(["predict", str(model), str(query), "--out", str(preds)]) == 0
    _, arr = read_csv(preds)
    rmse = float(np.sqrt(np.mean((arr[:, 0] - fq) ** 2)))

    outdir = tmp_path / "effects"
    assert main(["decompose", str(model), "--outdir", str(outdir)]) == 0
    _, inert = read_csv(outdir / "effect_5.csv")
    inert_max = float(np.max(np.abs(inert[:, 1])))
    _, linear = read_csv(outdir / "effect_3.csv")
    coef = np.polyfit(linear[:, 0], linear[:, 1], 1)
    resid_rms = float(
        np.sqrt(np.mean((linear[:, 1] - np.polyval(coef, linear[:, 0])) ** 2))
    )
    wall = time.perf_counter() - t0
    ok = rmse < 1.0 and inert_max < 0.15 and resid_rms < 0.2 and wall < 600.0
    _emit(
        capsys, ok, "synthetic benchmark workflow",
        f"held-out rmse vs noiseless target {rmse:.3f} (cap 1.0), "
        f"inert-input effect max |mean| {inert_max:.2e} (cap 0.15), "
        f"linear-effect residual rms {resid_rms:.3f} (cap 0.2), "
        f"{wall:.0f}s (cap 600s)",
    )
    assert rmse < 1.0
    assert inert_max < 0.15
    assert resid_rms < 0.2
    assert wall < 600.0


def test_cost_scaling_in_components_and_data(capsys, tmp_path):
    out = tmp_path / "bench.csv"
    rc = main(
        ["--threads", "1", "bench", "--out", str(out), "--m", "128",
         "--reps", "5", "--seed", "0"]
    )
    assert rc == 0
    fits = {}
    for line in out.read_text().splitlines():
        if line.startswith("#") and "=" in line:
            key, _, val = line[1:].partition("=")
            try:
                fits[key.strip()] = float(val)
            except ValueError:
                pass
    expo = fits["kl_growth_exponent_c"]
    r2 = fits["elbo_affine_r2_n"]
    ok = 0.7 <= expo <= 1.6 and r2 > 0.95
    _emit(
        capsys, ok, "cost scaling",
        f"divergence-term growth exponent in C {expo:.3f} "
        f"(window [0.7, 1.6]), bound cost affine in N with r^2 {r2:.4f} "
        f"(floor 0.95)",
    )
    assert 0.7 <= expo <= 1.6
    assert r2 > 0.95


def test_sparse_bound_collapses_to_dense_at_full_inducing(capsys):
    rng = np.random.default_rng(42)
    n, c, d = 20, 2, 2
    X = rng.uniform(0.0, 1.0, size=(n, d))
    sigma2 = 0.4
    Y = rng.normal(0.0, 1.0, size=n) + rng.normal(0.0, np.sqrt(sigma2), size=n)
    ds = Dataset(X, Y)

    def build_specs():
        return [
            ComponentSpec(
                SquaredExp(
                    KernelParams(np.log(1.2), np.log([0.3 + 0.1 * ci])),
                    active_dims=(0,),
                ),
                (ci,),
                X[:, [ci]].copy(),  # inducing inputs = projected training inputs
            )
            for ci in range(c)
        ]

    t0 = time.perf_counter()
    dense = FullModel(build_specs(), Gaussian(np.log(sigma2)), ds)
    res_dense = dense.train(TIGHT)
    sparse = SparseModel(
        build_specs(), Gaussian(np.log(sigma2)), ds, r=n * c
    )
    res_sparse = sparse.train(TIGHT)
    wall = time.perf_counter() - t0
    diff = abs(res_sparse.final_elbo - res_dense.final_elbo)
    ok = diff < 1e-5
    _emit(
        capsys, ok, "sparse-to-dense collapse",
        f"n=m=20, c=2: |bound gap| {diff:.2e} (tol 1e-5), {wall:.1f}s",
    )
    assert diff < 1e-5
