"""Command line interface.

Subcommands: ``synth`` (write a synthetic benchmark dataset), ``fit``
(train a model on a CSV), ``predict`` (marginals at query points),
``decompose`` (per-component effect tables), ``bench`` (timing tables for
the bound and its KL term).

Conventions: CSV values are written with 17 significant digits so reruns
with the same seed are byte-identical (timing fields excepted); lines
starting with ``#`` are comments; exit codes are 0 on success, 1 for usage
errors, 2 for data or format errors, 3 for numerical failures.
"""

from __future__ import annotations

import argparse
import contextlib
import csv
import json
import sys
import time

import numpy as np

from . import data as _data
from . import exact as _exact  # noqa: F401 (re-exported for scripts)
from . import full as _full
from . import io as _io
from . import kernels as _kernels
from . import model as _model
from . import sparse as _sparse
from .errors import (
    CapExceeded,
    DataError,
    DimensionMismatch,
    DomainError,
    InvalidRank,
    ModelFormatError,
    NotPositiveDefinite,
)
from .likelihoods import Gaussian, Poisson
from .optimize import TrainConfig

_FLOAT_FMT = "%.17g"


# -- CSV helpers ------------------------------------------------------------


def write_csv(path, header, columns, meta=()):
    """Write columns of floats with a comment preamble."""
    columns = [np.asarray(c, dtype=float) for c in columns]
    with open(path, "w", newline="") as fh:
        for line in meta:
            fh.write(f"# {line}\n")
        writer = csv.writer(fh)
        writer.writerow(header)
        for row in zip(*columns):
            writer.writerow([_FLOAT_FMT % v for v in row])


def read_csv(path):
    """Read a numeric CSV written by this package (or any plain numeric
    CSV): '#' lines are comments, one optional header row. Returns
    (header, array); raises DataError naming the offending row."""
    rows = []
    header = None
    saw_first = False
    with open(path, newline="") as fh:
        for lineno, line in enumerate(fh, start=1):
            if line.startswith("#") or not line.strip():
                continue
            fields = next(csv.reader([line]))
            if not saw_first:
                saw_first = True
                try:
                    rows.append([float(v) for v in fields])
                except ValueError:
                    header = [f.strip() for f in fields]
                continue
            try:
                vals = [float(v) for v in fields]
            except ValueError as exc:
                raise DataError(f"{path}: malformed value on line {lineno}: {exc}")
            width = len(rows[0]) if rows else len(header)
            if len(vals) != width:
                raise DataError(
                    f"{path}: line {lineno} has {len(vals)} fields, expected {width}"
                )
            rows.append(vals)
    if not rows:
        raise DataError(f"{path}: no data rows")
    return header, np.asarray(rows, dtype=float)


# -- synth -------------------------------------------------------------------


def cmd_synth(args):
    seed = _seed_of(args)
    X, y = _data.sample_friedman(args.n, noise_sd=args.noise_sd, seed=seed, d=args.dims)
    header = [f"x{j + 1}" for j in range(args.dims)] + ["y"]
    meta = [
        f"synthetic benchmark: friedman function, n={args.n} "
        f"noise_sd={args.noise_sd:g} seed={seed} rng={_data.RNG_ALGORITHM}"
    ]
    write_csv(args.out, header, [X[:, j] for j in range(args.dims)] + [y], meta)
    print(f"wrote {args.n} rows to {args.out}")
    return 0


# -- fit ----------------------------------------------------------------------


def _load_dataset(path):
    header, arr = read_csv(path)
    if arr.shape[1] < 2:
        raise DataError(f"{path}: need at least one feature column plus a target")
    names = tuple(header[:-1]) if header else ()
    return _model.Dataset(X=arr[:, :-1], Y=arr[:, -1], column_names=names)


def _maybe_rescale(X, kernel_kind):
    """Unit-box rescaling for the decomposition kernel when inputs need it."""
    if kernel_kind != "anova":
        return None, X
    lo = X.min(axis=0)
    hi = X.max(axis=0)
    if lo.min() >= 0.0 and hi.max() <= 1.0:
        return None, X
    span = np.where(hi - lo > 0, hi - lo, 1.0)
    rescale = _io.Rescale(lo=lo, hi=lo + span)
    return rescale, rescale.apply(X)


def _build_specs(args, dataset_scaled):
    d = dataset_scaled.d
    if args.kernel == "anova":
        if d < 2:
            raise DataError(
                "the anova kernel needs at least 2 input columns "
                "(its interaction term pairs the first two)"
            )
        var0 = args.variance
        if var0 is None:
            var0 = max(float(np.var(dataset_scaled.Y)) / (d + 1), 1e-2)
        sigma0 = args.sigma0
        if sigma0 is None:
            sigma0 = max(float(np.var(dataset_scaled.Y)), 1e-2)
        g_params = [
            _kernels.KernelParams(
                log_variance=np.log(var0),
                log_lengthscales=np.array([np.log(args.lengthscale)]),
            )
            for _ in range(d + 2)
        ]
        return _model.anova_specs(
            g_params,
            sigma0,
            m=args.m,
            ndim=d,
            learn_sigma0=not args.fixed_sigma0,
        )
    # single squared-exponential component on all inputs
    var0 = args.variance if args.variance is not None else max(
        float(np.var(dataset_scaled.Y)), 1e-2
    )
    params = _kernels.KernelParams(
        log_variance=np.log(var0),
        log_lengthscales=np.full(d, np.log(args.lengthscale)),
    )
    kern = _kernels.SquaredExp(params, active_dims=tuple(range(d)))
    rng = np.random.default_rng(_seed_of(args))
    idx = rng.choice(dataset_scaled.n, size=min(args.m, dataset_scaled.n), replace=False)
    return [
        _model.ComponentSpec(
            kernel=kern, active_dims=tuple(range(d)), Z=dataset_scaled.X[idx]
        )
    ]


def cmd_fit(args):
    seed = _seed_of(args)
    raw = _load_dataset(args.data)
    rescale, xs = _maybe_rescale(raw.X, args.kernel)
    dataset = _model.Dataset(X=xs, Y=raw.Y, column_names=raw.column_names)

    specs = _build_specs(args, dataset)
    report = _model.validate_model(specs, dataset)
    if not report.ok:
        raise DataError(f"model validation failed: {report}")

    if args.likelihood == "gaussian":
        lik = Gaussian(log_noise_variance=np.log(args.noise_var))
    else:
        lik = Poisson()
        if np.any(raw.Y < 0) or np.any(raw.Y != np.round(raw.Y)):
            raise DataError("poisson likelihood needs nonnegative integer targets")

    config = TrainConfig(
        max_iter=args.max_iter,
        phase1_max_iter=args.phase1_iter,
        train_hypers=not args.no_hypers,
        seed=seed,
        multi_start=args.multi_start,
    )

    t0 = time.perf_counter()
    if args.structure == _model.FULL:
        mdl = _full.FullModel(specs, lik, dataset)
        result = mdl.train(config)
        saved = _io.SavedModel(
            structure=_model.FULL,
            specs=[
                _model.ComponentSpec(
                    kernel=s.kernel, active_dims=s.active_dims, Z=s.project(dataset.X)
                )
                for s in specs
            ],
            likelihood=lik,
            alpha=mdl.state.alpha,
            lam=mdl.state.lam,
            rescale=rescale,
            input_dim=dataset.d,
        )
        r_used = None
    else:
        rank = args.rank
        mdl = _sparse.SparseModel(
            specs, lik, dataset, structure=args.structure, r=rank
        )
        result = mdl.train(config)
        saved = _io.SavedModel(
            structure=args.structure,
            specs=specs,
            likelihood=lik,
            alpha=mdl.state.alpha,
            B=mdl.state.B,
            rescale=rescale,
            input_dim=dataset.d,
        )
        r_used = mdl.r
    wall = time.perf_counter() - t0

    _io.save_model(args.out, saved)
    report_dict = {
        "structure": args.structure,
        "n": dataset.n,
        "input_dim": dataset.d,
        "n_components": len(specs),
        "m": specs[0].m,
        "r": r_used,
        "likelihood": args.likelihood,
        "final_elbo": result.final_elbo,
        "iterations": result.n_iter,
        "converged": result.converged,
        "max_iter_reached": result.max_iter_reached,
        "clamp_count": result.clamp_count,
        "message": result.message,
        "wall_time_s": wall,
        "seed": seed,
        "rng": _data.RNG_ALGORITHM,
        "model_file": args.out,
    }
    if args.likelihood == "gaussian":
        report_dict["noise_variance"] = float(lik.noise_variance)
    if args.report:
        with open(args.report, "w") as fh:
            json.dump(report_dict, fh, indent=2)
            fh.write("\n")
    print(
        f"fit {args.structure} model: {result.summary()} -> {args.out}"
    )
    return 0


# -- predict --------------------------------------------------------------------


def _query_matrix(path, input_dim):
    _, arr = read_csv(path)
    if arr.shape[1] < input_dim:
        raise DataError(
            f"{path}: query needs {input_dim} input columns, found {arr.shape[1]}"
        )
    return arr[:, :input_dim]


def cmd_predict(args):
    saved = _io.load_model(args.model)
    input_dim = saved.input_dim or (
        1 + max(max(s.active_dims) for s in saved.specs)
    )
    xq = _query_matrix(args.query, input_dim)
    if saved.rescale is not None:
        xq = saved.rescale.apply(xq)

    if saved.structure == _model.FULL:
        marg = _full.predict_marginals(
            saved.specs, saved.alpha, saved.lam, xq,
            include_components=args.components,
        )
    else:
        marg = _sparse.predict_marginals(
            saved.specs, saved.alpha, saved.B, xq,
            include_components=args.components,
        )

    header = ["mean", "variance"]
    cols = [marg.mu_sum, marg.var_sum]
    if args.components:
        for ci, (mc, vc) in enumerate(marg.per_component):
            header += [f"mean_c{ci}", f"var_c{ci}"]
            cols += [mc, vc]
    meta = [f"predictions from {args.model} ({saved.structure}) at {len(xq)} points"]
    write_csv(args.out, header, cols, meta)
    print(f"wrote {len(xq)} predictions to {args.out}")
    return 0


# -- decompose ---------------------------------------------------------------------


def _component_grids(saved, n1, n2):
    """Per-component evaluation grids in the model's (scaled) input space."""
    grids = []
    for spec in saved.specs:
        nd = len(spec.active_dims)
        lo = spec.Z.min(axis=0)
        hi = spec.Z.max(axis=0)
        # zero-mean components live on [0, 1]; otherwise span the inducing range
        for leaf in spec.kernel.leaves():
            if isinstance(leaf, _kernels.ZeroMeanSE):
                lo = np.zeros(nd)
                hi = np.ones(nd)
                break
        if nd == 1:
            grids.append(np.linspace(lo[0], hi[0], n1)[:, None])
        elif nd == 2:
            ax0 = np.linspace(lo[0], hi[0], n2)
            ax1 = np.linspace(lo[1], hi[1], n2)
            g0, g1 = np.meshgrid(ax0, ax1, indexing="ij")
            grids.append(np.column_stack([g0.ravel(), g1.ravel()]))
        else:
            raise DataError(
                f"decompose supports 1- or 2-dim components, got {nd}"
            )
    return grids


def cmd_decompose(args):
    import os

    saved = _io.load_model(args.model)
    grids = _component_grids(saved, args.grid, args.grid2d)
    if saved.structure == _model.FULL:
        effects = _full.decompose(saved.specs, saved.alpha, saved.lam, grids)
    else:
        effects = _sparse.decompose(
            saved.specs, saved.alpha, saved.B, grids,
            coupled_check=args.coupled_check,
        )
    os.makedirs(args.outdir, exist_ok=True)
    paths = []
    for ci, (spec, eff) in enumerate(zip(saved.specs, effects)):
        g, mean, var = eff[0], eff[1], eff[2]
        gout = g
        if saved.rescale is not None:
            dims = list(spec.active_dims)
            lo = saved.rescale.lo[dims]
            hi = saved.rescale.hi[dims]
            gout = g * (hi - lo)[None, :] + lo[None, :]
        header = [f"x{d + 1}" for d in spec.active_dims] + ["mean", "variance"]
        cols = [gout[:, j] for j in range(g.shape[1])] + [mean, var]
        meta = [
            f"component {ci} effect on input dims "
            + ",".join(str(d + 1) for d in spec.active_dims)
        ]
        if len(eff) == 4:
            meta.append(f"coupled-covariance cross-check max discrepancy {eff[3]:.3e}")
        path = os.path.join(args.outdir, f"effect_{ci}.csv")
        write_csv(path, header, cols, meta)
        paths.append(path)
        dims = ",".join(f"x{d + 1}" for d in spec.active_dims)
        print(
            f"component {ci} ({dims}): mean in [{mean.min():+.3f}, {mean.max():+.3f}], "
            f"sd up to {np.sqrt(max(var.max(), 0.0)):.3f} -> {path}"
        )
    return 0


# -- bench ----------------------------------------------------------------------------


def _bench_model(n, c, m, r, seed):
    """A synthetic coupled model with warmed kernel caches for timing."""
    rng = np.random.default_rng(seed)
    d = 6
    X = rng.uniform(size=(n, d))
    y = rng.standard_normal(n)
    specs = []
    for ci in range(c):
        params = _kernels.KernelParams(
            log_variance=0.0, log_lengthscales=np.array([np.log(0.25)])
        )
        specs.append(
            _model.ComponentSpec(
                kernel=_kernels.ZeroMeanSE(params, active_dim=0),
                active_dims=(ci % d,),
                Z=_model.inducing_grid(m, (ci % d,)),
            )
        )
    mdl = _sparse.SparseModel(
        specs, Gaussian(), _model.Dataset(X=X, Y=y), r=r
    )
    mdl.state.alpha = rng.normal(0.0, 0.1, m * c)
    mdl.state.B = rng.normal(0.0, 1.0 / np.sqrt(m * c), (m * c, r))
    mdl._kmats()  # warm the kernel cache so timings isolate the algebra
    return mdl


def _median_time(fn, reps):
    fn()  # warm
    k = 1
    while True:
        t0 = time.perf_counter()
        for _ in range(k):
            fn()
        if time.perf_counter() - t0 > 0.01 or k >= 1024:
            break
        k *= 2
    times = []
    for _ in range(reps):
        t0 = time.perf_counter()
        for _ in range(k):
            fn()
        times.append((time.perf_counter() - t0) / k)
    return float(np.median(times))


def cmd_bench(args):
    seed = _seed_of(args)
    c_list = [int(v) for v in args.c_list.split(",") if v]
    n_list = [int(v) for v in args.n_list.split(",") if v]
    m, r = args.m, (args.rank or args.m)
    rows = []
    print(f"timing kl/elbo at m={m}, r={r} (median of {args.reps})")
    for c in c_list:
        mdl = _bench_model(args.n_fixed, c, m, r, seed)
        t_kl = _median_time(mdl.kl, args.reps)
        t_elbo = _median_time(mdl.elbo, args.reps)
        rows.append(("kl", "c", c, args.n_fixed, t_kl))
        rows.append(("elbo", "c", c, args.n_fixed, t_elbo))
        print(f"  C={c:<3d} N={args.n_fixed:<6d} kl {t_kl * 1e3:8.3f} ms   elbo {t_elbo * 1e3:8.3f} ms")
    for n in n_list:
        mdl = _bench_model(n, args.c_fixed, m, r, seed)
        t_kl = _median_time(mdl.kl, args.reps)
        t_elbo = _median_time(mdl.elbo, args.reps)
        rows.append(("kl", "n", args.c_fixed, n, t_kl))
        rows.append(("elbo", "n", args.c_fixed, n, t_elbo))
        print(f"  C={args.c_fixed:<3d} N={n:<6d} kl {t_kl * 1e3:8.3f} ms   elbo {t_elbo * 1e3:8.3f} ms")

    meta = [
        f"bench m={m} r={r} reps={args.reps} seed={seed}",
        "columns: quantity, sweep axis, C, N, median seconds",
    ]
    fits = {}
    kl_c = [(c, t) for q, ax, c, n, t in rows if q == "kl" and ax == "c"]
    if len(kl_c) >= 2:
        cs = np.array([v for v, _ in kl_c], dtype=float)
        ts = np.array([t for _, t in kl_c])
        fits["kl_growth_exponent_c"] = float(
            np.polyfit(np.log(cs), np.log(ts), 1)[0]
        )
    elbo_n = [(n, t) for q, ax, c, n, t in rows if q == "elbo" and ax == "n"]
    if len(elbo_n) >= 2:
        ns = np.array([v for v, _ in elbo_n], dtype=float)
        ts = np.array([t for _, t in elbo_n])
        coef = np.polyfit(ns, ts, 1)
        resid = ts - np.polyval(coef, ns)
        ss_tot = float(np.sum((ts - ts.mean()) ** 2))
        fits["elbo_affine_r2_n"] = (
            1.0 - float(np.sum(resid**2)) / ss_tot if ss_tot > 0 else 1.0
        )
    for key, val in fits.items():
        meta.append(f"{key} = {val:.4f}")
        print(f"{key} = {val:.4f}")

    with open(args.out, "w", newline="") as fh:
        for line in meta:
            fh.write(f"# {line}\n")
        writer = csv.writer(fh)
        writer.writerow(["quantity", "axis", "c", "n", "seconds"])
        for q, ax, c, n, t in rows:
            writer.writerow([q, ax, c, n, _FLOAT_FMT % t])
    print(f"wrote {len(rows)} timings to {args.out}")
    return 0


# -- plumbing -----------------------------------------------------------------------------


def _seed_of(args):
    if getattr(args, "seed", None) is not None:
        return args.seed
    return getattr(args, "global_seed", None) or 0


@contextlib.contextmanager
def _thread_limit(n):
    if not n:
        yield
        return
    try:
        from threadpoolctl import threadpool_limits
    except ImportError:
        print("threadpoolctl not installed; --threads ignored", file=sys.stderr)
        yield
        return
    with threadpool_limits(limits=n):
        yield


def _add_common(sp):
    sp.add_argument("--seed", type=int, default=None, help="RNG seed (default 0)")


def build_parser():
    parser = argparse.ArgumentParser(
        prog="addgp",
        description="Additive GP regression with coupled sparse variational posteriors",
    )
    parser.add_argument("--seed", dest="global_seed", type=int, default=None)
    parser.add_argument("--config", default=None, help="JSON file of default options")
    parser.add_argument("--threads", type=int, default=None, help="cap BLAS threads")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("synth", help="write a synthetic benchmark dataset")
    p.add_argument("--out", required=True)
    p.add_argument("--n", type=int, default=5000)
    p.add_argument("--noise-sd", type=float, default=1.0)
    p.add_argument("--dims", type=int, default=6)
    _add_common(p)
    p.set_defaults(func=cmd_synth)

    p = sub.add_parser("fit", help="train a model on a CSV (last column = target)")
    p.add_argument("data")
    p.add_argument("--out", default="model.addgp")
    p.add_argument("--report", default=None, help="write a JSON fit report")
    p.add_argument(
        "--structure",
        choices=[_model.COUPLED, _model.MEAN_FIELD, _model.FULL],
        default=_model.COUPLED,
    )
    p.add_argument("--kernel", choices=["anova", "se"], default="anova")
    p.add_argument("--likelihood", choices=["gaussian", "poisson"], default="gaussian")
    p.add_argument("--m", type=int, default=16, help="inducing points per component")
    p.add_argument("--rank", type=int, default=None, help="coupling rank R (default M)")
    p.add_argument("--lengthscale", type=float, default=0.3)
    p.add_argument("--variance", type=float, default=None, help="default: var(y)/(D+1)")
    p.add_argument("--sigma0", type=float, default=None, help="default: var(y)")
    p.add_argument("--fixed-sigma0", action="store_true")
    p.add_argument("--noise-var", type=float, default=1.0)
    p.add_argument("--max-iter", type=int, default=1500)
    p.add_argument("--phase1-iter", type=int, default=None)
    p.add_argument("--no-hypers", action="store_true")
    p.add_argument("--multi-start", type=int, default=0)
    _add_common(p)
    p.set_defaults(func=cmd_fit)

    p = sub.add_parser("predict", help="marginals of the summed predictor at query points")
    p.add_argument("model")
    p.add_argument("query")
    p.add_argument("--out", required=True)
    p.add_argument("--components", action="store_true", help="per-component columns")
    _add_common(p)
    p.set_defaults(func=cmd_predict)

    p = sub.add_parser("decompose", help="per-component effect tables")
    p.add_argument("model")
    p.add_argument("--outdir", required=True)
    p.add_argument("--grid", type=int, default=200, help="points per 1-d grid")
    p.add_argument("--grid2d", type=int, default=50, help="points per 2-d axis")
    p.add_argument(
        "--coupled-check",
        action="store_true",
        help="cross-check variances against the dense coupled covariance",
    )
    _add_common(p)
    p.set_defaults(func=cmd_decompose)

    p = sub.add_parser("bench", help="timing tables for the bound and its KL term")
    p.add_argument("--out", required=True)
    # large enough that BLAS work, not call overhead, dominates the timings
    p.add_argument("--m", type=int, default=64)
    p.add_argument("--rank", type=int, default=None)
    p.add_argument("--c-list", default="1,2,4,8")
    p.add_argument("--n-list", default="1000,2000,4000,8000")
    p.add_argument("--n-fixed", type=int, default=2000)
    p.add_argument("--c-fixed", type=int, default=4)
    p.add_argument("--reps", type=int, default=5)
    _add_common(p)
    p.set_defaults(func=cmd_bench)
    return parser


def main(argv=None):
    parser = build_parser()
    # a config file supplies defaults; explicit flags still win
    pre = argparse.ArgumentParser(add_help=False)
    pre.add_argument("--config", default=None)
    known, _ = pre.parse_known_args(argv)
    if known.config:
        try:
            with open(known.config) as fh:
                overrides = json.load(fh)
        except (OSError, json.JSONDecodeError) as exc:
            print(f"error: cannot read config: {exc}", file=sys.stderr)
            return 2
        if not isinstance(overrides, dict):
            print("error: config must be a JSON object", file=sys.stderr)
            return 1
        subparsers = [
            sp
            for action in parser._subparsers._group_actions
            for sp in action.choices.values()
        ]
        known_dests = {a.dest for a in parser._actions}
        for sp in subparsers:
            known_dests.update(a.dest for a in sp._actions)
        for key, val in overrides.items():
            dest = key.replace("-", "_")
            if dest not in known_dests:
                print(f"error: unknown config option {key!r}", file=sys.stderr)
                return 1
            parser.set_defaults(**{dest: val})
            for sp in subparsers:
                if any(dest == a.dest for a in sp._actions):
                    sp.set_defaults(**{dest: val})

    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return 0 if exc.code in (0, None) else 1

    try:
        with _thread_limit(args.threads):
            return args.func(args)
    except (
        DataError,
        ModelFormatError,
        DomainError,
        DimensionMismatch,
        InvalidRank,
        CapExceeded,
        FileNotFoundError,
    ) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    except (NotPositiveDefinite, FloatingPointError, np.linalg.LinAlgError) as exc:
        print(f"numerical error: {exc}", file=sys.stderr)
        return 3


if __name__ == "__main__":
    sys.exit(main())
