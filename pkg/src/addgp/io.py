"""Plain-text model persistence, format id ``addgp-v1``.

The file is line-oriented: a version line, then ``[section]`` headers with
``key = value`` entries. All floats are written as C99 hex literals
(``float.hex``), so a save/load round trip is bit-exact. Kernel trees are
flattened with dotted keys (``kernel.part0.log_variance = ...``).

Sections: ``[model]`` (structure, sizes, likelihood, optional input
rescaling), one ``[component i]`` per additive component (kernel + inducing
inputs; for the dense structure Z carries the projected training inputs),
and ``[state]`` (alpha plus B or lambda).
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import kernels as _kernels
from . import likelihoods as _lik
from . import model as _model
from .errors import ModelFormatError

FORMAT_ID = "addgp-v1"


@dataclass
class Rescale:
    """Per-column min-max map used to bring inputs into the unit box:
    scaled = (x - lo) / (hi - lo)."""

    lo: np.ndarray
    hi: np.ndarray

    def apply(self, X):
        X = np.atleast_2d(np.asarray(X, dtype=float))
        return (X - self.lo[None, :]) / (self.hi - self.lo)[None, :]

    def invert(self, Xs):
        Xs = np.atleast_2d(np.asarray(Xs, dtype=float))
        return Xs * (self.hi - self.lo)[None, :] + self.lo[None, :]


@dataclass
class SavedModel:
    """Everything a fitted model needs for prediction and decomposition."""

    structure: str  # coupled | meanfield | full
    specs: list
    likelihood: object
    alpha: np.ndarray
    B: np.ndarray = None  # sparse structures
    lam: np.ndarray = None  # dense structure
    rescale: Rescale = None
    input_dim: int = None


def _fhex(x):
    return float(x).hex()

def _funhex(s, key):
    try:
        return float.fromhex(s)
    except ValueError as exc:
        raise ModelFormatError(f"bad float {s!r} for key {key!r}") from exc


def _vec_to_str(v):
    return " ".join(_fhex(x) for x in np.asarray(v, dtype=float).ravel())


def _vec_from_str(s, key):
    parts = s.split()
    return np.array([_funhex(p, key) for p in parts])


def _write_kernel(lines, prefix, kern):
    if isinstance(kern, _kernels.SquaredExp):
        lines.append(f"{prefix}.type = squared_exp")
        lines.append(
            f"{prefix}.active_dims = " + " ".join(str(d) for d in kern.active_dims)
        )
        lines.append(f"{prefix}.log_variance = {_fhex(kern.params.log_variance)}")
        lines.append(
            f"{prefix}.log_lengthscales = {_vec_to_str(kern.params.log_lengthscales)}"
        )
    elif isinstance(kern, _kernels.Constant):
        lines.append(f"{prefix}.type = constant")
        lines.append(f"{prefix}.log_variance = {_fhex(kern.log_variance)}")
        lines.append(f"{prefix}.trainable = {'true' if kern.trainable else 'false'}")
    elif isinstance(kern, _kernels.ZeroMeanSE):
        lines.append(f"{prefix}.type = zero_mean_se")
        lines.append(f"{prefix}.active_dim = {kern.active_dim}")
        lines.append(f"{prefix}.log_variance = {_fhex(kern.params.log_variance)}")
        lines.append(
            f"{prefix}.log_lengthscale = {_fhex(kern.params.log_lengthscales[0])}"
        )
    elif isinstance(kern, (_kernels.Sum, _kernels.Product)):
        kind = "sum" if isinstance(kern, _kernels.Sum) else "product"
        lines.append(f"{prefix}.type = {kind}")
        lines.append(f"{prefix}.nparts = {len(kern.parts)}")
        for i, part in enumerate(kern.parts):
            _write_kernel(lines, f"{prefix}.part{i}", part)
    else:
        raise ModelFormatError(
            f"kernel type {type(kern).__name__} has no serialization"
        )


def _read_kernel(kv, prefix):
    tkey = f"{prefix}.type"
    if tkey not in kv:
        raise ModelFormatError(f"missing key {tkey!r}")
    kind = kv[tkey]
    if kind == "squared_exp":
        dims = tuple(int(d) for d in kv[f"{prefix}.active_dims"].split())
        params = _kernels.KernelParams(
            log_variance=_funhex(
                kv[f"{prefix}.log_variance"], f"{prefix}.log_variance"
            ),
            log_lengthscales=_vec_from_str(
                kv[f"{prefix}.log_lengthscales"], f"{prefix}.log_lengthscales"
            ),
        )
        return _kernels.SquaredExp(params, active_dims=dims)
    if kind == "constant":
        return _kernels.Constant(
            log_variance=_funhex(
                kv[f"{prefix}.log_variance"], f"{prefix}.log_variance"
            ),
            trainable=kv.get(f"{prefix}.trainable", "true") == "true",
        )
    if kind == "zero_mean_se":
        params = _kernels.KernelParams(
            log_variance=_funhex(
                kv[f"{prefix}.log_variance"], f"{prefix}.log_variance"
            ),
            log_lengthscales=np.array(
                [
                    _funhex(
                        kv[f"{prefix}.log_lengthscale"],
                        f"{prefix}.log_lengthscale",
                    )
                ]
            ),
        )
        return _kernels.ZeroMeanSE(params, active_dim=int(kv[f"{prefix}.active_dim"]))
    if kind in ("sum", "product"):
        nparts = int(kv[f"{prefix}.nparts"])
        parts = [_read_kernel(kv, f"{prefix}.part{i}") for i in range(nparts)]
        return _kernels.Sum(parts) if kind == "sum" else _kernels.Product(parts)
    raise ModelFormatError(f"unknown kernel type {kind!r} at key {tkey!r}")


def _write_likelihood(lines, lik):
    lines.append(f"likelihood = {lik.kind}")
    for name, val in zip(lik.param_names(), lik.get_params()):
        lines.append(f"lik.{name} = {_fhex(val)}")


def _read_likelihood(kv):
    kind = kv.get("likelihood")
    if kind == "gaussian":
        return _lik.Gaussian(
            log_noise_variance=_funhex(
                kv["lik.log_noise_variance"], "lik.log_noise_variance"
            )
        )
    if kind == "poisson":
        return _lik.Poisson()
    raise ModelFormatError(f"unknown likelihood {kind!r}")


def save_model(path, saved):
    """Write a SavedModel to ``path`` in the addgp-v1 format."""
    lines = [FORMAT_ID, "[model]"]
    lines.append(f"structure = {saved.structure}")
    lines.append(f"n_components = {len(saved.specs)}")
    lines.append(f"m = {saved.specs[0].m}")
    input_dim = saved.input_dim
    if input_dim is None:
        input_dim = 1 + max(max(s.active_dims) for s in saved.specs)
    lines.append(f"input_dim = {input_dim}")
    _write_likelihood(lines, saved.likelihood)
    if saved.rescale is not None:
        lines.append("rescale = minmax")
        lines.append(f"rescale.lo = {_vec_to_str(saved.rescale.lo)}")
        lines.append(f"rescale.hi = {_vec_to_str(saved.rescale.hi)}")

    for ci, spec in enumerate(saved.specs):
        lines.append(f"[component {ci}]")
        lines.append(
            "active_dims = " + " ".join(str(d) for d in spec.active_dims)
        )
        _write_kernel(lines, "kernel", spec.kernel)
        lines.append(f"z.shape = {spec.Z.shape[0]} {spec.Z.shape[1]}")
        for ri in range(spec.Z.shape[0]):
            lines.append(f"z.row.{ri} = {_vec_to_str(spec.Z[ri])}")

    lines.append("[state]")
    lines.append(f"alpha = {_vec_to_str(saved.alpha)}")
    if saved.structure == _model.FULL:
        lines.append(f"lambda = {_vec_to_str(saved.lam)}")
    else:
        lines.append(f"b.shape = {saved.B.shape[0]} {saved.B.shape[1]}")
        for ri in range(saved.B.shape[0]):
            lines.append(f"b.row.{ri} = {_vec_to_str(saved.B[ri])}")
    with open(path, "w") as fh:
        fh.write("\n".join(lines) + "\n")


def _parse_sections(path):
    sections = {}
    current = None
    with open(path) as fh:
        first = fh.readline().strip()
        if first != FORMAT_ID:
            raise ModelFormatError(
                f"unsupported format id {first!r} (expected {FORMAT_ID!r})"
            )
        for lineno, raw in enumerate(fh, start=2):
            line = raw.strip()
            if not line or line.startswith("#"):
                continue
            if line.startswith("[") and line.endswith("]"):
                current = line[1:-1]
                sections[current] = {}
                continue
            if "=" not in line or current is None:
                raise ModelFormatError(f"malformed line {lineno}: {line!r}")
            key, _, val = line.partition("=")
            sections[current][key.strip()] = val.strip()
    return sections


def load_model(path):
    """Read an addgp-v1 file back into a SavedModel."""
    sections = _parse_sections(path)
    if "model" not in sections or "state" not in sections:
        raise ModelFormatError("missing [model] or [state] section")
    mk = sections["model"]
    structure = mk.get("structure")
    if structure not in (_model.COUPLED, _model.MEAN_FIELD, _model.FULL):
        raise ModelFormatError(f"unknown structure {structure!r}")
    n_comp = int(mk["n_components"])
    likelihood = _read_likelihood(mk)
    rescale = None
    if mk.get("rescale") == "minmax":
        rescale = Rescale(
            lo=_vec_from_str(mk["rescale.lo"], "rescale.lo"),
            hi=_vec_from_str(mk["rescale.hi"], "rescale.hi"),
        )

    specs = []
    for ci in range(n_comp):
        name = f"component {ci}"
        if name not in sections:
            raise ModelFormatError(f"missing section [{name}]")
        kv = sections[name]
        dims = tuple(int(d) for d in kv["active_dims"].split())
        kern = _read_kernel(kv, "kernel")
        rows, cols = (int(v) for v in kv["z.shape"].split())
        z = np.empty((rows, cols))
        for ri in range(rows):
            z[ri] = _vec_from_str(kv[f"z.row.{ri}"], f"z.row.{ri}")
        specs.append(_model.ComponentSpec(kernel=kern, active_dims=dims, Z=z))

    sk = sections["state"]
    alpha = _vec_from_str(sk["alpha"], "alpha")
    B = None
    lam = None
    if structure == _model.FULL:
        lam = _vec_from_str(sk["lambda"], "lambda")
    else:
        rows, cols = (int(v) for v in sk["b.shape"].split())
        B = np.empty((rows, cols))
        for ri in range(rows):
            B[ri] = _vec_from_str(sk[f"b.row.{ri}"], f"b.row.{ri}")
    return SavedModel(
        structure=structure,
        specs=specs,
        likelihood=likelihood,
        alpha=alpha,
        B=B,
        lam=lam,
        rescale=rescale,
        input_dim=int(mk.get("input_dim", 0)) or None,
    )
