"""Central finite-difference gradient checking."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from ..errors import InvalidInputError, NumericError
from .core import Tensor, double_precision


@dataclass
class GradCheckReport:
    max_rel_error: float
    tol: float
    checked: int
    worst: tuple | None = None
    per_input: list = field(default_factory=list)

    @property
    def passed(self) -> bool:
        return self.max_rel_error <= self.tol

    def __bool__(self):
        return self.passed


def _relative_errors(analytic, numeric):
    # components far below the largest one are compared on a 1% scale of it
    scale = 1e-2 * float(np.max(np.abs(numeric), initial=0.0)) + 1e-12
    denom = np.maximum(np.maximum(np.abs(analytic), np.abs(numeric)), scale)
    return np.abs(analytic - numeric) / denom


def grad_check(f, inputs, h=1e-5, tol=1e-4, max_coords=None, seed=0, wrt=None) -> GradCheckReport:
    """Compare reverse-mode gradients of ``f(*inputs)`` with central differences.

    ``inputs`` are arrays or tensors; they are copied to float64.  ``wrt``
    selects which inputs to differentiate (all by default).  With
    ``max_coords`` only a seeded random sample of coordinates per input is
    perturbed.  The relative error of a component is
    ``|a - n| / max(|a|, |n|, 0.01 * max|n|)``.
    """
    if not isinstance(inputs, (list, tuple)):
        inputs = [inputs]
    # finiteness is checked explicitly below
    with double_precision(), np.errstate(all="ignore"):
        base = [np.array(x.data if isinstance(x, Tensor) else x, dtype=np.float64) for x in inputs]
        wrt = range(len(base)) if wrt is None else wrt
        tensors = [Tensor(b, requires_grad=(i in wrt)) for i, b in enumerate(base)]
        out = f(*tensors)
        if not isinstance(out, Tensor) or out.size != 1:
            raise InvalidInputError("grad_check needs a scalar-valued function")
        if not np.isfinite(out.data).all():
            raise NumericError("function value is not finite")
        out.backward()

        rng = np.random.default_rng(seed)
        worst_err, worst, checked, per_input = 0.0, None, 0, []
        for i in wrt:
            analytic = tensors[i].grad
            if analytic is None:
                analytic = np.zeros_like(base[i])
            flat = base[i].reshape(-1)
            coords = np.arange(flat.size)
            if max_coords is not None and flat.size > max_coords:
                coords = np.sort(rng.choice(flat.size, size=max_coords, replace=False))
            numeric = np.empty(len(coords))
            for n, k in enumerate(coords):
                vals = []
                for step in (h, -h):
                    pert = [b.copy() for b in base]
                    pert[i].reshape(-1)[k] += step
                    v = f(*(Tensor(p) for p in pert)).item()
                    if not np.isfinite(v):
                        raise NumericError(f"non-finite value for input {i}", index=int(k))
                    vals.append(v)
                numeric[n] = (vals[0] - vals[1]) / (2 * h)
            a = analytic.reshape(-1)[coords]
            if not np.isfinite(a).all():
                bad = int(coords[np.flatnonzero(~np.isfinite(a))[0]])
                raise NumericError(f"non-finite analytic gradient for input {i}", index=bad)
            errs = _relative_errors(a, numeric)
            checked += len(coords)
            e = float(errs.max(initial=0.0))
            per_input.append(e)
            if e > worst_err or worst is None:
                j = int(np.argmax(errs)) if len(errs) else 0
                worst_err = max(worst_err, e)
                if len(errs):
                    worst = (i, int(coords[j]), float(a[j]), float(numeric[j]))
    return GradCheckReport(max_rel_error=worst_err, tol=tol, checked=checked, worst=worst, per_input=per_input)
