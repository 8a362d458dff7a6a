"""Finite-difference gradient verification.

Central differences (f(x+h) - f(x-h)) / 2h per coordinate against the tape
gradient. 64-bit floats make h=1e-5 reliable to ~1e-10 absolute, so a 1e-4
relative tolerance has plenty of headroom for every block in the model.
"""

from __future__ import annotations

from typing import Callable, Sequence

import numpy as np

from .tensor import Tensor, backward, no_grad


def grad_check(f: Callable[[], Tensor], params: Tensor | Sequence[Tensor],
               h: float = 1e-5, sample: int | None = None, seed: int = 0) -> float:
    """Max relative error between autodiff and central finite differences.

    f rebuilds its graph on every call and returns a scalar. ``sample`` caps
    the number of coordinates probed per tensor (deterministic choice) so
    whole-model checks finish quickly; None probes every coordinate.
    """
    if isinstance(params, Tensor):
        params = [params]
    for p in params:
        p.grad = None
    out = f()
    backward(out)
    analytic = [p.grad.copy() if p.grad is not None else np.zeros_like(p.data)
                for p in params]

    rng = np.random.default_rng(seed)
    max_rel = 0.0
    with no_grad():
        for p, a in zip(params, analytic):
            flat = p.data.reshape(-1)
            a_flat = a.reshape(-1)
            if sample is not None and flat.size > sample:
                idxs = np.sort(rng.choice(flat.size, size=sample, replace=False))
            else:
                idxs = np.arange(flat.size)
            for i in idxs:
                orig = flat[i]
                flat[i] = orig + h
                f_plus = float(f().data)
                flat[i] = orig - h
                f_minus = float(f().data)
                flat[i] = orig
                fd = (f_plus - f_minus) / (2.0 * h)
                denom = max(abs(fd), abs(a_flat[i]), 1e-8)
                max_rel = max(max_rel, abs(fd - a_flat[i]) / denom)
    return max_rel
