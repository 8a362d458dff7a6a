"""Kernel backend selection: compiled extension if available, numpy otherwise.

The active backend is chosen once at import, overridable with the
``MODREASON_KERNELS`` environment variable (``auto`` | ``compiled`` |
``python``) or programmatically via :func:`set_backend` (used by the
benchmark and the backend-parity tests).
"""

import os

from . import _pykernels

_backends = {"python": _pykernels}
try:
    from . import _ckernels  # type: ignore[attr-defined]

    _backends["compiled"] = _ckernels
except ImportError:
    _ckernels = None

_active = None


def available_backends():
    return sorted(_backends)


def set_backend(name):
    """Select the kernel backend by name; raises KeyError if not built."""
    global _active
    if name not in _backends:
        raise KeyError(
            f"kernel backend {name!r} not available (have: {available_backends()})"
        )
    _active = _backends[name]
    return _active


def backend_name():
    return _active.NAME


def _initial_choice():
    req = os.environ.get("MODREASON_KERNELS", "auto")
    if req == "auto":
        return "compiled" if "compiled" in _backends else "python"
    if req not in _backends:
        raise ImportError(
            f"MODREASON_KERNELS={req!r} requested but that backend is unavailable "
            f"(have: {available_backends()})"
        )
    return req


set_backend(_initial_choice())


def softmax_fwd(x):
    return _active.softmax_fwd(x)


def softmax_bwd(y, g):
    return _active.softmax_bwd(y, g)


def layernorm_fwd(x, gamma, beta, eps):
    return _active.layernorm_fwd(x, gamma, beta, eps)


def layernorm_bwd(g, xhat, rstd, gamma):
    return _active.layernorm_bwd(g, xhat, rstd, gamma)


def adam_step(p, g, m, v, lr, beta1, beta2, eps, t, gscale):
    return _active.adam_step(p, g, m, v, lr, beta1, beta2, eps, t, gscale)
