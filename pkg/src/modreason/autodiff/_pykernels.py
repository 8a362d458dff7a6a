"""Pure-numpy reference kernels.

These mirror the compiled kernels in ``_ckernels.pyx`` exactly; the dispatcher
in ``kernels.py`` picks one implementation at import time. All functions take
C-contiguous float64 arrays, 2D where a row axis exists, and are the single
place where the fused math lives for both backends.
"""

import numpy as np

NAME = "python"


def softmax_fwd(x):
    """Row softmax of a (rows, cols) array, max-subtracted for stability."""
    m = x.max(axis=1, keepdims=True)
    y = np.exp(x - m)
    y /= y.sum(axis=1, keepdims=True)
    return y


def softmax_bwd(y, g):
    """Gradient wrt the softmax input given the output y and upstream g."""
    s = (g * y).sum(axis=1, keepdims=True)
    return y * (g - s)


def layernorm_fwd(x, gamma, beta, eps):
    """Row layer norm; returns (y, xhat, rstd) with xhat/rstd saved for backward."""
    mu = x.mean(axis=1, keepdims=True)
    xc = x - mu
    var = (xc * xc).mean(axis=1, keepdims=True)
    rstd = 1.0 / np.sqrt(var + eps)
    xhat = xc * rstd
    y = xhat * gamma + beta
    return y, xhat, rstd


def layernorm_bwd(g, xhat, rstd, gamma):
    """Gradients (dx, dgamma, dbeta) for the row layer norm."""
    dbeta = g.sum(axis=0)
    dgamma = (g * xhat).sum(axis=0)
    dxhat = g * gamma
    m1 = dxhat.mean(axis=1, keepdims=True)
    m2 = (dxhat * xhat).mean(axis=1, keepdims=True)
    dx = (dxhat - m1 - xhat * m2) * rstd
    return dx, dgamma, dbeta


def adam_step(p, g, m, v, lr, beta1, beta2, eps, t, gscale):
    """Fused in-place Adam update with bias correction on flat float64 arrays.

    gscale folds global gradient clipping into the update.
    """
    gs = g * gscale
    m *= beta1
    m += (1.0 - beta1) * gs
    v *= beta2
    v += (1.0 - beta2) * (gs * gs)
    bc1 = 1.0 - beta1**t
    bc2 = 1.0 - beta2**t
    p -= lr * (m / bc1) / (np.sqrt(v / bc2) + eps)
