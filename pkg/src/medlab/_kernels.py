"""Compiled inner loop of the d-dimensional SGD simulator.

The kernel consumes a pre-drawn block of standard normals (one row per
sample: d entries for the input direction, one for the label noise) and
mutates the network in place.  fastmath is restricted to flags that keep
inf/nan semantics intact, because divergence detection relies on comparing
against a huge-but-finite threshold.
"""

import numpy as np
from numba import njit

_FASTMATH = {"contract", "reassoc", "arcp"}


@njit(cache=True, fastmath=_FASTMATH)
def sgd_block(W, a, wstar, noise, two_gamma_p, gamma_pd, sqrt_delta,
              inv_sqrt_d, err_cap, spherical, train_a):
    """Run one SGD step per noise row; return the 0-based row index at which
    the residual blew past ``err_cap`` (divergence), or -1 on success."""
    k = noise.shape[0]
    p, d = W.shape
    lam = np.empty(p, dtype=W.dtype)
    for s in range(k):
        lam_star = W.dtype.type(0.0)
        for i in range(d):
            lam_star += wstar[i] * noise[s, i]
        lam_star *= inv_sqrt_d
        y = lam_star * lam_star + sqrt_delta * noise[s, d]
        f = W.dtype.type(0.0)
        for j in range(p):
            acc = W.dtype.type(0.0)
            for i in range(d):
                acc += W[j, i] * noise[s, i]
            lam[j] = acc * inv_sqrt_d
            f += a[j] * lam[j] * lam[j]
        err = f / p - y
        if not (-err_cap < err < err_cap):
            return s
        for j in range(p):
            coef = -two_gamma_p * err * a[j] * lam[j] * inv_sqrt_d
            if spherical:
                norm2 = W.dtype.type(0.0)
                for i in range(d):
                    W[j, i] += coef * noise[s, i]
                    norm2 += W[j, i] * W[j, i]
                scale = np.sqrt(d / norm2)
                for i in range(d):
                    W[j, i] *= scale
            else:
                for i in range(d):
                    W[j, i] += coef * noise[s, i]
        if train_a:
            for j in range(p):
                a[j] -= gamma_pd * err * lam[j] * lam[j]
    return -1
