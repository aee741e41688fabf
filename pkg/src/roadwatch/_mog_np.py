"""Pure-numpy fallback for the Gaussian-mixture frame update.

Mirrors roadwatch._mog (the Cython kernel) operation for operation; the
backend equivalence test holds the two within float32 round-off of each
other. Used when the compiled extension is unavailable or when
ROADWATCH_MOG_BACKEND=numpy.
"""

import numpy as np

BACKEND = "numpy"


def update_frame(w, mu, var, frame, alpha, var_floor, bg_ratio, gate2, init_var, fg):
    """Advance mixture state by one frame in place; writes foreground mask to fg."""
    H, W, K = w.shape
    v = frame.astype(np.float32)[:, :, None]

    d = v - mu
    matchable = (d * d <= gate2 * var) & (w > 0.0)
    m = np.argmax(matchable, axis=2)
    matched = matchable.any(axis=2)

    ii, jj = np.meshgrid(np.arange(H), np.arange(W), indexing="ij")
    prefix = np.cumsum(w, axis=2) - w  # exclusive prefix sums in fitness order
    fg[:] = np.where(matched, prefix[ii, jj, m] >= bg_ratio, True).astype(np.uint8)

    # --- matched pixels: decay all weights, bump and re-estimate the match
    w[matched] *= 1.0 - alpha
    mi, mj, mk = ii[matched], jj[matched], m[matched]
    wk = w[mi, mj, mk] + np.float32(alpha)
    w[mi, mj, mk] = wk
    rho = np.minimum(np.float32(1.0), np.float32(alpha) / wk)
    delta = v[mi, mj, 0] - mu[mi, mj, mk]
    mu[mi, mj, mk] += rho * delta
    new_var = var[mi, mj, mk] + rho * (delta * delta - var[mi, mj, mk])
    var[mi, mj, mk] = np.maximum(new_var, np.float32(var_floor))

    # --- unmatched pixels: replace the lightest component and renormalize
    um = ~matched
    if um.any():
        ui, uj = ii[um], jj[um]
        kmin = np.argmin(w[um], axis=1)
        w[ui, uj, kmin] = alpha
        mu[ui, uj, kmin] = v[ui, uj, 0]
        var[ui, uj, kmin] = init_var
        w[um] /= w[um].sum(axis=1, keepdims=True)

    # --- restore fitness (w/sigma) ordering, stable on ties
    fitness = np.where(w > 0.0, w * w / var, 0.0)
    order = np.argsort(-fitness, axis=2, kind="stable")
    w[:] = np.take_along_axis(w, order, axis=2)
    mu[:] = np.take_along_axis(mu, order, axis=2)
    var[:] = np.take_along_axis(var, order, axis=2)
