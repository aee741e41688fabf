# cython: boundscheck=False, wraparound=False, cdivision=True, initializedcheck=False
"""Compiled per-pixel Gaussian-mixture update, the pipeline's hot inner loop.

Semantics must stay in lockstep with roadwatch._mog_np.update_frame.
"""

BACKEND = "native"


def update_frame(float[:, :, ::1] w, float[:, :, ::1] mu, float[:, :, ::1] var,
                 const unsigned char[:, ::1] frame, float alpha, float var_floor,
                 float bg_ratio, float gate2, float init_var,
                 unsigned char[:, ::1] fg):
    """Advance mixture state by one frame in place; writes foreground mask to fg."""
    cdef int H = frame.shape[0], W = frame.shape[1], K = w.shape[2]
    cdef int i, j, k, m, kmin
    cdef float v, d, rho, prefix, s, fit_a, fit_b, tw, tm, tv
    cdef float one_minus_a = 1.0 - alpha
    with nogil:
        for i in range(H):
            for j in range(W):
                v = <float>frame[i, j]
                m = -1
                for k in range(K):
                    if w[i, j, k] <= 0.0:
                        break
                    d = v - mu[i, j, k]
                    if d * d <= gate2 * var[i, j, k]:
                        m = k
                        break
                if m >= 0:
                    prefix = 0.0
                    for k in range(m):
                        prefix += w[i, j, k]
                    fg[i, j] = 1 if prefix >= bg_ratio else 0
                    for k in range(K):
                        w[i, j, k] *= one_minus_a
                    w[i, j, m] += alpha
                    rho = alpha / w[i, j, m]
                    if rho > 1.0:
                        rho = 1.0
                    d = v - mu[i, j, m]
                    mu[i, j, m] += rho * d
                    var[i, j, m] += rho * (d * d - var[i, j, m])
                    if var[i, j, m] < var_floor:
                        var[i, j, m] = var_floor
                    # bubble the matched component up while its fitness (w/sigma,
                    # compared as w^2/var) exceeds its predecessor's
                    k = m
                    while k > 0:
                        fit_a = w[i, j, k] * w[i, j, k] / var[i, j, k]
                        fit_b = w[i, j, k - 1] * w[i, j, k - 1] / var[i, j, k - 1]
                        if fit_a <= fit_b:
                            break
                        tw = w[i, j, k]; w[i, j, k] = w[i, j, k - 1]; w[i, j, k - 1] = tw
                        tm = mu[i, j, k]; mu[i, j, k] = mu[i, j, k - 1]; mu[i, j, k - 1] = tm
                        tv = var[i, j, k]; var[i, j, k] = var[i, j, k - 1]; var[i, j, k - 1] = tv
                        k -= 1
                    # and down if a variance bump dropped it below a successor
                    while k < K - 1:
                        fit_a = w[i, j, k] * w[i, j, k] / var[i, j, k]
                        fit_b = w[i, j, k + 1] * w[i, j, k + 1] / var[i, j, k + 1]
                        if fit_a >= fit_b:
                            break
                        tw = w[i, j, k]; w[i, j, k] = w[i, j, k + 1]; w[i, j, k + 1] = tw
                        tm = mu[i, j, k]; mu[i, j, k] = mu[i, j, k + 1]; mu[i, j, k + 1] = tm
                        tv = var[i, j, k]; var[i, j, k] = var[i, j, k + 1]; var[i, j, k + 1] = tv
                        k += 1
                else:
                    fg[i, j] = 1
                    kmin = 0
                    for k in range(1, K):
                        if w[i, j, k] < w[i, j, kmin]:
                            kmin = k
                    w[i, j, kmin] = alpha
                    mu[i, j, kmin] = v
                    var[i, j, kmin] = init_var
                    s = 0.0
                    for k in range(K):
                        s += w[i, j, k]
                    for k in range(K):
                        w[i, j, k] /= s
                    for k in range(1, K):
                        m = k
                        while m > 0:
                            fit_a = w[i, j, m] * w[i, j, m] / var[i, j, m]
                            fit_b = w[i, j, m - 1] * w[i, j, m - 1] / var[i, j, m - 1]
                            if fit_a <= fit_b:
                                break
                            tw = w[i, j, m]; w[i, j, m] = w[i, j, m - 1]; w[i, j, m - 1] = tw
                            tm = mu[i, j, m]; mu[i, j, m] = mu[i, j, m - 1]; mu[i, j, m - 1] = tm
                            tv = var[i, j, m]; var[i, j, m] = var[i, j, m - 1]; var[i, j, m - 1] = tv
                            m -= 1
    return None
