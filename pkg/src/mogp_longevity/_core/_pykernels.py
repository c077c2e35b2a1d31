import numpy as np


def cov_cross(a1, t1, p1, a2, t2, p2, inv_la, inv_lt, P):
    da = np.subtract.outer(a1, a2)
    dt = np.subtract.outer(t1, t2)
    out = da * da
    out *= -0.5 * inv_la
    dt *= dt
    dt *= -0.5 * inv_lt
    out += dt
    np.exp(out, out=out)
    out *= P[np.asarray(p1)[:, None], np.asarray(p2)[None, :]]
    return out


def cov_sym(a, t, p, inv_la, inv_lt, P):
    return cov_cross(a, t, p, a, t, p, inv_la, inv_lt, P)
