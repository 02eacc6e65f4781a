"""Barrier kernels for the supported cone types.

Each cone K comes with a logarithmically homogeneous self-concordant
barrier phi with parameter nu, evaluated on slack vectors s. The solver
only needs, per cone: interiority margin, barrier value/gradient/Hessian,
the exact (or safely bisected) step length to the boundary, and the dual
point -grad phi(s)/t, which lies in the interior of the dual cone.

Exponential cones are packed three components at a time: (x, y, z) with
y > 0 and y*exp(x/y) <= z, i.e. r(s) = y*log(z/y) - x >= 0.
"""

from __future__ import annotations

import numpy as np

NONNEG = "nonneg"
SOC = "soc"
EXP = "exp"
EQ = "eq"

KINDS = (EQ, NONNEG, SOC, EXP)


# ------------------------------------------------------------- nonnegative

def nonneg_margin(s):
    return float(np.min(s)) if len(s) else np.inf


def nonneg_value(s):
    return -float(np.sum(np.log(s)))


def nonneg_grad(s):
    return -1.0 / s


def nonneg_hess_diag(s):
    return 1.0 / s ** 2


def nonneg_step(s, ds):
    neg = ds < 0
    if not np.any(neg):
        return np.inf
    return float(np.min(-s[neg] / ds[neg]))


# ------------------------------------------------------ second-order cone

def soc_residual(s):
    """s0^2 - ||s_bar||^2, positive inside the cone (with s0 > 0)."""
    return float(s[0] ** 2 - s[1:] @ s[1:])


def soc_margin(s):
    if s[0] <= 0:
        return -np.inf
    return soc_residual(s)


def soc_value(s):
    return -float(np.log(soc_residual(s)))


def soc_grad(s):
    d = soc_residual(s)
    g = (2.0 / d) * s
    g[0] = -g[0]
    return g


def soc_hess(s):
    d = soc_residual(s)
    nd = np.concatenate(([s[0]], -s[1:]))  # grad of d is 2*nd
    J = -2.0 * np.eye(len(s))
    J[0, 0] = 2.0
    return (4.0 / d ** 2) * np.outer(nd, nd) - (1.0 / d) * J


def soc_step(s, ds):
    """Largest alpha with s + alpha*ds strictly inside the cone."""
    a = ds[0] ** 2 - ds[1:] @ ds[1:]
    b = 2.0 * (s[0] * ds[0] - s[1:] @ ds[1:])
    c = soc_residual(s)
    # roots of a t^2 + b t + c = 0; c > 0 at the start
    cands = []
    if abs(a) < 1e-300:
        if b < 0:
            cands.append(-c / b)
    else:
        disc = b * b - 4 * a * c
        if disc >= 0:
            r = np.sqrt(disc)
            for t in ((-b - r) / (2 * a), (-b + r) / (2 * a)):
                if t > 0:
                    cands.append(t)
    if ds[0] < 0:
        cands.append(-s[0] / ds[0])
    return float(min(cands)) if cands else np.inf


def soc_violation(s):
    """How far s is outside the cone (0 if inside)."""
    return max(0.0, float(np.linalg.norm(s[1:]) - s[0]))


# --------------------------------------------------------- exponential cone

def _exp_r(x, y, z):
    return y * np.log(z / y) - x


def exp_margins(s3):
    """Per-cone margin array for packed (n, 3) slacks; > 0 means interior."""
    x, y, z = s3[:, 0], s3[:, 1], s3[:, 2]
    m = np.minimum(y, z)
    ok = (y > 0) & (z > 0)
    r = np.where(ok, y * np.log(np.where(ok, z / y, 1.0)) - x, -np.inf)
    return np.minimum(m, r)


def exp_value(s3):
    x, y, z = s3[:, 0], s3[:, 1], s3[:, 2]
    r = _exp_r(x, y, z)
    return -float(np.sum(np.log(r) + np.log(y) + np.log(z)))


def exp_grad(s3):
    x, y, z = s3[:, 0], s3[:, 1], s3[:, 2]
    r = _exp_r(x, y, z)
    lzy = np.log(z / y)
    g = np.empty_like(s3)
    g[:, 0] = 1.0 / r
    g[:, 1] = -(lzy - 1.0) / r - 1.0 / y
    g[:, 2] = -y / (r * z) - 1.0 / z
    return g


def exp_hess(s3):
    """Packed (n, 3, 3) Hessians of the exponential-cone barrier."""
    x, y, z = s3[:, 0], s3[:, 1], s3[:, 2]
    r = _exp_r(x, y, z)
    lzy = np.log(z / y)
    rx, ry, rz = -np.ones_like(x), lzy - 1.0, y / z
    H = np.empty((len(s3), 3, 3))
    grad_r = np.stack([rx, ry, rz], axis=1)
    H[:] = (grad_r[:, :, None] * grad_r[:, None, :]) / (r ** 2)[:, None, None]
    # -(1/r) * hess(r): hess(r) has ryy = -1/y, ryz = 1/z, rzz = -y/z^2
    H[:, 1, 1] += (1.0 / y) / r + 1.0 / y ** 2
    H[:, 1, 2] += (-1.0 / z) / r
    H[:, 2, 1] += (-1.0 / z) / r
    H[:, 2, 2] += (y / z ** 2) / r + 1.0 / z ** 2
    return H


def exp_step(s3, ds3):
    """Step to the boundary over all packed cones (bisection on r)."""
    alpha = np.inf
    for s, ds in zip(s3, ds3):
        for i in (1, 2):  # y > 0, z > 0
            if ds[i] < 0:
                alpha = min(alpha, -s[i] / ds[i])
        hi = min(1e12, 0.999 * alpha if np.isfinite(alpha) else 1e12)
        if hi <= 0:
            continue

        def r_at(t, s=s, ds=ds):
            x, y, z = s + t * ds
            if y <= 0 or z <= 0:
                return -1.0
            return _exp_r(x, y, z)

        if r_at(hi) > 0:
            continue
        lo = 0.0
        for _ in range(80):
            mid = 0.5 * (lo + hi)
            if r_at(mid) > 0:
                lo = mid
            else:
                hi = mid
        alpha = min(alpha, lo)
    return float(alpha)


def exp_violation(s3):
    x, y, z = s3[:, 0], s3[:, 1], s3[:, 2]
    v = np.maximum(0.0, -y)
    v = np.maximum(v, -z)
    ok = (y > 0) & (z > 0)
    # cone membership in degree-1 homogeneous form: x + y*log(y/z) <= 0
    psi = np.where(ok, x + y * np.log(np.where(ok, y / z, 1.0)), np.maximum(x, 0.0))
    v = np.maximum(v, np.where(ok, psi, np.maximum(v, psi)))
    return float(np.max(np.maximum(v, 0.0))) if len(v) else 0.0


def exp_dual_violation(z3):
    """Violation of membership in the dual exponential cone.

    K* = closure of {(u, v, w): u < 0, -u*exp(v/u) <= e*w}; in homogeneous
    form u*(1 + log(w/(-u))) - v <= 0 for u < 0, w > 0.
    """
    u, v, w = z3[:, 0], z3[:, 1], z3[:, 2]
    viol = np.maximum(0.0, u)  # u must be <= 0
    viol = np.maximum(viol, -w)
    ok = (u < 0) & (w > 0)
    psi = np.where(ok, u * (1.0 + np.log(np.where(ok, w / (-u), 1.0))) - v, 0.0)
    bad_v = np.where((u >= 0), np.maximum(0.0, -v), 0.0)
    return float(np.max(np.maximum(np.maximum(viol, psi), bad_v))) if len(u) else 0.0


def soc_dual_violation(z):
    # self-dual
    return soc_violation(z)


def nonneg_dual_violation(z):
    return max(0.0, -float(np.min(z))) if len(z) else 0.0
