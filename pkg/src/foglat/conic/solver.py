"""Feasible-start path-following barrier solver for conic programs.

The method is a damped-Newton log-barrier scheme over the cone blocks:
for increasing t, minimize t*c'x + Phi(x) subject to the equality rows,
where Phi sums the blocks' self-concordant barriers. Dual variables are
recovered from the barrier gradients (z = -grad phi(s)/t), which makes
the complementarity gap exactly nu/t; termination is decided on
independently measured KKT residuals, not on internal step counts.

A strictly feasible start is taken from the caller's hint when it passes
a margin check, otherwise a phase-1 problem (minimize a common cone
shift) is solved with the same machinery.
"""

from __future__ import annotations

import warnings
from dataclasses import dataclass

import numpy as np
import scipy.linalg
import scipy.sparse as sp

from . import cones
from .program import (Block, ConicProgram, ConicSolution, NormalizedProgram,
                      kkt_residual, normalize)

__all__ = ["solve"]

_MARGIN_MIN = 1e-11        # strict-interior acceptance for start hints
_UNBOUNDED_OBJ = -1e12


@dataclass
class _SocData:
    cols: np.ndarray
    G: np.ndarray          # dense local map, m x nloc
    h: np.ndarray
    GtJG: np.ndarray       # G' * diag(1,-1,...,-1) * G, constant per solve

    def slack(self, x):
        return self.G @ x[self.cols] + self.h


@dataclass
class _ExpCone:
    cols: np.ndarray
    G: np.ndarray          # 3 x nloc
    h: np.ndarray

    def slack(self, x):
        return self.G @ x[self.cols] + self.h


class _Work:
    """Preprocessed normalized program, ready for fast Newton iterations."""

    def __init__(self, norm: NormalizedProgram):
        self.n = norm.n
        self.c = norm.c
        self.nu = 0.0
        # equality rows, stacked dense
        eq_A, eq_b = [], []
        # nonneg: single-entry rows vectorized, general rows local-dense
        self.nn_single_col = []
        self.nn_single_val = []
        self.nn_single_b = []
        self.nn_gen = []       # list of (cols, vals, b)
        self.socs: list[_SocData] = []
        self.exps: list[_ExpCone] = []
        self.block_meta = []   # (kind, info) in original block order
        for blk in norm.blocks:
            A = blk.A.tocsr()
            if blk.kind == cones.EQ:
                eq_A.append(A.toarray())
                eq_b.append(blk.b)
                self.block_meta.append((cones.EQ, None))
            elif blk.kind == cones.NONNEG:
                self.nu += blk.rows
                rows_meta = []
                for i in range(blk.rows):
                    lo, hi = A.indptr[i], A.indptr[i + 1]
                    cols = A.indices[lo:hi]
                    vals = A.data[lo:hi]
                    if len(cols) == 1:
                        rows_meta.append(("s", len(self.nn_single_col)))
                        self.nn_single_col.append(cols[0])
                        self.nn_single_val.append(vals[0])
                        self.nn_single_b.append(blk.b[i])
                    else:
                        rows_meta.append(("g", len(self.nn_gen)))
                        self.nn_gen.append((cols.copy(), vals.copy(), blk.b[i]))
                self.block_meta.append((cones.NONNEG, rows_meta))
            elif blk.kind == cones.SOC:
                self.nu += 2.0
                cols = np.unique(A.indices) if A.nnz else np.zeros(0, dtype=int)
                G = A[:, cols].toarray() if len(cols) else np.zeros((blk.rows, 0))
                GtJG = np.outer(G[0], G[0]) - G[1:].T @ G[1:]
                soc = _SocData(cols=cols, G=G, h=blk.b.copy(), GtJG=GtJG)
                self.block_meta.append((cones.SOC, len(self.socs)))
                self.socs.append(soc)
            else:  # EXP
                ncones = blk.rows // 3
                self.nu += 3.0 * ncones
                first = len(self.exps)
                for j in range(ncones):
                    sub = A[3 * j:3 * j + 3]
                    cols = np.unique(sub.indices) if sub.nnz else np.zeros(0, dtype=int)
                    G = sub[:, cols].toarray() if len(cols) else np.zeros((3, 0))
                    self.exps.append(_ExpCone(cols=cols, G=G, h=blk.b[3 * j:3 * j + 3].copy()))
                self.block_meta.append((cones.EXP, (first, ncones)))
        self.nn_single_col = np.asarray(self.nn_single_col, dtype=int)
        self.nn_single_val = np.asarray(self.nn_single_val)
        self.nn_single_b = np.asarray(self.nn_single_b)
        if eq_A:
            self.A_eq = np.vstack(eq_A)
            self.b_eq = np.concatenate(eq_b)
        else:
            self.A_eq = np.zeros((0, self.n))
            self.b_eq = np.zeros(0)

    # ---- slack evaluation -------------------------------------------------

    def slacks(self, x):
        s_single = (self.nn_single_val * x[self.nn_single_col] + self.nn_single_b
                    if len(self.nn_single_col) else np.zeros(0))
        s_gen = np.array([v @ x[c] + b for c, v, b in self.nn_gen]) \
            if self.nn_gen else np.zeros(0)
        s_soc = [blk.slack(x) for blk in self.socs]
        s_exp = (np.stack([e.slack(x) for e in self.exps])
                 if self.exps else np.zeros((0, 3)))
        return s_single, s_gen, s_soc, s_exp

    def min_margin(self, x):
        """Worst strict-interior margin across all cone blocks."""
        s_single, s_gen, s_soc, s_exp = self.slacks(x)
        m = np.inf
        if len(s_single):
            m = min(m, float(np.min(s_single)))
        if len(s_gen):
            m = min(m, float(np.min(s_gen)))
        for s in s_soc:
            if s[0] <= 0:
                return -np.inf
            m = min(m, cones.soc_residual(s))
        if len(s_exp):
            m = min(m, float(np.min(cones.exp_margins(s_exp))))
        return m

    def barrier_value(self, x):
        s_single, s_gen, s_soc, s_exp = self.slacks(x)
        if ((len(s_single) and np.min(s_single) <= 0)
                or (len(s_gen) and np.min(s_gen) <= 0)):
            return np.inf
        val = 0.0
        if len(s_single):
            val -= float(np.sum(np.log(s_single)))
        if len(s_gen):
            val -= float(np.sum(np.log(s_gen)))
        for s in s_soc:
            if s[0] <= 0 or cones.soc_residual(s) <= 0:
                return np.inf
            val += cones.soc_value(s)
        if len(s_exp):
            if np.min(cones.exp_margins(s_exp)) <= 0:
                return np.inf
            val += cones.exp_value(s_exp)
        return val

    # ---- Newton ingredients ----------------------------------------------

    def grad_hess(self, x):
        n = self.n
        g = np.zeros(n)
        H = np.zeros((n, n))
        s_single, s_gen, s_soc, s_exp = self.slacks(x)
        if len(s_single):
            np.add.at(g, self.nn_single_col, -self.nn_single_val / s_single)
            np.add.at(H, (self.nn_single_col, self.nn_single_col),
                      (self.nn_single_val / s_single) ** 2)
        for (cols, vals, _), si in zip(self.nn_gen, s_gen):
            g[cols] -= vals / si
            H[np.ix_(cols, cols)] += np.outer(vals, vals) / si ** 2
        for blk, s in zip(self.socs, s_soc):
            d = cones.soc_residual(s)
            nd = s.copy()
            nd[1:] = -nd[1:]
            v = blk.G.T @ nd
            g[blk.cols] += (-2.0 / d) * v
            H[np.ix_(blk.cols, blk.cols)] += \
                (4.0 / d ** 2) * np.outer(v, v) - (2.0 / d) * blk.GtJG
        if len(s_exp):
            ge = cones.exp_grad(s_exp)
            He = cones.exp_hess(s_exp)
            for cone, gi, Hi in zip(self.exps, ge, He):
                g[cone.cols] += cone.G.T @ gi
                H[np.ix_(cone.cols, cone.cols)] += cone.G.T @ Hi @ cone.G
        return g, H

    def step_to_boundary(self, x, dx):
        alpha = np.inf
        if len(self.nn_single_col):
            s = self.nn_single_val * x[self.nn_single_col] + self.nn_single_b
            ds = self.nn_single_val * dx[self.nn_single_col]
            alpha = min(alpha, cones.nonneg_step(s, ds))
        for cols, vals, b in self.nn_gen:
            si = vals @ x[cols] + b
            di = vals @ dx[cols]
            if di < 0:
                alpha = min(alpha, -si / di)
        for blk in self.socs:
            alpha = min(alpha, cones.soc_step(blk.slack(x), blk.G @ dx[blk.cols]))
        if self.exps:
            s3 = np.stack([e.slack(x) for e in self.exps])
            d3 = np.stack([e.G @ dx[e.cols] for e in self.exps])
            alpha = min(alpha, cones.exp_step(s3, d3))
        return alpha

    def duals(self, x, t):
        """Barrier duals per block, in original block order."""
        s_single, s_gen, s_soc, s_exp = self.slacks(x)
        out = []
        for kind, info in self.block_meta:
            if kind == cones.EQ:
                out.append(None)  # filled later by least squares
            elif kind == cones.NONNEG:
                z = np.empty(len(info))
                for i, (tag, j) in enumerate(info):
                    si = s_single[j] if tag == "s" else s_gen[j]
                    z[i] = 1.0 / (t * si)
                out.append(z)
            elif kind == cones.SOC:
                s = s_soc[info]
                out.append(-cones.soc_grad(s) / t)
            else:
                first, ncones = info
                zc = -cones.exp_grad(s_exp[first:first + ncones]) / t
                out.append(zc.reshape(-1))
        return out


def _project_onto_eq(work: _Work, x):
    if work.A_eq.shape[0] == 0:
        return x
    r = work.A_eq @ x + work.b_eq
    if np.max(np.abs(r)) < 1e-14:
        return x
    corr, *_ = np.linalg.lstsq(work.A_eq, -r, rcond=None)
    return x + corr


def _newton_loop(work: _Work, x, t, obj_vec, steps_left, lam_tol, trace, stage):
    """Damped Newton on t*obj + Phi over the equality rows. Returns
    (x, steps_used, converged)."""
    m_eq = work.A_eq.shape[0]
    used = 0
    while used < steps_left:
        g_bar, H = work.grad_hess(x)
        g = t * obj_vec + g_bar
        reg = 1e-12 * max(1.0, float(np.max(np.diag(H))))
        H[np.diag_indices_from(H)] += reg
        with warnings.catch_warnings():
            warnings.simplefilter("ignore", scipy.linalg.LinAlgWarning)
            if m_eq:
                K = np.zeros((work.n + m_eq, work.n + m_eq))
                K[:work.n, :work.n] = H
                K[:work.n, work.n:] = work.A_eq.T
                K[work.n:, :work.n] = work.A_eq
                rhs = np.concatenate([-g, -(work.A_eq @ x + work.b_eq)])
            else:
                K = H
                rhs = -g
            try:
                lu = scipy.linalg.lu_factor(K)
            except np.linalg.LinAlgError:
                K[np.diag_indices_from(K)] += 1e-10 * max(1.0, float(np.max(np.abs(K))))
                lu = scipy.linalg.lu_factor(K)
            sol = scipy.linalg.lu_solve(lu, rhs)
            # barrier Hessians near convergence are brutally ill-conditioned;
            # a couple of refinement rounds recover the lost digits
            for _ in range(2):
                resid = rhs - K @ sol
                sol = sol + scipy.linalg.lu_solve(lu, resid)
            dx = sol[:work.n]
        lam2 = float(dx @ H @ dx)
        used += 1

        alpha_max = work.step_to_boundary(x, dx)
        alpha = min(1.0, 0.99 * alpha_max)
        merit0 = t * float(obj_vec @ x) + work.barrier_value(x)
        slope = float(g @ dx)
        accepted = False
        for _ in range(60):
            if alpha <= 0:
                break
            x_try = x + alpha * dx
            merit1 = t * float(obj_vec @ x_try) + work.barrier_value(x_try)
            if merit1 <= merit0 + 1e-4 * alpha * slope + 1e-12 * abs(merit0):
                accepted = True
                break
            alpha *= 0.5
        if not accepted:
            return x, used, True  # numerical floor reached; treat as centered
        x = x_try
        if trace is not None:
            trace.append((stage, t, used, merit1))
        if lam2 / 2.0 <= lam_tol:
            return x, used, True
    return x, used, False


def _phase1(work: _Work, norm: NormalizedProgram, x0, max_newton):
    """Find a strictly feasible point by minimizing a common cone shift."""
    n = work.n
    # shift directions per block, appended as an extra column
    blocks = []
    for blk in norm.blocks:
        A = blk.A
        if blk.kind == cones.EQ:
            col = sp.csr_matrix((blk.rows, 1))
        elif blk.kind == cones.NONNEG:
            col = sp.csr_matrix(np.ones((blk.rows, 1)))
        elif blk.kind == cones.SOC:
            e = np.zeros((blk.rows, 1))
            e[0, 0] = 1.0
            col = sp.csr_matrix(e)
        else:
            d = np.tile([-1.0, 1.0, 1.0], blk.rows // 3)[:, None]
            col = sp.csr_matrix(d)
        blocks.append(Block(kind=blk.kind, A=sp.hstack([A, col]).tocsr(), b=blk.b))
    # box every variable: the pure shift objective is otherwise unbounded
    # along cone recession directions (and so is the barrier)
    r_box = 1e4 * (1.0 + float(np.max(np.abs(x0))) if len(x0) else 1.0)
    eye = sp.eye(n, format="csr")
    zero_col = sp.csr_matrix((n, 1))
    box_A = sp.vstack([sp.hstack([eye, zero_col]), sp.hstack([-eye, zero_col])]).tocsr()
    blocks.append(Block(kind=cones.NONNEG, A=box_A, b=np.full(2 * n, r_box)))
    # keep curvature on the shift variable and bound it below
    lb = sp.csr_matrix(([1.0], ([0], [n])), shape=(1, n + 1))
    blocks.append(Block(kind=cones.NONNEG, A=lb, b=np.array([10.0])))
    aug = NormalizedProgram(n=n + 1, c=np.zeros(n + 1), obj_scale=1.0,
                            blocks=blocks, row_scales=[], var_scales=np.ones(n + 1))
    w1 = _Work(aug)
    # initial shift: double until strictly interior
    shift = 1.0
    for _ in range(80):
        x_aug = np.concatenate([x0, [shift]])
        if w1.min_margin(x_aug) > 1e-9:
            break
        shift *= 2.0
    else:
        return None, 0
    obj = np.zeros(n + 1)
    obj[n] = 1.0
    t, used = 1.0, 0
    x_aug = np.concatenate([x0, [shift]])
    target = -1e-6 * (1.0 + shift)
    while used < max_newton:
        # small chunks so the exit check runs often; no need to center fully
        x_aug, k, centered = _newton_loop(w1, x_aug, t, obj,
                                          min(3, max_newton - used),
                                          1e-4, None, stage=-1)
        used += k
        if x_aug[n] < target and work.min_margin(x_aug[:n]) > 0:
            return x_aug[:n], used
        if centered:
            if w1.nu / t < 1e-9 and x_aug[n] > -1e-12:
                return None, used  # converged without reaching the interior
            t *= 10.0
    if x_aug[n] < 0 and work.min_margin(x_aug[:n]) > 0:
        return x_aug[:n], used
    return None, used


def _residuals(norm: NormalizedProgram, work: _Work, x, duals):
    """(primal, dual, gap) residuals in the normalized space."""
    grad = norm.c.copy()
    gap = 0.0
    dual_obj = 0.0
    primal = 0.0
    i_eq = 0
    for blk, z in zip(norm.blocks, duals):
        s = blk.A @ x + blk.b
        if blk.kind == cones.EQ:
            primal = max(primal, float(np.max(np.abs(s))) if len(s) else 0.0)
            grad += blk.A.T @ z
            dual_obj -= float(blk.b @ z)
            i_eq += 1
        else:
            grad -= blk.A.T @ z
            gap += float(s @ z)
            dual_obj -= float(blk.b @ z)
    pobj = float(norm.c @ x)
    dual = float(np.max(np.abs(grad))) / (1.0 + float(np.max(np.abs(norm.c))))
    gap_n = abs(gap) / (1.0 + abs(pobj) + abs(dual_obj))
    return primal, dual, gap_n


def _eq_duals(norm: NormalizedProgram, work: _Work, duals, t):
    """Fill equality duals by least squares on the stationarity condition."""
    if work.A_eq.shape[0] == 0:
        return duals
    resid = norm.c.copy()
    for blk, z in zip(norm.blocks, duals):
        if blk.kind != cones.EQ and z is not None:
            resid -= blk.A.T @ z
    y_all, *_ = np.linalg.lstsq(work.A_eq.T, -resid, rcond=None)
    out = []
    ofs = 0
    for blk, z in zip(norm.blocks, duals):
        if blk.kind == cones.EQ:
            out.append(y_all[ofs:ofs + blk.rows])
            ofs += blk.rows
        else:
            out.append(z)
    return out


def _exp_dual_step(z3, dz3):
    """Step to the boundary of the dual exponential cone (bisection)."""
    alpha = np.inf
    for z, dz in zip(z3, dz3):
        if dz[0] > 0:  # u must stay < 0
            alpha = min(alpha, -z[0] / dz[0])
        if dz[2] < 0:  # w must stay > 0
            alpha = min(alpha, -z[2] / dz[2])
        hi = min(1e12, 0.999 * alpha if np.isfinite(alpha) else 1e12)
        if hi <= 0:
            continue

        def margin(t, z=z, dz=dz):
            u, v, w = z + t * dz
            if u >= 0 or w <= 0:
                return -1.0
            return v - u * (1.0 + np.log(w / (-u)))

        if margin(hi) > 0:
            continue
        lo = 0.0
        for _ in range(80):
            mid = 0.5 * (lo + hi)
            if margin(mid) > 0:
                lo = mid
            else:
                hi = mid
        alpha = min(alpha, lo)
    return float(alpha)


class _DualState:
    """Independent dual iterates for the primal-dual corrector."""

    def __init__(self, work: _Work, x, t):
        self.z = [zi for zi in work.duals(x, t) if True]
        self.y = np.zeros(work.A_eq.shape[0])

    def cone_items(self, work):
        j = 0
        for kind, info in work.block_meta:
            if kind != cones.EQ:
                yield j, kind, info
            j += 1


def _pack_duals(work: _Work, norm: NormalizedProgram, z, y):
    duals = list(z)
    ofs = 0
    for bi, (kind, _) in enumerate(work.block_meta):
        if kind == cones.EQ:
            m = norm.blocks[bi].rows
            duals[bi] = y[ofs:ofs + m]
            ofs += m
    return duals


def _pd_loop(work: _Work, norm: NormalizedProgram, x, t_init, tol,
             steps_left: int):
    """Mehrotra-style predictor-corrector over the mixed cone blocks.

    Nonnegative rows and second-order cones use the XZ linearization of
    s o z = sigma mu e with a second-order correction; exponential cones
    use the barrier centrality z = -sigma mu grad phi(s). All iterates
    share one step length, bounded away from the cone boundaries and
    from degenerate Jordan eigenvalues of s o z. Returns
    (x, duals, steps_used, status, mu_final).
    """
    m_eq = work.A_eq.shape[0]
    z = work.duals(x, t_init)
    z = _eq_duals(norm, work, z, t_init)
    y = np.concatenate([zi for zi, (kind, _) in zip(z, work.block_meta)
                        if kind == cones.EQ]) if m_eq else np.zeros(0)
    duals = _pack_duals(work, norm, z, y)
    used = 0
    nu = max(work.nu, 1.0)
    mu_final = 1.0 / t_init
    tiny_steps = 0
    cone_ids = [bi for bi, (kind, _) in enumerate(work.block_meta)
                if kind != cones.EQ]

    def block_slack(bi, slacks):
        s_single, s_gen, s_soc, s_exp = slacks
        kind, info = work.block_meta[bi]
        if kind == cones.NONNEG:
            sv = np.empty(norm.blocks[bi].rows)
            for i, (tag, j) in enumerate(info):
                sv[i] = s_single[j] if tag == "s" else s_gen[j]
            return sv
        if kind == cones.SOC:
            return s_soc[info]
        first, ncones = info
        return s_exp[first:first + ncones].ravel()

    def unit_products(s_blk, zs):
        """Per-unit complementarity products (block level for cones)."""
        vals = []
        tot = 0.0
        for bi in cone_ids:
            kind, _ = work.block_meta[bi]
            sv, zv = s_blk[bi], zs[bi]
            if kind == cones.NONNEG:
                p = sv * zv
                vals.extend(p.tolist())
                tot += float(np.sum(p))
            elif kind == cones.SOC:
                p = float(sv @ zv)
                vals.append(p / 2.0)
                tot += p
            else:
                p3 = np.sum(sv.reshape(-1, 3) * zv.reshape(-1, 3), axis=1)
                vals.extend((p3 / 3.0).tolist())
                tot += float(np.sum(p3))
        return np.asarray(vals), tot

    while used < steps_left:
        primal, dual, gap = _residuals(norm, work, x, duals)
        dual_cone = _dual_violation_of(norm, duals)
        if primal <= tol and dual <= tol and gap <= tol and dual_cone <= tol:
            return x, duals, used, "optimal", mu_final
        if abs(float(norm.c @ x)) > -_UNBOUNDED_OBJ:
            return x, duals, used, "unbounded", mu_final

        slacks = work.slacks(x)
        s_blk = {bi: block_slack(bi, slacks) for bi in cone_ids}
        _, gap_abs = unit_products(s_blk, z)
        mu_now = max(gap_abs, 1e-300) / nu
        mu_final = mu_now

        # factorize the condensed system once per iteration
        H = np.zeros((work.n, work.n))
        r_dual = norm.c.copy()
        if m_eq:
            r_dual += work.A_eq.T @ y
        elim = {}
        for bi in cone_ids:
            kind, info = work.block_meta[bi]
            sv, zv = s_blk[bi], z[bi]
            r_dual -= norm.blocks[bi].A.T @ zv
            if kind == cones.NONNEG:
                w = zv / np.maximum(sv, 1e-280)
                for i, (tag, j) in enumerate(info):
                    if tag == "s":
                        col = work.nn_single_col[j]
                        val = work.nn_single_val[j]
                        H[col, col] += w[i] * val * val
                    else:
                        colsg, valsg, _ = work.nn_gen[j]
                        H[np.ix_(colsg, colsg)] += w[i] * np.outer(valsg, valsg)
                elim[bi] = ("nn", w)
            elif kind == cones.SOC:
                blkd = work.socs[info]
                G, cols = blkd.G, blkd.cols
                m = len(sv)
                d = max(cones.soc_residual(sv), 1e-280)
                s0 = max(sv[0], 1e-280)
                arw_inv = np.empty((m, m))
                arw_inv[0, 0] = sv[0]
                arw_inv[0, 1:] = -sv[1:]
                arw_inv[1:, 0] = -sv[1:]
                arw_inv[1:, 1:] = (d * np.eye(m - 1)
                                   + np.outer(sv[1:], sv[1:])) / s0
                arw_inv /= d
                arw_z = np.empty((m, m))
                arw_z[0] = zv
                arw_z[1:, 0] = zv[1:]
                arw_z[1:, 1:] = zv[0] * np.eye(m - 1)
                W = arw_inv @ arw_z
                H[np.ix_(cols, cols)] += G.T @ W @ G
                elim[bi] = ("soc", arw_inv, arw_z, G, cols)
            else:
                first, ncones = info
                s3 = sv.reshape(-1, 3)
                He = cones.exp_hess(s3)
                elim[bi] = ("exp", He, first, ncones)

        r_p = (work.A_eq @ x + work.b_eq) if m_eq else np.zeros(0)

        def factorize(mu_weight_exp):
            Hs = H.copy()
            for bi in cone_ids:
                rec = elim[bi]
                if rec[0] == "exp":
                    _, He, first, ncones = rec
                    for j in range(ncones):
                        cone = work.exps[first + j]
                        Wc = mu_weight_exp * He[j]
                        Hs[np.ix_(cone.cols, cone.cols)] += \
                            cone.G.T @ Wc @ cone.G
            reg = 1e-13 * max(1.0, float(np.max(np.diag(Hs))))
            Hs[np.diag_indices_from(Hs)] += reg
            if m_eq:
                K = np.zeros((work.n + m_eq, work.n + m_eq))
                K[:work.n, :work.n] = Hs
                K[:work.n, work.n:] = work.A_eq.T
                K[work.n:, :work.n] = work.A_eq
            else:
                K = Hs
            with warnings.catch_warnings():
                warnings.simplefilter("ignore", scipy.linalg.LinAlgWarning)
                try:
                    lu = scipy.linalg.lu_factor(K)
                except np.linalg.LinAlgError:
                    K[np.diag_indices_from(K)] += 1e-12
                    lu = scipy.linalg.lu_factor(K)
            return K, lu

        def solve_direction(K, lu, v_blocks, f3_exp):
            rhs_x = -r_dual.copy()
            for bi in cone_ids:
                rec = elim[bi]
                A = norm.blocks[bi].A
                if rec[0] == "nn":
                    rhs_x += A.T @ (v_blocks[bi] / np.maximum(s_blk[bi], 1e-280))
                elif rec[0] == "soc":
                    rhs_x += A.T @ (rec[1] @ v_blocks[bi])
                else:
                    rhs_x -= A.T @ f3_exp[bi]
            if m_eq:
                rhs = np.concatenate([rhs_x, -r_p])
            else:
                rhs = rhs_x
            sol = scipy.linalg.lu_solve(lu, rhs)
            K_l = K.astype(np.longdouble)
            rhs_l = rhs.astype(np.longdouble)
            for _ in range(3):
                resid = (rhs_l - K_l @ sol.astype(np.longdouble)
                         ).astype(np.float64)
                sol = sol + scipy.linalg.lu_solve(lu, resid)
            dx = sol[:work.n]
            dy = sol[work.n:] if m_eq else np.zeros(0)
            dz = {}
            ds_all = {}
            for bi in cone_ids:
                rec = elim[bi]
                ds = norm.blocks[bi].A @ dx
                ds_all[bi] = ds
                if rec[0] == "nn":
                    dz[bi] = (v_blocks[bi] - z[bi] * ds) / \
                        np.maximum(s_blk[bi], 1e-280)
                elif rec[0] == "soc":
                    _, arw_inv, arw_z, G, cols = rec
                    dz[bi] = arw_inv @ (v_blocks[bi] - arw_z @ ds)
                else:
                    _, He, first, ncones = rec
                    mu_w = f3_exp["mu_w"]
                    dz[bi] = (-f3_exp[bi].reshape(-1, 3)
                              - mu_w * np.einsum("bij,bj->bi", He,
                                                 ds.reshape(-1, 3))).ravel()
            return dx, dy, dz, ds_all

        def boundary_alpha(dz, ds_all):
            a = 1.0
            for bi in cone_ids:
                kind, _ = work.block_meta[bi]
                sv, zv = s_blk[bi], z[bi]
                if kind == cones.NONNEG:
                    a = min(a, cones.nonneg_step(sv, ds_all[bi]),
                            cones.nonneg_step(zv, dz[bi]))
                elif kind == cones.SOC:
                    a = min(a, cones.soc_step(sv, ds_all[bi]),
                            cones.soc_step(zv, dz[bi]))
                else:
                    a = min(a, cones.exp_step(sv.reshape(-1, 3),
                                              ds_all[bi].reshape(-1, 3)),
                            _exp_dual_step(zv.reshape(-1, 3),
                                           dz[bi].reshape(-1, 3)))
            return a

        # predictor (affine) direction; the exponential-cone curvature is
        # weighted by the current mu for both directions so one
        # factorization serves predictor and corrector
        v_aff = {}
        f3_aff = {"mu_w": mu_now}
        for bi in cone_ids:
            kind, _ = work.block_meta[bi]
            sv, zv = s_blk[bi], z[bi]
            if kind == cones.NONNEG:
                v_aff[bi] = -sv * zv
            elif kind == cones.SOC:
                v_aff[bi] = -_jordan(sv, zv)
            else:
                f3_aff[bi] = zv.copy()
        K, lu = factorize(mu_now)
        dx_a, dy_a, dz_a, ds_a = solve_direction(K, lu, v_aff, f3_aff)
        a_aff = 0.99 * boundary_alpha(dz_a, ds_a)
        # Mehrotra heuristic for the centering weight
        gap_after = 0.0
        for bi in cone_ids:
            gap_after += float((s_blk[bi] + a_aff * ds_a[bi])
                               @ (z[bi] + a_aff * dz_a[bi]))
        sigma = float(np.clip((max(gap_after, 0.0) / gap_abs) ** 3, 1e-4, 0.9))
        mu_t = sigma * mu_now

        # corrector direction with second-order term
        v_cor = {}
        f3_cor = {"mu_w": mu_now}
        for bi in cone_ids:
            kind, _ = work.block_meta[bi]
            sv, zv = s_blk[bi], z[bi]
            if kind == cones.NONNEG:
                v_cor[bi] = mu_t - sv * zv - ds_a[bi] * dz_a[bi]
            elif kind == cones.SOC:
                e0 = np.zeros(len(sv))
                e0[0] = mu_t
                v_cor[bi] = e0 - _jordan(sv, zv) - _jordan(ds_a[bi], dz_a[bi])
            else:
                s3 = sv.reshape(-1, 3)
                f3_cor[bi] = (zv.reshape(-1, 3)
                              + mu_t * cones.exp_grad(s3)).ravel()
        dx, dy, dz, ds_all = solve_direction(K, lu, v_cor, f3_cor)
        used += 1
        alpha = min(1.0, 0.99 * boundary_alpha(dz, ds_all))
        if alpha < 0.5 * a_aff:
            # the second-order term overshot; use a plain centering step
            sigma = max(sigma, 0.5)
            mu_t = sigma * mu_now
            for bi in cone_ids:
                kind, _ = work.block_meta[bi]
                sv, zv = s_blk[bi], z[bi]
                if kind == cones.NONNEG:
                    v_cor[bi] = mu_t - sv * zv
                elif kind == cones.SOC:
                    e0 = np.zeros(len(sv))
                    e0[0] = mu_t
                    v_cor[bi] = e0 - _jordan(sv, zv)
                else:
                    f3_cor[bi] = (zv.reshape(-1, 3) + mu_t * cones.exp_grad(
                        sv.reshape(-1, 3))).ravel()
            dx, dy, dz, ds_all = solve_direction(K, lu, v_cor, f3_cor)
            used += 1
            alpha = min(1.0, 0.99 * boundary_alpha(dz, ds_all))

        # keep the worst per-unit product above a fraction of the mean
        def min_ratio(a):
            zs = {bi: z[bi] + a * dz[bi] for bi in cone_ids}
            ss = {bi: s_blk[bi] + a * ds_all[bi] for bi in cone_ids}
            vals, tot = unit_products(ss, zs)
            if tot <= 0 or not len(vals):
                return -1.0
            return float(np.min(vals) / (tot / nu))

        best_a, best_r = alpha, min_ratio(alpha)
        a_try = alpha
        for _ in range(10):
            if best_r >= 1e-3:
                break
            a_try *= 0.5
            r = min_ratio(a_try)
            if r > best_r:
                best_a, best_r = a_try, r
        alpha = best_a

        x = x + alpha * dx
        if m_eq:
            y = y + alpha * dy
        for bi in cone_ids:
            z[bi] = z[bi] + alpha * dz[bi]
        duals = _pack_duals(work, norm, z, y)
        tiny_steps = tiny_steps + 1 if alpha < 1e-3 else 0
        if tiny_steps >= 10:
            break
        if gap <= 1e-3 * tol:
            break  # gap exhausted; remaining residuals will not improve
    return x, duals, used, "max_iterations", mu_final


def _jordan(s, z):
    out = np.empty_like(s)
    out[0] = s @ z
    out[1:] = s[0] * z[1:] + z[0] * s[1:]
    return out


def solve(p: ConicProgram, tol: float = 1e-7, max_newton: int = 200,
          init_x: np.ndarray | None = None, t0: float | None = None,
          mu: float = 30.0) -> ConicSolution:
    """Solve a conic program to certified KKT tolerance.

    ``init_x`` is an optional starting hint in original variable units;
    it is used when strictly feasible, otherwise phase 1 runs first.
    Deterministic given inputs.
    """
    if tol <= 0:
        raise ValueError("tol must be positive")
    norm = normalize(p)
    work = _Work(norm)
    trace: list = []

    def finish(x_norm, duals, status, steps, t):
        duals_full = [z if z is not None else np.zeros(0) for z in duals]
        x = norm.unscale_x(x_norm)
        sol = ConicSolution(x=x, duals=duals_full,
                            objective=float(p.c @ x), status=status,
                            kkt=np.inf, newton_steps=steps, t_final=t,
                            trace=trace)
        if status == "optimal":
            sol.kkt = kkt_residual(p, sol)
            if sol.kkt > tol:
                sol.status = "max_iterations"
        return sol

    # starting point
    steps = 0
    x = None
    if init_x is not None:
        cand = _project_onto_eq(work, norm.scale_x(np.asarray(init_x, dtype=float)))
        if work.min_margin(cand) > _MARGIN_MIN:
            x = cand
    if x is None:
        base = _project_onto_eq(work, np.zeros(work.n)) if init_x is None \
            else _project_onto_eq(work, norm.scale_x(np.asarray(init_x, dtype=float)))
        x, used = _phase1(work, norm, base, max_newton=max(60, max_newton // 2))
        steps += used
        if x is None:
            empty = [np.zeros(b.rows) for b in norm.blocks]
            return finish(np.zeros(work.n) if init_x is None else base,
                          empty, "infeasible", steps, 0.0)
        x = _project_onto_eq(work, x)

    nu = max(work.nu, 1.0)
    t = t0 if t0 is not None else max(1.0, nu / (1.0 + abs(float(norm.c @ x))))
    # one short merit-monotone centering stage settles crafted start
    # points before the primal-dual iterations take over
    x, used, _ = _newton_loop(work, x, t, norm.c, min(25, max_newton - steps),
                              3e-3, trace, stage=0)
    steps += used
    x, duals, used, status, mu_final = _pd_loop(work, norm, x, t, tol,
                                                 max_newton - steps)
    steps += used
    return finish(x, duals, status, steps, 1.0 / max(mu_final, 1e-300))


def _dual_violation_of(norm: NormalizedProgram, duals) -> float:
    from .program import _dual_violation
    worst = 0.0
    for blk, z in zip(norm.blocks, duals):
        if blk.kind != cones.EQ and z is not None:
            worst = max(worst, _dual_violation(blk.kind, z))
    return worst
