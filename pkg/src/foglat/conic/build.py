"""Conic encodings of the MM subproblems.

Complex variables are embedded as interleaved real pairs. Every
nonlinear ingredient becomes a standard cone:

* quadratic rate surrogates  R <= f(u, w, V)      -> second-order cone
* ratio constraints          tau * x >= const     -> 3-dim second-order cone
* squared-norm epigraphs     ||z||^2 <= affine    -> second-order cone
* per-antenna log terms      rho <= log q         -> exponential cone

Builders also construct a strictly feasible starting point from the
current solver state, so the barrier method can skip phase 1.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .. import rates
from .program import ConicProgram, ProgramBuilder

LN2 = rates.LN2

_NUDGE = 1e-7          # relative pull-in for boundary-tight hints
_RATE_BACKOFF = 1e-5   # rate hints sit this far below the WMMSE value


# ------------------------------------------------------- real embeddings

def herm_rows(a: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Real coefficient rows of the functional v -> a^H v on interleaved reals."""
    re = np.empty(2 * len(a))
    im = np.empty(2 * len(a))
    re[0::2], re[1::2] = a.real, a.imag
    im[0::2], im[1::2] = -a.imag, a.real
    return re, im


def embed_complex(v: np.ndarray) -> np.ndarray:
    out = np.empty(2 * len(v))
    out[0::2], out[1::2] = v.real, v.imag
    return out


def lift_complex(x: np.ndarray) -> np.ndarray:
    return x[0::2] + 1j * x[1::2]


# ------------------------------------------------------------- helpers

def _hyperbolic(b: ProgramBuilder, ia: int, ib: int, c: float):
    """a * b >= c (c > 0 constant) as ||[2 sqrt(c'); a' - b']|| <= a' + b'.

    Rows are written in the variables' declared units (a' = a/scale_a),
    otherwise the cone margin drowns in floating-point cancellation when
    the two factors differ by many orders of magnitude (seconds times
    bits/second at SI scale).
    """
    sa, sb = b.var_scale(ia), b.var_scale(ib)
    cn = c / (sa * sb)
    block = b.start_block("soc")
    block.add([ia, ib], [1.0 / sa, 1.0 / sb])
    block.add_const(2.0 * np.sqrt(cn))
    block.add([ia, ib], [1.0 / sa, -1.0 / sb])


def _power_block(b: ProgramBuilder, v_idx: np.ndarray, P: float):
    """||v||^2 <= P, written as ||v/sqrt(P)||^2 <= 1."""
    blk = b.start_block("soc")
    blk.add_const(1.0)
    root = np.sqrt(P)
    for i in v_idx:
        blk.add([i], [1.0 / root])
    blk.add_const(0.0)


def _wmmse_rows(b, s, v_slices, k: int, l_or_stack, u, w: float,
                a_extra_idx, a_extra_val, a_extra_const: float, r_idx: int):
    """R <= f(u, w, V) as a second-order cone.

    With (u, w) fixed the constraint reads quad(V) <= a(R, ...), where
    quad stacks the desired-signal mismatch and all cross terms, and
    a = (log w + 1)/w - (LN2/(W w)) R - sigma-term - extra linear terms.
    """
    W = s.W
    if l_or_stack is None:
        chans = [rates.stacked_channel(s, j) for j in range(s.K)]
    else:
        chans = [s.H[j][l_or_stack] for j in range(s.K)]
    a0 = (np.log(w) + 1.0) / w + a_extra_const
    aR = -LN2 / (W * w)
    idx = np.concatenate([[r_idx], a_extra_idx]).astype(int)
    val = np.concatenate([[aR], a_extra_val])
    blk = b.start_block("soc")
    blk.add(idx, val / 2.0, (a0 + 1.0) / 2.0)
    for j in range(s.K):
        a_j = chans[j] @ u
        re, im = herm_rows(a_j)
        if j == k:
            blk.add(v_slices[j], -re, 1.0)
            blk.add(v_slices[j], -im, 0.0)
        else:
            blk.add(v_slices[j], re)
            blk.add(v_slices[j], im)
    blk.add(idx, val / 2.0, (a0 - 1.0) / 2.0)


# ------------------------------------------------- non-cooperative build

@dataclass
class NoncoopLayout:
    v: list[np.ndarray]
    theta: np.ndarray
    tauT: np.ndarray
    tauF: np.ndarray
    tauC: np.ndarray
    t1: np.ndarray
    t2: np.ndarray
    R: np.ndarray
    fF: np.ndarray
    fC: np.ndarray
    Cfh: np.ndarray
    gamma: int
    n: int = 0


def _combined_tau_coeffs(lay, k: int, tau_bar_k: np.ndarray, L: int,
                         unit: float):
    """Index/value pairs for tau_bar' tau_k with tau_k expanded in components
    and both sides measured in multiples of ``unit``."""
    idx, val = [], []
    u2 = unit * unit
    for l in range(L):
        idx += [lay.tauT[k, l], lay.tauF[k, l], lay.tauC[k, l]]
        val += [(tau_bar_k[l] + tau_bar_k[L + l]) / u2,
                tau_bar_k[l] / u2, tau_bar_k[L + l] / u2]
    return np.array(idx), np.array(val)


def build_noncoop_subproblem(state, aux, s, theta_bar: np.ndarray,
                             tau_bar: np.ndarray) -> tuple[ConicProgram, NoncoopLayout]:
    """Conic program of one inner BCD round with (u, w) fixed from ``aux``.

    ``theta_bar``/``tau_bar`` anchor the quadratic majorant of the
    min-max objective.
    """
    K, L = s.K, s.L
    tau_scale = max(float(np.max(tau_bar)), 1e-9)
    b = ProgramBuilder()
    lay = NoncoopLayout(
        v=[b.add_vars(f"v[{k}]", 2 * s.N[k], scale=np.sqrt(s.P[k])) for k in range(K)],
        theta=np.stack([b.add_vars(f"theta[{k}]", 2 * L) for k in range(K)]),
        tauT=np.stack([b.add_vars(f"tauT[{k}]", L, scale=tau_scale) for k in range(K)]),
        tauF=np.stack([b.add_vars(f"tauF[{k}]", L, scale=tau_scale) for k in range(K)]),
        tauC=np.stack([b.add_vars(f"tauC[{k}]", L, scale=tau_scale) for k in range(K)]),
        t1=np.stack([b.add_vars(f"t1[{k}]", L, scale=tau_scale) for k in range(K)]),
        t2=b.add_vars("t2", K, scale=tau_scale),
        R=np.stack([b.add_vars(f"R[{k}]", L, scale=s.W) for k in range(K)]),
        fF=np.stack([b.add_vars(f"fF[{k}]", L, scale=float(np.mean(s.F_fog)))
                     for k in range(K)]),
        fC=b.add_vars("fC", K, scale=s.F_cloud),
        Cfh=np.stack([b.add_vars(f"C[{k}]", L, scale=float(np.mean(s.C_fronthaul)))
                      for k in range(K)]),
        gamma=b.add_var("gamma"),
    )
    lay.n = b.n
    b.set_objective(lay.gamma, 1.0)

    eq = b.start_block("eq")
    for k in range(K):
        eq.add(lay.theta[k], np.ones(2 * L), -1.0)

    nn = b.start_block("nonneg")
    for k in range(K):
        for j in range(2 * L):
            nn.add([lay.theta[k, j]], [1.0])
    for l in range(L):
        nn.add(lay.fF[:, l], -np.ones(K), s.F_fog[l])
        nn.add(lay.Cfh[:, l], -np.ones(K), s.C_fronthaul[l])
    nn.add(lay.fC, -np.ones(K), s.F_cloud)
    for k in range(K):
        for l in range(L):
            nn.add([lay.tauC[k, l], lay.t1[k, l], lay.t2[k]], [1.0, -1.0, -1.0])

    for k in range(K):
        _power_block(b, lay.v[k], s.P[k])

    for k in range(K):
        for l in range(L):
            sig_term = -s.sigma2[l] * float(np.real(aux.u_fog[k][l].conj()
                                                    @ aux.u_fog[k][l]))
            _wmmse_rows(b, s, lay.v, k, l, aux.u_fog[k][l], aux.w_fog[k, l],
                        np.empty(0, dtype=int), np.empty(0), sig_term,
                        lay.R[k, l])

    for k in range(K):
        B, D = s.tasks[k].bits, s.tasks[k].flops
        for l in range(L):
            _hyperbolic(b, lay.tauT[k, l], lay.R[k, l], B)
            _hyperbolic(b, lay.tauF[k, l], lay.fF[k, l], D)
            _hyperbolic(b, lay.t1[k, l], lay.Cfh[k, l], B)
        _hyperbolic(b, lay.t2[k], lay.fC[k], D)

    # the majorant is applied to the latency-rescaled objective
    # max_k theta' (tau/unit): same minimizers, and it keeps theta and tau
    # comparable so the proximal quadratic does not freeze the weights
    u3 = 1.0 / tau_scale
    for k in range(K):
        tb = tau_bar[k] * u3
        cbar = 0.5 * (theta_bar[k] @ theta_bar[k] + tb @ tb)
        t_idx, t_val = _combined_tau_coeffs(lay, k, tau_bar[k], L, tau_scale)
        b_idx = np.concatenate([[lay.gamma], lay.theta[k], t_idx]).astype(int)
        b_val = np.concatenate([[1.0], theta_bar[k], t_val])
        # 0.5 ||theta_k + tau_k/unit||^2 <= b_k <=> ||[z; b - 1/2]|| <= b + 1/2
        blk = b.start_block("soc")
        blk.add(b_idx, b_val, -cbar + 0.5)
        for l in range(L):
            blk.add([lay.theta[k, l], lay.tauT[k, l], lay.tauF[k, l]],
                    [1.0, u3, u3])
        for l in range(L):
            blk.add([lay.theta[k, L + l], lay.tauT[k, l], lay.tauC[k, l]],
                    [1.0, u3, u3])
        blk.add(b_idx, b_val, -cbar - 0.5)

    return b.build(), lay


def noncoop_start_point(lay: NoncoopLayout, state, aux, s) -> np.ndarray:
    """Strictly feasible start for the subproblem, pulled in from ``state``."""
    K, L = s.K, s.L
    x = np.zeros(lay.n)
    V0 = [v * (1.0 - _NUDGE) for v in state.V]
    for k in range(K):
        x[lay.v[k]] = embed_complex(V0[k])
        x[lay.theta[k]] = ((1.0 - _NUDGE) * state.theta[k]
                           + _NUDGE / (2 * L))
    for k in range(K):
        B, D = s.tasks[k].bits, s.tasks[k].flops
        for l in range(L):
            e = rates.mse_fog(aux.u_fog[k][l], V0, s, k, l)
            f = s.W / LN2 * (-aux.w_fog[k, l] * e + np.log(aux.w_fog[k, l]) + 1.0)
            x[lay.R[k, l]] = min(state.R[k, l], (1.0 - _RATE_BACKOFF) * f)
            x[lay.fF[k, l]] = state.fF[k, l]
            x[lay.Cfh[k, l]] = state.Cfh[k, l]
        x[lay.fC[k]] = state.fC[k]
    # pull shared capacities strictly inside
    for l in range(L):
        tot = float(np.sum(x[lay.fF[:, l]]))
        if tot >= s.F_fog[l] * (1.0 - _NUDGE):
            x[lay.fF[:, l]] *= s.F_fog[l] * (1.0 - 2 * _NUDGE) / tot
        tot = float(np.sum(x[lay.Cfh[:, l]]))
        if tot >= s.C_fronthaul[l] * (1.0 - _NUDGE):
            x[lay.Cfh[:, l]] *= s.C_fronthaul[l] * (1.0 - 2 * _NUDGE) / tot
    tot = float(np.sum(x[lay.fC]))
    if tot >= s.F_cloud * (1.0 - _NUDGE):
        x[lay.fC] *= s.F_cloud * (1.0 - 2 * _NUDGE) / tot
    for k in range(K):
        B, D = s.tasks[k].bits, s.tasks[k].flops
        up = 1.0 + _NUDGE
        x[lay.tauT[k]] = np.maximum(state.tauT[k], B / x[lay.R[k]]) * up
        x[lay.tauF[k]] = np.maximum(state.tauF[k], D / x[lay.fF[k]]) * up
        x[lay.t1[k]] = B / x[lay.Cfh[k]] * up
        x[lay.t2[k]] = D / x[lay.fC[k]] * up
        x[lay.tauC[k]] = np.maximum(state.tauC[k],
                                    x[lay.t1[k]] + x[lay.t2[k]]) * up
    return x


def noncoop_gamma_start(lay: NoncoopLayout, x: np.ndarray, theta_bar, tau_bar,
                        s) -> None:
    """Set the epigraph variable strictly above every majorant term."""
    K, L = s.K, s.L
    unit = max(float(np.max(tau_bar)), 1e-9)
    worst = -np.inf
    for k in range(K):
        theta = x[lay.theta[k]]
        tau = np.concatenate([x[lay.tauT[k]] + x[lay.tauF[k]],
                              x[lay.tauT[k]] + x[lay.tauC[k]]]) / unit
        tb = tau_bar[k] / unit
        cbar = 0.5 * (theta_bar[k] @ theta_bar[k] + tb @ tb)
        g = (0.5 * float(np.sum((theta + tau) ** 2))
             - theta_bar[k] @ theta - tb @ tau + cbar)
        worst = max(worst, g)
    x[lay.gamma] = worst + 1e-6 * (1.0 + abs(worst))


def extract_noncoop(x: np.ndarray, lay: NoncoopLayout, s) -> dict:
    K = s.K
    return {
        "V": [lift_complex(x[lay.v[k]]) for k in range(K)],
        "theta": x[lay.theta],
        "tauT": x[lay.tauT],
        "tauF": x[lay.tauF],
        "tauC": x[lay.tauC],
        "R": x[lay.R],
        "fF": x[lay.fF],
        "fC": x[lay.fC],
        "Cfh": x[lay.Cfh],
    }


# ---------------------------------------------------- cooperative build

@dataclass
class CoopLayout:
    v: list[np.ndarray]
    theta: np.ndarray          # (K, L+1), cloud entry first
    tauT: np.ndarray
    tauF: np.ndarray
    tauCC: np.ndarray          # (K,) cloud-path latency
    t1: np.ndarray
    t2: np.ndarray
    R: np.ndarray
    RC: np.ndarray
    fF: np.ndarray
    fC: np.ndarray
    q: list[np.ndarray]        # per fog, length M_l
    rho: list[np.ndarray]
    zeta: np.ndarray           # (L,)
    gamma: int
    n: int = 0


def build_coop_subproblem(state, aux, s, theta_bar: np.ndarray,
                          tau_bar: np.ndarray, q_floor: float,
                          fronthaul_w: bool = True) -> tuple[ConicProgram, CoopLayout]:
    """Conic program of one cooperative inner round.

    ``aux`` must carry fog (u, w), cloud (u, w) and the per-fog matrices
    S used to linearize the fronthaul log-det constraint.
    """
    K, L = s.K, s.L
    tau_scale = max(float(np.max(tau_bar)), 1e-9)
    q_scale = max(float(np.mean(np.concatenate(state.q))), q_floor)
    chol = [np.linalg.cholesky(aux.S[l]) for l in range(L)]
    zeta_scale = []
    for l in range(L):
        quad = 0.0
        for k in range(K):
            g = chol[l].conj().T @ (s.H[k][l].conj().T @ state.V[k])
            quad += float(np.real(g.conj() @ g))
        zeta_scale.append(max(quad, 1.0))
    b = ProgramBuilder()
    lay = CoopLayout(
        v=[b.add_vars(f"v[{k}]", 2 * s.N[k], scale=np.sqrt(s.P[k])) for k in range(K)],
        theta=np.stack([b.add_vars(f"theta[{k}]", L + 1) for k in range(K)]),
        tauT=np.stack([b.add_vars(f"tauT[{k}]", L, scale=tau_scale) for k in range(K)]),
        tauF=np.stack([b.add_vars(f"tauF[{k}]", L, scale=tau_scale) for k in range(K)]),
        tauCC=b.add_vars("tauCC", K, scale=tau_scale),
        t1=b.add_vars("t1", K, scale=tau_scale),
        t2=b.add_vars("t2", K, scale=tau_scale),
        R=np.stack([b.add_vars(f"R[{k}]", L, scale=s.W) for k in range(K)]),
        RC=b.add_vars("RC", K, scale=s.W),
        fF=np.stack([b.add_vars(f"fF[{k}]", L, scale=float(np.mean(s.F_fog)))
                     for k in range(K)]),
        fC=b.add_vars("fC", K, scale=s.F_cloud),
        q=[b.add_vars(f"q[{l}]", s.M[l], scale=q_scale) for l in range(L)],
        rho=[b.add_vars(f"rho[{l}]", s.M[l]) for l in range(L)],
        zeta=np.array([b.add_var(f"zeta[{l}]", scale=zeta_scale[l])
                       for l in range(L)]),
        gamma=b.add_var("gamma", scale=tau_scale),
    )
    lay.n = b.n
    b.set_objective(lay.gamma, 1.0)

    eq = b.start_block("eq")
    for k in range(K):
        eq.add(lay.theta[k], np.ones(L + 1), -1.0)

    c_nats = [s.C_fronthaul[l] * LN2 / s.W if fronthaul_w
              else s.C_fronthaul[l] * LN2 for l in range(L)]

    nn = b.start_block("nonneg")
    for k in range(K):
        for j in range(L + 1):
            nn.add([lay.theta[k, j]], [1.0])
    for l in range(L):
        nn.add(lay.fF[:, l], -np.ones(K), s.F_fog[l])
    nn.add(lay.fC, -np.ones(K), s.F_cloud)
    for k in range(K):
        nn.add([lay.tauCC[k], lay.t1[k], lay.t2[k]], [1.0, -1.0, -1.0])
    for l in range(L):
        for i in range(s.M[l]):
            nn.add([lay.q[l][i]], [1.0], -q_floor)
    for l in range(L):
        # -Tr(S E) + log|S| + M + sum_i log q_i + C' >= 0 with zeta bounding
        # the beamformer part of Tr(S E) and rho the log terms
        s_diag = np.real(np.diag(aux.S[l]))
        logdet_s = float(np.linalg.slogdet(aux.S[l])[1])
        const = logdet_s + s.M[l] + c_nats[l] - s.sigma2[l] * float(
            np.real(np.trace(aux.S[l])))
        idx = np.concatenate([[lay.zeta[l]], lay.q[l], lay.rho[l]]).astype(int)
        val = np.concatenate([[-1.0], -s_diag, np.ones(s.M[l])])
        nn.add(idx, val, const)

    for k in range(K):
        _power_block(b, lay.v[k], s.P[k])

    for k in range(K):
        for l in range(L):
            sig_term = -s.sigma2[l] * float(np.real(aux.u_fog[k][l].conj()
                                                    @ aux.u_fog[k][l]))
            _wmmse_rows(b, s, lay.v, k, l, aux.u_fog[k][l], aux.w_fog[k, l],
                        np.empty(0, dtype=int), np.empty(0), sig_term,
                        lay.R[k, l])

    sigma_diag = rates.stacked_noise_diag(s)
    for k in range(K):
        u = aux.u_cloud[k]
        abs_u2 = np.abs(u) ** 2
        sig_term = -float(sigma_diag @ abs_u2)
        q_idx = np.concatenate([lay.q[l] for l in range(L)])
        _wmmse_rows(b, s, lay.v, k, None, u, aux.w_cloud[k],
                    q_idx, -abs_u2, sig_term, lay.RC[k])

    for l in range(L):
        # zeta_l >= sum_k ||S_l^{1/2} H_{k,l}^H v_k||^2, in zeta's units
        sz = zeta_scale[l]
        blk = b.start_block("soc")
        blk.add([lay.zeta[l]], [0.5 / sz], 0.5)
        for k in range(K):
            F = chol[l].conj().T @ s.H[k][l].conj().T  # M x N_k
            for i in range(s.M[l]):
                re, im = herm_rows(F[i].conj())
                blk.add(lay.v[k], re / np.sqrt(sz))
                blk.add(lay.v[k], im / np.sqrt(sz))
        blk.add([lay.zeta[l]], [0.5 / sz], -0.5)

    for k in range(K):
        B, D = s.tasks[k].bits, s.tasks[k].flops
        for l in range(L):
            _hyperbolic(b, lay.tauT[k, l], lay.R[k, l], B)
            _hyperbolic(b, lay.tauF[k, l], lay.fF[k, l], D)
        _hyperbolic(b, lay.t1[k], lay.RC[k], B)
        _hyperbolic(b, lay.t2[k], lay.fC[k], D)

    ec = b.start_block("exp")
    for l in range(L):
        for i in range(s.M[l]):
            ec.add([lay.rho[l][i]], [1.0])
            ec.add_const(1.0)
            ec.add([lay.q[l][i]], [1.0])

    u3 = 1.0 / tau_scale
    for k in range(K):
        tb = tau_bar[k] * u3
        cbar = 0.5 * (theta_bar[k] @ theta_bar[k] + tb @ tb)
        idx = [lay.gamma, lay.tauCC[k]]
        val = [1.0, tb[0] * u3]
        for l in range(L):
            idx += [lay.tauT[k, l], lay.tauF[k, l]]
            val += [tb[1 + l] * u3, tb[1 + l] * u3]
        idx = np.concatenate([idx, lay.theta[k]]).astype(int)
        val = np.concatenate([val, theta_bar[k]])
        # 0.5 ||theta + tau/unit||^2 <= b_k <=> ||[z; b - 1/2]|| <= b + 1/2
        blk = b.start_block("soc")
        blk.add(idx, val, -cbar + 0.5)
        blk.add([lay.theta[k, 0], lay.tauCC[k]], [1.0, u3])
        for l in range(L):
            blk.add([lay.theta[k, 1 + l], lay.tauT[k, l], lay.tauF[k, l]],
                    [1.0, u3, u3])
        blk.add(idx, val, -cbar - 0.5)

    return b.build(), lay


def coop_start_point(lay: CoopLayout, state, aux, s, q_floor: float,
                     fronthaul_w: bool = True) -> np.ndarray:
    """Strictly feasible start for the cooperative subproblem."""
    K, L = s.K, s.L
    x = np.zeros(lay.n)
    V0 = [v * (1.0 - _NUDGE) for v in state.V]
    for k in range(K):
        x[lay.v[k]] = embed_complex(V0[k])
        x[lay.theta[k]] = (1.0 - _NUDGE) * state.theta[k] + _NUDGE / (L + 1)

    # bump q until the linearized fronthaul row has real slack
    q0 = [np.maximum(np.asarray(state.q[l], dtype=float), 2.0 * q_floor)
          for l in range(L)]
    c_nats = [s.C_fronthaul[l] * LN2 / s.W if fronthaul_w
              else s.C_fronthaul[l] * LN2 for l in range(L)]
    for l in range(L):
        s_diag = np.real(np.diag(aux.S[l]))
        logdet_s = float(np.linalg.slogdet(aux.S[l])[1])
        quad = 0.0
        chol = np.linalg.cholesky(aux.S[l])
        for k in range(K):
            g = chol.conj().T @ (s.H[k][l].conj().T @ V0[k])
            quad += float(np.real(g.conj() @ g))
        base = logdet_s + s.M[l] + c_nats[l] - s.sigma2[l] * float(
            np.real(np.trace(aux.S[l]))) - quad
        need = 1e-6 * (1.0 + abs(c_nats[l])) + 3e-9 * s.M[l]

        def slack(ql):
            return base - float(s_diag @ ql) + float(np.sum(np.log(ql)))

        scale = 1.0
        for _ in range(200):
            if slack(q0[l] * scale) >= need:
                break
            scale *= 1.3
        q0[l] = q0[l] * scale
        x[lay.q[l]] = q0[l]
        x[lay.rho[l]] = np.log(q0[l]) - 1e-9 * (1.0 + np.abs(np.log(q0[l])))
        quad_row = quad * (1.0 + _NUDGE) + 1e-12
        x[lay.zeta[l]] = quad_row

    for k in range(K):
        B, D = s.tasks[k].bits, s.tasks[k].flops
        for l in range(L):
            e = rates.mse_fog(aux.u_fog[k][l], V0, s, k, l)
            f = s.W / LN2 * (-aux.w_fog[k, l] * e + np.log(aux.w_fog[k, l]) + 1.0)
            x[lay.R[k, l]] = min(state.R[k, l], (1.0 - _RATE_BACKOFF) * f)
            x[lay.fF[k, l]] = state.fF[k, l]
        e = rates.mse_vmac(aux.u_cloud[k], V0, q0, s, k)
        f = s.W / LN2 * (-aux.w_cloud[k] * e + np.log(aux.w_cloud[k]) + 1.0)
        x[lay.RC[k]] = min(state.RC[k], (1.0 - _RATE_BACKOFF) * f)
        x[lay.fC[k]] = state.fC[k]
    for l in range(L):
        tot = float(np.sum(x[lay.fF[:, l]]))
        if tot >= s.F_fog[l] * (1.0 - _NUDGE):
            x[lay.fF[:, l]] *= s.F_fog[l] * (1.0 - 2 * _NUDGE) / tot
    tot = float(np.sum(x[lay.fC]))
    if tot >= s.F_cloud * (1.0 - _NUDGE):
        x[lay.fC] *= s.F_cloud * (1.0 - 2 * _NUDGE) / tot
    for k in range(K):
        B, D = s.tasks[k].bits, s.tasks[k].flops
        up = 1.0 + _NUDGE
        x[lay.tauT[k]] = np.maximum(state.tauT[k], B / x[lay.R[k]]) * up
        x[lay.tauF[k]] = np.maximum(state.tauF[k], D / x[lay.fF[k]]) * up
        x[lay.t1[k]] = B / x[lay.RC[k]] * up
        x[lay.t2[k]] = D / x[lay.fC[k]] * up
        x[lay.tauCC[k]] = np.maximum(state.tauCC[k],
                                     x[lay.t1[k]] + x[lay.t2[k]]) * up

    # the epigraph entry is filled by coop_gamma_start
    return x


def coop_gamma_start(lay: CoopLayout, x: np.ndarray, theta_bar, tau_bar, s):
    K = s.K
    worst = -np.inf
    for k in range(K):
        theta = x[lay.theta[k]]
        tau = np.concatenate([[x[lay.tauCC[k]]],
                              x[lay.tauT[k]] + x[lay.tauF[k]]])
        cbar = 0.5 * (theta_bar[k] @ theta_bar[k] + tau_bar[k] @ tau_bar[k])
        g = (0.5 * float(np.sum((theta + tau) ** 2))
             - theta_bar[k] @ theta - tau_bar[k] @ tau - cbar)
        worst = max(worst, g)
    x[lay.gamma] = worst + 1e-6 * (1.0 + abs(worst))


# ---------------------------------------------------- restricted build

@dataclass
class RestrictedLayout:
    """Program over one fixed association; -1 marks absent per-user vars."""

    v: list[np.ndarray]
    R: np.ndarray
    tauT: np.ndarray
    fF: np.ndarray
    tauF: np.ndarray
    Cfh: np.ndarray
    t1: np.ndarray
    t2: np.ndarray
    fC: np.ndarray
    gamma: int
    n: int = 0


def build_restricted(s, alpha0, beta, u_link, w_link,
                     frozen: dict | None = None
                     ) -> tuple[ConicProgram, RestrictedLayout]:
    """Min-max latency over beamformers (and resources, unless frozen)
    with the association fixed one-hot.

    ``alpha0[k]`` is the 0-based serving fog; ``beta[k]`` is 1 when user
    k's task is computed at the cloud. Unused paths do not appear at all
    (the 0/0 convention). ``frozen`` holds per-user constants fF, fC and
    C that freeze the resource split (equal-split baselines).
    """
    K, L = s.K, s.L
    B = np.array([t.bits for t in s.tasks], dtype=float)
    D = np.array([t.flops for t in s.tasks], dtype=float)
    fog_users = [[k for k in range(K) if alpha0[k] == l and beta[k] == 0]
                 for l in range(L)]
    cloud_users = [k for k in range(K) if beta[k] == 1]
    cloud_at = [[k for k in cloud_users if alpha0[k] == l] for l in range(L)]

    # rough latency scale for conditioning: single-user full-capacity paths
    tau_guess = np.max(B / (0.05 * s.W) + D / (np.min(s.F_fog) / K))
    tau_scale = max(float(tau_guess), 1e-9)

    b = ProgramBuilder()
    minus = -np.ones(1, dtype=int)
    lay = RestrictedLayout(
        v=[b.add_vars(f"v[{k}]", 2 * s.N[k], scale=np.sqrt(s.P[k])) for k in range(K)],
        R=np.array([b.add_var(f"R[{k}]", scale=s.W) for k in range(K)]),
        tauT=np.array([b.add_var(f"tauT[{k}]", scale=tau_scale) for k in range(K)]),
        fF=np.full(K, -1), tauF=np.full(K, -1), Cfh=np.full(K, -1),
        t1=np.full(K, -1), t2=np.full(K, -1), fC=np.full(K, -1),
        gamma=-1,
    )
    free = frozen is None
    for k in range(K):
        if beta[k] == 0:
            if free:
                lay.fF[k] = b.add_var(f"fF[{k}]", scale=s.F_fog[alpha0[k]])
                lay.tauF[k] = b.add_var(f"tauF[{k}]", scale=tau_scale)
        else:
            if free:
                lay.Cfh[k] = b.add_var(f"C[{k}]", scale=s.C_fronthaul[alpha0[k]])
                lay.fC[k] = b.add_var(f"fC[{k}]", scale=s.F_cloud)
                lay.t1[k] = b.add_var(f"t1[{k}]", scale=tau_scale)
                lay.t2[k] = b.add_var(f"t2[{k}]", scale=tau_scale)
    lay.gamma = b.add_var("gamma", scale=tau_scale)
    lay.n = b.n
    b.set_objective(lay.gamma, 1.0)

    nn = b.start_block("nonneg")
    for k in range(K):
        if beta[k] == 0:
            if free:
                nn.add([lay.gamma, lay.tauT[k], lay.tauF[k]], [1.0, -1.0, -1.0])
            else:
                nn.add([lay.gamma, lay.tauT[k]], [1.0, -1.0],
                       -D[k] / frozen["fF"][k])
        else:
            if free:
                nn.add([lay.gamma, lay.tauT[k], lay.t1[k], lay.t2[k]],
                       [1.0, -1.0, -1.0, -1.0])
            else:
                const = B[k] / frozen["C"][k] + D[k] / frozen["fC"][k]
                nn.add([lay.gamma, lay.tauT[k]], [1.0, -1.0], -const)
    if free:
        for l in range(L):
            if fog_users[l]:
                nn.add(lay.fF[fog_users[l]], -np.ones(len(fog_users[l])),
                       s.F_fog[l])
            if cloud_at[l]:
                nn.add(lay.Cfh[cloud_at[l]], -np.ones(len(cloud_at[l])),
                       s.C_fronthaul[l])
        if cloud_users:
            nn.add(lay.fC[cloud_users], -np.ones(len(cloud_users)), s.F_cloud)

    for k in range(K):
        _power_block(b, lay.v[k], s.P[k])
        sig_term = -s.sigma2[alpha0[k]] * float(np.real(u_link[k].conj()
                                                        @ u_link[k]))
        _wmmse_rows(b, s, lay.v, k, alpha0[k], u_link[k], w_link[k],
                    np.empty(0, dtype=int), np.empty(0), sig_term, lay.R[k])
        _hyperbolic(b, lay.tauT[k], lay.R[k], B[k])
        if free:
            if beta[k] == 0:
                _hyperbolic(b, lay.tauF[k], lay.fF[k], D[k])
            else:
                _hyperbolic(b, lay.t1[k], lay.Cfh[k], B[k])
                _hyperbolic(b, lay.t2[k], lay.fC[k], D[k])

    return b.build(), lay


def restricted_start_point(lay: RestrictedLayout, s, alpha0, beta, u_link,
                           w_link, V0, frozen: dict | None = None,
                           resources: dict | None = None) -> np.ndarray:
    """Strictly feasible start; ``resources`` optionally seeds the split."""
    K, L = s.K, s.L
    B = np.array([t.bits for t in s.tasks], dtype=float)
    D = np.array([t.flops for t in s.tasks], dtype=float)
    x = np.zeros(lay.n)
    Vn = [v * (1.0 - _NUDGE) for v in V0]
    for k in range(K):
        x[lay.v[k]] = embed_complex(Vn[k])
        e = rates.mse_fog(u_link[k], Vn, s, k, alpha0[k])
        f = s.W / LN2 * (-w_link[k] * e + np.log(w_link[k]) + 1.0)
        x[lay.R[k]] = (1.0 - _RATE_BACKOFF) * f
        x[lay.tauT[k]] = B[k] / x[lay.R[k]] * (1.0 + _NUDGE)
    free = frozen is None
    if free:
        fog_users = [[k for k in range(K) if alpha0[k] == l and beta[k] == 0]
                     for l in range(L)]
        cloud_users = [k for k in range(K) if beta[k] == 1]
        cloud_at = [[k for k in cloud_users if alpha0[k] == l] for l in range(L)]
        for l in range(L):
            for group, cap, fam in ((fog_users[l], s.F_fog[l], "fF"),
                                    (cloud_at[l], s.C_fronthaul[l], "Cfh")):
                if not group:
                    continue
                idx = getattr(lay, fam)[group]
                if resources is not None and fam in resources:
                    seed = np.maximum(np.asarray(resources[fam])[group],
                                      1e-12 * cap)
                else:
                    seed = np.full(len(group), cap / len(group))
                seed *= cap * (1.0 - 2 * _NUDGE) / float(np.sum(seed))
                x[idx] = seed
        if cloud_users:
            idx = lay.fC[cloud_users]
            if resources is not None and "fC" in resources:
                seed = np.maximum(np.asarray(resources["fC"])[cloud_users],
                                  1e-12 * s.F_cloud)
            else:
                seed = np.full(len(cloud_users), s.F_cloud / len(cloud_users))
            seed *= s.F_cloud * (1.0 - 2 * _NUDGE) / float(np.sum(seed))
            x[idx] = seed
        for k in range(K):
            if beta[k] == 0:
                x[lay.tauF[k]] = D[k] / x[lay.fF[k]] * (1.0 + _NUDGE)
            else:
                x[lay.t1[k]] = B[k] / x[lay.Cfh[k]] * (1.0 + _NUDGE)
                x[lay.t2[k]] = D[k] / x[lay.fC[k]] * (1.0 + _NUDGE)
    # epigraph start
    worst = 0.0
    for k in range(K):
        val = x[lay.tauT[k]]
        if beta[k] == 0:
            val += x[lay.tauF[k]] if free else D[k] / frozen["fF"][k]
        else:
            val += (x[lay.t1[k]] + x[lay.t2[k]]) if free else \
                B[k] / frozen["C"][k] + D[k] / frozen["fC"][k]
        worst = max(worst, val)
    x[lay.gamma] = worst * (1.0 + _NUDGE) + 1e-15
    return x


def extract_restricted(x: np.ndarray, lay: RestrictedLayout, s, alpha0, beta,
                       frozen: dict | None = None) -> dict:
    K = s.K
    out = {
        "V": [lift_complex(x[lay.v[k]]) for k in range(K)],
        "R": x[lay.R].copy(),
        "fF": np.zeros(K), "fC": np.zeros(K), "Cfh": np.zeros(K),
    }
    for k in range(K):
        if beta[k] == 0:
            out["fF"][k] = frozen["fF"][k] if frozen else x[lay.fF[k]]
        else:
            out["fC"][k] = frozen["fC"][k] if frozen else x[lay.fC[k]]
            out["Cfh"][k] = frozen["C"][k] if frozen else x[lay.Cfh[k]]
    return out


def extract_coop(x: np.ndarray, lay: CoopLayout, s) -> dict:
    K, L = s.K, s.L
    return {
        "V": [lift_complex(x[lay.v[k]]) for k in range(K)],
        "theta": x[lay.theta],
        "tauT": x[lay.tauT],
        "tauF": x[lay.tauF],
        "tauCC": x[lay.tauCC],
        "R": x[lay.R],
        "RC": x[lay.RC],
        "fF": x[lay.fF],
        "fC": x[lay.fC],
        "q": [x[lay.q[l]] for l in range(L)],
    }
