"""Inexact majorization-minimization for non-cooperative offloading.

The mixed-integer association is relaxed to simplex weights theta; each
outer iteration anchors a quadratic majorant of max_k theta_k' tau_k and
runs J inner rounds of closed-form (u, w) updates followed by one conic
solve. Descent is monotone for any J >= 1, so J defaults to 1.

Rounding recovers a binary association from the converged weights, and
``refine_with_assignment`` re-optimizes beamformers and resources with
the association frozen; the refined max latency is the reported metric.
"""

from __future__ import annotations

import time
from dataclasses import dataclass, field, replace

import numpy as np

from . import rates
from .conic import build, solver
from .rates import WmmseAux

__all__ = [
    "MMOptions", "SolverState", "DiscreteAssignment", "MMTrace", "TraceRow",
    "initialize_state", "objective", "surrogate", "compute_aux",
    "inner_round", "run", "round_assignment", "refine_with_assignment",
    "optimize_restricted", "state_violations",
]

DESCENT_SLACK = 1e-9


@dataclass(frozen=True)
class MMOptions:
    inner_rounds: int = 1
    max_outer: int = 100
    rel_tol: float = 1e-5
    patience: int = 3
    conic_tol: float = 1e-7
    max_newton: int = 800
    stall_limit: int = 5
    refine_rel_tol: float = 1e-6
    refine_max_rounds: int = 60
    fronthaul_w: bool = True


@dataclass
class SolverState:
    """Continuous optimization point of the relaxed min-max problem.

    ``theta`` rows live on the simplex over the 2L paths (fog paths
    first, then cloud paths); latency components are kept separately so
    subproblems can be rebuilt without losing the solver's slack.
    """

    V: list
    theta: np.ndarray        # (K, 2L)
    tauT: np.ndarray         # (K, L)
    tauF: np.ndarray         # (K, L)
    tauC: np.ndarray         # (K, L)
    R: np.ndarray            # (K, L)
    fF: np.ndarray           # (K, L)
    fC: np.ndarray           # (K,)
    Cfh: np.ndarray          # (K, L)
    objective: float

    @property
    def tau(self) -> np.ndarray:
        """Per-path latencies, length 2L per user."""
        return np.concatenate([self.tauT + self.tauF, self.tauT + self.tauC],
                              axis=1)


@dataclass(frozen=True)
class DiscreteAssignment:
    alpha: tuple    # serving fog per UE, 1-based; None means "all" (V-MAC)
    beta: tuple     # "fog" | "cloud" per UE


@dataclass
class TraceRow:
    outer: int
    inner: int
    objective: float
    surrogate: float
    solver_status: str
    elapsed_s: float
    fronthaul_util: tuple | None = None


@dataclass
class MMTrace:
    rows: list = field(default_factory=list)
    status: str = "running"
    outer_iters: int = 0

    def objectives(self) -> np.ndarray:
        seen = {}
        for r in self.rows:
            seen[r.outer] = r.objective
        return np.array([seen[k] for k in sorted(seen)])

    def to_csv(self, path) -> None:
        cols = ["outer_iter", "inner_round", "objective", "surrogate",
                "solver_status", "elapsed_s"]
        n_util = max((len(r.fronthaul_util) for r in self.rows
                      if r.fronthaul_util is not None), default=0)
        cols += [f"fronthaul_util_{l + 1}" for l in range(n_util)]
        with open(path, "w") as fh:
            fh.write(",".join(cols) + "\n")
            for r in self.rows:
                vals = [str(r.outer), str(r.inner), f"{r.objective:.9g}",
                        f"{r.surrogate:.9g}", r.solver_status,
                        f"{r.elapsed_s:.9g}"]
                util = r.fronthaul_util or ()
                vals += [f"{u:.9g}" for u in util]
                vals += [""] * (n_util - len(util))
                fh.write(",".join(vals) + "\n")


def _tasks(s):
    B = np.array([t.bits for t in s.tasks], dtype=float)
    D = np.array([t.flops for t in s.tasks], dtype=float)
    return B, D


def rate_matrix(V, s) -> np.ndarray:
    return np.array([[rates.rate_fog(V, s, k, l) for l in range(s.L)]
                     for k in range(s.K)])


def initialize_state(s, seed: int) -> SolverState:
    """Feasible start: full-power random beamformers, equal splits,
    rates backed off to 99% of what the beamformers achieve."""
    rng = np.random.default_rng(seed)
    K, L = s.K, s.L
    V = []
    for k in range(K):
        v = rng.standard_normal(s.N[k]) + 1j * rng.standard_normal(s.N[k])
        V.append(v * np.sqrt(s.P[k]) / np.linalg.norm(v))
    theta = np.full((K, 2 * L), 1.0 / (2 * L))
    fF = np.tile(np.asarray(s.F_fog) / K, (K, 1))
    fC = np.full(K, s.F_cloud / K)
    Cfh = np.tile(np.asarray(s.C_fronthaul) / K, (K, 1))
    R = 0.99 * rate_matrix(V, s)
    B, D = _tasks(s)
    tauT = B[:, None] / R
    tauF = D[:, None] / fF
    tauC = B[:, None] / Cfh + (D / fC)[:, None]
    st = SolverState(V=V, theta=theta, tauT=tauT, tauF=tauF, tauC=tauC,
                     R=R, fF=fF, fC=fC, Cfh=Cfh, objective=0.0)
    st.objective = objective(st)
    return st


def objective(state: SolverState) -> float:
    """max_k theta_k' tau_k."""
    return float(np.max(np.sum(state.theta * state.tau, axis=1)))


def surrogate(state: SolverState, anchor: SolverState) -> float:
    """Quadratic majorant of the objective, tight at state == anchor."""
    return surrogate_arrays(state.theta, state.tau, anchor.theta, anchor.tau)


def surrogate_arrays(theta, tau, theta_bar, tau_bar) -> float:
    # first-order bound of the concave -(|theta|^2 + |tau|^2)/2 at the anchor;
    # the anchor constant enters with a plus sign, which is what makes the
    # majorant tight at the anchor
    cbar = 0.5 * (np.sum(theta_bar ** 2, axis=1) + np.sum(tau_bar ** 2, axis=1))
    g = (0.5 * np.sum((theta + tau) ** 2, axis=1)
         - np.sum(theta_bar * theta, axis=1) - np.sum(tau_bar * tau, axis=1)
         + cbar)
    return float(np.max(g))


def compute_aux(V, s) -> WmmseAux:
    """Closed-form receive filters and weights at the current beamformers."""
    u = [[rates.mmse_receiver_update(V, s, k, l) for l in range(s.L)]
         for k in range(s.K)]
    w = np.array([[rates.weight_update(rates.mse_fog(u[k][l], V, s, k, l))
                   for l in range(s.L)] for k in range(s.K)])
    return WmmseAux(u_fog=u, w_fog=w)


def _commit(ex: dict, s) -> SolverState:
    """Clean a subproblem optimizer into a feasible state.

    Projections only shrink constraint violations of order the conic
    tolerance: they cannot raise the objective by more than the descent
    slack.
    """
    B, D = _tasks(s)
    theta = np.maximum(ex["theta"], 0.0)
    theta /= np.sum(theta, axis=1, keepdims=True)
    fF = np.maximum(ex["fF"], 1e-300)
    Cfh = np.maximum(ex["Cfh"], 1e-300)
    fC = np.maximum(ex["fC"], 1e-300)
    for l in range(s.L):
        tot = float(np.sum(fF[:, l]))
        if tot > s.F_fog[l]:
            fF[:, l] *= s.F_fog[l] / tot
        tot = float(np.sum(Cfh[:, l]))
        if tot > s.C_fronthaul[l]:
            Cfh[:, l] *= s.C_fronthaul[l] / tot
    tot = float(np.sum(fC))
    if tot > s.F_cloud:
        fC *= s.F_cloud / tot
    V = ex["V"]
    R = np.minimum(ex["R"], rate_matrix(V, s))
    R = np.maximum(R, 1e-300)
    tauT = np.maximum(ex["tauT"], B[:, None] / R)
    tauF = np.maximum(ex["tauF"], D[:, None] / fF)
    tauC = np.maximum(ex["tauC"], B[:, None] / Cfh + (D / fC)[:, None])
    st = SolverState(V=V, theta=theta, tauT=tauT, tauF=tauF, tauC=tauC,
                     R=R, fF=fF, fC=fC, Cfh=Cfh, objective=0.0)
    st.objective = objective(st)
    return st


def inner_round(state: SolverState, s, anchor: SolverState | None = None,
                opts: MMOptions = MMOptions(), t0: float | None = None):
    """One BCD round: closed-form (u, w), then the conic subproblem.

    Returns (state', aux, info); on a rejected solve state' is ``state``
    unchanged and info["accepted"] is False.
    """
    if anchor is None:
        anchor = state
    aux = compute_aux(state.V, s)
    theta_bar, tau_bar = anchor.theta, anchor.tau
    prog, lay = build.build_noncoop_subproblem(state, aux, s, theta_bar, tau_bar)
    x0 = build.noncoop_start_point(lay, state, aux, s)
    build.noncoop_gamma_start(lay, x0, theta_bar, tau_bar, s)
    sol = solver.solve(prog, tol=opts.conic_tol, max_newton=opts.max_newton,
                       init_x=x0, t0=t0)
    info = {"status": sol.status, "kkt": sol.kkt, "newton": sol.newton_steps,
            "t_final": sol.t_final, "accepted": False}
    if sol.status != "optimal":
        return state, aux, info
    new = _commit(build.extract_noncoop(sol.x, lay, s), s)
    # descent is checked on the latency-rescaled majorant actually minimized
    unit = max(float(np.max(tau_bar)), 1e-9)
    g_old = surrogate_arrays(state.theta, state.tau / unit,
                             anchor.theta, tau_bar / unit)
    g_new = surrogate_arrays(new.theta, new.tau / unit,
                             anchor.theta, tau_bar / unit)
    if g_new > g_old + DESCENT_SLACK:
        return state, aux, info
    info["accepted"] = True
    return new, aux, info


def run(s, opts: MMOptions = MMOptions(), seed: int = 0):
    """Full outer loop; returns (state, trace)."""
    state = initialize_state(s, seed)
    trace = MMTrace()
    t_start = time.perf_counter()
    best = state
    stalls = 0
    quiet = 0
    t0_hint = None
    for outer in range(opts.max_outer):
        anchor = state
        obj_before = state.objective
        accepted = False
        for j in range(opts.inner_rounds):
            state, aux, info = inner_round(state, s, anchor, opts, t0=t0_hint)
            trace.rows.append(TraceRow(
                outer=outer, inner=j, objective=state.objective,
                surrogate=surrogate(state, anchor),
                solver_status=info["status"],
                elapsed_s=time.perf_counter() - t_start))
            if not info["accepted"]:
                stalls += 1
                break
            accepted = True
            stalls = 0
            t0_hint = max(1.0, info["t_final"] * 1e-2)
        trace.outer_iters = outer + 1
        if state.objective <= best.objective:
            best = state
        if stalls >= opts.stall_limit:
            trace.status = "stalled"
            return best, trace
        if not accepted:
            continue
        rel = abs(obj_before - state.objective) / max(obj_before, 1e-300)
        quiet = quiet + 1 if rel < opts.rel_tol else 0
        if quiet >= opts.patience:
            trace.status = "converged"
            return state, trace
    trace.status = "max_outer"
    return state, trace


def round_assignment(state: SolverState) -> DiscreteAssignment:
    """Binary association from the simplex weights.

    Among entries whose weight is within 1e-6 of the max, the smallest
    per-path latency wins; remaining ties go to the lowest index.
    """
    K = state.theta.shape[0]
    L = state.theta.shape[1] // 2
    tau = state.tau
    alpha, beta = [], []
    for k in range(K):
        th = state.theta[k]
        cand = np.flatnonzero(th >= np.max(th) - 1e-6)
        j = int(cand[np.argmin(tau[k][cand])]) if len(cand) > 1 else int(cand[0])
        if j < L:
            alpha.append(j + 1)
            beta.append("fog")
        else:
            alpha.append(j - L + 1)
            beta.append("cloud")
    return DiscreteAssignment(alpha=tuple(alpha), beta=tuple(beta))


def optimize_restricted(s, alpha0, beta01, V_init, opts: MMOptions,
                        frozen: dict | None = None,
                        resources: dict | None = None):
    """WMMSE/BCD loop with the association frozen one-hot.

    Returns (V, extracted, latency, rounds). ``frozen`` pins the
    resource split (equal-split baselines); otherwise resources are
    optimized jointly, seeded from ``resources`` when given.
    """
    B, D = _tasks(s)
    V = [v.copy() for v in V_init]
    ex = None
    latency = np.inf
    quiet = 0
    rounds = 0
    t0_hint = None
    for it in range(opts.refine_max_rounds):
        u_link = [rates.mmse_receiver_update(V, s, k, alpha0[k])
                  for k in range(s.K)]
        w_link = np.array([rates.weight_update(
            rates.mse_fog(u_link[k], V, s, k, alpha0[k]))
            for k in range(s.K)])
        prog, lay = build.build_restricted(s, alpha0, beta01, u_link, w_link,
                                           frozen=frozen)
        x0 = build.restricted_start_point(lay, s, alpha0, beta01, u_link,
                                          w_link, V, frozen=frozen,
                                          resources=resources)
        sol = solver.solve(prog, tol=opts.conic_tol,
                           max_newton=opts.max_newton, init_x=x0, t0=t0_hint)
        rounds = it + 1
        if sol.status != "optimal":
            break
        t0_hint = max(1.0, sol.t_final * 1e-2)
        cand = build.extract_restricted(sol.x, lay, s, alpha0, beta01,
                                        frozen=frozen)
        V = cand["V"]
        resources = {"fF": cand["fF"], "fC": cand["fC"], "Cfh": cand["Cfh"]}
        lat = _restricted_latency(cand, s, alpha0, beta01)
        if lat > latency:
            break
        rel = abs(latency - lat) / max(lat, 1e-300)
        latency = lat
        ex = cand
        if rel < opts.refine_rel_tol:
            quiet += 1
            if quiet >= 2:
                break
        else:
            quiet = 0
    if ex is None:
        raise RuntimeError("restricted optimization failed on the first round")
    return V, ex, latency, rounds


def _restricted_latency(ex: dict, s, alpha0, beta01) -> float:
    B, D = _tasks(s)
    worst = 0.0
    for k in range(s.K):
        l = alpha0[k]
        r_true = min(ex["R"][k], rates.rate_fog(ex["V"], s, k, l))
        lat = rates.tau_transmit(B[k], r_true)
        if beta01[k] == 0:
            lat += rates.tau_compute(D[k], ex["fF"][k])
        else:
            lat += rates.tau_cloud(B[k], D[k], ex["Cfh"][k], ex["fC"][k])
        worst = max(worst, lat)
    return worst


def refine_with_assignment(s, a: DiscreteAssignment, V_init,
                           opts: MMOptions = MMOptions(),
                           resources: dict | None = None):
    """Re-run the restricted MM with theta frozen one-hot.

    Unused resources are zeroed (the 0/0 convention); returns the
    discrete state and its max latency.
    """
    alpha0 = [a.alpha[k] - 1 for k in range(len(a.alpha))]
    beta01 = [0 if b == "fog" else 1 for b in a.beta]
    V, ex, latency, _ = optimize_restricted(s, alpha0, beta01, V_init, opts,
                                            resources=resources)
    B, D = _tasks(s)
    K, L = s.K, s.L
    theta = np.zeros((K, 2 * L))
    R = np.zeros((K, L))
    fF = np.zeros((K, L))
    fC = np.zeros(K)
    Cfh = np.zeros((K, L))
    tauT = np.zeros((K, L))
    tauF = np.zeros((K, L))
    tauC = np.zeros((K, L))
    for k in range(K):
        l = alpha0[k]
        j = l if beta01[k] == 0 else L + l
        theta[k, j] = 1.0
        R[k, l] = min(ex["R"][k], rates.rate_fog(V, s, k, l))
        tauT[k, l] = rates.tau_transmit(B[k], R[k, l])
        if beta01[k] == 0:
            fF[k, l] = ex["fF"][k]
            tauF[k, l] = rates.tau_compute(D[k], fF[k, l])
        else:
            Cfh[k, l] = ex["Cfh"][k]
            fC[k] = ex["fC"][k]
            tauC[k, l] = rates.tau_cloud(B[k], D[k], Cfh[k, l], fC[k])
    st = SolverState(V=V, theta=theta, tauT=tauT, tauF=tauF, tauC=tauC,
                     R=R, fF=fF, fC=fC, Cfh=Cfh, objective=latency)
    return st, latency


def state_violations(state: SolverState, s, tol: float = 1e-6) -> list[str]:
    """Check every SolverState invariant; returns human-readable breaches."""
    bad = []
    K, L = s.K, s.L
    if np.any(state.theta < -tol):
        bad.append("theta has negative entries")
    if np.max(np.abs(np.sum(state.theta, axis=1) - 1.0)) > tol:
        bad.append("theta rows off the simplex")
    for l in range(L):
        if np.sum(state.fF[:, l]) > s.F_fog[l] * (1 + tol):
            bad.append(f"fog {l} compute capacity exceeded")
        if np.sum(state.Cfh[:, l]) > s.C_fronthaul[l] * (1 + tol):
            bad.append(f"fog {l} fronthaul capacity exceeded")
    if np.sum(state.fC) > s.F_cloud * (1 + tol):
        bad.append("cloud compute capacity exceeded")
    for k in range(K):
        if np.linalg.norm(state.V[k]) ** 2 > s.P[k] * (1 + tol):
            bad.append(f"UE {k} power budget exceeded")
    rm = rate_matrix(state.V, s)
    if np.any(state.R > rm * (1 + tol) + tol):
        bad.append("rate variables exceed achievable rates")
    return bad
