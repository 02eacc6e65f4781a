"""Closed-form signal-level quantities.

Rates, MSEs and their variational (weighted-MMSE) counterparts, the
virtual multiple-access-channel versions used by cooperative offloading,
the fronthaul compression rate, the log-det linearization helpers, and
latency maps.

Log convention: every rate is W * log2(1 + SINR) in bits/second. The
weighted-MMSE value is computed in nats and converted by 1/ln 2 once, so
max_{u,w} f(u, w, V) == rate holds exactly.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
import scipy.linalg

LN2 = float(np.log(2.0))

# Solver-side floor for denominators of used paths (SI units).
EPS_DEN = 1e-12

__all__ = [
    "LN2", "EPS_DEN", "WmmseAux",
    "rate_fog", "mse_fog", "wmmse_value_fog",
    "mmse_receiver_update", "weight_update",
    "stacked_channel", "stacked_noise_diag",
    "rate_vmac", "mse_vmac", "wmmse_value_vmac", "mmse_receiver_update_vmac",
    "fog_receive_covariance", "fronthaul_rate",
    "lemma1_value", "lemma1_optimal",
    "safe_div", "tau_transmit", "tau_compute", "tau_cloud",
    "path_latency_vector", "coop_path_latency_vector",
]


@dataclass
class WmmseAux:
    """Closed-form auxiliary variables of one inner round.

    ``u_fog[k][l]``/``w_fog[k, l]`` are the per-link receive filters and
    MSE weights. The cooperative fields stay None in the
    decode-and-forward model; ``S[l]`` are the Hermitian PD matrices
    linearizing the fronthaul log-det constraint.
    """

    u_fog: list
    w_fog: np.ndarray
    u_cloud: list | None = None
    w_cloud: np.ndarray | None = None
    S: list | None = None


def _solve_hermitian(J: np.ndarray, b: np.ndarray) -> np.ndarray:
    """Solve J x = b for Hermitian positive definite J, with jitter fallback."""
    try:
        return scipy.linalg.solve(J, b, assume_a="pos")
    except np.linalg.LinAlgError:
        jitter = 1e-12 * np.trace(J).real / J.shape[0]
        return scipy.linalg.solve(J + jitter * np.eye(J.shape[0]), b, assume_a="pos")


def _interference_gram(V, s, l, exclude=None) -> np.ndarray:
    """sigma_l^2 I + sum_j H_{j,l}^H v_j v_j^H H_{j,l}, optionally skipping one j."""
    M = s.M[l]
    J = s.sigma2[l] * np.eye(M, dtype=complex)
    for j in range(s.K):
        if j == exclude:
            continue
        g = s.H[j][l].conj().T @ V[j]
        J += np.outer(g, g.conj())
    return J


def rate_fog(V, s, k: int, l: int) -> float:
    """Rate of UE k at fog l in bits/second, treating other UEs as noise."""
    g = s.H[k][l].conj().T @ V[k]
    J = _interference_gram(V, s, l, exclude=k)
    sinr = float(np.real(g.conj() @ _solve_hermitian(J, g)))
    return s.W * np.log2(1.0 + max(sinr, 0.0))


def mse_fog(u, V, s, k: int, l: int) -> float:
    """MSE of estimating UE k's unit-power symbol at fog l with filter u."""
    e = abs(1.0 - u.conj() @ (s.H[k][l].conj().T @ V[k])) ** 2
    for j in range(s.K):
        if j == k:
            continue
        e += abs(u.conj() @ (s.H[j][l].conj().T @ V[j])) ** 2
    e += s.sigma2[l] * float(np.real(u.conj() @ u))
    return float(np.real(e))


def wmmse_value_fog(u, w: float, V, s, k: int, l: int) -> float:
    """Variational rate value f(u, w, V) in bits/second; maximized it equals rate_fog."""
    if w <= 0:
        raise ValueError(f"weight must be positive, got {w}")
    e = mse_fog(u, V, s, k, l)
    return s.W / LN2 * (-w * e + np.log(w) + 1.0)


def mmse_receiver_update(V, s, k: int, l: int) -> np.ndarray:
    """MMSE receive filter for UE k at fog l given all beamformers."""
    J = _interference_gram(V, s, l)
    return _solve_hermitian(J, s.H[k][l].conj().T @ V[k])


def weight_update(e: float) -> float:
    """Optimal MSE weight 1/e."""
    if e <= 0:
        raise ValueError(f"MSE must be positive, got {e}")
    return 1.0 / e


def stacked_channel(s, k: int) -> np.ndarray:
    """H_{k,L} = [H_{k,1}, ..., H_{k,L}], the N_k x sum(M) cloud-side channel."""
    return np.concatenate([s.H[k][l] for l in range(s.L)], axis=1)


def stacked_noise_diag(s, q=None) -> np.ndarray:
    """Diagonal of Sigma_L (+ Q_L when q is given) over all fogs' antennas."""
    parts = []
    for l in range(s.L):
        d = np.full(s.M[l], s.sigma2[l])
        if q is not None:
            d = d + np.asarray(q[l], dtype=float)
        parts.append(d)
    return np.concatenate(parts)


def _vmac_gram(V, q, s, exclude=None) -> np.ndarray:
    noise = stacked_noise_diag(s, q)
    J = np.diag(noise.astype(complex))
    for j in range(s.K):
        if j == exclude:
            continue
        g = stacked_channel(s, j).conj().T @ V[j]
        J += np.outer(g, g.conj())
    return J


def rate_vmac(V, q, s, k: int) -> float:
    """UE k's rate to the cloud over the virtual MAC, in bits/second."""
    g = stacked_channel(s, k).conj().T @ V[k]
    J = _vmac_gram(V, q, s, exclude=k)
    sinr = float(np.real(g.conj() @ _solve_hermitian(J, g)))
    return s.W * np.log2(1.0 + max(sinr, 0.0))


def mse_vmac(u_cloud, V, q, s, k: int) -> float:
    """Cloud-side MSE of UE k's symbol under quantize-and-forward."""
    e = abs(1.0 - u_cloud.conj() @ (stacked_channel(s, k).conj().T @ V[k])) ** 2
    for j in range(s.K):
        if j == k:
            continue
        e += abs(u_cloud.conj() @ (stacked_channel(s, j).conj().T @ V[j])) ** 2
    noise = stacked_noise_diag(s, q)
    e += float(np.real(u_cloud.conj() @ (noise * u_cloud)))
    return float(np.real(e))


def wmmse_value_vmac(u_cloud, w: float, V, q, s, k: int) -> float:
    if w <= 0:
        raise ValueError(f"weight must be positive, got {w}")
    e = mse_vmac(u_cloud, V, q, s, k)
    return s.W / LN2 * (-w * e + np.log(w) + 1.0)


def mmse_receiver_update_vmac(V, q, s, k: int) -> np.ndarray:
    J = _vmac_gram(V, q, s)
    return _solve_hermitian(J, stacked_channel(s, k).conj().T @ V[k])


def fog_receive_covariance(V, s, l: int, q=None) -> np.ndarray:
    """E_l = sum_k H_{k,l}^H v_k v_k^H H_{k,l} + sigma_l^2 I (+ diag(q_l))."""
    M = s.M[l]
    E = s.sigma2[l] * np.eye(M, dtype=complex)
    if q is not None:
        E += np.diag(np.asarray(q[l], dtype=float).astype(complex))
    for k in range(s.K):
        g = s.H[k][l].conj().T @ V[k]
        E += np.outer(g, g.conj())
    return E


def _logdet_hermitian(A: np.ndarray) -> float:
    sign, val = np.linalg.slogdet(A)
    if sign.real <= 0:
        raise ValueError("matrix is not positive definite")
    return float(val)


def fronthaul_rate(V, q, s, l: int, bandwidth_scaled: bool = True) -> float:
    """Compression rate of fog l: log-det ratio of received-plus-quantization
    covariance to quantization covariance, times W (bits/second) unless
    ``bandwidth_scaled`` is off (then bits/symbol in log2 units)."""
    E = fog_receive_covariance(V, s, l, q=q)
    ql = np.asarray(q[l], dtype=float)
    if np.any(ql <= 0):
        raise ValueError("quantization variances must be positive")
    val = (_logdet_hermitian(E) - float(np.sum(np.log(ql)))) / LN2
    return s.W * val if bandwidth_scaled else val


def lemma1_value(S: np.ndarray, E: np.ndarray) -> float:
    """-Tr(S E) + ln|S| + N, the log-det linearization value (natural log)."""
    n = E.shape[0]
    _logdet_hermitian(E)  # domain check: E must be PD
    sign, logdet_s = np.linalg.slogdet(S)
    if sign.real <= 0:
        return -np.inf
    return float(-np.real(np.trace(S @ E)) + logdet_s + n)


def lemma1_optimal(E: np.ndarray) -> np.ndarray:
    """Maximizer S = E^{-1}; attains ln|E^{-1}|."""
    n = E.shape[0]
    try:
        c, low = scipy.linalg.cho_factor(E)
    except np.linalg.LinAlgError as exc:
        raise ValueError("matrix is not positive definite") from exc
    S = scipy.linalg.cho_solve((c, low), np.eye(n, dtype=complex))
    return 0.5 * (S + S.conj().T)


def safe_div(num, den):
    """Elementwise num/den with the 0/0 -> 0 convention; rejects negatives."""
    num = np.asarray(num, dtype=float)
    den = np.asarray(den, dtype=float)
    if np.any(num < 0) or np.any(den < 0):
        raise ValueError("latency inputs must be nonnegative")
    out = np.zeros(np.broadcast(num, den).shape)
    num, den = np.broadcast_arrays(num, den)
    nz = num > 0
    with np.errstate(divide="ignore"):
        out[nz] = num[nz] / den[nz]
    if out.ndim == 0:
        return float(out)
    return out


def tau_transmit(B, R):
    """Wireless transmission latency B/R."""
    return safe_div(B, R)


def tau_compute(D, f):
    """Computation latency D/f."""
    return safe_div(D, f)


def tau_cloud(B, D, C, f_cloud):
    """Decode-and-forward cloud path latency B/C + D/f_cloud."""
    return safe_div(B, C) + safe_div(D, f_cloud)


def path_latency_vector(B, D, R, f_fog, C, f_cloud) -> np.ndarray:
    """Per-path latencies of one UE in the non-cooperative model.

    Returns the length-2L vector [tauT + tauF per fog, tauT + tauC per fog].
    """
    tt = tau_transmit(B, np.asarray(R, dtype=float))
    tf = tau_compute(D, np.asarray(f_fog, dtype=float))
    tc = tau_cloud(B, D, np.asarray(C, dtype=float), f_cloud)
    return np.concatenate([tt + tf, tt + tc])


def coop_path_latency_vector(B, D, R_fog, f_fog, R_cloud, f_cloud) -> np.ndarray:
    """Per-path latencies of one UE in the cooperative model.

    Returns the length-(L+1) vector [cloud path, tauT + tauF per fog];
    the cloud entry comes first by interface contract.
    """
    cloud = tau_transmit(B, R_cloud) + tau_compute(D, f_cloud)
    tt = tau_transmit(B, np.asarray(R_fog, dtype=float))
    tf = tau_compute(D, np.asarray(f_fog, dtype=float))
    return np.concatenate([[cloud], tt + tf])
