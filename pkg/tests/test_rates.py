import numpy as np
import pytest

from foglat.model import GenerationParams, ScenarioSizing, generate_scenario
from foglat import rates


def make_scenario(K=2, L=2, N=2, M=2, seed=0, **over):
    sizing = ScenarioSizing(K=K, L=L, N=N, M=M, **over)
    return generate_scenario(GenerationParams(seed=seed), sizing)


def scalar_scenario(h=1.0, sigma2=1.0, W=1.0):
    s = make_scenario(K=1, L=1, N=1, M=1, sigma2=sigma2, W=W)
    H = ((np.array([[h]], dtype=complex),),)
    return s.__class__(**{**s.__dict__, "H": H})


def random_beamformers(rng, s, full_power=True):
    V = []
    for k in range(s.K):
        v = rng.standard_normal(s.N[k]) + 1j * rng.standard_normal(s.N[k])
        if full_power:
            v *= np.sqrt(s.P[k]) / np.linalg.norm(v)
        V.append(v)
    return V


# ---------------------------------------------------------------- rate_fog

def test_rate_fog_scalar_case():
    s = scalar_scenario()
    assert rates.rate_fog([np.array([1.0 + 0j])], s, 0, 0) == pytest.approx(1.0)


def test_rate_fog_zero_beamformer():
    s = make_scenario(K=2, L=1)
    V = [np.zeros(s.N[0], dtype=complex), np.ones(s.N[1], dtype=complex)]
    assert rates.rate_fog(V, s, 0, 0) == 0.0


def rate_fog_oracle_2x2(V, s, k, l):
    # Direct evaluation with an explicit 2x2 matrix inverse.
    J = s.sigma2[l] * np.eye(2, dtype=complex)
    for j in range(s.K):
        if j == k:
            continue
        g = s.H[j][l].conj().T @ V[j]
        J += np.outer(g, g.conj())
    a, b, c, d = J[0, 0], J[0, 1], J[1, 0], J[1, 1]
    inv = np.array([[d, -b], [-c, a]]) / (a * d - b * c)
    g = s.H[k][l].conj().T @ V[k]
    return s.W * np.log2(1.0 + np.real(g.conj() @ inv @ g))


def test_rate_fog_matches_dense_oracle():
    s = make_scenario(K=2, L=2, N=2, M=2, seed=5)
    V = random_beamformers(np.random.default_rng(1), s)
    for k in range(2):
        for l in range(2):
            want = rate_fog_oracle_2x2(V, s, k, l)
            assert rates.rate_fog(V, s, k, l) == pytest.approx(want, rel=1e-10)


def test_rate_fog_unitary_invariance():
    # Common unitary rotation on the UE side of all v_j and H_{j,l}.
    s = make_scenario(K=3, L=2, N=3, M=4, seed=2)
    rng = np.random.default_rng(3)
    V = random_beamformers(rng, s)
    Z = rng.standard_normal((3, 3)) + 1j * rng.standard_normal((3, 3))
    U, _ = np.linalg.qr(Z)
    H_rot = tuple(tuple(U @ h for h in row) for row in s.H)
    s_rot = s.__class__(**{**s.__dict__, "H": H_rot})
    V_rot = [U @ v for v in V]
    for k in range(s.K):
        for l in range(s.L):
            assert rates.rate_fog(V_rot, s_rot, k, l) == pytest.approx(
                rates.rate_fog(V, s, k, l), rel=1e-10)


# ------------------------------------------------------------ WMMSE pieces

def test_mse_with_zero_filter_is_one():
    s = make_scenario(K=2, L=1)
    V = random_beamformers(np.random.default_rng(0), s)
    assert rates.mse_fog(np.zeros(s.M[0], dtype=complex), V, s, 0, 0) == pytest.approx(1.0)


def test_weight_update():
    assert rates.weight_update(0.5) == pytest.approx(2.0)
    with pytest.raises(ValueError):
        rates.weight_update(0.0)


def test_mmse_receiver_scalar_case():
    s = scalar_scenario()
    u = rates.mmse_receiver_update([np.array([1.0 + 0j])], s, 0, 0)
    assert u[0] == pytest.approx(0.5)


def test_zero_beamformers_give_trivial_updates():
    s = make_scenario(K=2, L=1)
    V = [np.zeros(s.N[k], dtype=complex) for k in range(2)]
    u = rates.mmse_receiver_update(V, s, 0, 0)
    assert np.allclose(u, 0.0)
    e = rates.mse_fog(u, V, s, 0, 0)
    assert e == pytest.approx(1.0)
    assert rates.weight_update(e) == pytest.approx(1.0)


def test_mmse_receiver_minimizes_mse_locally():
    s = make_scenario(K=3, L=2, N=2, M=3, seed=9)
    V = random_beamformers(np.random.default_rng(4), s)
    u_star = rates.mmse_receiver_update(V, s, 1, 0)
    e_star = rates.mse_fog(u_star, V, s, 1, 0)
    rng = np.random.default_rng(5)
    for _ in range(100):
        d = rng.standard_normal(len(u_star)) + 1j * rng.standard_normal(len(u_star))
        d *= 1e-3 / np.linalg.norm(d)
        assert rates.mse_fog(u_star + d, V, s, 1, 0) >= e_star - 1e-15


def test_wmmse_identity_fog():
    # max over (u, w) of f equals the rate, via the closed-form updates.
    for seed in range(10):
        s = make_scenario(K=3, L=2, N=2, M=3, seed=seed)
        V = random_beamformers(np.random.default_rng(seed), s)
        for k in range(s.K):
            for l in range(s.L):
                u = rates.mmse_receiver_update(V, s, k, l)
                w = rates.weight_update(rates.mse_fog(u, V, s, k, l))
                f = rates.wmmse_value_fog(u, w, V, s, k, l)
                r = rates.rate_fog(V, s, k, l)
                assert abs(f - r) <= 1e-8 * max(r, 1.0)


def test_wmmse_value_rejects_bad_weight():
    s = make_scenario(K=1, L=1)
    V = random_beamformers(np.random.default_rng(0), s)
    with pytest.raises(ValueError):
        rates.wmmse_value_fog(np.zeros(s.M[0], dtype=complex), -1.0, V, s, 0, 0)


# ------------------------------------------------------------------- V-MAC

def uniform_q(s, value):
    return [np.full(s.M[l], value) for l in range(s.L)]


def test_rate_vmac_monotone_in_q():
    s = make_scenario(K=2, L=2, N=2, M=2, seed=11)
    V = random_beamformers(np.random.default_rng(11), s)
    prev = np.inf
    for qv in (0.1, 1.0, 10.0, 100.0):
        r = rates.rate_vmac(V, uniform_q(s, qv), s, 0)
        assert r < prev
        prev = r


def test_rate_vmac_tiny_q_matches_rate_fog_single_fog():
    s = make_scenario(K=2, L=1, N=2, M=3, seed=13)
    V = random_beamformers(np.random.default_rng(13), s)
    q = 1e-12
    shifted = s.__class__(**{**s.__dict__, "sigma2": (s.sigma2[0] + q,)})
    for k in range(s.K):
        want = rates.rate_fog(V, shifted, k, 0)
        got = rates.rate_vmac(V, uniform_q(s, q), s, k)
        assert abs(got - want) <= 1e-6 * want


def test_wmmse_identity_vmac():
    for seed in range(10):
        s = make_scenario(K=3, L=2, N=2, M=2, seed=seed)
        V = random_beamformers(np.random.default_rng(100 + seed), s)
        q = uniform_q(s, 0.5 + 0.1 * seed)
        for k in range(s.K):
            u = rates.mmse_receiver_update_vmac(V, q, s, k)
            w = rates.weight_update(rates.mse_vmac(u, V, q, s, k))
            f = rates.wmmse_value_vmac(u, w, V, q, s, k)
            r = rates.rate_vmac(V, q, s, k)
            assert abs(f - r) <= 1e-8 * max(r, 1.0)


# --------------------------------------------------------------- fronthaul

def test_fronthaul_rate_zero_beamformers():
    s = make_scenario(K=1, L=1, N=1, M=2, W=1.0)
    V = [np.zeros(1, dtype=complex)]
    got = rates.fronthaul_rate(V, uniform_q(s, 1.0), s, 0)
    assert got == pytest.approx(2.0)  # log2 |2 I| / |I| over 2 antennas


def test_fronthaul_rate_monotone_decreasing_in_q():
    s = make_scenario(K=2, L=1, N=2, M=3, seed=17)
    V = random_beamformers(np.random.default_rng(17), s)
    q = uniform_q(s, 1.0)
    base = rates.fronthaul_rate(V, q, s, 0)
    for i in range(3):
        q2 = [q[0].copy()]
        q2[0][i] *= 3.0
        assert rates.fronthaul_rate(V, q2, s, 0) < base


def test_fronthaul_rate_matches_eigenvalue_oracle():
    s = make_scenario(K=3, L=2, N=2, M=3, seed=19)
    V = random_beamformers(np.random.default_rng(19), s)
    q = [np.array([0.5, 1.0, 2.0]), np.array([1.5, 0.7, 0.9])]
    for l in range(s.L):
        E = rates.fog_receive_covariance(V, s, l, q=q)
        eig = np.linalg.eigvalsh(E)
        want = s.W * (np.sum(np.log2(eig)) - np.sum(np.log2(q[l])))
        assert rates.fronthaul_rate(V, q, s, l) == pytest.approx(want, rel=1e-10)
    # switch to drop the bandwidth factor
    got = rates.fronthaul_rate(V, q, s, 0, bandwidth_scaled=False)
    assert got == pytest.approx(rates.fronthaul_rate(V, q, s, 0) / s.W, rel=1e-12)


# ----------------------------------------------------------------- Lemma 1

def test_lemma1_identity_case():
    E = np.eye(2, dtype=complex)
    S = rates.lemma1_optimal(E)
    assert np.allclose(S, np.eye(2))
    assert rates.lemma1_value(S, E) == pytest.approx(0.0, abs=1e-12)


def test_lemma1_diagonal_case():
    E = np.diag([2.0, 4.0]).astype(complex)
    S = rates.lemma1_optimal(E)
    assert np.allclose(np.diag(S).real, [0.5, 0.25])
    assert rates.lemma1_value(S, E) == pytest.approx(-(np.log(2) + np.log(4)))


def random_hpd(rng, n):
    A = rng.standard_normal((n, n)) + 1j * rng.standard_normal((n, n))
    return A @ A.conj().T + n * np.eye(n)


def test_lemma1_optimal_dominates_random_psd():
    rng = np.random.default_rng(23)
    for _ in range(20):
        n = int(rng.integers(2, 6))
        E = random_hpd(rng, n)
        best = rates.lemma1_value(rates.lemma1_optimal(E), E)
        assert best == pytest.approx(-np.linalg.slogdet(E)[1])
        for _ in range(100):
            B = rng.standard_normal((n, n)) + 1j * rng.standard_normal((n, n))
            S = B @ B.conj().T
            assert rates.lemma1_value(S, E) <= best + 1e-9


def test_lemma1_rejects_indefinite():
    with pytest.raises(ValueError):
        rates.lemma1_value(np.eye(2), np.diag([1.0, -1.0]))


# ----------------------------------------------------------------- latency

def test_latency_arithmetic_at_section_scale():
    assert rates.tau_transmit(20e3, 10e6) == pytest.approx(2e-3)
    assert rates.tau_compute(200e6, 100e9) == pytest.approx(2e-3)


def test_zero_over_zero_convention():
    assert rates.tau_transmit(0.0, 0.0) == 0.0
    assert rates.tau_cloud(0.0, 0.0, 0.0, 0.0) == 0.0


def test_negative_inputs_rejected():
    with pytest.raises(ValueError):
        rates.safe_div(-1.0, 2.0)
    with pytest.raises(ValueError):
        rates.safe_div(1.0, -2.0)


def test_path_latency_vector_layout():
    tau = rates.path_latency_vector(
        B=10.0, D=20.0, R=[10.0, 5.0], f_fog=[20.0, 10.0],
        C=[10.0, 20.0], f_cloud=10.0)
    # fog paths first: B/R + D/f; then cloud paths: B/R + B/C + D/f_cloud
    assert tau == pytest.approx([1 + 1, 2 + 2, 1 + 1 + 2, 2 + 0.5 + 2])


def test_coop_path_latency_vector_cloud_first():
    tau = rates.coop_path_latency_vector(
        B=10.0, D=20.0, R_fog=[10.0], f_fog=[10.0], R_cloud=5.0, f_cloud=20.0)
    assert tau == pytest.approx([2 + 1, 1 + 2])
