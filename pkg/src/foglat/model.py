"""Problem instances for fog offloading: tasks, capacities, channels.

All quantities are strict SI internally: bits, flops, seconds, Hz, watts,
meters. Unit suffixes ("Kbits", "Gflops/s", ...) are handled at config
ingestion, never here.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field

import numpy as np

__all__ = [
    "Task",
    "GenerationParams",
    "ScenarioSizing",
    "Scenario",
    "pathloss_variance",
    "draw_channel",
    "generate_scenario",
    "validate_scenario",
    "scenario_to_json",
    "scenario_from_json",
]


@dataclass(frozen=True)
class Task:
    """One computation task: payload size in bits, workload in flops."""

    bits: int
    flops: float


@dataclass(frozen=True)
class GenerationParams:
    """Random-deployment parameters for scenario generation."""

    seed: int
    radius_m: float = 1000.0
    pathloss_ref_m: float = 2000.0
    pathloss_exp: float = 3.0
    shadowing_std_db: float = 8.0


@dataclass(frozen=True)
class ScenarioSizing:
    """Sizes, budgets and capacities of a scenario, in SI units.

    Scalars broadcast to per-entity tuples (per UE for N/P/B/D, per fog
    node for M/sigma2/F_fog/C_fronthaul).
    """

    K: int
    L: int
    N: int | tuple[int, ...] = 4
    M: int | tuple[int, ...] = 8
    P: float | tuple[float, ...] = 1.0
    W: float = 20e6
    sigma2: float | tuple[float, ...] = 1.0
    B: float | tuple[float, ...] = 60e3
    D: float | tuple[float, ...] = 200e6
    F_fog: float | tuple[float, ...] = 200e9
    F_cloud: float = 2000e9
    C_fronthaul: float | tuple[float, ...] = 200e6


@dataclass(frozen=True)
class Scenario:
    """Immutable problem instance shared read-only by all solver runs."""

    K: int
    L: int
    tasks: tuple[Task, ...]
    P: tuple[float, ...]
    N: tuple[int, ...]
    M: tuple[int, ...]
    sigma2: tuple[float, ...]
    W: float
    F_fog: tuple[float, ...]
    F_cloud: float
    C_fronthaul: tuple[float, ...]
    # H[k][l] is the complex N_k x M_l channel between UE k and fog l.
    H: tuple[tuple[np.ndarray, ...], ...]
    ue_pos: np.ndarray = field(repr=False)
    fog_pos: np.ndarray = field(repr=False)

    def __post_init__(self):
        for row in self.H:
            for h in row:
                h.setflags(write=False)
        self.ue_pos.setflags(write=False)
        self.fog_pos.setflags(write=False)


def _per_ue(value, K):
    if np.isscalar(value):
        return (value,) * K
    return tuple(value)


def pathloss_variance(d_m: float, beta_linear: float = 1.0,
                      ref_m: float = 2000.0, exponent: float = 3.0) -> float:
    """Per-real-dimension channel entry variance at distance ``d_m``."""
    return (ref_m / d_m) ** exponent * beta_linear


def draw_channel(rng: np.random.Generator, n: int, m: int,
                 real_dim_variance: float) -> np.ndarray:
    """Draw an n x m channel with i.i.d. zero-mean complex Gaussian entries."""
    std = np.sqrt(real_dim_variance)
    return std * rng.standard_normal((n, m)) + 1j * std * rng.standard_normal((n, m))


def _disc_points(rng: np.random.Generator, count: int, radius: float) -> np.ndarray:
    r = radius * np.sqrt(rng.random(count))
    phi = 2.0 * np.pi * rng.random(count)
    return np.stack([r * np.cos(phi), r * np.sin(phi)], axis=1)


def generate_scenario(params: GenerationParams, sizing: ScenarioSizing) -> Scenario:
    """Generate a random scenario; deterministic given (params, sizing).

    UE and fog positions are uniform in a disc of ``params.radius_m``.
    Channel entries are i.i.d. zero-mean circularly symmetric complex
    Gaussian with per-real-dimension variance (ref/d)^exp * beta, where
    10*log10(beta) is real Gaussian with std ``shadowing_std_db``.
    """
    K, L = sizing.K, sizing.L
    if K <= 0 or L <= 0:
        raise ValueError("K and L must be positive")
    N = tuple(int(n) for n in _per_ue(sizing.N, K))
    M = tuple(int(m) for m in _per_ue(sizing.M, L))
    P = tuple(float(p) for p in _per_ue(sizing.P, K))
    sigma2 = tuple(float(s) for s in _per_ue(sizing.sigma2, L))
    B = _per_ue(sizing.B, K)
    D = _per_ue(sizing.D, K)
    F_fog = tuple(float(f) for f in _per_ue(sizing.F_fog, L))
    C_fh = tuple(float(c) for c in _per_ue(sizing.C_fronthaul, L))
    for name, seq, want in (("N", N, K), ("P", P, K), ("B", B, K), ("D", D, K),
                            ("M", M, L), ("sigma2", sigma2, L),
                            ("F_fog", F_fog, L), ("C_fronthaul", C_fh, L)):
        if len(seq) != want:
            raise ValueError(f"sizing.{name} has length {len(seq)}, expected {want}")

    rng = np.random.default_rng(params.seed)
    ue_pos = _disc_points(rng, K, params.radius_m)
    fog_pos = _disc_points(rng, L, params.radius_m)

    H = []
    for k in range(K):
        row = []
        for l in range(L):
            d = float(np.hypot(*(ue_pos[k] - fog_pos[l])))
            if params.shadowing_std_db > 0:
                beta = 10.0 ** (rng.normal(0.0, params.shadowing_std_db) / 10.0)
            else:
                beta = 1.0
            var = pathloss_variance(d, beta, params.pathloss_ref_m, params.pathloss_exp)
            row.append(draw_channel(rng, N[k], M[l], var))
        H.append(tuple(row))

    return Scenario(
        K=K, L=L,
        tasks=tuple(Task(bits=int(round(b)), flops=float(d)) for b, d in zip(B, D)),
        P=P, N=N, M=M, sigma2=sigma2, W=float(sizing.W),
        F_fog=F_fog, F_cloud=float(sizing.F_cloud), C_fronthaul=C_fh,
        H=tuple(H), ue_pos=ue_pos, fog_pos=fog_pos,
    )


def validate_scenario(s: Scenario) -> list[str]:
    """Return every invariant violation, each naming the offending field."""
    bad = []
    if s.K != len(s.tasks):
        bad.append(f"tasks: length {len(s.tasks)} != K={s.K}")
    for k, t in enumerate(s.tasks):
        if t.bits <= 0:
            bad.append(f"tasks[{k}].bits: must be positive, got {t.bits}")
        if t.flops <= 0:
            bad.append(f"tasks[{k}].flops: must be positive, got {t.flops}")
    for name, seq in (("P", s.P), ("F_fog", s.F_fog), ("sigma2", s.sigma2),
                      ("C_fronthaul", s.C_fronthaul)):
        for i, v in enumerate(seq):
            if v <= 0:
                bad.append(f"{name}[{i}]: must be positive, got {v}")
    if s.W <= 0:
        bad.append(f"W: must be positive, got {s.W}")
    if s.F_cloud <= 0:
        bad.append(f"F_cloud: must be positive, got {s.F_cloud}")
    if len(s.H) != s.K:
        bad.append(f"H: {len(s.H)} UE rows != K={s.K}")
    for k, row in enumerate(s.H):
        if len(row) != s.L:
            bad.append(f"H[{k}]: {len(row)} fog entries != L={s.L}")
            continue
        for l, h in enumerate(row):
            want = (s.N[k], s.M[l])
            if h.shape != want:
                bad.append(f"H[{k}][{l}]: shape {h.shape} != {want}")
    if s.ue_pos.shape != (s.K, 2):
        bad.append(f"ue_pos: shape {s.ue_pos.shape} != {(s.K, 2)}")
    if s.fog_pos.shape != (s.L, 2):
        bad.append(f"fog_pos: shape {s.fog_pos.shape} != {(s.L, 2)}")
    return bad


def _complex_to_pairs(h: np.ndarray) -> list:
    return np.stack([h.real, h.imag], axis=-1).tolist()


def _pairs_to_complex(data) -> np.ndarray:
    arr = np.asarray(data, dtype=float)
    return arr[..., 0] + 1j * arr[..., 1]


def scenario_to_json(s: Scenario) -> str:
    """Serialize a scenario; complex entries become [re, im] pairs."""
    doc = {
        "K": s.K, "L": s.L,
        "tasks": [{"bits": t.bits, "flops": t.flops} for t in s.tasks],
        "P": list(s.P), "N": list(s.N), "M": list(s.M),
        "sigma2": list(s.sigma2), "W": s.W,
        "F_fog": list(s.F_fog), "F_cloud": s.F_cloud,
        "C_fronthaul": list(s.C_fronthaul),
        "H": [[_complex_to_pairs(h) for h in row] for row in s.H],
        "ue_pos": s.ue_pos.tolist(),
        "fog_pos": s.fog_pos.tolist(),
    }
    return json.dumps(doc, sort_keys=True)


def scenario_from_json(text: str) -> Scenario:
    doc = json.loads(text)
    return Scenario(
        K=doc["K"], L=doc["L"],
        tasks=tuple(Task(bits=t["bits"], flops=t["flops"]) for t in doc["tasks"]),
        P=tuple(doc["P"]), N=tuple(doc["N"]), M=tuple(doc["M"]),
        sigma2=tuple(doc["sigma2"]), W=doc["W"],
        F_fog=tuple(doc["F_fog"]), F_cloud=doc["F_cloud"],
        C_fronthaul=tuple(doc["C_fronthaul"]),
        H=tuple(tuple(_pairs_to_complex(h) for h in row) for row in doc["H"]),
        ue_pos=np.asarray(doc["ue_pos"], dtype=float),
        fog_pos=np.asarray(doc["fog_pos"], dtype=float),
    )
