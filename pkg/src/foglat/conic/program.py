"""Conic program representation, scaling, and independent KKT residuals.

A program is

    minimize    c' x
    subject to  G_i x + h_i  = 0         (equality blocks)
                G_i x + h_i in K_i       (nonneg / soc / exp blocks)

with the exponential-cone blocks packing one cone per three rows.
Residuals are always measured on the *normalized* program: variables are
divided by their scale hints, then equality/nonnegative rows are scaled
to unit norm and each soc/exp cone by a common positive scalar (cones are
invariant under common positive scaling, not per-row scaling).
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field

import numpy as np
import scipy.sparse as sp

from . import cones

__all__ = ["Block", "ConicProgram", "ConicSolution", "ProgramBuilder",
           "normalize", "kkt_residual", "program_to_json"]


@dataclass
class Block:
    kind: str
    A: sp.csr_matrix
    b: np.ndarray

    @property
    def rows(self) -> int:
        return self.A.shape[0]


@dataclass
class ConicProgram:
    n: int
    c: np.ndarray
    blocks: list[Block]
    names: list[str]
    var_scales: np.ndarray

    def __post_init__(self):
        for blk in self.blocks:
            if blk.kind not in cones.KINDS:
                raise ValueError(f"unknown cone kind {blk.kind!r}")
            if blk.rows == 0:
                raise ValueError("empty cone block")
            if blk.A.shape[1] != self.n:
                raise ValueError("block width inconsistent with variable count")
            if blk.kind == cones.EXP and blk.rows % 3 != 0:
                raise ValueError("exp block rows must be a multiple of 3")


@dataclass
class ConicSolution:
    """Primal point in original variable units; duals in normalized units."""

    x: np.ndarray
    duals: list[np.ndarray]
    objective: float
    status: str
    kkt: float
    newton_steps: int
    t_final: float = 0.0
    trace: list = field(default_factory=list)


class ProgramBuilder:
    """Incremental construction of a ConicProgram."""

    def __init__(self):
        self._names: list[str] = []
        self._scales: list[float] = []
        self._obj: dict[int, float] = {}
        self._blocks: list[tuple[str, list, list, list, list]] = []

    @property
    def n(self) -> int:
        return len(self._names)

    def add_var(self, name: str, scale: float = 1.0) -> int:
        self._names.append(name)
        self._scales.append(float(scale))
        return len(self._names) - 1

    def add_vars(self, name: str, count: int, scale: float = 1.0) -> np.ndarray:
        start = len(self._names)
        for i in range(count):
            self._names.append(f"{name}[{i}]")
            self._scales.append(float(scale))
        return np.arange(start, start + count)

    def var_scale(self, idx: int) -> float:
        return self._scales[int(idx)]

    def set_objective(self, idx, coeff):
        for i, v in zip(np.atleast_1d(idx), np.atleast_1d(coeff)):
            self._obj[int(i)] = self._obj.get(int(i), 0.0) + float(v)

    def start_block(self, kind: str) -> "_BlockRows":
        rows = _BlockRows(kind)
        self._blocks.append(rows)
        return rows

    def build(self) -> ConicProgram:
        n = self.n
        c = np.zeros(n)
        for i, v in self._obj.items():
            c[i] = v
        blocks = []
        for rows in self._blocks:
            blocks.append(rows.to_block(n))
        return ConicProgram(n=n, c=c, blocks=blocks, names=list(self._names),
                            var_scales=np.asarray(self._scales))


class _BlockRows:
    def __init__(self, kind: str):
        self.kind = kind
        self.r: list[np.ndarray] = []
        self.cidx: list[np.ndarray] = []
        self.cval: list[np.ndarray] = []
        self.h: list[float] = []

    def add(self, idx, val, const: float = 0.0):
        """Append one row: sum(val * x[idx]) + const."""
        idx = np.atleast_1d(np.asarray(idx, dtype=int))
        val = np.atleast_1d(np.asarray(val, dtype=float))
        row = len(self.h)
        self.r.append(np.full(len(idx), row))
        self.cidx.append(idx)
        self.cval.append(val)
        self.h.append(float(const))

    def add_const(self, const: float):
        self.add(np.empty(0, dtype=int), np.empty(0), const)

    def to_block(self, n: int) -> Block:
        m = len(self.h)
        if self.r:
            rows = np.concatenate(self.r)
            cols = np.concatenate(self.cidx)
            vals = np.concatenate(self.cval)
        else:
            rows = cols = np.empty(0, dtype=int)
            vals = np.empty(0)
        A = sp.csr_matrix((vals, (rows, cols)), shape=(m, n))
        return Block(kind=self.kind, A=A, b=np.asarray(self.h))


# ----------------------------------------------------------------- scaling

@dataclass
class NormalizedProgram:
    """Column- and row-scaled copy of a program.

    x_scaled = x / var_scales; each normalized row satisfies the same
    constraint as its source. ``row_scale`` per block maps slacks:
    s_norm = s_orig * row_scale (per-row for eq/nonneg, per-cone for
    soc/exp, broadcast over the cone's rows).
    """

    n: int
    c: np.ndarray
    obj_scale: float
    blocks: list[Block]
    row_scales: list[np.ndarray]
    var_scales: np.ndarray

    def scale_x(self, x: np.ndarray) -> np.ndarray:
        return x / self.var_scales

    def unscale_x(self, xs: np.ndarray) -> np.ndarray:
        return xs * self.var_scales


def normalize(p: ConicProgram) -> NormalizedProgram:
    d = p.var_scales
    tiny = 1e-300
    c = p.c * d
    obj_scale = max(float(np.max(np.abs(c))), tiny)
    c = c / obj_scale
    blocks, row_scales = [], []
    for blk in p.blocks:
        A = sp.csr_matrix(blk.A.multiply(d[None, :]))
        b = blk.b.copy()
        norms = np.sqrt(np.asarray(A.multiply(A).sum(axis=1)).ravel() + b ** 2)
        if blk.kind in (cones.EQ, cones.NONNEG):
            rs = 1.0 / np.maximum(norms, tiny)
        elif blk.kind == cones.SOC:
            rs = np.full(blk.rows, 1.0 / max(float(np.max(norms)), tiny))
        else:  # EXP: one scalar per packed cone
            per = norms.reshape(-1, 3).max(axis=1)
            rs = np.repeat(1.0 / np.maximum(per, tiny), 3)
        A = sp.csr_matrix(A.multiply(rs[:, None]))
        blocks.append(Block(kind=blk.kind, A=A, b=b * rs))
        row_scales.append(rs)
    return NormalizedProgram(n=p.n, c=c, obj_scale=obj_scale, blocks=blocks,
                             row_scales=row_scales, var_scales=d.copy())


# ------------------------------------------------------------ KKT residual

def _primal_violation(kind: str, s: np.ndarray) -> float:
    if kind == cones.EQ:
        return float(np.max(np.abs(s))) if len(s) else 0.0
    if kind == cones.NONNEG:
        return max(0.0, -float(np.min(s))) if len(s) else 0.0
    if kind == cones.SOC:
        return cones.soc_violation(s)
    return cones.exp_violation(s.reshape(-1, 3))


def _dual_violation(kind: str, z: np.ndarray) -> float:
    if kind == cones.EQ:
        return 0.0  # free dual
    if kind == cones.NONNEG:
        return cones.nonneg_dual_violation(z)
    if kind == cones.SOC:
        return cones.soc_dual_violation(z)
    return cones.exp_dual_violation(z.reshape(-1, 3))


def kkt_residual(p: ConicProgram, sol: ConicSolution) -> float:
    """Recompute the worst KKT residual of (p, sol) from scratch.

    Works on the normalized program; returns the max of primal
    feasibility, dual feasibility, dual cone violation and the
    complementarity gap, the latter two normalized by 1 + |objectives|.
    """
    norm = normalize(p)
    xs = norm.scale_x(sol.x)
    primal = 0.0
    dual_cone = 0.0
    gap = 0.0
    dual_obj = 0.0
    grad = norm.c.copy()
    for blk, z in zip(norm.blocks, sol.duals):
        s = blk.A @ xs + blk.b
        primal = max(primal, _primal_violation(blk.kind, s))
        if blk.kind == cones.EQ:
            grad += blk.A.T @ z
            dual_obj -= float(blk.b @ z)
        else:
            dual_cone = max(dual_cone, _dual_violation(blk.kind, z))
            grad -= blk.A.T @ z
            gap += float(s @ z)
            dual_obj -= float(blk.b @ z)
    pobj = float(norm.c @ xs)
    scale = 1.0 + abs(pobj) + abs(dual_obj)
    dual = float(np.max(np.abs(grad))) / (1.0 + float(np.max(np.abs(norm.c))))
    return max(primal, dual_cone, dual, abs(gap) / scale)


# -------------------------------------------------------------- debug dump

def program_to_json(p: ConicProgram) -> str:
    """Text form of a program for external cross-checking."""
    doc = {
        "n": p.n,
        "c": p.c.tolist(),
        "names": p.names,
        "var_scales": p.var_scales.tolist(),
        "blocks": [
            {
                "kind": blk.kind,
                "A": {
                    "shape": list(blk.A.shape),
                    "rows": blk.A.tocoo().row.tolist(),
                    "cols": blk.A.tocoo().col.tolist(),
                    "vals": blk.A.tocoo().data.tolist(),
                },
                "b": blk.b.tolist(),
            }
            for blk in p.blocks
        ],
    }
    return json.dumps(doc)
