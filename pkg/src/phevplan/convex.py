"""Convex-program container and a certified solve.

Programs have a separable convex quadratic objective, linear constraints,
finite box bounds and optional separable quadratic epigraph constraints

    q * x[w]**2 + a @ x - x[phi] <= 0.

The interior-point solver Clarabel does the numerical work.  The returned
point is then checked independently: constraint residuals are recomputed
and a Lagrangian dual bound is evaluated in closed form (the box makes every
coordinate's inner minimisation explicit), so the reported suboptimality
does not rest on the solver's own stopping test.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Optional

import clarabel
import numpy as np
import scipy.sparse as sp


class ConvexInfeasible(Exception):
    """The solver certified the program infeasible."""


class SolverFailure(Exception):
    """No point meeting the tolerances was found."""

    def __init__(self, message, residual=math.nan, rel_gap=math.nan):
        super().__init__(message)
        self.residual = residual
        self.rel_gap = rel_gap


@dataclass
class Epigraph:
    phi: int
    w: int
    q: float
    a_idx: np.ndarray
    a_val: np.ndarray


@dataclass
class ConvexProgram:
    """``min 0.5 * sum(p * x**2) + c @ x + const`` over the constraints."""

    c: np.ndarray
    p: np.ndarray
    a_eq: sp.csr_matrix
    b_eq: np.ndarray
    a_ub: sp.csr_matrix
    b_ub: np.ndarray
    lb: np.ndarray
    ub: np.ndarray
    const: float = 0.0
    epigraphs: list = field(default_factory=list)
    layout: dict = field(default_factory=dict)

    def __post_init__(self):
        n = self.c.shape[0]
        if self.p.shape != (n,) or self.lb.shape != (n,) or self.ub.shape != (n,):
            raise ValueError("objective and bound vectors must all have length n")
        if self.a_eq.shape != (self.b_eq.shape[0], n):
            raise ValueError("equality block has inconsistent dimensions")
        if self.a_ub.shape != (self.b_ub.shape[0], n):
            raise ValueError("inequality block has inconsistent dimensions")
        if np.any(self.p < 0):
            raise ValueError("objective must be convex (p >= 0)")
        if not (np.all(np.isfinite(self.lb)) and np.all(np.isfinite(self.ub))):
            raise ValueError("all variables need finite bounds")
        if np.any(self.lb > self.ub + 1e-12):
            raise ValueError("empty box: lb > ub")

    @property
    def n(self) -> int:
        return self.c.shape[0]

    def objective(self, x) -> float:
        return float(0.5 * np.dot(self.p, x * x) + self.c @ x + self.const)


@dataclass
class FractionalSolution:
    x: np.ndarray
    objective: float
    lower_bound: float
    residual: float
    rel_gap: float
    status: str
    layout: dict = field(default_factory=dict)

    def __getitem__(self, name):
        return self.x[self.layout[name]]

    @property
    def kkt_residual(self) -> float:
        return max(self.residual, self.rel_gap)


class LinearRows:
    """Accumulates sparse constraint rows as COO triplets."""

    def __init__(self):
        self.rows, self.cols, self.vals, self.rhs = [], [], [], []

    def add(self, coeffs: dict, rhs: float):
        i = len(self.rhs)
        for j, v in coeffs.items():
            if v != 0:
                self.rows.append(i)
                self.cols.append(j)
                self.vals.append(float(v))
        self.rhs.append(float(rhs))

    def build(self, n):
        m = len(self.rhs)
        mat = sp.csr_matrix((self.vals, (self.rows, self.cols)), shape=(m, n))
        mat.sum_duplicates()
        return mat, np.asarray(self.rhs, dtype=float)


def _row_norms(mat: sp.csr_matrix) -> np.ndarray:
    norms = np.sqrt(np.asarray(mat.multiply(mat).sum(axis=1)).ravel())
    return np.maximum(norms, 1.0)


def residuals(program: ConvexProgram, x: np.ndarray) -> float:
    """Largest constraint violation, each row scaled by its norm."""
    worst = 0.0
    if program.b_eq.size:
        worst = max(worst, float(np.max(
            np.abs(program.a_eq @ x - program.b_eq) / _row_norms(program.a_eq))))
    if program.b_ub.size:
        worst = max(worst, float(np.max(
            np.maximum(program.a_ub @ x - program.b_ub, 0.0) / _row_norms(program.a_ub))))
    worst = max(worst, float(np.max(np.maximum(program.lb - x, 0.0), initial=0.0)))
    worst = max(worst, float(np.max(np.maximum(x - program.ub, 0.0), initial=0.0)))
    for e in program.epigraphs:
        viol = e.q * x[e.w] ** 2 + float(e.a_val @ x[e.a_idx]) - x[e.phi]
        scale = max(1.0, math.sqrt(float(e.a_val @ e.a_val) + 1.0))
        worst = max(worst, viol / scale)
    return worst


def dual_bound(program: ConvexProgram, y: np.ndarray, lam: np.ndarray) -> float:
    """Lagrangian dual value at multipliers ``(y, lam)``; a valid lower bound.

    Epigraph multipliers are chosen to cancel the reduced cost of their
    epigraph variable, which is optimal for that coordinate.
    """
    lam = np.maximum(lam, 0.0)
    d = program.c + program.a_eq.T @ y + program.a_ub.T @ lam
    p = program.p.copy()
    for e in program.epigraphs:
        nu = max(d[e.phi], 0.0)
        if nu == 0.0:
            continue
        d[e.phi] -= nu
        np.add.at(d, e.a_idx, nu * e.a_val)
        p[e.w] += 2.0 * nu * e.q
    lo, hi = program.lb, program.ub
    xs = np.where(d >= 0, lo, hi)
    curved = p > 0
    xs[curved] = np.clip(-d[curved] / p[curved], lo[curved], hi[curved])
    inner = 0.5 * p * xs * xs + d * xs
    return float(inner.sum() - y @ program.b_eq - lam @ program.b_ub + program.const)


def solve_convex(
    program: ConvexProgram,
    feas_tol: float = 1e-6,
    gap_tol: float = 1e-4,
    max_iter: int = 200,
) -> FractionalSolution:
    """Solve ``program`` and certify the result.

    Raises ``ConvexInfeasible`` if the solver proves infeasibility and
    ``SolverFailure`` when the certified residual or gap misses tolerance.
    """
    n = program.n
    m_eq, m_ub = program.b_eq.size, program.b_ub.size
    eye = sp.identity(n, format="csr")
    blocks = [program.a_eq, program.a_ub, -eye, eye]
    rhs = [program.b_eq, program.b_ub, -program.lb, program.ub]
    cones = []
    if m_eq:
        cones.append(clarabel.ZeroConeT(m_eq))
    cones.append(clarabel.NonnegativeConeT(m_ub + 2 * n))
    for e in program.epigraphs:
        # q w^2 <= phi - a.x  as  ||(phi - a.x - 1, 2 sqrt(q) w)|| <= phi - a.x + 1
        lin = np.zeros(n)
        lin[e.phi] = 1.0
        np.add.at(lin, e.a_idx, -e.a_val)
        wrow = np.zeros(n)
        wrow[e.w] = 2.0 * math.sqrt(e.q)
        blocks.append(sp.csr_matrix(-np.vstack([lin, lin, wrow])))
        rhs.append(np.array([1.0, -1.0, 0.0]))
        cones.append(clarabel.SecondOrderConeT(3))
    a_all = sp.vstack(blocks, format="csc")
    b_all = np.concatenate(rhs)
    p_mat = sp.diags(program.p, format="csc")

    settings = clarabel.DefaultSettings()
    settings.verbose = False
    settings.max_iter = max_iter
    sol = clarabel.DefaultSolver(p_mat, program.c, a_all, b_all, cones, settings).solve()
    status = str(sol.status)
    if sol.status in (clarabel.SolverStatus.PrimalInfeasible,
                      clarabel.SolverStatus.AlmostPrimalInfeasible):
        raise ConvexInfeasible(f"solver reports {status}")

    x = np.clip(np.asarray(sol.x, dtype=float), program.lb, program.ub)
    z = np.asarray(sol.z, dtype=float)
    res = residuals(program, x)
    obj = program.objective(x)
    if not np.all(np.isfinite(x)):
        raise SolverFailure(f"solver returned non-finite iterate ({status})")
    lb = dual_bound(program, z[:m_eq], z[m_eq:m_eq + m_ub])
    rel_gap = max(obj - lb, 0.0) / max(1.0, abs(obj))
    if res > feas_tol or rel_gap > gap_tol:
        raise SolverFailure(
            f"{status}: residual {res:.2e}, relative gap {rel_gap:.2e}",
            residual=res, rel_gap=rel_gap,
        )
    return FractionalSolution(x, obj, lb, res, rel_gap, status, dict(program.layout))
