"""Shared QP containers: flat dense QPs, multi-stage optimal-control QPs,
solver results and the independent KKT residual checker.

Conventions used throughout the package:

* objective is ``0.5 z'Hz + g'z + const`` (the builders fold reference
  offsets into ``g`` and ``const`` so objective values are directly
  comparable across sparse/condensed formulations);
* two-sided inequalities ``lo <= Cz [+ Du] <= hi`` with ``+/-inf`` for
  one-sided rows;
* box bounds with ``lo == hi`` mark fixed variables and are eliminated
  before a solver ever sees them.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

# Bounds with magnitude at or above this are treated as infinite.
INF_BOUND = 1e20

OPTIMAL = "optimal"
MAX_ITER = "max_iter"
INFEASIBLE = "infeasible"
NUMERICAL_FAILURE = "numerical_failure"


def _as_matrix(a, rows, cols, name):
    a = np.asarray(a, dtype=float)
    if a.shape != (rows, cols):
        raise ValueError(f"{name} must have shape {(rows, cols)}, got {a.shape}")
    return a


def _as_vector(a, n, name):
    a = np.asarray(a, dtype=float)
    if a.shape != (n,):
        raise ValueError(f"{name} must have shape ({n},), got {a.shape}")
    return a


def _check_symmetric(m, name, tol=1e-9):
    if m.size and np.max(np.abs(m - m.T)) > tol * (1.0 + np.max(np.abs(m))):
        raise ValueError(f"{name} must be symmetric")


@dataclass
class DenseQp:
    """min 0.5 z'Hz + g'z + const  s.t.  A_eq z = b_eq,
    lo <= C z <= hi,  lb <= z <= ub."""

    H: np.ndarray
    g: np.ndarray
    A_eq: np.ndarray | None = None
    b_eq: np.ndarray | None = None
    C: np.ndarray | None = None
    lo: np.ndarray | None = None
    hi: np.ndarray | None = None
    lb: np.ndarray | None = None
    ub: np.ndarray | None = None
    const: float = 0.0

    def __post_init__(self):
        self.H = np.asarray(self.H, dtype=float)
        n = self.H.shape[0]
        self.H = _as_matrix(self.H, n, n, "H")
        _check_symmetric(self.H, "H")
        self.g = _as_vector(self.g, n, "g")
        m_eq = 0 if self.A_eq is None else np.asarray(self.A_eq).shape[0]
        self.A_eq = _as_matrix(self.A_eq if self.A_eq is not None else np.zeros((0, n)), m_eq, n, "A_eq")
        self.b_eq = _as_vector(self.b_eq if self.b_eq is not None else np.zeros(0), m_eq, "b_eq")
        m_in = 0 if self.C is None else np.asarray(self.C).shape[0]
        self.C = _as_matrix(self.C if self.C is not None else np.zeros((0, n)), m_in, n, "C")
        self.lo = _as_vector(self.lo if self.lo is not None else np.full(0, -np.inf), m_in, "lo")
        self.hi = _as_vector(self.hi if self.hi is not None else np.full(0, np.inf), m_in, "hi")
        self.lb = _as_vector(self.lb if self.lb is not None else np.full(n, -np.inf), n, "lb")
        self.ub = _as_vector(self.ub if self.ub is not None else np.full(n, np.inf), n, "ub")
        if np.any(self.lo > self.hi):
            raise ValueError("inequality bounds must satisfy lo <= hi rowwise")
        if np.any(self.lb > self.ub):
            raise ValueError("box bounds must satisfy lb <= ub")

    @property
    def n(self) -> int:
        return self.H.shape[0]

    @property
    def n_eq(self) -> int:
        return self.A_eq.shape[0]

    @property
    def n_ineq(self) -> int:
        """Inequality rows: general rows plus box rows with a finite bound
        (two-sided rows count once)."""
        boxes = int(np.sum((self.lb > -INF_BOUND) | (self.ub < INF_BOUND)))
        return self.C.shape[0] + boxes

    def objective(self, z) -> float:
        z = np.asarray(z, dtype=float)
        return float(0.5 * z @ self.H @ z + self.g @ z + self.const)


@dataclass
class Stage:
    """One stage of a multi-stage QP.

    Dynamics map this stage's (x, u) to the next state:
    ``x_next = A x + B u + b``.  The cost on this stage is
    ``0.5 x'Qx + q'x + 0.5 u'Ru + r'u + u'Sx + const`` and the general
    inequality rows read ``lo <= C x + D u <= hi``.
    """

    A: np.ndarray
    B: np.ndarray
    b: np.ndarray
    Q: np.ndarray
    q: np.ndarray
    R: np.ndarray
    r: np.ndarray
    S: np.ndarray
    u_lo: np.ndarray
    u_hi: np.ndarray
    C: np.ndarray
    D: np.ndarray
    lo: np.ndarray
    hi: np.ndarray
    const: float = 0.0

    def __post_init__(self):
        self.A = np.asarray(self.A, dtype=float)
        nx = self.A.shape[0]
        self.B = np.asarray(self.B, dtype=float)
        nu = self.B.shape[1]
        self.A = _as_matrix(self.A, nx, nx, "A")
        self.B = _as_matrix(self.B, nx, nu, "B")
        self.b = _as_vector(self.b, nx, "b")
        self.Q = _as_matrix(self.Q, nx, nx, "Q")
        _check_symmetric(self.Q, "Q")
        self.q = _as_vector(self.q, nx, "q")
        self.R = _as_matrix(self.R, nu, nu, "R")
        _check_symmetric(self.R, "R")
        self.r = _as_vector(self.r, nu, "r")
        self.S = _as_matrix(self.S, nu, nx, "S")
        self.u_lo = _as_vector(self.u_lo, nu, "u_lo")
        self.u_hi = _as_vector(self.u_hi, nu, "u_hi")
        m = np.asarray(self.C).shape[0]
        self.C = _as_matrix(self.C, m, nx, "C")
        self.D = _as_matrix(self.D, m, nu, "D")
        self.lo = _as_vector(self.lo, m, "lo")
        self.hi = _as_vector(self.hi, m, "hi")
        if np.any(self.u_lo > self.u_hi) or np.any(self.lo > self.hi):
            raise ValueError("stage bounds must satisfy lo <= hi")

    @property
    def n_x(self) -> int:
        return self.A.shape[0]

    @property
    def n_u(self) -> int:
        return self.B.shape[1]

    @property
    def n_general(self) -> int:
        return self.C.shape[0]


def make_stage(nx, nu, m=0, **over) -> Stage:
    """Zero-initialized stage, fields overridable by keyword."""
    base = dict(
        A=np.zeros((nx, nx)), B=np.zeros((nx, nu)), b=np.zeros(nx),
        Q=np.zeros((nx, nx)), q=np.zeros(nx),
        R=np.zeros((nu, nu)), r=np.zeros(nu), S=np.zeros((nu, nx)),
        u_lo=np.full(nu, -np.inf), u_hi=np.full(nu, np.inf),
        C=np.zeros((m, nx)), D=np.zeros((m, nu)),
        lo=np.full(m, -np.inf), hi=np.full(m, np.inf),
    )
    base.update(over)
    return Stage(**base)


@dataclass
class StagewiseQp:
    """Multi-stage QP over states x_0..x_N and inputs u_0..u_{N-1}.

    Equality constraints are the initial condition ``x_0 = x0`` followed by
    the N dynamics blocks.  The terminal state carries its own cost
    ``0.5 x_N' Q_N x_N + q_N' x_N + const_N``.
    """

    stages: list[Stage]
    Q_N: np.ndarray
    q_N: np.ndarray
    x0: np.ndarray
    const_N: float = 0.0

    def __post_init__(self):
        if not self.stages:
            raise ValueError("at least one stage required")
        nx = self.stages[0].n_x
        for k, st in enumerate(self.stages):
            if st.n_x != nx:
                raise ValueError(f"stage {k} state dim {st.n_x} != {nx}")
        self.Q_N = _as_matrix(np.asarray(self.Q_N, dtype=float), nx, nx, "Q_N")
        _check_symmetric(self.Q_N, "Q_N")
        self.q_N = _as_vector(self.q_N, nx, "q_N")
        self.x0 = _as_vector(self.x0, nx, "x0")

    @property
    def N(self) -> int:
        return len(self.stages)

    @property
    def n_x(self) -> int:
        return self.stages[0].n_x

    @property
    def n_vars(self) -> int:
        return self.n_x * (self.N + 1) + sum(st.n_u for st in self.stages)

    @property
    def n_eq(self) -> int:
        return self.n_x * (self.N + 1)

    @property
    def n_ineq(self) -> int:
        """General rows plus input box rows with at least one finite bound."""
        total = 0
        for st in self.stages:
            total += st.n_general
            total += int(np.sum((st.u_lo > -INF_BOUND) | (st.u_hi < INF_BOUND)))
        return total

    def objective(self, xs, us) -> float:
        xs = [np.asarray(x, dtype=float) for x in xs]
        us = [np.asarray(u, dtype=float) for u in us]
        if len(xs) != self.N + 1 or len(us) != self.N:
            raise ValueError("trajectory length mismatch")
        val = 0.0
        for st, x, u in zip(self.stages, xs, us):
            val += 0.5 * x @ st.Q @ x + st.q @ x + st.const
            val += 0.5 * u @ st.R @ u + st.r @ u + u @ st.S @ x
        xN = xs[-1]
        val += 0.5 * xN @ self.Q_N @ xN + self.q_N @ xN + self.const_N
        return float(val)

    def dynamics_residual(self, xs, us) -> float:
        """Infinity norm of the initial-condition and dynamics defects."""
        res = np.max(np.abs(np.asarray(xs[0]) - self.x0))
        for k, st in enumerate(self.stages):
            defect = np.asarray(xs[k + 1]) - (st.A @ xs[k] + st.B @ us[k] + st.b)
            if defect.size:
                res = max(res, float(np.max(np.abs(defect))))
        return float(res)


@dataclass
class KktResiduals:
    stationarity: float
    primal: float
    dual: float
    complementarity: float

    def max(self) -> float:
        return max(self.stationarity, self.primal, self.dual, self.complementarity)

    def as_dict(self) -> dict:
        return {
            "stationarity": self.stationarity,
            "primal": self.primal,
            "dual": self.dual,
            "complementarity": self.complementarity,
        }


@dataclass
class QpSolution:
    """Solver result.  ``primal`` is the flat variable vector; for stagewise
    problems it is ``[x_0..x_N, u_0..u_{N-1}]`` concatenated in that order.

    Duals follow the sign convention of the Lagrangian
    ``f + nu' r_eq + lam_hi'(c - hi) + lam_lo'(lo - c)`` so all inequality
    multipliers are nonnegative at an optimum.
    """

    primal: np.ndarray
    eq_dual: np.ndarray
    ineq_dual_lo: np.ndarray
    ineq_dual_hi: np.ndarray
    box_dual_lo: np.ndarray
    box_dual_hi: np.ndarray
    status: str
    iterations: int
    kkt_residuals: KktResiduals
    flops: int
    solve_time: float = 0.0
    objective: float = np.nan
    info: dict = field(default_factory=dict)

    @property
    def optimal(self) -> bool:
        return self.status == OPTIMAL


def split_trajectory(qp: StagewiseQp, primal: np.ndarray):
    """Split a flat stagewise primal vector into (xs, us) lists."""
    nx, N = qp.n_x, qp.N
    xs = [primal[k * nx:(k + 1) * nx] for k in range(N + 1)]
    off = nx * (N + 1)
    us = []
    for st in qp.stages:
        us.append(primal[off:off + st.n_u])
        off += st.n_u
    return xs, us


def join_trajectory(xs, us) -> np.ndarray:
    return np.concatenate([np.concatenate(xs), np.concatenate(us) if us else np.zeros(0)])


def _bound_violation(v, lo, hi):
    if v.size == 0:
        return 0.0
    below = np.where(lo > -INF_BOUND, np.maximum(lo - v, 0.0), 0.0)
    above = np.where(hi < INF_BOUND, np.maximum(v - hi, 0.0), 0.0)
    return float(max(np.max(below, initial=0.0), np.max(above, initial=0.0)))


def _comp_terms(slack_lo, slack_hi, lam_lo, lam_hi, lo, hi):
    c = 0.0
    if slack_lo.size:
        mask = lo > -INF_BOUND
        if np.any(mask):
            c = max(c, float(np.max(np.abs(slack_lo[mask] * lam_lo[mask]))))
        mask = hi < INF_BOUND
        if np.any(mask):
            c = max(c, float(np.max(np.abs(slack_hi[mask] * lam_hi[mask]))))
    return c


def kkt_residuals_dense(qp: DenseQp, sol: QpSolution) -> KktResiduals:
    """Recompute KKT residuals of a dense solution from first principles,
    independent of whatever the solver tracked internally."""
    z = sol.primal
    lam = sol.ineq_dual_hi - sol.ineq_dual_lo
    beta = sol.box_dual_hi - sol.box_dual_lo
    grad = qp.H @ z + qp.g + qp.A_eq.T @ sol.eq_dual + qp.C.T @ lam + beta
    stat = float(np.max(np.abs(grad), initial=0.0))

    primal = float(np.max(np.abs(qp.A_eq @ z - qp.b_eq), initial=0.0))
    cz = qp.C @ z
    primal = max(primal, _bound_violation(cz, qp.lo, qp.hi))
    primal = max(primal, _bound_violation(z, qp.lb, qp.ub))

    dual = float(max(
        np.max(-sol.ineq_dual_lo, initial=0.0), np.max(-sol.ineq_dual_hi, initial=0.0),
        np.max(-sol.box_dual_lo, initial=0.0), np.max(-sol.box_dual_hi, initial=0.0),
    ))

    comp = _comp_terms(cz - qp.lo, qp.hi - cz, sol.ineq_dual_lo, sol.ineq_dual_hi, qp.lo, qp.hi)
    comp = max(comp, _comp_terms(z - qp.lb, qp.ub - z, sol.box_dual_lo, sol.box_dual_hi, qp.lb, qp.ub))
    return KktResiduals(stat, primal, dual, comp)


def kkt_residuals_stagewise(qp: StagewiseQp, sol: QpSolution) -> KktResiduals:
    """Independent KKT check for stagewise solutions.

    Equality duals are ordered [nu_0 (initial condition), nu_1..nu_N
    (dynamics)], general-inequality duals stage by stage, box duals input
    entry by input entry.
    """
    xs, us = split_trajectory(qp, sol.primal)
    nx, N = qp.n_x, qp.N
    nus = [sol.eq_dual[k * nx:(k + 1) * nx] for k in range(N + 1)]

    g_off = 0
    b_off = 0
    stat = 0.0
    primal = float(np.max(np.abs(xs[0] - qp.x0), initial=0.0))
    dual = float(max(
        np.max(-sol.ineq_dual_lo, initial=0.0), np.max(-sol.ineq_dual_hi, initial=0.0),
        np.max(-sol.box_dual_lo, initial=0.0), np.max(-sol.box_dual_hi, initial=0.0),
    ))
    comp = 0.0
    for k, st in enumerate(qp.stages):
        m, nu_dim = st.n_general, st.n_u
        lam_lo = sol.ineq_dual_lo[g_off:g_off + m]
        lam_hi = sol.ineq_dual_hi[g_off:g_off + m]
        beta_lo = sol.box_dual_lo[b_off:b_off + nu_dim]
        beta_hi = sol.box_dual_hi[b_off:b_off + nu_dim]
        g_off += m
        b_off += nu_dim
        lam = lam_hi - lam_lo

        gx = st.Q @ xs[k] + st.q + st.S.T @ us[k] + nus[k] - st.A.T @ nus[k + 1] + st.C.T @ lam
        gu = st.R @ us[k] + st.r + st.S @ xs[k] - st.B.T @ nus[k + 1] + st.D.T @ lam + (beta_hi - beta_lo)
        stat = max(stat, float(np.max(np.abs(gx), initial=0.0)), float(np.max(np.abs(gu), initial=0.0)))

        defect = xs[k + 1] - (st.A @ xs[k] + st.B @ us[k] + st.b)
        primal = max(primal, float(np.max(np.abs(defect), initial=0.0)))
        c = st.C @ xs[k] + st.D @ us[k]
        primal = max(primal, _bound_violation(c, st.lo, st.hi))
        primal = max(primal, _bound_violation(us[k], st.u_lo, st.u_hi))

        comp = max(comp, _comp_terms(c - st.lo, st.hi - c, lam_lo, lam_hi, st.lo, st.hi))
        comp = max(comp, _comp_terms(us[k] - st.u_lo, st.u_hi - us[k], beta_lo, beta_hi, st.u_lo, st.u_hi))

    gxN = qp.Q_N @ xs[N] + qp.q_N + nus[N]
    stat = max(stat, float(np.max(np.abs(gxN), initial=0.0)))
    return KktResiduals(stat, primal, dual, comp)


class FixedVariableMap:
    """Bookkeeping for eliminating variables with lb == ub from a DenseQp."""

    def __init__(self, fixed_idx, fixed_val, free_idx, kept_rows, keep_eq, n, m_in):
        self.fixed_idx = fixed_idx
        self.fixed_val = fixed_val
        self.free_idx = free_idx
        self.kept_rows = kept_rows
        self.keep_eq = keep_eq
        self.n = n
        self.m_in = m_in

    def expand_primal(self, z_red):
        z = np.empty(self.n)
        z[self.free_idx] = z_red
        z[self.fixed_idx] = self.fixed_val
        return z

    def expand_solution(self, qp: DenseQp, red_sol: QpSolution) -> QpSolution:
        z = self.expand_primal(red_sol.primal)
        lam_lo = np.zeros(self.m_in)
        lam_hi = np.zeros(self.m_in)
        lam_lo[self.kept_rows] = red_sol.ineq_dual_lo
        lam_hi[self.kept_rows] = red_sol.ineq_dual_hi
        box_lo = np.zeros(self.n)
        box_hi = np.zeros(self.n)
        box_lo[self.free_idx] = red_sol.box_dual_lo
        box_hi[self.free_idx] = red_sol.box_dual_hi
        # Fixed entries act as equalities: recover their (free-sign) multiplier
        # from stationarity and split it into the lo/hi parts.
        if len(self.fixed_idx):
            lam = lam_hi - lam_lo
            grad = qp.H @ z + qp.g + qp.A_eq.T @ red_sol.eq_dual + qp.C.T @ lam
            beta = -grad[self.fixed_idx]
            box_hi[self.fixed_idx] = np.maximum(beta, 0.0)
            box_lo[self.fixed_idx] = np.maximum(-beta, 0.0)
        sol = QpSolution(
            primal=z, eq_dual=red_sol.eq_dual,
            ineq_dual_lo=lam_lo, ineq_dual_hi=lam_hi,
            box_dual_lo=box_lo, box_dual_hi=box_hi,
            status=red_sol.status, iterations=red_sol.iterations,
            kkt_residuals=red_sol.kkt_residuals, flops=red_sol.flops,
            solve_time=red_sol.solve_time, objective=red_sol.objective,
            info=red_sol.info,
        )
        sol.kkt_residuals = kkt_residuals_dense(qp, sol)
        return sol


def eliminate_fixed_variables(qp: DenseQp):
    """Substitute out variables with lb == ub.

    Returns (reduced_qp, map) or (None, infeasible_row) when a constraint row
    becomes constant and violated.  Rows whose coefficients vanish after the
    substitution are dropped (their duals expand to zero).
    """
    fixed = qp.lb == qp.ub
    if not np.any(fixed):
        return qp, None
    fixed_idx = np.where(fixed)[0]
    free_idx = np.where(~fixed)[0]
    v = qp.lb[fixed_idx]

    g = qp.g[free_idx] + qp.H[np.ix_(free_idx, fixed_idx)] @ v
    const = qp.const + 0.5 * v @ qp.H[np.ix_(fixed_idx, fixed_idx)] @ v + qp.g[fixed_idx] @ v
    b_eq = qp.b_eq - qp.A_eq[:, fixed_idx] @ v
    A_eq = qp.A_eq[:, free_idx]
    zero_eq = ~np.any(A_eq != 0.0, axis=1)
    if np.any(zero_eq & (np.abs(b_eq) > 1e-9)):
        return None, int(np.where(zero_eq & (np.abs(b_eq) > 1e-9))[0][0])
    keep_eq = ~zero_eq

    shift = qp.C[:, fixed_idx] @ v
    C = qp.C[:, free_idx]
    lo = qp.lo - shift
    hi = qp.hi - shift
    zero_rows = ~np.any(C != 0.0, axis=1)
    bad = zero_rows & ((lo > 1e-9) | (hi < -1e-9))
    if np.any(bad):
        return None, int(np.where(bad)[0][0])
    kept_rows = np.where(~zero_rows)[0]

    red = DenseQp(
        H=qp.H[np.ix_(free_idx, free_idx)], g=g,
        A_eq=A_eq[keep_eq], b_eq=b_eq[keep_eq],
        C=C[kept_rows], lo=lo[kept_rows], hi=hi[kept_rows],
        lb=qp.lb[free_idx], ub=qp.ub[free_idx], const=float(const),
    )
    fmap = FixedVariableMap(fixed_idx, v, free_idx, kept_rows, qp.n, qp.C.shape[0])
    fmap.keep_eq = keep_eq
    return red, fmap
