"""Small dense convex QP solver.

Minimizes 0.5*x'Hx + g'x subject to A_eq x = b_eq and A_in x <= b_in for
strictly convex H, via a primal active-set method.  Problems here are tiny
(n of 2 to 6), so every linear subproblem is solved densely.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Optional, Sequence

import numpy as np

from .errors import IllConditioned, Infeasible, MaxIterations, RankDeficient

_FEAS_TOL = 1e-9
_STAT_TOL = 1e-8
_PD_PIVOT = 1e-12


@dataclass(frozen=True)
class QpProblem:
    """Strictly convex QP with optional equality and inequality rows."""

    H: np.ndarray
    g: np.ndarray
    A_eq: Optional[np.ndarray] = None
    b_eq: Optional[np.ndarray] = None
    A_in: Optional[np.ndarray] = None
    b_in: Optional[np.ndarray] = None

    def __post_init__(self):
        H = np.atleast_2d(np.asarray(self.H, dtype=float))
        g = np.atleast_1d(np.asarray(self.g, dtype=float))
        n = g.size
        if H.shape != (n, n):
            raise ValueError("H must be n x n with n = len(g)")
        if np.max(np.abs(H - H.T)) > 1e-12 * max(1.0, np.max(np.abs(H))):
            raise ValueError("H must be symmetric to 1e-12")
        object.__setattr__(self, "H", H)
        object.__setattr__(self, "g", g)
        for name_a, name_b in (("A_eq", "b_eq"), ("A_in", "b_in")):
            A = getattr(self, name_a)
            b = getattr(self, name_b)
            if (A is None) != (b is None):
                raise ValueError(f"{name_a} and {name_b} must come together")
            if A is not None:
                A = np.atleast_2d(np.asarray(A, dtype=float))
                b = np.atleast_1d(np.asarray(b, dtype=float))
                if A.shape != (b.size, n):
                    raise ValueError(f"{name_a} shape mismatch")
                object.__setattr__(self, name_a, A)
                object.__setattr__(self, name_b, b)
        if self.A_eq is not None and self.A_eq.shape[0] > n:
            raise ValueError("more equality rows than variables")

    @property
    def n(self) -> int:
        return self.g.size

    @property
    def n_eq(self) -> int:
        return 0 if self.A_eq is None else self.A_eq.shape[0]

    @property
    def n_in(self) -> int:
        return 0 if self.A_in is None else self.A_in.shape[0]


@dataclass(frozen=True)
class QpSolution:
    x: np.ndarray
    active_set: tuple          # indices into the inequality rows
    objective_value: float
    iterations: int


def _check_pd(H: np.ndarray) -> None:
    """Cholesky-based positive-definiteness check with a pivot floor."""
    try:
        L = np.linalg.cholesky(H)
    except np.linalg.LinAlgError:
        raise IllConditioned("H is not positive definite")
    if np.min(np.diag(L)) ** 2 < _PD_PIVOT * max(1.0, float(np.max(np.diag(H)))):
        raise IllConditioned("H pivot below tolerance")


def _kkt_step(H, grad, A_w):
    """Step p minimizing 0.5 p'Hp + grad'p with A_w p = 0, and multipliers."""
    n = H.shape[1]
    m = 0 if A_w is None or A_w.size == 0 else A_w.shape[0]
    if m == 0:
        return np.linalg.solve(H, -grad), np.zeros(0)
    K = np.zeros((n + m, n + m))
    K[:n, :n] = H
    K[:n, n:] = A_w.T
    K[n:, :n] = A_w
    rhs = np.concatenate([-grad, np.zeros(m)])
    try:
        sol = np.linalg.solve(K, rhs)
    except np.linalg.LinAlgError:
        sol, *_ = np.linalg.lstsq(K, rhs, rcond=None)
    return sol[:n], sol[n:]


def _feasible_start(problem: QpProblem) -> np.ndarray:
    """A feasible point, via least-norm equality solve then phase 1."""
    n = problem.n
    x = np.zeros(n)
    if problem.n_eq:
        A, b = problem.A_eq, problem.b_eq
        try:
            x = A.T @ np.linalg.solve(A @ A.T, b)
        except np.linalg.LinAlgError:
            sol, *_ = np.linalg.lstsq(A, b, rcond=None)
            x = sol
        if np.max(np.abs(A @ x - b)) > _FEAS_TOL:
            raise Infeasible("inconsistent equality constraints")
    if problem.n_in == 0:
        return x
    viol = problem.A_in @ x - problem.b_in
    if np.max(viol) <= _FEAS_TOL:
        return x
    # phase 1: shrink slacks s >= violation to zero in an expanded QP
    m = problem.n_in
    s0 = np.maximum(viol, 0.0) + 1.0
    H1 = np.zeros((n + m, n + m))
    H1[:n, :n] = 1e-8 * np.eye(n)
    H1[n:, n:] = np.eye(m)
    g1 = np.zeros(n + m)
    A_in1 = np.block([
        [problem.A_in, -np.eye(m)],        # Ax - s <= b
        [np.zeros((m, n)), -np.eye(m)],    # s >= 0
    ])
    b_in1 = np.concatenate([problem.b_in, np.zeros(m)])
    A_eq1 = b_eq1 = None
    if problem.n_eq:
        A_eq1 = np.hstack([problem.A_eq, np.zeros((problem.n_eq, m))])
        b_eq1 = problem.b_eq
    aux = QpProblem(H1, g1, A_eq1, b_eq1, A_in1, b_in1)
    sol = _active_set(aux, np.concatenate([x, s0]))
    s = sol.x[n:]
    if np.max(s) > 1e-3:
        raise Infeasible("no point satisfies the inequality constraints")
    x = sol.x[:n]
    # phase 1 leaves a nonzero slack floor from its x-regularization;
    # remove it with least-norm corrections that land exactly on the
    # violated faces while holding the equality rows
    last = np.inf
    for _ in range(50):
        viol = problem.A_in @ x - problem.b_in
        worst = float(np.max(viol))
        if worst <= _FEAS_TOL:
            return x
        if worst >= last:
            break
        last = worst
        vio = np.flatnonzero(viol > 0.0)
        rows = [problem.A_in[vio]]
        rhs = [-viol[vio]]
        if problem.n_eq:
            rows.append(problem.A_eq)
            rhs.append(np.zeros(problem.n_eq))
        A_c = np.vstack(rows)
        r_c = np.concatenate(rhs)
        dx, *_ = np.linalg.lstsq(A_c, r_c, rcond=None)
        x = x + dx
    raise Infeasible("no point satisfies the inequality constraints")


def _active_set(problem: QpProblem, x0: np.ndarray,
                warm_start: Sequence[int] = ()) -> QpSolution:
    H, g = problem.H, problem.g
    A_in, b_in = problem.A_in, problem.b_in
    n_eq = problem.n_eq
    m = problem.n_in
    x = np.asarray(x0, dtype=float).copy()

    work = [i for i in sorted(set(int(j) for j in warm_start))
            if 0 <= i < m and abs(float(A_in[i] @ x - b_in[i])) <= _FEAS_TOL]
    cap = 100 * (m + n_eq) + 20
    for it in range(1, cap + 1):
        rows = []
        if n_eq:
            rows.append(problem.A_eq)
        if work:
            rows.append(A_in[work])
        A_w = np.vstack(rows) if rows else None
        grad = H @ x + g
        p, lam = _kkt_step(H, grad, A_w)
        if np.linalg.norm(p) <= 1e-11 * max(1.0, np.linalg.norm(x)):
            lam_in = lam[n_eq:] if A_w is not None else np.zeros(0)
            if lam_in.size == 0 or np.min(lam_in) >= -_STAT_TOL:
                # re-solve exactly at the final working set to shed the
                # error accumulated over the step sequence
                if A_w is not None:
                    b_w = np.concatenate([
                        problem.b_eq if n_eq else np.zeros(0),
                        b_in[work] if work else np.zeros(0),
                    ])
                    nw = A_w.shape[0]
                    K = np.zeros((problem.n + nw, problem.n + nw))
                    K[:problem.n, :problem.n] = H
                    K[:problem.n, problem.n:] = A_w.T
                    K[problem.n:, :problem.n] = A_w
                    try:
                        sol = np.linalg.solve(
                            K, np.concatenate([-g, b_w])
                        )
                        xs = sol[:problem.n]
                    except np.linalg.LinAlgError:
                        xs = x
                    ok = (m == 0 or
                          np.max(A_in @ xs - b_in) <= _FEAS_TOL)
                    if ok:
                        x = xs
                else:
                    x = np.linalg.solve(H, -g)
                obj = float(0.5 * x @ H @ x + g @ x)
                return QpSolution(x, tuple(sorted(work)), obj, it)
            # drop the most negative multiplier, lowest row index on ties
            lo = float(np.min(lam_in))
            worst = min(
                k for k, l in enumerate(lam_in) if l <= lo + 1e-15
            )
            work.pop(worst)
            continue
        # longest feasible step along p
        alpha = 1.0
        block = -1
        if m:
            others = [i for i in range(m) if i not in work]
            if others:
                Ao = A_in[others]
                denom = Ao @ p
                room = b_in[others] - Ao @ x
                for j, i in enumerate(others):
                    if denom[j] > 1e-13:
                        a = room[j] / denom[j]
                        if a < alpha - 1e-15:
                            alpha, block = a, i
        alpha = max(alpha, 0.0)
        x = x + alpha * p
        if block >= 0:
            work.append(block)
            work.sort()
    raise MaxIterations(f"active-set cap of {cap} iterations exceeded")


def solve(problem: QpProblem, warm_start: Sequence[int] = ()) -> QpSolution:
    """Global minimizer of a strictly convex QP.

    warm_start is an optional hint of inequality rows expected active.
    """
    _check_pd(problem.H)
    x0 = _feasible_start(problem)
    return _active_set(problem, x0, warm_start)


def least_norm_update(A_eq: np.ndarray, b_eq: np.ndarray, n: int) -> np.ndarray:
    """Minimum-two-norm solution of A_eq x = b_eq (H = I, g = 0 case)."""
    A = np.atleast_2d(np.asarray(A_eq, dtype=float))
    b = np.atleast_1d(np.asarray(b_eq, dtype=float))
    if A.shape != (b.size, n):
        raise ValueError("A_eq must be (len(b_eq), n)")
    G = A @ A.T
    try:
        L = np.linalg.cholesky(G)
    except np.linalg.LinAlgError:
        raise RankDeficient("equality rows are linearly dependent")
    if np.min(np.diag(L)) ** 2 < _PD_PIVOT * max(1.0, float(np.max(np.abs(G)))):
        raise RankDeficient("equality rows nearly dependent")
    y = np.linalg.solve(G, b)
    return A.T @ y
