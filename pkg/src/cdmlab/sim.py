"""Quasi-static planar simulator of a cable-driven continuum arm.

The arm is a chain of circular-arc links with nonlinear torsional joints,
driven antagonistically by two cables.  Positive joint angles bend the arm
toward negative lateral coordinates (the cable-1 side).  All lengths are in
mm, joint angles in rad, and exposed curvatures in 1/m.

Equilibrium is the minimizer of total elastic energy (quadratic + quartic
joint terms) plus quadratic obstacle-penetration penalties, subject to the
antagonistic cable-routing constraint on the total bend angle (the pull
difference sets the angle sum exactly) and per-joint curvature caps.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Optional, Sequence

import numpy as np

from .errors import (
    ArcLengthOutOfRange,
    NoConvergence,
    PullExceedsCurvatureLimit,
)

MM_PER_M = 1000.0

# Default joint-law shape, fitted numerically (scripts/fit_plant.py) so that
# (a) the bench targets lie on the arm's reachable tip curve, (b) the
# pull-to-tip sensitivity grows over the working range (distal joints harden
# first, migrating marginal bending toward the base), and (c) the curvature
# profile stays near-affine in arc length at every pull, keeping the
# three-point sensing reconstruction accurate.  The reciprocal-affine forms
# give an exactly affine profile in both the linear-spring and
# hardening-dominated limits.  Stiffness in N*mm/rad, hardening in
# N*mm/rad^3.
DEFAULT_STIFFNESS_SCALE = 9000.0
DEFAULT_STIFFNESS_GRADE_1 = -1.116165
DEFAULT_STIFFNESS_GRADE_2 = 0.806891
DEFAULT_HARDENING_RATIO = 45.251909
DEFAULT_HARDENING_GRADE = -0.576043

_GRAD_TOL = 1e-8
_MAX_INNER_ITER = 500


def _sinc(x: np.ndarray) -> np.ndarray:
    """sin(x)/x, exact at 0."""
    return np.sinc(np.asarray(x) / np.pi)


def _dsinc(x: np.ndarray) -> np.ndarray:
    """Derivative of sin(x)/x, series-stabilized near 0."""
    x = np.asarray(x, dtype=float)
    small = np.abs(x) < 1e-4
    xs = np.where(small, 1.0, x)
    exact = (np.cos(xs) - _sinc(xs)) / xs
    series = -x / 3.0 + (x ** 3) / 30.0
    return np.where(small, series, exact)


@dataclass(frozen=True)
class CdmConfig:
    """Geometry and joint-law parameters of the simulated arm."""

    n_links: int = 20
    active_length: float = 34.0
    cable_offset: float = 2.5
    joint_stiffness: tuple = ()        # N*mm/rad, per link
    joint_hardening: tuple = ()        # N*mm/rad^3, per link
    kappa_max: float = 166.7           # 1/m
    contact_stiffness_hard: float = 1.0e4   # N/mm
    contact_stiffness_soft: float = 5.0     # N/mm

    def __post_init__(self):
        if self.n_links < 3:
            raise ValueError("n_links must be >= 3")
        if self.active_length <= 0 or self.cable_offset <= 0:
            raise ValueError("geometry must be positive")
        if self.contact_stiffness_soft <= 0 or (
            self.contact_stiffness_hard <= self.contact_stiffness_soft
        ):
            raise ValueError("need contact_stiffness_hard > soft > 0")
        if not self.joint_stiffness:
            object.__setattr__(
                self, "joint_stiffness", self._graded_stiffness(self.n_links)
            )
        if not self.joint_hardening:
            object.__setattr__(
                self, "joint_hardening", self._graded_hardening(self.n_links)
            )
        if len(self.joint_stiffness) != self.n_links or len(
            self.joint_hardening
        ) != self.n_links:
            raise ValueError("joint-law arrays must have n_links entries")
        if min(self.joint_stiffness) <= 0:
            raise ValueError("joint stiffness must be positive")
        if min(self.joint_hardening) < 0:
            raise ValueError("joint hardening must be non-negative")

    @staticmethod
    def _graded_stiffness(n: int) -> tuple:
        xi = (np.arange(n) + 0.5) / n
        k = DEFAULT_STIFFNESS_SCALE / (
            1.0
            + DEFAULT_STIFFNESS_GRADE_1 * xi
            + DEFAULT_STIFFNESS_GRADE_2 * xi ** 2
        )
        return tuple(k)

    @staticmethod
    def _graded_hardening(n: int) -> tuple:
        xi = (np.arange(n) + 0.5) / n
        q = DEFAULT_STIFFNESS_SCALE * DEFAULT_HARDENING_RATIO / (
            1.0 + DEFAULT_HARDENING_GRADE * xi
        ) ** 3
        return tuple(q)

    @classmethod
    def uniform(cls, stiffness: float = 4000.0, hardening: float = 0.0,
                **kwargs) -> "CdmConfig":
        """Uniform joint law; bends to an exact circular arc in free space."""
        n = kwargs.pop("n_links", 20)
        return cls(
            n_links=n,
            joint_stiffness=(stiffness,) * n,
            joint_hardening=(hardening,) * n,
            **kwargs,
        )

    @property
    def link_length(self) -> float:
        return self.active_length / self.n_links

    @property
    def theta_cap(self) -> float:
        """Per-joint angle bound implied by the curvature cap."""
        return self.kappa_max * self.link_length / MM_PER_M


@dataclass(frozen=True)
class Obstacle:
    """Circular obstacle in the bending plane."""

    center: tuple      # (lateral, axial) mm
    radius: float
    kind: str          # "hard" | "soft"

    def __post_init__(self):
        if self.radius <= 0:
            raise ValueError("radius must be positive")
        if self.kind not in ("hard", "soft"):
            raise ValueError("kind must be 'hard' or 'soft'")
        if float(np.hypot(*self.center)) <= self.radius:
            raise ValueError("obstacle overlaps the base mount")

    def stiffness(self, config: CdmConfig) -> float:
        return (
            config.contact_stiffness_hard
            if self.kind == "hard"
            else config.contact_stiffness_soft
        )


@dataclass(frozen=True)
class CdmState:
    """One equilibrium configuration of the arm."""

    joint_angles: tuple
    cable_pull: tuple          # (p1, p2) cumulative mm, positive = shortened
    tip: tuple                 # (lateral, axial) mm
    contact_active: tuple      # one flag per obstacle
    link_length: float

    @property
    def n_links(self) -> int:
        return len(self.joint_angles)

    @property
    def active_length(self) -> float:
        return self.link_length * self.n_links


# ---------------------------------------------------------------------------
# kinematics


def _chain_geometry(theta: np.ndarray, link_len: float):
    """Node positions of the arc chain; origin excluded.

    Returns (n, 2) endpoints of links 1..n.
    """
    theta = np.asarray(theta, dtype=float)
    phi0 = np.concatenate(([0.0], np.cumsum(theta)))[:-1]
    h = theta / 2.0
    mid = phi0 + h
    c = link_len * _sinc(h)
    steps = np.stack([-c * np.sin(mid), c * np.cos(mid)], axis=-1)
    return np.cumsum(steps, axis=0)


def _body_points_only(theta: np.ndarray, link_len: float) -> np.ndarray:
    """Midpoints and endpoints of every link (2n, 2), no derivatives."""
    theta = np.asarray(theta, dtype=float)
    n = theta.size
    phi0 = np.concatenate(([0.0], np.cumsum(theta)))[:-1]
    h = theta / 2.0
    mid = phi0 + h
    c = link_len * _sinc(h)
    steps = np.empty((n, 2))
    steps[:, 0] = -c * np.sin(mid)
    steps[:, 1] = c * np.cos(mid)
    nodes = np.cumsum(steps, axis=0)
    hh = theta / 4.0
    midh = phi0 + hh
    ch = 0.5 * link_len * _sinc(hh)
    prev = np.vstack([np.zeros(2), nodes[:-1]])
    pts = np.empty((2 * n, 2))
    pts[0::2, 0] = prev[:, 0] - ch * np.sin(midh)
    pts[0::2, 1] = prev[:, 1] + ch * np.cos(midh)
    pts[1::2] = nodes
    return pts


_MASK_CACHE: dict = {}


def _index_masks(n: int):
    if n not in _MASK_CACHE:
        idx = np.arange(n)
        _MASK_CACHE[n] = (
            idx[None, :] <= idx[:, None],   # joint j moves node m when j<=m
            idx[None, :] < idx[:, None],
            idx[None, :] == idx[:, None],
        )
    return _MASK_CACHE[n]


def _body_points_and_jacobian(theta: np.ndarray, link_len: float):
    """Midpoints and endpoints of every link plus their angle Jacobians.

    Returns points (2n, 2) ordered by arc length and jac (2n, 2, n).
    """
    theta = np.asarray(theta, dtype=float)
    n = theta.size
    phi0 = np.concatenate(([0.0], np.cumsum(theta)))[:-1]

    def seg(frac_turn, frac_len):
        h = theta * frac_turn
        mid = phi0 + h
        sc = _sinc(h)
        u = np.stack([-np.sin(mid), np.cos(mid)], axis=-1)
        du = np.stack([-np.cos(mid), -np.sin(mid)], axis=-1)
        ln = link_len * frac_len
        step = ln * sc[:, None] * u
        d_theta = ln * (
            frac_turn * _dsinc(h)[:, None] * u + sc[:, None] * frac_turn * du
        )
        d_phi = ln * sc[:, None] * du
        return step, d_theta, d_phi

    step, A, B = seg(0.5, 1.0)
    hstep, Ah, Bh = seg(0.25, 0.5)

    nodes = np.cumsum(step, axis=0)
    prev = np.vstack([np.zeros(2), nodes[:-1]])
    mids = prev + hstep

    CB = np.cumsum(B, axis=0)                 # CB[j] = sum_{i<=j} B_i
    CB0 = np.vstack([np.zeros(2), CB])        # CB0[j] = sum_{i<=j-1} B_i

    le_mask, lt_mask, eq_mask = _index_masks(n)

    # node m: dp_m/dtheta_j = A_j + CB[m] - CB[j]          (j <= m)
    jac_nodes = (A[None, :, :] + CB[:, None, :] - CB[None, :, :]) * le_mask[
        :, :, None
    ]
    # mid i: j < i -> A_j + CB0[i] - CB[j] + Bh_i ; j == i -> Ah_i
    jac_mids = (
        A[None, :, :] + CB0[:n, None, :] - CB[None, :, :] + Bh[:, None, :]
    ) * lt_mask[:, :, None] + Ah[:, None, :] * eq_mask[:, :, None]

    points = np.empty((2 * n, 2))
    points[0::2] = mids
    points[1::2] = nodes
    jac = np.empty((2 * n, 2, n))
    jac[0::2] = np.transpose(jac_mids, (0, 2, 1))
    jac[1::2] = np.transpose(jac_nodes, (0, 2, 1))
    return points, jac


def tip(state: CdmState) -> tuple:
    """Forward-kinematics tip position (lateral, axial) mm."""
    nodes = _chain_geometry(np.asarray(state.joint_angles), state.link_length)
    return (float(nodes[-1, 0]), float(nodes[-1, 1]))


def curvature_at(state: CdmState, s: float) -> float:
    """Piecewise-constant centerline curvature (1/m) at arc length s (mm)."""
    L = state.active_length
    if s < -1e-9 or s > L + 1e-9:
        raise ArcLengthOutOfRange(f"s={s} outside [0, {L}]")
    i = min(int(np.clip(s, 0.0, L) / state.link_length), state.n_links - 1)
    return state.joint_angles[i] / state.link_length * MM_PER_M


def body_points(state: CdmState) -> np.ndarray:
    """Link midpoints and endpoints (2n, 2), ordered by arc length."""
    pts, _ = _body_points_and_jacobian(
        np.asarray(state.joint_angles), state.link_length
    )
    return pts


# ---------------------------------------------------------------------------
# equilibrium


class PlanarCdm:
    """Equilibrium solver bound to one configuration."""

    def __init__(self, config: CdmConfig | None = None):
        self.config = config or CdmConfig()
        self._a = np.asarray(self.config.joint_stiffness, dtype=float)
        self._b = np.asarray(self.config.joint_hardening, dtype=float)

    # -- joint constitutive law -------------------------------------------

    def _spring_energy(self, theta):
        return float(
            np.sum(0.5 * self._a * theta ** 2 + 0.25 * self._b * theta ** 4)
        )

    def _routing_angle(self, pull) -> float:
        """Total bend angle set by the antagonistic pull difference.

        Each cable channel sits cable_offset from the centerline, so the
        pull difference fixes the angle sum through that moment arm.
        """
        p1, p2 = pull
        return (p1 - p2) / self.config.cable_offset

    def _free_profile(self, total_angle: float) -> np.ndarray:
        """Joint angles minimizing spring energy at a fixed total angle."""
        cap = self.config.theta_cap
        C = total_angle
        if abs(C) < 1e-300:
            return np.zeros(self.config.n_links)
        sign = 1.0 if C > 0 else -1.0
        C = abs(C)
        if C > self.config.n_links * cap * (1.0 + 1e-12):
            raise PullExceedsCurvatureLimit(
                f"total bend {C:.4f} rad exceeds curvature budget "
                f"{self.config.n_links * cap:.4f} rad"
            )

        a, b = self._a, self._b

        def angles(mu):
            # per-joint root of a*t + b*t^3 = mu, clipped at the cap
            t = np.where(b > 0, _cubic_root(a, b, mu), mu / a)
            return np.minimum(t, cap)

        # safeguarded Newton on the monotone map mu -> total angle
        mu_hi = float(np.max(a * cap + b * cap ** 3))
        lo_mu, hi_mu = 0.0, mu_hi
        mu = 0.5 * mu_hi
        for _ in range(100):
            t = angles(mu)
            f = float(np.sum(t)) - C
            if abs(f) < 1e-15 * max(C, 1.0):
                break
            if f < 0:
                lo_mu = mu
            else:
                hi_mu = mu
            slope = float(np.sum(
                np.where(t < cap - 1e-15, 1.0 / (a + 3.0 * b * t ** 2), 0.0)
            ))
            mu_new = mu - f / slope if slope > 0 else 0.5 * (lo_mu + hi_mu)
            if not (lo_mu < mu_new < hi_mu):
                mu_new = 0.5 * (lo_mu + hi_mu)
            mu = mu_new
        t = angles(mu)
        # distribute the bisection residual over un-capped joints
        free = t < cap - 1e-15
        resid = C - float(np.sum(t))
        if np.any(free):
            t = t + resid * free / max(int(np.sum(free)), 1)
            t = np.minimum(t, cap)
        return sign * t

    # -- penalties ----------------------------------------------------------

    def _contact_terms(self, theta, obstacles, want_grad=True, scale=1.0):
        """Penalty energy, gradient, Gauss-Newton Hessian, per-obstacle depth."""
        n = self.config.n_links
        E = 0.0
        g = np.zeros(n)
        H = np.zeros((n, n))
        depths = []
        if not obstacles:
            return E, g, H, depths
        if want_grad:
            pts, jac = _body_points_and_jacobian(theta, self.config.link_length)
        else:
            pts, jac = _body_points_only(theta, self.config.link_length), None
        for obs in obstacles:
            delta = pts - np.asarray(obs.center, dtype=float)
            dist = np.hypot(delta[:, 0], delta[:, 1])
            depth = obs.radius - dist
            act = depth > 0.0
            depths.append(float(np.max(depth)))
            if not np.any(act):
                continue
            k = obs.stiffness(self.config) * scale
            d = depth[act]
            E += 0.5 * k * float(np.sum(d ** 2))
            if want_grad:
                u = delta[act] / dist[act, None]
                Ja = jac[act]
                dd = -np.einsum("pk,pkn->pn", u, Ja)   # grad of depth
                g += k * d @ dd
                H += k * dd.T @ dd
                # circular part of the depth curvature; the remainder
                # (position second derivatives) is left to the line search
                tang = np.einsum("pk,pkn->pn", u[:, ::-1] * [-1.0, 1.0], Ja)
                H -= k * np.einsum("p,pn,pm->nm", d / dist[act], tang, tang)
        return E, g, H, depths

    def _total_energy(self, theta, obstacles):
        E, _, _, _ = self._contact_terms(theta, obstacles, want_grad=False)
        return self._spring_energy(theta) + E

    # -- constrained Newton solve at fixed total angle ----------------------

    def _solve_contact(self, C, obstacles, theta0, warm=False):
        """Penalty-continuation wrapper around the fixed-angle Newton solve.

        Stiff penalties are tightened in decade steps so every Newton stage
        starts near its minimizer.  A warm start (previous equilibrium)
        first tries the full-stiffness solve directly.
        """
        theta = np.asarray(theta0, dtype=float)
        if warm:
            try:
                return self._solve_at(C, obstacles, theta, scale=1.0,
                                      max_iter=100)
            except NoConvergence:
                theta = self._free_profile(C)  # stale starts can stall Newton
        k_top = max(obs.stiffness(self.config) for obs in obstacles)
        if k_top > 100.0:
            for s in (1e-3, 1e-2, 1e-1):
                theta, _ = self._solve_at(C, obstacles, theta, scale=s)
        return self._solve_at(C, obstacles, theta, scale=1.0)

    def _solve_at(self, C, obstacles, theta0, scale=1.0, max_iter=None):
        """Minimize energy s.t. sum(theta)=C, |theta_i|<=cap.

        Returns (theta, multiplier of the sum constraint).
        """
        cap = self.config.theta_cap
        a, b = self._a, self._b
        theta = np.clip(np.asarray(theta0, dtype=float), -cap, cap)
        # restore the sum exactly
        resid = C - float(np.sum(theta))
        theta = np.clip(theta + resid / theta.size, -cap, cap)
        E = self._spring_energy(theta) + self._contact_terms(
            theta, obstacles, want_grad=False, scale=scale
        )[0]
        nu = 0.0
        best_res = np.inf
        stall = 0
        for _ in range(max_iter or _MAX_INNER_ITER):
            gs = a * theta + b * theta ** 3
            Ec, gc, Hc, _ = self._contact_terms(theta, obstacles, scale=scale)
            g = gs + gc
            H = Hc + np.diag(a + 3.0 * b * theta ** 2)

            # active bounds: keep a joint pinned only if releasing it would
            # not lower the energy
            nu = float(np.mean(g))
            for _pass in range(3):
                at_up = (theta >= cap - 1e-14) & (g - nu < 0)
                at_lo = (theta <= -cap + 1e-14) & (g - nu > 0)
                free = ~(at_up | at_lo)
                if not np.any(free):
                    free = np.ones_like(theta, dtype=bool)
                nu_new = float(np.mean(g[free]))
                if abs(nu_new - nu) < 1e-15:
                    nu = nu_new
                    break
                nu = nu_new

            # KKT residual restricted to feasible directions
            r = g - nu
            r = np.where(at_up & (r < 0), 0.0, r)
            r = np.where(at_lo & (r > 0), 0.0, r)
            sum_resid = C - float(np.sum(theta))
            tol = _GRAD_TOL * max(1.0, float(np.linalg.norm(g)))
            res = np.linalg.norm(r[free] - np.mean(r[free]))
            if res < tol and abs(sum_resid) < 1e-11 and np.linalg.norm(
                r[~free]
            ) < tol:
                return theta, nu
            # stop once the residual has hit its floating-point floor
            if res < 0.7 * best_res:
                best_res = res
                stall = 0
            else:
                stall += 1
                if stall >= 4 and res < 1e-4 * max(
                    1.0, float(np.linalg.norm(g))
                ):
                    return theta, nu

            fidx = np.flatnonzero(free)
            m = fidx.size
            Hff = H[np.ix_(fidx, fidx)]
            # keep the reduced Hessian positive definite so the Newton step
            # stays a descent direction
            damp = 1e-8 * float(np.trace(Hff)) / m
            for _d in range(60):
                try:
                    np.linalg.cholesky(Hff)
                    break
                except np.linalg.LinAlgError:
                    Hff = Hff + damp * np.eye(m)
                    damp *= 10.0
            K = np.zeros((m + 1, m + 1))
            K[:m, :m] = Hff
            K[:m, m] = 1.0
            K[m, :m] = 1.0
            rhs = np.concatenate([-g[fidx], [sum_resid]])
            sol = np.linalg.solve(K, rhs)
            d = np.zeros_like(theta)
            d[fidx] = sol[:m]

            # cap the step at the first bound crossing
            alpha_max = 1.0
            pos = d > 1e-18
            neg = d < -1e-18
            if np.any(pos):
                alpha_max = min(
                    alpha_max, float(np.min((cap - theta[pos]) / d[pos]))
                )
            if np.any(neg):
                alpha_max = min(
                    alpha_max, float(np.min((-cap - theta[neg]) / d[neg]))
                )
            alpha_max = max(alpha_max, 0.0)

            step_ok = False
            alpha = alpha_max
            gd = float(g @ d)
            for _ls in range(40):
                cand = np.clip(theta + alpha * d, -cap, cap)
                Ecand = self._spring_energy(cand) + self._contact_terms(
                    cand, obstacles, want_grad=False, scale=scale
                )[0]
                if Ecand <= E + 1e-4 * alpha * gd + 1e-18:
                    if np.array_equal(cand, theta):
                        # stagnated at numerical precision
                        if res < 1e-4 * max(1.0, float(np.linalg.norm(g))):
                            return cand, nu
                        raise NoConvergence(
                            "equilibrium line search stagnated early"
                        )
                    theta, E = cand, Ecand
                    step_ok = True
                    break
                alpha *= 0.5
            if not step_ok:
                # descent exhausted at numerical precision
                if res < 1e-4 * max(1.0, float(np.linalg.norm(g))):
                    return theta, nu
                raise NoConvergence("equilibrium line search failed")
        raise NoConvergence("equilibrium inner solver hit the iteration cap")

    # -- public ops ----------------------------------------------------------

    def equilibrium(
        self,
        pull: Sequence[float],
        obstacles: Sequence[Obstacle] = (),
        theta0: Optional[Sequence[float]] = None,
    ) -> CdmState:
        """Equilibrium state at a cumulative pull pair (p1, p2) mm.

        theta0 optionally warm-starts the contact solve from a nearby
        configuration (the result is the same minimizer either way).
        """
        cfg = self.config
        C0 = self._routing_angle(pull)
        cap_budget = cfg.n_links * cfg.theta_cap
        if abs(C0) > cap_budget * (1.0 + 1e-12):
            raise PullExceedsCurvatureLimit(
                f"pull {tuple(pull)} needs a bend outside the curvature budget"
            )

        theta = self._free_profile(C0)

        if obstacles:
            _, _, _, depths = self._contact_terms(theta, obstacles, False)
            if max(depths, default=0.0) > 0.0:
                warm = theta0 is not None
                start = (
                    np.asarray(theta0, dtype=float) if warm else theta
                )
                theta, _ = self._solve_contact(C0, obstacles, start, warm)
        _, _, _, depths = self._contact_terms(theta, obstacles, False)
        flags = tuple(d > 1e-9 for d in depths)
        nodes = _chain_geometry(theta, cfg.link_length)
        return CdmState(
            joint_angles=tuple(theta),
            cable_pull=(float(pull[0]), float(pull[1])),
            tip=(float(nodes[-1, 0]), float(nodes[-1, 1])),
            contact_active=flags,
            link_length=cfg.link_length,
        )

    def apply_pull_increment(
        self,
        state: CdmState,
        dpull: Sequence[float],
        rate: float,
        obstacles: Sequence[Obstacle] = (),
    ) -> tuple:
        """Re-solve at the incremented pull; returns (state, elapsed seconds)."""
        if rate <= 0:
            raise ValueError("rate must be positive")
        new_pull = (
            state.cable_pull[0] + float(dpull[0]),
            state.cable_pull[1] + float(dpull[1]),
        )
        elapsed = max(abs(float(dpull[0])), abs(float(dpull[1]))) / rate
        return (
            self.equilibrium(new_pull, obstacles, theta0=state.joint_angles),
            elapsed,
        )


def _cubic_root(a: np.ndarray, b: np.ndarray, mu: float) -> np.ndarray:
    """Positive root of a*t + b*t^3 = mu for a>0, b>0, mu>=0 (vectorized)."""
    b = np.where(b > 0, b, 1.0)  # callers mask b==0 separately
    p = a / b
    q = mu / b
    disc = np.sqrt((q / 2.0) ** 2 + (p / 3.0) ** 3)
    return np.cbrt(q / 2.0 + disc) + np.cbrt(q / 2.0 - disc)
