"""Model-free optimization control of the planar arm.

The loop alternates a constrained least-squares step plan (a tiny QP over
the cable-displacement polytope) with a minimum-Frobenius-norm rank-one
update of the tip Jacobian estimate.  No plant model is used anywhere:
the Jacobian is bootstrapped by two antagonistic probe moves and then
tracked from measured tip displacements.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field, replace
from typing import Optional, Sequence

import numpy as np

from . import qp
from .errors import (
    DegenerateStep,
    Infeasible,
    MalformedTrace,
    QpInfeasible,
    SensorSilent,
)
from .reconstruction import reconstruct

# Damping on the step objective.  Large enough that directions with weak
# learned gain are not chased to the coupling cap (which stops exciting,
# and therefore updating, the dominant antagonistic direction); small
# enough to leave range-space steps essentially unchanged.
_TIKHONOV = 1e-2


@dataclass(frozen=True)
class JacobianEstimate:
    """2x2 tip-per-cable sensitivity estimate at control step k."""

    J: np.ndarray
    step_index: int = 0

    def __post_init__(self):
        J = np.asarray(self.J, dtype=float)
        if J.shape != (2, 2) or not np.all(np.isfinite(J)):
            raise ValueError("J must be a finite 2x2 matrix")
        object.__setattr__(self, "J", J)

    @property
    def frobenius_norm(self) -> float:
        return float(np.sqrt(np.sum(self.J * self.J)))


@dataclass(frozen=True)
class ControlConstraints:
    """Per-iteration polytope on the cable displacement pair (mm).

    Rows 1-4 bound each |dl_i|, rows 5-6 bound |dl1 + dl2| (antagonism
    coupling), rows 7-8 bound the cumulative pull p_i + dl_i <= l_max.
    Rows 7-8 must be refreshed from the current pull every iteration.
    """

    l_max: float = 7.0
    per_step_cap: float = 1.0
    coupling_cap: float = 0.1

    def __post_init__(self):
        if self.l_max <= 0 or self.per_step_cap <= 0 or self.coupling_cap <= 0:
            raise ValueError("constraint bounds must be positive")

    def matrices(self, cable_pull: Sequence[float]) -> tuple:
        """(A, b) for A dl <= b at the given cumulative pull pair."""
        A = np.array([
            [1.0, 0.0], [-1.0, 0.0],
            [0.0, 1.0], [0.0, -1.0],
            [1.0, 1.0], [-1.0, -1.0],
            [1.0, 0.0], [0.0, 1.0],
        ])
        c, s = self.per_step_cap, self.coupling_cap
        b = np.array([
            c, c, c, c, s, s,
            self.l_max - float(cable_pull[0]),
            self.l_max - float(cable_pull[1]),
        ])
        return A, b


@dataclass(frozen=True)
class ControllerParams:
    """Loop tuning; lengths in mm, rates in Hz, speeds in mm/s."""

    epsilon: float = 0.05           # termination threshold on |dx_des|
    cable_velocity: float = 0.05    # actuation speed
    dl_min: float = 1e-4            # smallest update-eligible step norm
    probe_amplitude: float = 0.05   # initialization probe size
    max_iterations: int = 2000
    loop_rate: float = 100.0
    tip_step_cap: float = 0.05      # commanded tip displacement per step

    def __post_init__(self):
        if self.epsilon <= 0 or self.cable_velocity <= 0:
            raise ValueError("epsilon and cable_velocity must be positive")
        if not 0 < self.dl_min < self.probe_amplitude:
            raise ValueError("need 0 < dl_min < probe_amplitude")
        if self.max_iterations < 1 or self.loop_rate <= 0:
            raise ValueError("max_iterations and loop_rate must be positive")
        if self.tip_step_cap <= 0:
            raise ValueError("tip_step_cap must be positive")


@dataclass(frozen=True)
class StepRecord:
    """One control iteration, as persisted to the trace."""

    k: int
    dl: tuple                # commanded cable displacement pair (mm)
    x: tuple                 # measured tip after the move (mm)
    dx_des: tuple            # remaining desired displacement (mm)
    j_norm: float
    active_set: tuple
    timestamp: float         # simulated seconds


@dataclass(frozen=True)
class ControlResult:
    """Outcome of one run_to_target call."""

    trace: tuple             # StepRecord sequence
    reached: bool            # False means the iteration cap was the verdict
    final_error: float       # |dx_des| at exit (mm, sensed)
    elapsed: float           # simulated seconds


def plan_step(
    estimate: JacobianEstimate,
    dx_des: Sequence[float],
    A: np.ndarray,
    b: np.ndarray,
    warm_start: Sequence[int] = (),
) -> tuple:
    """Cable step minimizing |dx_des - J dl| over A dl <= b.

    Returns (dl, active_set).  The squared objective is lifted to a
    strictly convex QP with a small Tikhonov term so rank-deficient J
    (contact saturation) stays solvable.
    """
    J = estimate.J
    dx = np.asarray(dx_des, dtype=float)
    H = 2.0 * (J.T @ J) + _TIKHONOV * np.eye(2)
    g = -2.0 * (J.T @ dx)
    try:
        sol = qp.solve(qp.QpProblem(H, g, A_in=A, b_in=b), warm_start)
    except Infeasible as e:
        raise QpInfeasible(
            "step polytope is empty; cumulative-length bookkeeping is off"
        ) from e
    return sol.x, sol.active_set


def update_jacobian(
    estimate: JacobianEstimate,
    dl: Sequence[float],
    dx_meas: Sequence[float],
    dl_min: float = 1e-4,
) -> JacobianEstimate:
    """Minimum-Frobenius-norm secant update (rank-one closed form)."""
    dl = np.asarray(dl, dtype=float)
    dx = np.asarray(dx_meas, dtype=float)
    nrm2 = float(dl @ dl)
    if math.sqrt(nrm2) < dl_min:
        raise DegenerateStep("step too small for a stable secant update")
    resid = dx - estimate.J @ dl
    dJ = np.outer(resid, dl) / nrm2
    return JacobianEstimate(estimate.J + dJ, estimate.step_index + 1)


def update_jacobian_qp(
    estimate: JacobianEstimate,
    dl: Sequence[float],
    dx_meas: Sequence[float],
    dl_min: float = 1e-4,
) -> JacobianEstimate:
    """Same update via the stacked least-norm QP path (oracle twin).

    The secant condition dx = (J + dJ) dl is linear in the 4 stacked
    entries of dJ; the minimum-Frobenius dJ is the least-norm solution.
    """
    dl = np.asarray(dl, dtype=float)
    dx = np.asarray(dx_meas, dtype=float)
    if float(np.linalg.norm(dl)) < dl_min:
        raise DegenerateStep("step too small for a stable secant update")
    A = np.array([
        [dl[0], dl[1], 0.0, 0.0],
        [0.0, 0.0, dl[0], dl[1]],
    ])
    v = qp.least_norm_update(A, dx - estimate.J @ dl, 4)
    dJ = v.reshape(2, 2)
    return JacobianEstimate(estimate.J + dJ, estimate.step_index + 1)


class Loop:
    """Sequential control loop bound to a plant and a sensor.

    plant must expose .cable_pull (current cumulative pair, mm) and
    .move(dl) -> elapsed seconds; sensor must expose .latest(t) -> frame
    plus .layout and .calibration for tip reconstruction.  Simulated
    time advances in whole 100 Hz loop periods covering each actuation.
    """

    def __init__(self, plant, sensor, params: ControllerParams = None,
                 constraints: ControlConstraints = None):
        self.plant = plant
        self.sensor = sensor
        self.params = params or ControllerParams()
        self.constraints = constraints or ControlConstraints()
        self.clock = 0.0
        self.last_estimate: Optional[JacobianEstimate] = None

    def _tick(self, elapsed: float) -> None:
        period = 1.0 / self.params.loop_rate
        ticks = max(1, int(math.ceil(elapsed / period - 1e-12)))
        self.clock += ticks * period

    def measured_tip(self) -> np.ndarray:
        frame = self.sensor.latest(self.clock)
        if frame is None:
            raise SensorSilent("no frame within two sample periods")
        shape = reconstruct(frame, self.sensor.calibration, self.sensor.layout)
        return np.asarray(shape.fused_tip, dtype=float)

    def initialize_jacobian(self) -> JacobianEstimate:
        """Two antagonistic probes; restores the pull it started from."""
        a = self.params.probe_amplitude
        self._tick(self.plant.move((+a, -a)))
        x_plus = self.measured_tip()
        self._tick(self.plant.move((-2 * a, +2 * a)))
        x_minus = self.measured_tip()
        self._tick(self.plant.move((+a, -a)))
        u = np.array([1.0, -1.0]) / math.sqrt(2.0)
        span = 2.0 * a * math.sqrt(2.0)
        col = (x_plus - x_minus) / span
        if np.linalg.norm(col) < 1e-12:
            return JacobianEstimate(0.1 * np.eye(2))
        J0 = np.outer(col, u) + 0.1 * (np.eye(2) - np.outer(u, u))
        return JacobianEstimate(J0)

    def run_to_target(
        self,
        target: Sequence[float],
        estimate: Optional[JacobianEstimate] = None,
    ) -> ControlResult:
        """Drive the sensed tip to the target; trace every iteration."""
        p = self.params
        target = np.asarray(target, dtype=float)
        if estimate is None:
            estimate = self.initialize_jacobian()
        trace = []
        warm = ()
        x = self.measured_tip()
        reached = False
        for k in range(p.max_iterations):
            dx_des = target - x
            err = float(np.linalg.norm(dx_des))
            if err < p.epsilon:
                reached = True
                break
            scale = min(1.0, p.tip_step_cap / err)
            A, b = self.constraints.matrices(self.plant.cable_pull)
            dl, warm = plan_step(estimate, dx_des * scale, A, b, warm)
            self._tick(self.plant.move(dl))
            x_new = self.measured_tip()
            dx_meas = x_new - x
            if np.linalg.norm(dl) >= p.dl_min:
                estimate = update_jacobian(estimate, dl, dx_meas, p.dl_min)
            x = x_new
            rem = target - x
            trace.append(StepRecord(
                k=k,
                dl=(float(dl[0]), float(dl[1])),
                x=(float(x[0]), float(x[1])),
                dx_des=(float(rem[0]), float(rem[1])),
                j_norm=estimate.frobenius_norm,
                active_set=tuple(warm),
                timestamp=self.clock,
            ))
        self.last_estimate = estimate
        final_error = float(np.linalg.norm(target - x))
        return ControlResult(
            trace=tuple(trace),
            reached=reached,
            final_error=final_error,
            elapsed=self.clock,
        )


# -- trace persistence -------------------------------------------------------

_COLUMNS = "k,dl1,dl2,x_lat,x_ax,dxdes_lat,dxdes_ax,Jnorm,active_set,timestamp"


def trace_to_csv(trace: Sequence[StepRecord], metadata: dict = None) -> str:
    """Trace as CSV text; metadata becomes '# key=value' header lines."""
    lines = []
    for key in sorted(metadata or {}):
        lines.append(f"# {key}={metadata[key]}")
    lines.append(_COLUMNS)
    for r in trace:
        aset = ";".join(str(i) for i in r.active_set)
        lines.append(
            f"{r.k},{r.dl[0]:.12g},{r.dl[1]:.12g},"
            f"{r.x[0]:.12g},{r.x[1]:.12g},"
            f"{r.dx_des[0]:.12g},{r.dx_des[1]:.12g},"
            f"{r.j_norm:.12g},{aset},{r.timestamp:.12g}"
        )
    return "\n".join(lines) + "\n"


def trace_from_csv(text: str) -> tuple:
    """(trace, metadata) parsed back from trace_to_csv output."""
    metadata = {}
    trace = []
    saw_header = False
    for ln, raw in enumerate(text.splitlines(), start=1):
        line = raw.strip()
        if not line:
            continue
        if line.startswith("#"):
            body = line.lstrip("# ")
            if "=" in body:
                key, _, val = body.partition("=")
                metadata[key.strip()] = val.strip()
            continue
        if not saw_header:
            if line != _COLUMNS:
                raise MalformedTrace(f"line {ln}: unexpected header {line!r}")
            saw_header = True
            continue
        parts = line.split(",")
        if len(parts) != 10:
            raise MalformedTrace(f"line {ln}: expected 10 columns, got {len(parts)}")
        try:
            aset = tuple(int(i) for i in parts[8].split(";") if i)
            trace.append(StepRecord(
                k=int(parts[0]),
                dl=(float(parts[1]), float(parts[2])),
                x=(float(parts[3]), float(parts[4])),
                dx_des=(float(parts[5]), float(parts[6])),
                j_norm=float(parts[7]),
                active_set=aset,
                timestamp=float(parts[9]),
            ))
        except ValueError as e:
            raise MalformedTrace(f"line {ln}: {e}") from e
    if not saw_header:
        raise MalformedTrace("line 1: missing column header")
    return tuple(trace), metadata
