"""Contact inference from the controller's Jacobian-norm trace.

Free-space bending drifts the Jacobian norm slowly; touching an obstacle
changes the tip response per unit cable and the norm departs from its
free-space level.  A hard obstacle drops the norm sharply, a soft one
perturbs it (typically upward) without the deep drop, and wrapping around
an obstacle stalls tip progress per unit cable motion.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Optional, Sequence

import numpy as np

from .errors import NotInContact, TraceTooShort


@dataclass(frozen=True)
class DetectorParams:
    baseline_window: int = 30        # iterations for the free-level estimate
    drop_threshold_soft: float = 0.10  # relative norm deviation
    drop_threshold_hard: float = 0.30
    stall_progress_ratio: float = 0.2  # mm tip per mm cable
    stall_window: int = 20
    persistence: int = 10            # consecutive iterations required
    onset_backtrack: float = 0.25    # fraction of the soft threshold

    def __post_init__(self):
        if not 0 < self.drop_threshold_soft < self.drop_threshold_hard < 1:
            raise ValueError("need 0 < soft < hard < 1 thresholds")
        if self.baseline_window < 2 or self.stall_window < 2:
            raise ValueError("windows must be at least 2")
        if self.persistence < 1:
            raise ValueError("persistence must be at least 1")


@dataclass(frozen=True)
class ContactVerdict:
    state: str                       # "free" | "contact"
    onset: Optional[int] = None      # iteration index, contact only
    hardness: str = "unknown"        # "unknown" | "soft" | "hard"
    wrapped: bool = False

    def __post_init__(self):
        if self.state not in ("free", "contact"):
            raise ValueError("state must be 'free' or 'contact'")
        if self.state == "free" and (
            self.onset is not None or self.hardness != "unknown" or self.wrapped
        ):
            raise ValueError("free verdicts carry no contact attributes")
        if self.state == "contact" and self.onset is None:
            raise ValueError("contact verdicts need an onset iteration")


def _baseline(norms: np.ndarray) -> float:
    """Robust free-phase norm level; median rides out learning transients."""
    return float(np.median(norms))


def _find_onset(norms: np.ndarray, params: DetectorParams) -> Optional[tuple]:
    """(onset index, frozen baseline) of the first persistent deviation.

    A candidate starts when the relative deviation from the frozen
    free-phase baseline exceeds the soft threshold and is confirmed after
    `persistence` consecutive iterations.  The reported onset backtracks
    from the candidate start to where the deviation first left the noise
    floor, which recovers the physical contact iteration (the norm departs
    gradually, so the threshold crossing itself lags the event).
    """
    w = params.baseline_window
    run = 0
    frozen = None
    devs = np.zeros(len(norms))
    for k in range(w, len(norms)):
        if run == 0:
            frozen = _baseline(norms[k - w: k])
        dev = abs(frozen - norms[k]) / max(abs(frozen), 1e-12)
        devs[k] = dev
        if dev > params.drop_threshold_soft:
            run += 1
            if run >= params.persistence:
                onset = k - params.persistence + 1
                floor = params.onset_backtrack * params.drop_threshold_soft
                while onset > w and devs[onset - 1] > floor:
                    onset -= 1
                return onset, frozen
        else:
            run = 0
    return None


def detect(trace: Sequence, params: DetectorParams = None) -> ContactVerdict:
    """Full verdict for a completed trace (causal in the step index)."""
    params = params or DetectorParams()
    if len(trace) <= params.baseline_window:
        raise TraceTooShort(
            f"need more than {params.baseline_window} records, got {len(trace)}"
        )
    norms = np.array([r.j_norm for r in trace])
    hit = _find_onset(norms, params)
    if hit is None:
        return ContactVerdict(state="free")
    onset, _ = hit
    hardness = classify(trace, onset, params)
    return ContactVerdict(
        state="contact",
        onset=onset,
        hardness=hardness,
        wrapped=detect_wrap(trace, params),
    )


def classify(trace: Sequence, onset: int, params: DetectorParams = None) -> str:
    """'hard' or 'soft' from the sustained post-onset norm drop."""
    params = params or DetectorParams()
    norms = np.array([r.j_norm for r in trace])
    w = params.baseline_window
    if onset is None or onset < w or onset >= len(norms):
        raise NotInContact("onset does not point into the trace")
    ref = _baseline(norms[onset - w: onset])
    tail = norms[onset:]
    sustained = float(np.median((ref - tail) / max(abs(ref), 1e-12)))
    return "hard" if sustained > params.drop_threshold_hard else "soft"


def detect_wrap(trace: Sequence, params: DetectorParams = None,
                epsilon: float = 0.05) -> bool:
    """True when tip progress per unit cable motion stalls short of target."""
    params = params or DetectorParams()
    w = params.stall_window
    if len(trace) <= w:
        return False
    x = np.array([r.x for r in trace])
    dl = np.array([r.dl for r in trace])
    dx_des = np.array([r.dx_des for r in trace])
    dx_step = np.linalg.norm(np.diff(x, axis=0), axis=1)
    cable = np.linalg.norm(dl, axis=1)[1:]
    ratio_step = dx_step / np.maximum(cable, 1e-12)
    for k in range(w, len(ratio_step) + 1):
        ratio = float(np.mean(ratio_step[k - w: k]))
        remaining = float(np.linalg.norm(dx_des[k]))
        if ratio < params.stall_progress_ratio and remaining > epsilon:
            return True
    return False
