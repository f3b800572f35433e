"""Forward model of fiber Bragg grating wavelength shifts.

Two sensing fibers run along opposite sides of the arm, each with three
active areas (AAs).  An AA at centerline curvature kappa (1/m), offset by a
signed bias delta (mm) from the neutral axis, sees strain
eps = delta * kappa * 1e-3 and shifts its Bragg peak by

    dlambda = lambda_B * k_eps * eps        (nm)

Temperature is modeled as an optional constant offset, default 0.
"""

from __future__ import annotations

import io
from dataclasses import dataclass, field
from typing import Callable, Iterable, Sequence

import numpy as np

from .errors import CurvatureOutOfRange


@dataclass(frozen=True)
class FbgLayout:
    """Geometry and physics constants of the two sensing fibers."""

    aa_positions: tuple = (8.0, 18.0, 28.0)     # mm along the active length
    bragg_wavelengths: tuple = (
        (1530.0, 1540.0, 1550.0),               # fiber 1, AAs 1-3 (nm)
        (1535.0, 1545.0, 1555.0),               # fiber 2, AAs 1-3 (nm)
    )
    strain_coefficient: float = 0.78
    sensor_bias: tuple = (0.05, -0.05)          # mm, signed, one per fiber
    noise_sigma: float = 0.001                  # nm
    sample_rate: float = 200.0                  # Hz
    temperature_offset: float = 0.0             # nm, constant additive term
    curvature_limit: float = 166.7              # 1/m
    active_length: float = 34.0                 # mm

    def __post_init__(self):
        pos = self.aa_positions
        if len(pos) != 3 or any(
            pos[i] >= pos[i + 1] for i in range(len(pos) - 1)
        ):
            raise ValueError("aa_positions must be 3 increasing arc lengths")
        if pos[0] < 0 or pos[-1] > self.active_length:
            raise ValueError("aa_positions must lie within the active length")
        if any(w <= 0 for fiber in self.bragg_wavelengths for w in fiber):
            raise ValueError("bragg wavelengths must be positive")
        if self.strain_coefficient <= 0:
            raise ValueError("strain coefficient must be positive")
        if self.sensor_bias[0] == 0 or self.sensor_bias[1] == 0:
            raise ValueError("sensor bias must be nonzero")
        if self.sensor_bias[0] * self.sensor_bias[1] >= 0:
            raise ValueError("fibers must sit on opposite sides (bias signs)")
        if self.noise_sigma < 0:
            raise ValueError("noise sigma must be non-negative")
        if self.sample_rate <= 0:
            raise ValueError("sample rate must be positive")

    def gains(self) -> np.ndarray:
        """nm per (1/m) of curvature, 6 values (fiber-major order)."""
        lam = np.asarray(self.bragg_wavelengths, dtype=float)
        delta = np.asarray(self.sensor_bias, dtype=float)[:, None]
        return (lam * self.strain_coefficient * delta * 1e-3).ravel()


@dataclass(frozen=True)
class WavelengthFrame:
    """One interrogator sample: six wavelength shifts in nm."""

    seq: int
    timestamp: float
    shifts: tuple          # (f1a1, f1a2, f1a3, f2a1, f2a2, f2a3)

    def __post_init__(self):
        if len(self.shifts) != 6:
            raise ValueError("a frame carries exactly 6 shifts")


def shifts_from_curvature(
    layout: FbgLayout,
    kappa_at_aas: Sequence[float],
    rng_seed=None,
    seq: int = 0,
) -> WavelengthFrame:
    """Forward sensor model for one frame.

    kappa_at_aas holds six centerline curvatures (1/m) in fiber-major
    order.  Noise is Gaussian per channel, keyed by (rng_seed, seq) so a
    stream is reproducible frame by frame; rng_seed None means noiseless.
    """
    kap = np.asarray(kappa_at_aas, dtype=float)
    if kap.shape != (6,):
        raise ValueError("expected 6 curvature values")
    if np.any(np.abs(kap) > layout.curvature_limit * (1 + 1e-12)):
        raise CurvatureOutOfRange(
            f"curvature beyond +/-{layout.curvature_limit} 1/m"
        )
    shifts = layout.gains() * kap + layout.temperature_offset
    if rng_seed is not None and layout.noise_sigma > 0:
        rng = np.random.default_rng([int(rng_seed), int(seq)])
        shifts = shifts + rng.normal(0.0, layout.noise_sigma, size=6)
    return WavelengthFrame(
        seq=int(seq),
        timestamp=seq / layout.sample_rate,
        shifts=tuple(float(v) for v in shifts),
    )


def stream(
    layout: FbgLayout,
    span: float,
    state_provider: Callable[[float], object],
    rng_seed=None,
    start_seq: int = 0,
) -> list:
    """Frames over a simulated time span at the interrogator rate.

    state_provider maps a timestamp to the CdmState current at that time;
    curvature is sampled at the AA arc positions for both fibers.
    """
    from .sim import curvature_at

    if span < 0:
        raise ValueError("span must be non-negative")
    n = int(np.floor(span * layout.sample_rate + 1e-9))
    frames = []
    for k in range(n):
        seq = start_seq + k
        t = seq / layout.sample_rate
        state = state_provider(t)
        kap = [curvature_at(state, s) for s in layout.aa_positions]
        frames.append(
            shifts_from_curvature(layout, kap + kap, rng_seed, seq=seq)
        )
    return frames


def frames_to_csv(frames: Iterable[WavelengthFrame]) -> str:
    """Serialize frames as `seq,timestamp,dl11..dl23` lines (9 sig digits)."""
    out = io.StringIO()
    out.write("seq,timestamp,dl11,dl12,dl13,dl21,dl22,dl23\n")
    for f in frames:
        vals = ",".join("%.9g" % v for v in f.shifts)
        out.write("%d,%.9g,%s\n" % (f.seq, f.timestamp, vals))
    return out.getvalue()


def frames_from_csv(text: str) -> list:
    """Inverse of frames_to_csv."""
    lines = [ln for ln in text.strip().splitlines() if ln.strip()]
    if not lines or not lines[0].startswith("seq,"):
        raise ValueError("missing frame CSV header")
    frames = []
    for ln in lines[1:]:
        parts = ln.split(",")
        if len(parts) != 8:
            raise ValueError(f"malformed frame line: {ln!r}")
        frames.append(
            WavelengthFrame(
                seq=int(parts[0]),
                timestamp=float(parts[1]),
                shifts=tuple(float(p) for p in parts[2:]),
            )
        )
    return frames
