"""Shape sensing pipeline: calibration, curvature conversion, integration.

Calibration fits one line per sensing channel mapping wavelength shift to
centerline curvature, using frames recorded on jigs of known constant
curvature.  Reconstruction converts a frame to per-AA curvatures, fills in
a piecewise-linear curvature profile along the arm, integrates it into a
planar curve per fiber, and averages the two fiber endpoints into the
fused tip estimate.

Positive curvature bends toward negative lateral coordinates, matching the
simulator's convention, so reconstructed and ground-truth shapes are
directly comparable.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Iterable, Sequence

import numpy as np
import yaml

from .errors import DegenerateFit, InsufficientJigs
from .fbg import FbgLayout, WavelengthFrame, shifts_from_curvature

MM_PER_M = 1000.0


@dataclass(frozen=True)
class CalibrationJigSet:
    """Known constant curvatures (1/m) used for calibration."""

    curvatures: tuple = (0.0, 10.0, 20.0, 30.0, 40.0, 50.0)
    kappa_max: float = 166.7

    def __post_init__(self):
        if 0.0 not in self.curvatures:
            raise ValueError("jig set must include the straight jig (0)")
        if max(abs(c) for c in self.curvatures) > self.kappa_max:
            raise ValueError("jig curvature beyond the curvature cap")


@dataclass(frozen=True)
class CalibrationMap:
    """Per-channel linear map kappa = slope * shift + intercept.

    Channel order is fiber-major: fiber 1 AAs 1-3, fiber 2 AAs 1-3.
    """

    slopes: tuple          # 6 values, (1/m)/nm
    intercepts: tuple      # 6 values, 1/m
    residual_rms: tuple    # 6 values, 1/m

    def __post_init__(self):
        for name in ("slopes", "intercepts", "residual_rms"):
            vals = getattr(self, name)
            if len(vals) != 6 or not all(np.isfinite(vals)):
                raise ValueError(f"{name} must be 6 finite values")
        if any(s == 0 for s in self.slopes):
            raise ValueError("calibration slopes must be nonzero")


@dataclass(frozen=True)
class ReconstructedShape:
    """Sampled centerline per fiber plus the fused tip estimate."""

    fiber_points: tuple      # two (M+1, 2) arrays of (lateral, axial) mm
    fused_tip: tuple         # (lateral, axial) mm
    n_points_per_segment: int


def make_jig_frames(
    layout: FbgLayout,
    jigs: CalibrationJigSet,
    frames_per_jig: int = 50,
    rng_seed=None,
) -> list:
    """Synthetic per-jig frame batches (a jig bends every AA equally)."""
    batches = []
    seq = 0
    for kappa in jigs.curvatures:
        batch = []
        for _ in range(frames_per_jig):
            batch.append(
                shifts_from_curvature(layout, [kappa] * 6, rng_seed, seq=seq)
            )
            seq += 1
        batches.append(batch)
    return batches


def calibrate(
    jigs: CalibrationJigSet, frame_batches: Sequence[Iterable[WavelengthFrame]]
) -> CalibrationMap:
    """Ordinary least squares of jig curvature against mean shift per jig."""
    kappas = np.asarray(jigs.curvatures, dtype=float)
    if len(frame_batches) != kappas.size:
        raise InsufficientJigs("one frame batch required per jig")
    if np.unique(kappas).size < 2:
        raise InsufficientJigs("need at least 2 distinct jig curvatures")
    means = []
    for kappa, batch in zip(kappas, frame_batches):
        batch = list(batch)
        if not batch:
            raise InsufficientJigs(f"jig {kappa} 1/m has no frames")
        means.append(np.mean([f.shifts for f in batch], axis=0))
    X = np.asarray(means)          # (n_jigs, 6) mean shifts
    slopes, intercepts, rms = [], [], []
    for ch in range(6):
        x = X[:, ch]
        if np.ptp(x) < 1e-12:
            raise DegenerateFit(f"channel {ch}: shifts do not vary over jigs")
        A = np.column_stack([x, np.ones_like(x)])
        coef, *_ = np.linalg.lstsq(A, kappas, rcond=None)
        resid = kappas - A @ coef
        slopes.append(float(coef[0]))
        intercepts.append(float(coef[1]))
        rms.append(float(np.sqrt(np.mean(resid ** 2))))
    return CalibrationMap(tuple(slopes), tuple(intercepts), tuple(rms))


def curvatures(frame: WavelengthFrame, cal: CalibrationMap) -> np.ndarray:
    """Per-channel curvature (1/m), fiber-major order."""
    return np.asarray(cal.slopes) * np.asarray(frame.shifts) + np.asarray(
        cal.intercepts
    )


def _profile(kappa3, positions, total_length, mode):
    """Piecewise-linear curvature profile as a callable of arc length."""
    k1, k2, k3 = (float(v) for v in kappa3)
    s1, s2, s3 = (float(v) for v in positions)

    def kappa(s):
        s = np.asarray(s, dtype=float)
        inner = np.interp(s, [s1, s2, s3], [k1, k2, k3])
        if mode == "clamp":
            return inner
        if mode != "linear":
            raise ValueError(f"unknown extrapolation mode {mode!r}")
        low = k1 + (k2 - k1) * (s - s1) / (s2 - s1)
        high = k2 + (k3 - k2) * (s - s2) / (s3 - s2)
        return np.where(s < s1, low, np.where(s > s3, high, inner))

    return kappa


def interpolate_curvature(
    kappa_at_aas: Sequence[float],
    aa_positions: Sequence[float],
    n_per_segment: int = 10,
    total_length: float = 34.0,
    mode: str = "linear",
):
    """Sampled curvature profile over [0, total_length].

    Returns (s_mid, kappa_mid, ds): midpoints, curvatures, and widths of
    the integration intervals.  The two AA-to-AA segments get
    n_per_segment intervals each; the margins before AA1 and after AA3
    are sampled at the same density.  mode selects how the margins are
    extrapolated: "linear" extends the adjacent segment's trend, "clamp"
    holds the nearest AA value.
    """
    pos = [float(p) for p in aa_positions]
    if not (0.0 <= pos[0] < pos[1] < pos[2] <= total_length):
        raise ValueError("AA positions must increase within the length")
    if n_per_segment < 1:
        raise ValueError("n_per_segment must be >= 1")
    h1 = (pos[1] - pos[0]) / n_per_segment
    h2 = (pos[2] - pos[1]) / n_per_segment
    edges = [np.linspace(pos[0], pos[1], n_per_segment + 1)]
    edges.append(np.linspace(pos[1], pos[2], n_per_segment + 1)[1:])
    if pos[0] > 0:
        m = max(1, int(np.ceil(pos[0] / h1 - 1e-9)))
        edges.insert(0, np.linspace(0.0, pos[0], m + 1)[:-1])
    if pos[2] < total_length:
        m = max(1, int(np.ceil((total_length - pos[2]) / h2 - 1e-9)))
        edges.append(np.linspace(pos[2], total_length, m + 1)[1:])
    s_edges = np.concatenate(edges)
    ds = np.diff(s_edges)
    s_mid = 0.5 * (s_edges[:-1] + s_edges[1:])
    kappa = _profile(kappa_at_aas, pos, total_length, mode)(s_mid)
    return s_mid, kappa, ds


def integrate_shape(kappa_samples, ds) -> np.ndarray:
    """Integrate a sampled curvature profile into a planar polyline.

    Each sample is treated as a circular arc of length ds (mm) at its
    curvature (1/m); the frame rotates by kappa*ds between steps.  Returns
    (M+1, 2) points starting at (0, 0), (lateral, axial) ordering.
    """
    kappa = np.asarray(kappa_samples, dtype=float)
    ds = np.broadcast_to(np.asarray(ds, dtype=float), kappa.shape)
    if np.any(ds <= 0):
        raise ValueError("arc spacing must be positive")
    alpha = kappa * ds / MM_PER_M
    phi_end = np.cumsum(alpha)
    phi_mid = phi_end - alpha / 2.0
    chord = ds * np.sinc(alpha / 2.0 / np.pi)
    steps = np.stack(
        [-chord * np.sin(phi_mid), chord * np.cos(phi_mid)], axis=-1
    )
    pts = np.vstack([np.zeros(2), np.cumsum(steps, axis=0)])
    return pts


def reconstruct(
    frame: WavelengthFrame,
    cal: CalibrationMap,
    layout: FbgLayout,
    n_per_segment: int = 10,
    mode: str = "linear",
) -> ReconstructedShape:
    """Frame to fused planar shape via the full sensing pipeline."""
    kap = curvatures(frame, cal)
    fibers = []
    for f in range(2):
        _, ks, ds = interpolate_curvature(
            kap[3 * f: 3 * f + 3],
            layout.aa_positions,
            n_per_segment,
            layout.active_length,
            mode,
        )
        fibers.append(integrate_shape(ks, ds))
    tip = 0.5 * (fibers[0][-1] + fibers[1][-1])
    return ReconstructedShape(
        fiber_points=(fibers[0], fibers[1]),
        fused_tip=(float(tip[0]), float(tip[1])),
        n_points_per_segment=n_per_segment,
    )


def map_to_yaml(cal: CalibrationMap) -> str:
    """Serialize a calibration map to YAML text."""
    doc = {
        "channels": [
            {
                "fiber": ch // 3 + 1,
                "aa": ch % 3 + 1,
                "slope": cal.slopes[ch],
                "intercept": cal.intercepts[ch],
                "residual_rms": cal.residual_rms[ch],
            }
            for ch in range(6)
        ]
    }
    return yaml.safe_dump(doc, sort_keys=False)


def map_from_yaml(text: str) -> CalibrationMap:
    doc = yaml.safe_load(text)
    chans = doc["channels"]
    if len(chans) != 6:
        raise ValueError("calibration map must have 6 channels")
    chans = sorted(chans, key=lambda c: (c["fiber"], c["aa"]))
    return CalibrationMap(
        slopes=tuple(float(c["slope"]) for c in chans),
        intercepts=tuple(float(c["intercept"]) for c in chans),
        residual_rms=tuple(float(c["residual_rms"]) for c in chans),
    )
