"""Exception types shared across the package."""


class CdmLabError(Exception):
    """Base class for all package errors."""


# --- simulator ---

class PullExceedsCurvatureLimit(CdmLabError):
    """Requested cable pull cannot be absorbed within the curvature cap."""


class NoConvergence(CdmLabError):
    """Equilibrium solver exceeded its iteration cap."""


class ArcLengthOutOfRange(CdmLabError):
    """Arc-length query outside [0, active_length]."""


# --- sensing ---

class CurvatureOutOfRange(CdmLabError):
    """Curvature magnitude beyond the sensor's rated range."""


class SensorSilent(CdmLabError):
    """No wavelength frame arrived within two sample periods."""


# --- calibration / reconstruction ---

class InsufficientJigs(CdmLabError):
    """Fewer than two distinct jig curvatures supplied."""


class DegenerateFit(CdmLabError):
    """Calibration data carries no wavelength variation to fit."""


# --- QP solver ---

class QpError(CdmLabError):
    """Base class for QP solver failures."""


class Infeasible(QpError):
    """No point satisfies the constraint set."""


class MaxIterations(QpError):
    """Active-set iteration cap exceeded."""


class IllConditioned(QpError):
    """Objective matrix is not positive definite within tolerance."""


class RankDeficient(QpError):
    """Equality system does not have full row rank."""


# --- controller ---

class QpInfeasible(CdmLabError):
    """Control-step QP infeasible; cumulative-length bookkeeping corrupt."""


class DegenerateStep(CdmLabError):
    """Actuation step too small for a stable secant update."""


class MaxIterationsReached(CdmLabError):
    """Control loop hit its iteration cap before converging."""


# --- detector ---

class TraceTooShort(CdmLabError):
    """Trace shorter than the detector baseline window."""


class NotInContact(CdmLabError):
    """Hardness classification requested for a contact-free trace."""


# --- harness ---

class MalformedTrace(CdmLabError):
    """Trace file failed to parse; message carries line diagnostics."""


class ScenarioError(CdmLabError):
    """Scenario definition invalid or target unreachable."""
