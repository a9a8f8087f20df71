"""Exception hierarchy and CLI exit codes.

Every structured failure mode raises a subclass of CrowdLocError so the CLI
can map error classes to distinct exit codes.
"""


class CrowdLocError(Exception):
    """Base class for all structured errors raised by this package."""


class ConfigError(CrowdLocError):
    """Invalid or incomplete configuration / missing input file."""


class BehindCamera(CrowdLocError):
    """A 3D point or intersection has non-positive depth."""


class NoIntersection(CrowdLocError):
    """A viewing ray is parallel to the ground plane."""


class DirectionUndefined(CrowdLocError):
    """The torso pixel coincides with the ground-normal vanishing point."""


class DegenerateRay(CrowdLocError):
    """The torso-height denominator vanishes (ray parallel to the normal plane)."""


class LayoutInfeasible(CrowdLocError):
    """The active region is too short for a single crop block."""


class InsufficientData(CrowdLocError):
    """Too few observations to run an estimation step."""


class ObservationInvalid(CrowdLocError):
    """A per-person observation violates a precondition (zero-length segment, ...)."""


class MetricUndefined(CrowdLocError):
    """A metric has no defined value for the given input (e.g. fewer than 2 people)."""


class DegenerateAlignment(CrowdLocError):
    """Point-set alignment is impossible (zero variance in the estimates)."""


class SceneInfeasible(CrowdLocError):
    """The synthetic scene spec admits no visible ground region."""


# Distinct exit code per error class; 1 is reserved for unexpected exceptions.
EXIT_CODES = {
    ConfigError: 2,
    InsufficientData: 3,
    LayoutInfeasible: 3,
    SceneInfeasible: 3,
    BehindCamera: 4,
    NoIntersection: 4,
    DirectionUndefined: 4,
    DegenerateRay: 4,
    ObservationInvalid: 5,
    MetricUndefined: 6,
    DegenerateAlignment: 6,
}


def exit_code(exc: BaseException) -> int:
    for cls, code in EXIT_CODES.items():
        if isinstance(exc, cls):
            return code
    return 1
