"""Exception hierarchy shared by every stage of the lab.

Library code raises these; only `orbitlab.certifier` turns them into exit
codes, so a stage failure always surfaces with its class name and message.
"""

from __future__ import annotations


class LabError(ValueError):
    pass


class DomainError(LabError):
    pass


class SingularOrbitError(LabError):
    pass


class GeodesicEscapeError(LabError):
    def __init__(self, message: str, exit_time: float | None = None, particle: int | None = None) -> None:
        super().__init__(message)
        self.exit_time = exit_time
        self.particle = particle


class InsufficientDataError(LabError):
    pass


class DegenerateOrbitError(LabError):
    pass


class DegenerateMeasureError(LabError):
    pass


class ShapeError(LabError):
    pass


class MassError(LabError):
    pass


class MarginalError(LabError):
    pass


class CausticError(LabError):
    def __init__(self, message: str, time: float | None = None, particle: int | None = None) -> None:
        super().__init__(message)
        self.time = time
        self.particle = particle


class ConfigError(LabError):
    pass
