"""Exception types shared across the pipeline."""


class ExposureIVError(Exception):
    """Base class for all library errors."""


class DegenerateBearing(ExposureIVError):
    """Bearing requested between coincident points."""


class InvalidPolygon(ExposureIVError):
    """Polygon ring is degenerate (too few vertices or zero area)."""


class ZeroWind(ExposureIVError):
    """Annual wind vector has zero length; no upwind axis exists."""


class MissingWind(ExposureIVError):
    """No wind record for a county-year needed by exposure weighting."""

    def __init__(self, county_id, year):
        self.county_id = county_id
        self.year = year
        super().__init__(f"no wind data for county {county_id!r} in {year}")


class OutOfRange(ExposureIVError):
    """Input outside the physically meaningful domain."""


class MissingBaseline(ExposureIVError):
    """No climatology cell for a county-month."""

    def __init__(self, county_id, month):
        self.county_id = county_id
        self.month = month
        super().__init__(f"no baseline for county {county_id!r} month {month}")


class InsufficientBaseline(ExposureIVError):
    """Too little history (or degenerate spread) to build a climatology cell."""


class DuplicateKey(ExposureIVError):
    """A keyed input source repeats a (county_id, year) key."""


class AlignmentError(ExposureIVError):
    """Panel rows and instrument-matrix rows do not line up."""


class ConvergenceError(ExposureIVError):
    """Iterative routine failed to converge within its sweep budget."""

    def __init__(self, message, trace=None):
        self.trace = trace
        super().__init__(message)


class EmptySubsample(ExposureIVError):
    """Subsample filter matched zero rows; estimation refuses to proceed."""


class EmptySelection(ExposureIVError):
    """Lasso selected no instruments (caller decides how to proceed)."""


class UnderIdentified(ExposureIVError):
    """An endogenous variable has no selected instruments."""

    def __init__(self, endogenous):
        self.endogenous = endogenous
        super().__init__(f"no instruments selected for {endogenous!r}")


class RankDeficient(ExposureIVError):
    """Regressor matrix is rank deficient."""

    def __init__(self, message, columns=None):
        self.columns = list(columns) if columns is not None else []
        super().__init__(message)


class DegenerateCorrelation(ExposureIVError):
    """Correlation undefined because one series has zero variance."""


class HarnessError(ExposureIVError):
    """Too many Monte Carlo replications failed to be trustworthy."""


class ConfigError(ExposureIVError):
    """Run configuration failed validation; carries the full error list."""

    def __init__(self, problems):
        self.problems = list(problems)
        super().__init__("invalid configuration:\n" + "\n".join(self.problems))
