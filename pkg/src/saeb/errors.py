"""Exception types raised across the package."""


class SaebError(Exception):
    """Base class for all package-specific errors."""


class GridIncompleteError(SaebError):
    """The panel does not contain exactly one row per (region, quarter) cell."""


class InconsistentCountsError(SaebError):
    """A row violates the count identities between the labor-market states."""

    def __init__(self, row: int, message: str):
        super().__init__(f"row {row}: {message}")
        self.row = row


class DomainError(SaebError):
    """A field value lies outside its admissible domain."""


class AsymmetryError(SaebError):
    """The adjacency listing is not symmetric."""

    def __init__(self, i: int, k: int):
        super().__init__(
            f"region {i} lists {k} as a neighbor but {k} does not list {i}"
        )
        self.pair = (i, k)


class DisconnectedGraphError(SaebError):
    """The region graph has more than one connected component."""

    def __init__(self, component_sizes):
        sizes = sorted(component_sizes, reverse=True)
        super().__init__(f"region graph is disconnected (component sizes {sizes})")
        self.component_sizes = tuple(sizes)


class SpecError(SaebError):
    """A model specification is internally inconsistent or names unknown inputs."""


class LinkDomainError(SaebError):
    """The linear predictor lies outside the domain of the inverse link."""


class NonFiniteStartError(SaebError):
    """A chain's initial state has log posterior -inf."""


class ConfigError(SaebError):
    """A simulation or run configuration is invalid."""


class DiagnosticsError(SaebError):
    """A diagnostic quantity cannot be computed from the given samples."""
