"""Exception taxonomy shared across the package.

CLI exit codes: usage errors map to 1, validation errors (mesh/config/schema)
to 2, numerical failures (non-convergence, breakdown) to 3.
"""


class HemoflowError(Exception):
    """Base class for all package errors."""


class ValidationError(HemoflowError):
    """Invalid input data: mesh files, config files, incompatible options."""


class MeshFormatError(ValidationError):
    """Malformed mesh file (syntax, counts, out-of-range indices)."""


class MeshTopologyError(ValidationError):
    """Structurally broken mesh (non-manifold faces, unlabeled boundary, ...)."""


class MeshLabelError(ValidationError):
    """Boundary labeling does not satisfy the patch rules."""


class DegenerateCellError(ValidationError):
    """A cell with (numerically) zero volume."""


class ConfigError(ValidationError):
    """Malformed or inconsistent run configuration."""


class NumericalError(HemoflowError):
    """Iteration failed to converge or produced non-finite values."""
