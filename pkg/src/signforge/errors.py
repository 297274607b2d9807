"""Exception hierarchy shared across the toolkit."""


class SignforgeError(Exception):
    """Base class for all toolkit errors."""


class ParseError(SignforgeError):
    """A document could not be parsed (malformed JSON/CSV, bad line)."""


class IntegrityError(SignforgeError):
    """A record references an id that does not exist."""


class ConfigError(SignforgeError):
    """Invalid configuration or manifest contents."""


class ValidationError(SignforgeError):
    """A field value violates its contract (range, shape, emptiness)."""


class GeometryError(SignforgeError):
    """Degenerate geometry (non-convex or collinear warp corners)."""


class SampleError(SignforgeError):
    """A sample could not be synthesized (e.g. no sign survived placement)."""


class EvaluationError(SignforgeError):
    """A metric is undefined for the given inputs."""
