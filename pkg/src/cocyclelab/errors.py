"""Exception types shared across the package."""


class CocycleLabError(Exception):
    """Base class for all errors raised by cocyclelab."""


class HyperbolicityError(CocycleLabError, ValueError):
    """The integer matrix does not define a hyperbolic toral automorphism."""


class SizeCapError(CocycleLabError):
    """A periodic-point enumeration would exceed the configured cap."""

    def __init__(self, count, cap):
        super().__init__(f"{count} periodic points requested, cap is {cap}")
        self.count = count
        self.cap = cap


class ClosingRefused(CocycleLabError):
    """The orbit segment does not return close enough to be closed."""

    def __init__(self, delta, delta0):
        super().__init__(f"return defect {delta:.3g} is not below delta0={delta0:.3g}")
        self.delta = delta
        self.delta0 = delta0


class DegenerateCocycleError(CocycleLabError):
    """A cocycle value is (numerically) singular at some point."""

    def __init__(self, point, sigma_min):
        super().__init__(f"cocycle nearly singular at x={point}: sigma_min={sigma_min:.3g}")
        self.point = point
        self.sigma_min = sigma_min


class ScaledProductError(CocycleLabError, OverflowError):
    """A plain matrix product left the representable range."""


class ConstructionError(CocycleLabError):
    """A cocycle construction could not satisfy its requirements."""


class PreconditionError(CocycleLabError, ValueError):
    """An operation was called outside the regime where its bound applies."""


class ConvergenceError(CocycleLabError):
    """An iterative procedure did not converge within its iteration cap."""

    def __init__(self, message, last=None, gap=None, trace=None):
        super().__init__(message)
        self.last = last
        self.gap = gap
        self.trace = trace


class RecoveryRefused(CocycleLabError):
    """Orbit structure sets are not bounded: the cocycle looks non-quasiconformal."""

    def __init__(self, point, n, distortion, bound):
        super().__init__(
            f"K_F(x={tuple(float(c) for c in point)}, n={n}) = {distortion:.6g} exceeds {bound:.6g}"
        )
        self.point = point
        self.n = n
        self.distortion = distortion
        self.bound = bound


class CoverageError(CocycleLabError):
    """The seed orbit does not visit every grid point closely enough."""

    def __init__(self, point, distance, radius):
        super().__init__(
            f"no orbit point within {radius:.3g} of {tuple(float(c) for c in point)} "
            f"(nearest at {distance:.3g}); increase the orbit length"
        )
        self.point = point
        self.distance = distance
        self.radius = radius


class ConfigError(CocycleLabError, ValueError):
    """Malformed experiment configuration; names the offending field."""

    def __init__(self, field, message):
        super().__init__(f"{field}: {message}")
        self.field = field
