"""Exception types raised by the solver components."""


class MeshError(RuntimeError):
    """Base class for mesh validity problems."""


class NonpositiveVolume(MeshError):
    def __init__(self, elements, message=None):
        self.elements = list(elements)
        super().__init__(message or f"non-positive volume in elements {self.elements[:10]}")


class MeshTangled(MeshError):
    pass


class PointLocationFailed(MeshError):
    pass


class SingularFit(ArithmeticError):
    def __init__(self, vertex):
        self.vertex = vertex
        super().__init__(f"least-squares Hessian fit is rank deficient at vertex {vertex}")


class FlatField(ArithmeticError):
    """Raised when the recovered Hessian vanishes identically."""


class LinearSolveFailure(ArithmeticError):
    pass


class DimensionMismatch(ValueError):
    pass


class NewtonDiverged(ArithmeticError):
    pass


class StepTooSmall(ArithmeticError):
    pass


class UnknownProblem(KeyError):
    pass


class NoExactSolution(ValueError):
    pass
