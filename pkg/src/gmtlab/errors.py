"""Exception hierarchy for the toolkit."""


class GmtLabError(Exception):
    """Base class for all toolkit errors."""


class NonManifold(GmtLabError):
    pass


class InconsistentOrientation(GmtLabError):
    pass


class DegenerateFacet(GmtLabError):
    pass


class EmptyBall(GmtLabError):
    pass


class EmptyRegion(GmtLabError):
    def __init__(self, msg="", suggested=None):
        super().__init__(msg)
        self.suggested = suggested


class ScaleTooSmall(GmtLabError):
    pass


class OffBoundary(GmtLabError):
    pass


class DegenerateAverageNormal(GmtLabError):
    pass


class ExcessTooLarge(GmtLabError):
    pass


class SeparationFails(GmtLabError):
    pass


class EmptyM0(GmtLabError):
    def __init__(self, msg="", smallest_working=None):
        super().__init__(msg)
        self.smallest_working = smallest_working


class DeltaTooLarge(GmtLabError):
    pass


class NoShiftWorks(GmtLabError):
    def __init__(self, msg="", overshoot=None):
        super().__init__(msg)
        self.overshoot = overshoot


class PreconditionDLTSCS(GmtLabError):
    pass


class VoxelResolutionTooCoarse(GmtLabError):
    pass


class OnBoundary(GmtLabError):
    pass


class EpsilonTooSmall(GmtLabError):
    pass


class NoConvergence(GmtLabError):
    def __init__(self, msg="", tail=None):
        super().__init__(msg)
        self.tail = tail


class EmptyCone(GmtLabError):
    pass


class PoleTooClose(GmtLabError):
    pass


class UnboundedSideWithoutCap(GmtLabError):
    pass


class RefuseLevel(GmtLabError):
    def __init__(self, msg="", finest_admissible=None):
        super().__init__(msg)
        self.finest_admissible = finest_admissible


class ZeroMassBall(GmtLabError):
    pass


class ParamOutOfRange(GmtLabError):
    pass
