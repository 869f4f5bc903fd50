"""Exception hierarchy.

Every error raised by the library derives from :class:`PoseSyncError`. The
``exit_code`` attribute is what the command-line front end returns when the
error escapes a subcommand.
"""


class PoseSyncError(Exception):
    exit_code = 1
    module = "posesync"

    def __str__(self):
        msg = super().__str__()
        return f"[{self.module}] {msg}" if msg else f"[{self.module}]"


class InvalidInput(PoseSyncError, ValueError):
    exit_code = 6


class IOFailure(PoseSyncError, OSError):
    exit_code = 3
    module = "io"


class GraphFormatError(IOFailure):
    pass


class DisconnectedGraph(PoseSyncError):
    exit_code = 4
    module = "sync"


class DegenerateSolve(PoseSyncError, ArithmeticError):
    exit_code = 5


# geometry
class DegenerateMatrix(DegenerateSolve):
    module = "geometry"


class DegenerateConfiguration(DegenerateSolve):
    module = "geometry"


# pose_graph
class DimensionMismatch(InvalidInput):
    module = "pose_graph"


class NotNormalized(InvalidInput):
    module = "pose_graph"


class InsufficientScans(InvalidInput):
    module = "pose_graph"


class MissingFeatures(InvalidInput):
    module = "pose_graph"


class EmptyScan(InvalidInput):
    module = "pose_graph"


# pairwise
class MissingDescriptors(InvalidInput):
    module = "pairwise"


class TooFewCorrespondences(InvalidInput):
    module = "pairwise"


class NoConsensus(DegenerateSolve):
    module = "pairwise"


# sync
class DegenerateBlock(DegenerateSolve):
    module = "sync"


class SingularSystem(DegenerateSolve):
    module = "sync"


# irls
class MissingInlierCount(InvalidInput):
    module = "irls"


class OutOfRange(InvalidInput):
    module = "irls"


class EmptyComponent(InvalidInput):
    module = "irls"


# synth
class InvalidSpec(InvalidInput):
    module = "synth"


# eval
class EmptyEvaluationSet(InvalidInput):
    module = "eval"


class EmptyInput(InvalidInput):
    module = "eval"


# cli
class InvalidOption(InvalidInput):
    module = "cli"
