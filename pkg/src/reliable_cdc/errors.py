"""Exception hierarchy shared by all modules."""


class ReliableCDCError(Exception):
    """Base class for every error raised by this package."""


# reputation
class AllWeightsZero(ReliableCDCError):
    """Every recommender weight numerator is zero; fusion must be skipped."""


class DegenerateFusion(ReliableCDCError):
    """Both opinions are dogmatic (zero uncertainty), fusion is undefined."""


# coalition
class InvalidConfig(ReliableCDCError):
    pass


class ZeroReputationCoalition(ReliableCDCError):
    pass


class MismatchedPlayers(ReliableCDCError):
    """Two partitions being compared do not cover the same miners."""


class InstanceTooLarge(ReliableCDCError):
    pass


# stackelberg
class NonPositiveA(ReliableCDCError):
    """The deadline configuration leaves no slack for the reward probability."""


class InvalidOrder(ReliableCDCError):
    pass


class OutOfDomain(ReliableCDCError):
    pass


class NonConcaveDetected(UserWarning):
    """Leader utility failed the concavity check (warning grade)."""


# coded execution
class EncodingFailed(ReliableCDCError):
    pass


class DimensionMismatch(ReliableCDCError):
    pass


class SingularSubset(ReliableCDCError):
    pass


class IndexDuplicate(ReliableCDCError):
    pass


# ledger
class DuplicateTx(ReliableCDCError):
    pass


class NothingPending(ReliableCDCError):
    pass


class UnknownWorker(ReliableCDCError):
    pass


class HandlerNotRegistered(ReliableCDCError):
    pass


class LedgerCorrupted(ReliableCDCError):
    """A persisted or in-memory chain failed verification or decoding."""
