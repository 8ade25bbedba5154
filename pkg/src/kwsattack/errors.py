"""Exception hierarchy shared by every module."""


class KwsAttackError(Exception):
    """Base class; the CLI maps any subclass to exit status 1."""


class NotWav(KwsAttackError):
    pass


class UnsupportedFormat(KwsAttackError):
    pass


class ClipTooShort(KwsAttackError):
    pass


class DegenerateFilter(KwsAttackError):
    pass


class InvalidConfig(KwsAttackError):
    pass


class ModelShapeMismatch(KwsAttackError):
    pass


class CorruptModel(KwsAttackError):
    pass


class InsufficientData(KwsAttackError):
    pass


class UnknownLabel(KwsAttackError):
    pass


class InvalidTarget(KwsAttackError):
    pass


class LengthMismatch(KwsAttackError):
    pass


class InsufficientCorpus(KwsAttackError):
    pass


class EmptyRecords(KwsAttackError):
    pass
