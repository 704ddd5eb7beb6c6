"""Exception hierarchy. Each class carries the CLI exit code it maps to."""


class SidTokError(Exception):
    exit_code = 1


class UsageError(SidTokError):
    exit_code = 2


class ConfigError(UsageError):
    pass


class DataError(SidTokError):
    exit_code = 3


class DimensionError(DataError):
    pass


class InsufficientDataError(DataError):
    pass


class NumericError(SidTokError):
    exit_code = 4


class StateError(SidTokError):
    exit_code = 1


class CheckpointError(SidTokError):
    exit_code = 5


class CorruptCheckpointError(CheckpointError):
    pass
