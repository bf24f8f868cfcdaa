"""
Exception hierarchy for Genre Memory Model

Every error carries the process exit code the CLI reports for it.
"""


class GenreMemoryError(Exception):
    """Base class for all pipeline errors"""
    exit_code = 1


class ConfigError(GenreMemoryError):
    """Invalid configuration or command line usage"""
    exit_code = 1


class DataError(GenreMemoryError):
    """Missing, unreadable or inconsistent input data"""
    exit_code = 2


class DegenerateComputationError(GenreMemoryError):
    """A computation has no well-defined result for the given data"""
    exit_code = 3
