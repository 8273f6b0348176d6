# -*- coding: utf-8 -*-
"""
errors: exception classes raised by attneraser.

They derive from the builtin ValueError / RuntimeError so that callers that
only check for the builtin types keep working. The command line interface
uses the class to choose an exit code.
"""


class DimensionError(ValueError):
    """Shapes or resolutions that cannot be combined"""


class DegenerateMaskError(ValueError):
    """A mask that leaves a softmax row with no admissible column"""


class ConfigError(ValueError):
    """Invalid schedule, denoiser, guidance or removal settings"""


class ArchiveError(ValueError):
    """Corrupt or truncated tensor archive"""


class ArchiveVersionError(ArchiveError):
    """Tensor archive written with an unknown format version"""


class CorpusError(ValueError):
    """Missing or mismatched corpus files"""


class CorpusIntegrityError(CorpusError):
    """Corpus content does not match its manifest"""


class TrainingError(RuntimeError):
    """Training diverged. The last good weights are kept in last_good_state"""

    def __init__(self, message, last_good_state=None, step=None):
        super().__init__(message)
        self.last_good_state = last_good_state
        self.step = step
