"""Exception hierarchy shared across the package.

Exit-code mapping used by the CLI lives in ``cli.py``: configuration and
input-format problems exit with code 2, numerical divergence during training
exits with code 3.
"""


class FibreSRError(Exception):
    """Base class for all package errors."""


class ConfigurationError(FibreSRError):
    """Invalid configuration value, CLI argument, or input file format."""


class ImageIOError(ConfigurationError):
    """Unsupported or malformed image file (colour PNG, bad bit depth...)."""


class GeometryError(FibreSRError):
    """Degenerate fibre geometry: too few fibres, collinear points, etc."""


class CheckpointError(FibreSRError):
    """Corrupt or incompatible checkpoint file (magic/checksum mismatch)."""


class TrainingDivergedError(FibreSRError):
    """Loss or gradients became non-finite during training.

    Carries the last finite parameter set so callers can still save a
    checkpoint of the state just before divergence.
    """

    def __init__(self, message, params=None, state=None, epoch=None):
        super().__init__(message)
        self.params = params
        self.state = state
        self.epoch = epoch
