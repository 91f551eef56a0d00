"""Dynamical-mode recognition for coupled oscillating flames.

Sensor time series are compressed to a 2-D latent trajectory by a variational
autoencoder, cut into oscillation cycles, and labelled either against
benchmark cycles by Wasserstein distance or without labels by Gaussian-mixture
clustering of pairwise DTW distances.
"""

from .errors import (ConfigError, DataError, DegenerateSignalError, FormatError, IoError, NumericalError,
                     OscModeError, ShapeError, UnsupportedError)

__version__ = "0.1.0"
