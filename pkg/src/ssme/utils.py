import zlib

import numpy as np

from .exceptions import ParameterError


def rng_stream(seed, name):
    """Independent generator for the named consumer of ``seed``.

    Streams with different names never share state, so adding a new consumer
    does not perturb existing ones.
    """
    key = zlib.crc32(name.encode("utf-8"))
    return np.random.default_rng(np.random.SeedSequence(int(seed), spawn_key=(key,)))


def check_positive_int(value, name, minimum=1):
    if isinstance(value, bool) or not isinstance(value, (int, np.integer)):
        raise ParameterError(f"{name} must be an integer, got {value!r}")
    if value < minimum:
        raise ParameterError(f"{name} must be >= {minimum}, got {value}")
    return int(value)


def as_samples(X, name="X"):
    """Convert a D x N spectral matrix to a C-contiguous N x D float array."""
    X = np.asarray(X, dtype=np.float64)
    if X.ndim != 2:
        raise ParameterError(f"{name} must be 2-D (bands x pixels), got shape {X.shape}")
    if not np.all(np.isfinite(X)):
        raise ParameterError(f"{name} contains non-finite values")
    return np.ascontiguousarray(X.T)
