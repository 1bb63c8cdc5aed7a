"""Reproducible standard-normal fields.

Bits come from the Philox-4x64 counter-based generator keyed by
``(seed, stream)``, counter starting at zero. Each raw 64-bit word ``r`` is
mapped to a uniform ``u = ((r >> 11) + 0.5) * 2**-53`` in the open interval
(0, 1), and consecutive pairs ``(u1, u2)`` become two normals through the
Box-Muller transform::

    z1 = sqrt(-2 ln u1) * cos(2 pi u2)
    z2 = sqrt(-2 ln u1) * sin(2 pi u2)

Values are emitted in C order. Only the Philox word stream is taken from
numpy, so the mapping does not depend on numpy's own normal sampler.
"""

import numpy as np

from .errors import ContractError

__all__ = ["seeded_gaussian_noise"]

_U64 = 2**64


def _uniforms(seed, stream, count):
    if not (0 <= seed < _U64 and 0 <= stream < _U64):
        raise ContractError("seed and stream must be integers in [0, 2**64)")
    key = np.array([seed, stream], dtype=np.uint64)
    bits = np.random.Philox(key=key).random_raw(count)
    return ((bits >> np.uint64(11)).astype(np.float64) + 0.5) * 2.0**-53


def seeded_gaussian_noise(shape, seed, stream=0):
    """Standard-normal float64 array of ``shape`` determined by ``(seed, stream)``."""
    if np.isscalar(shape):
        shape = (shape,)
    shape = tuple(int(s) for s in shape)
    n = int(np.prod(shape, dtype=np.int64))
    pairs = (n + 1) // 2
    u = _uniforms(int(seed), int(stream), 2 * pairs)
    radius = np.sqrt(-2.0 * np.log(u[0::2]))
    angle = 2.0 * np.pi * u[1::2]
    z = np.empty(2 * pairs)
    z[0::2] = radius * np.cos(angle)
    z[1::2] = radius * np.sin(angle)
    return z[:n].reshape(shape)
