"""Seeded, splittable randomness.

Every consumer (dataset, init, poison, training, slices, ...) gets its own
stream derived from the top-level seed and a name, so sub-experiments can be
rerun in isolation and still see exactly the same numbers.
"""

from __future__ import annotations

import zlib

import numpy as np

from .numerics import cholesky_spd


class RngState:
    """Counter-based (Philox) generator with named splitting."""

    def __init__(self, seed: int = 0, _path: tuple[int, ...] = ()):
        if seed < 0 or seed >= 2**64:
            raise ValueError("seed must be a 64-bit unsigned integer")
        self.seed = int(seed)
        self.path = tuple(_path)
        seq = np.random.SeedSequence(entropy=self.seed, spawn_key=self.path)
        self._gen = np.random.Generator(np.random.Philox(seq))

    def split(self, name: str | int) -> "RngState":
        """Independent child stream; depends only on (seed, path, name)."""
        key = name if isinstance(name, int) else zlib.crc32(str(name).encode("utf-8"))
        return RngState(self.seed, self.path + (int(key),))

    def __repr__(self) -> str:
        return f"RngState(seed={self.seed}, path={self.path})"

    # raw draws
    def uniform(self, low=0.0, high=1.0, size=None) -> np.ndarray:
        return self._gen.uniform(low, high, size)

    def random(self, size=None):
        return self._gen.random(size)

    def permutation(self, n: int) -> np.ndarray:
        return self._gen.permutation(n)

    def integers(self, low, high=None, size=None):
        return self._gen.integers(low, high, size)

    def standard_normal(self, size) -> np.ndarray:
        """Standard normals by the Box-Muller transform."""
        shape = (size,) if np.isscalar(size) else tuple(size)
        count = int(np.prod(shape))
        pairs = (count + 1) // 2
        u1 = 1.0 - self._gen.random(pairs)  # (0, 1], keeps log finite
        u2 = self._gen.random(pairs)
        r = np.sqrt(-2.0 * np.log(u1))
        z = np.empty(2 * pairs)
        z[0::2] = r * np.cos(2.0 * np.pi * u2)
        z[1::2] = r * np.sin(2.0 * np.pi * u2)
        return z[:count].reshape(shape)


def sample_gaussian(rng: RngState, mu, Sigma, n: int) -> np.ndarray:
    """``n`` draws from N(mu, Sigma) as an (n, d) array: mu + L z."""
    mu = np.atleast_1d(np.asarray(mu, dtype=np.float64))
    Sigma = np.atleast_2d(np.asarray(Sigma, dtype=np.float64))
    d = mu.shape[0]
    if Sigma.shape != (d, d):
        raise ValueError(f"Sigma shape {Sigma.shape} does not match mean dimension {d}")
    L = cholesky_spd(Sigma)
    if n == 0:
        return np.empty((0, d))
    z = rng.standard_normal((n, d))
    return mu + z @ L.T


def sample_unit_sphere(rng: RngState, d: int, size: int | None = None) -> np.ndarray:
    """Uniform direction(s) on the unit sphere in R^d (normalized Gaussians)."""
    if d < 1:
        raise ValueError("dimension must be >= 1")
    shape = (d,) if size is None else (size, d)
    while True:
        v = rng.standard_normal(shape)
        nrm = np.linalg.norm(v, axis=-1, keepdims=True)
        if np.all(nrm > 0):
            return v / nrm
