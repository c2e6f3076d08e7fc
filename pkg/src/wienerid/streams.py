"""Counter-based random streams keyed by (run seed, channel, step).

Draws for step ``k`` on a channel never depend on how many draws were taken
on other steps or channels, so runs replay bit-identically and channels are
independent by construction.
"""

from __future__ import annotations

import hashlib

import numpy as np

CHANNELS = {"truth": 0, "y": 1, "psi": 2, "init": 3, "truth_noise": 4, "truth_aux": 5}


def derive_seed(base_seed: int, *labels) -> int:
    """Stable 63-bit seed from a base seed and labels (e.g. replication index)."""
    text = ":".join(str(x) for x in (base_seed, *labels))
    return int.from_bytes(hashlib.sha256(text.encode()).digest()[:8], "little") >> 1


class NoiseStreams:
    """Gaussian draws addressed by ``(channel, k)``.

    With ``audit=True`` every request is logged as ``(channel, k, shape)``.
    """

    def __init__(self, seed: int, audit: bool = False):
        self.seed = int(seed)
        self._keys = {}
        self.log: list | None = [] if audit else None

    def _key(self, channel: str) -> np.ndarray:
        key = self._keys.get(channel)
        if key is None:
            ss = np.random.SeedSequence([self.seed, CHANNELS[channel]])
            key = ss.generate_state(2, np.uint64)
            self._keys[channel] = key
        return key

    def generator(self, channel: str, k: int) -> np.random.Generator:
        counter = np.array([0, 0, 0, k], dtype=np.uint64)
        return np.random.Generator(np.random.Philox(key=self._key(channel), counter=counter))

    def normal(self, channel: str, k: int, shape) -> np.ndarray:
        if self.log is not None:
            self.log.append((channel, k, tuple(np.atleast_1d(shape))))
        return self.generator(channel, k).standard_normal(shape)
