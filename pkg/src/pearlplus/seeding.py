"""Named random streams derived from one root seed.

Each stream is keyed by its name, so adding a new consumer never shifts
the numbers an existing one sees.
"""

from __future__ import annotations

import zlib

import numpy as np


def stream(root_seed: int, name: str, *index: int) -> np.random.Generator:
    key = (zlib.crc32(name.encode("utf-8")), *(int(i) for i in index))
    seq = np.random.SeedSequence(entropy=int(root_seed), spawn_key=key)
    return np.random.Generator(np.random.PCG64(seq))


class RngStreams:
    def __init__(self, root_seed: int):
        self.root_seed = int(root_seed)
        self._streams: dict[str, np.random.Generator] = {}

    def __getitem__(self, name: str) -> np.random.Generator:
        g = self._streams.get(name)
        if g is None:
            g = self._streams[name] = stream(self.root_seed, name)
        return g

    def state(self) -> dict:
        return {k: g.bit_generator.state for k, g in sorted(self._streams.items())}

    def load_state(self, states: dict) -> None:
        for name, st in states.items():
            self[name].bit_generator.state = st
