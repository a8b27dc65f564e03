"""Reproducible, independent random streams.

Every stream is a Philox counter-based generator keyed by a master seed and a
spawn key ``(stream_id, sub)``.  Replication ``j`` of a study uses
``RandomStream(seed, j)``; auxiliary draws that must not perturb the main
path (regeneration indicators) come from ``stream.substream(1)``.
"""

from __future__ import annotations

import numpy as np


class RandomStream:
    __slots__ = ("seed", "stream_id", "sub", "generator")

    def __init__(self, seed: int, stream_id: int = 0, sub: int = 0):
        if seed < 0 or stream_id < 0 or sub < 0:
            raise ValueError("seed, stream_id and sub must be non-negative")
        self.seed = int(seed)
        self.stream_id = int(stream_id)
        self.sub = int(sub)
        ss = np.random.SeedSequence(self.seed, spawn_key=(self.stream_id, self.sub))
        self.generator = np.random.Generator(np.random.Philox(ss))

    def substream(self, sub: int) -> "RandomStream":
        return RandomStream(self.seed, self.stream_id, sub)

    def uniform(self) -> float:
        return float(self.generator.random())

    def uniforms(self, size) -> np.ndarray:
        return self.generator.random(size)

    def normal(self, loc: float = 0.0, scale: float = 1.0, size=None):
        return self.generator.normal(loc, scale, size)

    def __repr__(self) -> str:
        return f"RandomStream(seed={self.seed}, stream_id={self.stream_id}, sub={self.sub})"
