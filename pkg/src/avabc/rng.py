"""Hierarchical, reproducible random streams.

A stream is a master seed plus a key path.  ``child`` extends the path (for
example with the iteration number) and ``generator(kind)`` returns a fresh
numpy generator for one draw kind.  Streams with different keys are
independent; the same key always reproduces the same draws.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

DRAW_KINDS = {"nu": 0, "u": 1, "w": 2, "kl": 3, "init": 4, "profile": 5, "misc": 6}


@dataclass(frozen=True)
class RngStream:
    seed: int
    key: tuple = ()

    def child(self, *key: int) -> "RngStream":
        return RngStream(self.seed, self.key + tuple(int(k) for k in key))

    def generator(self, kind: str) -> np.random.Generator:
        if kind not in DRAW_KINDS:
            raise KeyError(f"unknown draw kind {kind!r}")
        ss = np.random.SeedSequence(self.seed, spawn_key=self.key + (DRAW_KINDS[kind],))
        return np.random.Generator(np.random.PCG64(ss))
