"""Deterministic random-stream plumbing.

Every stochastic operation in the toolkit draws from an :class:`RngStream`,
a value identifying a PCG64 generator by ``(seed, stream_id)``. Equal pairs
yield identical draws on every platform, which is what the reproducibility
contracts of the samplers, trainers and the CLI rest on. Sub-streams are
derived with a splitmix64-style mix of the stream id, so trajectory ``t`` of
iteration ``j`` reads the same stream whether trajectories run serially or
concurrently.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

_MASK64 = (1 << 64) - 1
_MIX = 0x9E3779B97F4A7C15


@dataclass(frozen=True)
class RngStream:
    """Names one deterministic random stream."""

    seed: int
    stream_id: int = 0

    def generator(self) -> np.random.Generator:
        """Materialize the PCG64 generator for this stream."""
        ss = np.random.SeedSequence(
            [self.seed & _MASK64, self.stream_id & _MASK64]
        )
        return np.random.Generator(np.random.PCG64(ss))

    def child(self, index: int) -> "RngStream":
        """Derive sub-stream ``index``; distinct indices give distinct ids."""
        mixed = (self.stream_id * _MIX + index + 1) & _MASK64
        return RngStream(self.seed, mixed)
