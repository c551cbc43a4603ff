"""Counter-based random number streams for reproducible parallel Monte Carlo.

Each stream is addressed by ``(master_seed, stream_id, counter)``. Streams are
backed by the Philox counter-based generator, so any worker can recreate any
stream from the address alone: results never depend on which worker ran which
task or in what order.
"""

from __future__ import annotations

from dataclasses import dataclass, replace

import numpy as np

_MASK64 = (1 << 64) - 1


@dataclass(frozen=True)
class RngStream:
    """Address of an independent random stream.

    The 128-bit Philox key is ``master_seed`` in the low word and
    ``stream_id`` in the high word, so distinct ids give distinct,
    non-overlapping streams for the same seed. ``counter`` skips that many
    draws from the start of the stream.
    """

    master_seed: int
    stream_id: int = 0
    counter: int = 0

    def __post_init__(self):
        for name in ("master_seed", "stream_id", "counter"):
            v = getattr(self, name)
            if not (0 <= int(v) <= _MASK64):
                raise ValueError(f"{name} must be a 64-bit unsigned integer, got {v!r}")

    def generator(self) -> np.random.Generator:
        """Fresh numpy Generator positioned at this stream address."""
        key = (self.master_seed & _MASK64) | ((self.stream_id & _MASK64) << 64)
        bitgen = np.random.Philox(key=key)
        if self.counter:
            bitgen.advance(self.counter)
        return np.random.Generator(bitgen)

    def substream(self, stream_id: int) -> "RngStream":
        """Derived stream with a new id under the same master seed."""
        return replace(self, stream_id=stream_id & _MASK64, counter=0)
