"""
Seeded, named random streams.

Every consumer of randomness asks for its own stream (``"init"`` for weight
initialization, ``"batch"`` for minibatch indices, ``"noise"`` for DSM
perturbations, ...), so adding draws to one consumer never shifts another's
sequence. Streams are PCG64 generators keyed by ``SeedSequence(seed,
spawn_key=(stream_id,))``, which numpy guarantees to reproduce bit-for-bit on
every platform.
"""

from dataclasses import dataclass

import numpy as np

from .errors import ConfigError

STREAMS = {
    "init": 0,
    "data": 1,
    "batch": 2,
    "noise": 3,
    "level": 4,
    "planner": 5,
    "cem": 6,
    "probe": 7,
    "split": 8,
    "policy": 9,
    "embed": 10,
}


def stream_id(stream: str | int) -> int:
    if isinstance(stream, int):
        if stream < 0:
            raise ConfigError(f"stream id must be non-negative, got {stream}")
        return stream
    try:
        return STREAMS[stream]
    except KeyError:
        raise ConfigError(
            f"Unknown random stream {stream!r} (known: {', '.join(STREAMS)})"
        ) from None


@dataclass(frozen=True)
class Rng:
    """A (seed, stream) key; ``generator()`` returns a fresh generator at the stream start."""

    seed: int
    stream: int = 0

    def generator(self) -> np.random.Generator:
        if self.seed < 0:
            raise ConfigError(f"seed must be non-negative, got {self.seed}")
        seq = np.random.SeedSequence(entropy=self.seed, spawn_key=(self.stream,))
        return np.random.Generator(np.random.PCG64(seq))


def make_rng(seed: int, stream: str | int = "init") -> np.random.Generator:
    """Generator for ``(seed, stream)``; identical arguments give identical draws."""
    return Rng(int(seed), stream_id(stream)).generator()
