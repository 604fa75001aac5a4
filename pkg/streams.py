"""
Neyman Lab - Random Streams
Counter-based substreams: stream (seed, index) is Philox-4x64 keyed by the pair, so any
replication can be regenerated without drawing the ones before it
"""
import numpy as np
from scipy.special import ndtri

from analytics import NeymanLabError

MASK64 = (1 << 64) - 1

# Reserved indices so data preparation never shares a stream with a replication
IMPUTE_STREAM = 1 << 63
SHUFFLE_STREAM = (1 << 63) + 1
GENERATOR_STREAM = (1 << 63) + 2

_DOUBLE_SCALE = 2.0 ** -53
_BELOW_ONE = np.nextafter(1.0, 0.0)


def check_seed(seed: int) -> int:
    if not 0 <= int(seed) <= MASK64:
        raise NeymanLabError("seed must be a 64-bit unsigned integer")
    return int(seed)


def substream(seed: int, index: int) -> np.random.Generator:
    """Generator for stream `index` of `seed`"""
    key = np.array([check_seed(seed), int(index) & MASK64], dtype=np.uint64)
    return np.random.Generator(np.random.Philox(key=key))


def open_uniforms(generator: np.random.Generator, size) -> np.ndarray:
    """Uniforms strictly inside (0, 1): the 53-bit grid shifted by half a step"""
    # the top grid point plus half a step rounds to 1.0
    return np.minimum(generator.random(size) + 0.5 * _DOUBLE_SCALE, _BELOW_ONE)


def normal_deviates(generator: np.random.Generator, size) -> np.ndarray:
    """Standard normal draws by inverse CDF, reproducible wherever the uniforms are"""
    return ndtri(open_uniforms(generator, size))


class ReplicationStreams:
    """
    Uniform draws for a batch of replications, one Philox stream per replication.

    Each call to block() continues every stream where the previous call stopped, so the
    t-th uniform of replication r does not depend on how rounds are blocked.
    """

    def __init__(self, seed: int, indices):
        self.indices = [int(i) for i in indices]
        self._generators = [substream(seed, i) for i in self.indices]

    @property
    def lanes(self) -> int:
        return len(self._generators)

    def block(self, rounds: int) -> np.ndarray:
        return np.stack([g.random(rounds) for g in self._generators])
