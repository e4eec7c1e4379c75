"""Counter-based random streams and the closed-loop AWGN channel.

Every random quantity is a pure function of ``(seed, stream_id, lane, index)``.
Words come from Philox4x32-10 with key = seed and counter =
``(block, lane, stream_lo, stream_hi)``. Gaussian draws use the Box-Muller
transform on 53-bit uniforms, two normals per Philox block:

    u1 = (((w1 << 32) | w0) >> 11 + 0.5) * 2**-53      in (0, 1)
    u2 = (((w3 << 32) | w2) >> 11) * 2**-53            in [0, 1)
    n0 = sqrt(-2 ln u1) cos(2 pi u2),  n1 = sqrt(-2 ln u1) sin(2 pi u2)

This transform is frozen: changing it changes every experiment.
"""
from dataclasses import dataclass

import numpy as np

from fblab.kernels import philox4x32

LANE_BITS = 0
LANE_FORWARD = 1
LANE_FEEDBACK = 2

# top byte of stream ids separates independent experiment phases
PURPOSE_TRAIN = 1
PURPOSE_FREEZE = 2
PURPOSE_EVAL = 3
PURPOSE_AUDIT = 4
PURPOSE_INIT = 5

_MASK64 = (1 << 64) - 1


def purpose_stream(purpose, index=0):
    """Stream id for sample ``index`` in an experiment phase."""
    if not 0 <= index < (1 << 56):
        raise ValueError(f"stream index out of range: {index}")
    return (int(purpose) << 56) | int(index)


def _key(seed):
    seed = int(seed) & _MASK64
    return seed & 0xFFFFFFFF, seed >> 32


def random_words(seed, stream_ids, lane, n_blocks):
    """Raw uint32 words, shape (len(stream_ids), 4 * n_blocks)."""
    ids = np.asarray(stream_ids, dtype=np.uint64).reshape(-1)
    n = ids.shape[0]
    ctr = np.empty((n, n_blocks, 4), dtype=np.uint32)
    ctr[:, :, 0] = np.arange(n_blocks, dtype=np.uint32)[None, :]
    ctr[:, :, 1] = lane
    ctr[:, :, 2] = (ids & np.uint64(0xFFFFFFFF)).astype(np.uint32)[:, None]
    ctr[:, :, 3] = (ids >> np.uint64(32)).astype(np.uint32)[:, None]
    k0, k1 = _key(seed)
    words = philox4x32(ctr.reshape(-1, 4), k0, k1)
    return words.reshape(n, n_blocks * 4)


def uniforms(seed, stream_ids, lane, n):
    """Uniforms in [0, 1), shape (len(stream_ids), n)."""
    w = random_words(seed, stream_ids, lane, (n + 1) // 2).astype(np.uint64)
    hi = (w[:, 1::2] << np.uint64(32)) | w[:, 0::2]
    return (hi >> np.uint64(11)).astype(np.float64)[:, :n] * 2.0**-53


def normals(seed, stream_ids, lane, n):
    """Standard normals, shape (len(stream_ids), n)."""
    w = random_words(seed, stream_ids, lane, (n + 1) // 2).astype(np.uint64)
    a = ((w[:, 1::4] << np.uint64(32)) | w[:, 0::4]) >> np.uint64(11)
    b = ((w[:, 3::4] << np.uint64(32)) | w[:, 2::4]) >> np.uint64(11)
    u1 = (a.astype(np.float64) + 0.5) * 2.0**-53
    u2 = b.astype(np.float64) * 2.0**-53
    r = np.sqrt(-2.0 * np.log(u1))
    theta = 2.0 * np.pi * u2
    out = np.empty((u1.shape[0], 2 * u1.shape[1]))
    out[:, 0::2] = r * np.cos(theta)
    out[:, 1::2] = r * np.sin(theta)
    return out[:, :n]


def random_bits(seed, stream_ids, k):
    """Uniform message bits, shape (len(stream_ids), k), uint8."""
    w = random_words(seed, stream_ids, LANE_BITS, (k + 3) // 4)
    return (w[:, :k] >> np.uint32(31)).astype(np.uint8)


@dataclass(frozen=True)
class RngStream:
    """An immutable handle on one counter-based stream."""

    seed: int
    stream_id: int = 0

    def __post_init__(self):
        if not (0 <= self.seed <= _MASK64 and 0 <= self.stream_id <= _MASK64):
            raise ValueError("seed and stream_id must be unsigned 64-bit")

    def normal(self, n, lane=LANE_FORWARD):
        return normals(self.seed, [self.stream_id], lane, n)[0]

    def uniform(self, n, lane=LANE_BITS):
        return uniforms(self.seed, [self.stream_id], lane, n)[0]

    def bits(self, k):
        return random_bits(self.seed, [self.stream_id], k)[0]


@dataclass(frozen=True)
class NoiseParams:
    sigma1_sq: float
    sigma2_sq: float = 0.0

    def __post_init__(self):
        if not np.isfinite(self.sigma1_sq) or self.sigma1_sq <= 0:
            raise ValueError(f"forward noise variance must be positive, got {self.sigma1_sq}")
        if not np.isfinite(self.sigma2_sq) or self.sigma2_sq < 0:
            raise ValueError(f"feedback noise variance must be >= 0, got {self.sigma2_sq}")


@dataclass(frozen=True)
class ChannelInstance:
    n1: np.ndarray
    n2: np.ndarray
    params: NoiseParams

    @property
    def n_uses(self):
        return self.n1.shape[-1]


def snr_db_to_noise_var(snr_db):
    """Noise variance for a unit-power signal at the given SNR in dB."""
    return 10.0 ** (-float(snr_db) / 10.0)


def noise_var_to_db(var):
    return 10.0 * np.log10(var)


def channel_noise(seed, stream_ids, n_uses, params):
    """Forward and feedback noise for a batch of streams, each (batch, n_uses)."""
    n1 = np.sqrt(params.sigma1_sq) * normals(seed, stream_ids, LANE_FORWARD, n_uses)
    if params.sigma2_sq == 0:
        n2 = np.zeros_like(n1)
    else:
        n2 = np.sqrt(params.sigma2_sq) * normals(seed, stream_ids, LANE_FEEDBACK, n_uses)
    return n1, n2


def sample_channel(rng, n_uses, params):
    """Noise realisation for one episode of ``n_uses`` channel uses."""
    if n_uses < 1:
        raise ValueError("n_uses must be >= 1")
    if not isinstance(params, NoiseParams):
        params = NoiseParams(*params)
    n1, n2 = channel_noise(rng.seed, [rng.stream_id], n_uses, params)
    return ChannelInstance(n1[0], n2[0], params)


def forward_step(x_k, n1_k):
    return x_k + n1_k


def feedback_step(y_k, n2_k):
    return y_k + n2_k
