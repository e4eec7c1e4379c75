"""Reference codecs: BPSK repetition, tail-biting convolutional coding, learned linear feedback.

Every codec exposes the same duck-typed evaluation interface as the neural
code: ``K``, ``N``, ``kind``, ``uses_feedback`` and
``transmit(bits, n1, n2) -> (bits_hat, x)``.
"""
import itertools
import math
from dataclasses import dataclass, field

import numpy as np

from fblab import autodiff as ad
from fblab import kernels
from fblab.config import TrainConfig
from fblab.decoder import bits_to_index, harden
from fblab.encoder import (EpisodeTrace, InitStream, check_norm_mode, freeze_norm_stats,
                           power_control)


def q_function(x):
    """Gaussian tail probability P(Z > x)."""
    return 0.5 * math.erfc(x / math.sqrt(2.0))


def bpsk(bits, one_positive=True):
    b = np.asarray(bits, dtype=np.float64)
    return 2.0 * b - 1.0 if one_positive else 1.0 - 2.0 * b


# ---------------------------------------------------------------- repetition

def repetition_bler(K, reps, sigma1_sq):
    """Closed-form (per-bit error, block error) of BPSK repetition with sum decoding."""
    p = q_function(math.sqrt(reps / sigma1_sq))
    return p, 1.0 - (1.0 - p) ** K


@dataclass(frozen=True)
class RepetitionCode:
    """Bit i (mapped 1 -> +1, 0 -> -1) occupies channel uses i*reps .. (i+1)*reps - 1."""

    K: int
    N: int
    kind = "repetition"
    uses_feedback = False

    def __post_init__(self):
        if self.K < 1 or self.N % self.K:
            raise ValueError(f"repetition coding needs K | N, got K={self.K}, N={self.N}")

    @property
    def reps(self):
        return self.N // self.K

    def encode(self, bits):
        return np.repeat(bpsk(np.atleast_2d(bits)), self.reps, axis=1)

    def decode(self, y):
        y = np.atleast_2d(np.asarray(y, dtype=np.float64))
        sums = y.reshape(y.shape[0], self.K, self.reps).sum(axis=2)
        return (sums > 0).astype(np.uint8)

    def transmit(self, bits, n1, n2=None):
        x = self.encode(bits)
        return self.decode(x + n1), x


# ---------------------------------------------------------------------- TBCC

def _octal_taps(g, constraint_length):
    taps = int(str(g), 8)
    if taps >> constraint_length:
        raise ValueError(f"generator {g} has more than {constraint_length} taps")
    return taps


@dataclass(frozen=True)
class ConvCode:
    """Feedforward convolutional code, generators in octal read MSB-first.

    The shift register holds ``(u << m) | state`` where ``state`` keeps the
    last ``m`` inputs with the most recent at bit ``m - 1``. The generator's
    most significant tap multiplies the current input.
    """

    constraint_length: int = 7
    generators: tuple = (133, 171, 165)
    tail_biting: bool = True

    @property
    def memory(self):
        return self.constraint_length - 1

    @property
    def n_states(self):
        return 1 << self.memory

    @property
    def rate_inv(self):
        return len(self.generators)

    def tables(self):
        """(next_state (S, 2), outputs (S, 2, n_out)) trellis tables."""
        m = self.memory
        taps = [_octal_taps(g, self.constraint_length) for g in self.generators]
        S = self.n_states
        nxt = np.empty((S, 2), dtype=np.int64)
        out = np.empty((S, 2, len(taps)), dtype=np.uint8)
        for s in range(S):
            for u in (0, 1):
                reg = (u << m) | s
                nxt[s, u] = reg >> 1
                out[s, u] = [bin(reg & t).count("1") & 1 for t in taps]
        return nxt, out


TBCC = ConvCode()


def _initial_state(bits, m):
    """Register contents after feeding the last ``m`` message bits."""
    K = bits.shape[1]
    if K < m:
        # short messages wrap around cyclically
        idx = [(K - m + i) % K for i in range(m)]
    else:
        idx = list(range(K - m, K))
    return sum(bits[:, j].astype(np.int64) << i for i, j in enumerate(idx))


def tbcc_encode_bits(bits, code=TBCC):
    """Code bits (B, n_out*K) and the final register state, which equals the initial one."""
    bits = np.atleast_2d(np.asarray(bits, dtype=np.uint8))
    nxt, out = code.tables()
    state = _initial_state(bits, code.memory) if code.tail_biting else np.zeros(bits.shape[0], np.int64)
    start = state.copy()
    cw = np.empty((bits.shape[0], bits.shape[1], code.rate_inv), dtype=np.uint8)
    for k in range(bits.shape[1]):
        u = bits[:, k]
        cw[:, k] = out[state, u]
        state = nxt[state, u]
    if code.tail_biting and not np.array_equal(state, start):
        raise AssertionError("tail-biting encoder did not return to its start state")
    return cw.reshape(bits.shape[0], -1), state


def tbcc_encode(bits, code=TBCC):
    """BPSK codeword (0 -> +1, 1 -> -1), shape (B, n_out*K)."""
    cw, _ = tbcc_encode_bits(bits, code)
    return bpsk(cw, one_positive=False)


def tbcc_branch_costs(y, code=TBCC):
    """Soft branch costs ``-sum(y * s)`` for every (step, state, input); lower is better."""
    y = np.atleast_2d(np.asarray(y, dtype=np.float64))
    n = code.rate_inv
    if y.shape[1] % n:
        raise ValueError(f"received length {y.shape[1]} is not a multiple of {n}")
    _, out = code.tables()
    sym = bpsk(out, one_positive=False)  # (S, 2, n)
    steps = y.shape[1] // n
    return -np.einsum("tkj,suj->tksu", y.reshape(y.shape[0], steps, n), sym)


def tbcc_decode(y, code=TBCC):
    """Exact ML tail-biting decoding: best of the per-start-state Viterbi runs.

    Ties go to the lowest start state, then per step to the lower
    predecessor state and input bit, so an all-zero input decodes to the
    all-zero message.
    """
    nxt, _ = code.tables()
    return kernels.viterbi_tailbiting(np.ascontiguousarray(tbcc_branch_costs(y, code)), nxt)


def brute_force_ml(y, K, code=TBCC):
    """Minimum-Euclidean-distance message over all 2^K codewords (lowest index on ties)."""
    msgs = np.array(list(itertools.product((0, 1), repeat=K)), dtype=np.uint8)
    cws = tbcc_encode(msgs, code)
    y = np.atleast_2d(np.asarray(y, dtype=np.float64))
    d = ((y[:, None, :] - cws[None]) ** 2).sum(axis=-1)
    return msgs[np.argmin(d, axis=1)]


@dataclass(frozen=True)
class TbccCode:
    K: int
    code: ConvCode = TBCC
    kind = "tbcc"
    uses_feedback = False

    @property
    def N(self):
        return self.code.rate_inv * self.K

    def transmit(self, bits, n1, n2=None):
        x = tbcc_encode(bits, self.code)
        return tbcc_decode(x + n1, self.code), x


# ------------------------------------------------------------ oracles

@dataclass(frozen=True)
class IdentityScheme:
    """Genie decoder that returns the message; BPSK on the first K uses."""

    K: int
    N: int
    kind = "identity"
    uses_feedback = False

    def transmit(self, bits, n1, n2=None):
        bits = np.atleast_2d(bits)
        x = np.zeros(np.shape(n1))
        x[:, :self.K] = bpsk(bits)
        return bits.astype(np.uint8).copy(), x


@dataclass(frozen=True)
class RandomGuessScheme:
    """Decoder that ignores the message; guesses are the signs of the forward noise."""

    K: int
    N: int
    kind = "random-guess"
    uses_feedback = False

    def transmit(self, bits, n1, n2=None):
        n1 = np.atleast_2d(n1)
        if self.N < self.K:
            raise ValueError("random-guess needs N >= K")
        return (n1[:, :self.K] > 0).astype(np.uint8), np.zeros(n1.shape)


# ------------------------------------------------------- learned linear code

@dataclass
class LinearFeedbackModel:
    """Affine feedback encoder and linear decoder.

    ``x_tilde[k] = A[k] . (2b - 1) + sum_{j<k} C[k, j] z[j] + c[k]`` followed
    by the same power-control layer as the neural encoder; the decoder scores
    ``W y + v`` over 2^K classes (softmax head) or K bits (sigmoid head).
    Only the strictly lower triangle of ``C`` is used.
    """

    K: int
    N: int
    A: ad.Value
    C: ad.Value
    c: ad.Value
    power_w: ad.Value
    W: ad.Value
    v: ad.Value
    head: str = "softmax"
    power_layer: str = "norm+power"
    feedback: bool = True
    norm_mean: np.ndarray = None
    norm_var: np.ndarray = None

    @classmethod
    def init(cls, K, N, head="softmax", power_layer="norm+power", feedback=True, init=None):
        init = init if init is not None else InitStream(0)
        M = 2 ** K if head == "softmax" else K
        return cls(
            K=K, N=N,
            A=ad.Value(init.uniform((N, K), 1.0 / np.sqrt(K)), True),
            C=ad.Value(np.zeros((N, N)), True),
            c=ad.Value(np.zeros(N), True),
            power_w=ad.Value(np.ones(N), True),
            W=ad.Value(init.uniform((M, N), 1.0 / np.sqrt(N)), True),
            v=ad.Value(init.uniform((M,), 1.0 / np.sqrt(N)), True),
            head=head, power_layer=power_layer, feedback=feedback,
        )

    @property
    def frozen(self):
        return self.norm_mean is not None

    def named_parameters(self):
        out = {"lin.A": self.A, "lin.c": self.c}
        if self.feedback:
            out["lin.C"] = self.C
        if self.power_layer in ("norm+power", "power-only"):
            out["lin.power_w"] = self.power_w
        out["lin.W"] = self.W
        out["lin.v"] = self.v
        return out


def linear_episode(bits, n1, n2, model, norm_mode="batch", stats_out=None):
    """Closed-loop run of the affine encoder; same contract as ``encode_episode``."""
    bits = np.atleast_2d(np.asarray(bits))
    n1 = np.atleast_2d(np.asarray(n1, dtype=np.float64))
    n2 = np.atleast_2d(np.asarray(n2, dtype=np.float64))
    B, N = n1.shape
    if bits.shape != (B, model.K) or N != model.N or n2.shape != n1.shape:
        raise ValueError(f"episode shapes bits {bits.shape}, n1 {n1.shape} do not match "
                         f"K={model.K}, N={model.N}")
    check_norm_mode(model, norm_mode, B)
    msg = ad.Value(2.0 * bits - 1.0)
    zs_v, xs, xts, ys, zs, y_values = [], [], [], [], [], []
    for k in range(N):
        xt = ad.add(ad.matmul(msg, ad.getitem(model.A, k)), ad.getitem(model.c, k))
        if model.feedback and k > 0:
            past = ad.concat(zs_v, axis=-1)
            xt = ad.add(xt, ad.matmul(past, ad.getitem(model.C, (k, slice(0, k)))))
        x = power_control(xt, k, model, norm_mode, stats_out)
        y = ad.add(x, n1[:, k])
        z = ad.add(y, n2[:, k])
        zs_v.append(ad.reshape(z, (B, 1)))
        xs.append(x.data)
        xts.append(xt.data)
        ys.append(y.data)
        zs.append(z.data)
        y_values.append(y)
    return EpisodeTrace(
        x=np.stack(xs, axis=1), x_tilde=np.stack(xts, axis=1),
        y=np.stack(ys, axis=1), z=np.stack(zs, axis=1), y_values=y_values,
    )


def linear_logits(y, model):
    Y = ad.stack(y) if isinstance(y, (list, tuple)) else ad.Value(np.atleast_2d(y).T.copy())
    # Y is (N, B): scores = Y^T W^T + v
    return ad.add(ad.matmul(ad.transpose(Y), ad.transpose(model.W)), model.v)


@dataclass
class LinearFeedbackCode:
    model: LinearFeedbackModel
    config: TrainConfig = field(default=None)
    kind = "linear"

    @classmethod
    def init(cls, config):
        config.validate()
        model = LinearFeedbackModel.init(
            config.K, config.N, head=config.head, power_layer=config.power_layer,
            feedback=config.linear_feedback and config.enc_mode == "feedback",
            init=InitStream(config.seed, offset=1 << 24))
        return cls(model, config)

    @property
    def K(self):
        return self.model.K

    @property
    def N(self):
        return self.model.N

    @property
    def uses_feedback(self):
        return self.model.feedback

    def named_parameters(self):
        return self.model.named_parameters()

    def parameters(self):
        return list(self.named_parameters().values())

    @property
    def power_weights(self):
        return self.model.power_w if "lin.power_w" in self.named_parameters() else None

    def _harden(self, logits):
        if self.model.head == "softmax":
            return harden(logits, "softmax", self.K)
        return (logits > 0).astype(np.uint8)

    def loss(self, bits, n1, n2):
        trace = linear_episode(bits, n1, n2, self.model, "batch")
        logits = linear_logits(trace.y_values, self.model)
        if self.model.head == "softmax":
            loss = ad.softmax_cross_entropy(logits, bits_to_index(bits))
        else:
            loss = ad.sigmoid_bce(logits, bits)
        return loss, self._harden(logits.data)

    def freeze(self, bits, n1, n2):
        freeze_norm_stats(self.model, bits, n1, n2, episode=linear_episode)

    def transmit(self, bits, n1, n2):
        with ad.no_grad():
            trace = linear_episode(bits, n1, n2, self.model, "frozen")
            logits = linear_logits(trace.y, self.model)
        return self._harden(logits.data), trace.x

    def state_arrays(self):
        m = self.model
        out = {"lin.A": m.A.data, "lin.C": m.C.data, "lin.c": m.c.data, "lin.power_w": m.power_w.data,
               "lin.W": m.W.data, "lin.v": m.v.data}
        if m.frozen:
            out["lin.norm_mean"] = m.norm_mean
            out["lin.norm_var"] = m.norm_var
        return out

    def load_state(self, arrays):
        m = self.model
        for name, val in (("A", m.A), ("C", m.C), ("c", m.c), ("power_w", m.power_w), ("W", m.W), ("v", m.v)):
            val.data[...] = arrays[f"lin.{name}"]
        if "lin.norm_mean" in arrays:
            m.norm_mean = np.array(arrays["lin.norm_mean"])
            m.norm_var = np.array(arrays["lin.norm_var"])


def train_linear_feedback(config, **kw):
    """Train the learned-linear code with the shared training loop: returns (code, report)."""
    from fblab.trainer import fit

    code = LinearFeedbackCode.init(config)
    report = fit(code, config, **kw)
    return code, report
