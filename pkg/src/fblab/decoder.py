"""Bi-directional GRU decoder with attention merge and block/bit output heads."""
from dataclasses import dataclass

import numpy as np

from fblab import autodiff as ad
from fblab.encoder import GruParams, InitStream

HEADS = ("softmax", "sigmoid")
DIRECTIONS = ("bi", "uni")
MERGE_CASES = (1, 2, 3, 4, 5)
MAX_SOFTMAX_K = 16


@dataclass
class DecoderModel:
    K: int
    N: int
    fwd: list
    bwd: list
    W_d: ad.Value
    v_d: ad.Value
    direction: str = "bi"
    merge_case: int = 5
    head: str = "softmax"
    attn_f: ad.Value = None
    attn_b: ad.Value = None
    attn: ad.Value = None  # merge case 4: one vector shared by both directions

    @classmethod
    def init(cls, K, N, hidden=50, layers=2, direction="bi", merge_case=5, head="softmax", init=None):
        if head not in HEADS:
            raise ValueError(f"unknown decoder head {head!r}")
        if direction not in DIRECTIONS:
            raise ValueError(f"unknown decoder direction {direction!r}")
        if merge_case not in MERGE_CASES:
            raise ValueError(f"unknown merge case {merge_case!r}")
        if head == "softmax" and K > MAX_SOFTMAX_K:
            raise ValueError(f"softmax head limited to K <= {MAX_SOFTMAX_K}, got K={K}")
        init = init if init is not None else InitStream(0, offset=1 << 20)
        fwd = [GruParams.init(init, 1 if i == 0 else hidden, hidden) for i in range(layers)]
        bwd = []
        if direction == "bi":
            bwd = [GruParams.init(init, 1 if i == 0 else hidden, hidden) for i in range(layers)]
        feat = hidden * (2 if direction == "bi" else 1)
        M = 2 ** K if head == "softmax" else K
        bound = 1.0 / np.sqrt(feat)
        model = cls(
            K=K, N=N, fwd=fwd, bwd=bwd,
            W_d=ad.Value(init.uniform((M, feat), bound), True),
            v_d=ad.Value(init.uniform((M,), bound), True),
            direction=direction, merge_case=merge_case, head=head,
        )
        if merge_case == 4:
            model.attn = ad.Value(np.ones(N), True)
        elif merge_case == 5:
            model.attn_f = ad.Value(np.ones(N), True)
            if direction == "bi":
                model.attn_b = ad.Value(np.ones(N), True)
        return model

    @property
    def M(self):
        return self.W_d.data.shape[0]

    def attention_weights(self):
        """(forward, backward) weight vectors; Values when trainable, arrays when fixed."""
        N = self.N
        if self.merge_case == 1:
            f = np.zeros(N)
            f[-1] = 1.0
            return f, f.copy()
        if self.merge_case == 2:
            f = np.zeros(N)
            f[-1] = 1.0
            b = np.zeros(N)
            b[0] = 1.0
            return f, b
        if self.merge_case == 3:
            return np.ones(N), np.ones(N)
        if self.merge_case == 4:
            return self.attn, self.attn
        return self.attn_f, self.attn_b

    def named_parameters(self):
        out = {}
        for i, g in enumerate(self.fwd):
            out.update(g.named(f"dec.fwd.gru{i + 1}"))
        for i, g in enumerate(self.bwd):
            out.update(g.named(f"dec.bwd.gru{i + 1}"))
        if self.merge_case == 4:
            out["dec.attn"] = self.attn
        elif self.merge_case == 5:
            out["dec.attn_f"] = self.attn_f
            if self.direction == "bi":
                out["dec.attn_b"] = self.attn_b
        out["dec.W_d"] = self.W_d
        out["dec.v_d"] = self.v_d
        return out

    def parameters(self):
        return list(self.named_parameters().values())


def _as_sequence(y):
    """(N, B, 1) decoder input from a (B, N) array or a list of N (B,) Values."""
    if isinstance(y, (list, tuple)):
        st = ad.stack(y)
        return ad.reshape(st, st.data.shape + (1,))
    y = np.atleast_2d(np.asarray(y, dtype=np.float64))
    return ad.Value(y.T[:, :, None].copy())


def _run_stack(seq, grus, reverse=False):
    for gru in grus:
        seq = ad.gru_sequence(seq, gru.W, gru.U, gru.bias, reverse=reverse)
    return seq


def run_bigru(y, model):
    """Top-layer state sequences (forward, backward), each an (N, B, H) Value.

    Both are indexed by channel use: ``fwd[k]`` summarises ``y[1..k]`` and
    ``bwd[k]`` summarises ``y[k..N]``. In uni mode ``bwd`` is None.
    """
    seq = _as_sequence(y)
    if seq.data.shape[0] != model.N:
        raise ValueError(f"decoder expects {model.N} receive values, got {seq.data.shape[0]}")
    fwd = _run_stack(seq, model.fwd)
    bwd = _run_stack(seq, model.bwd, reverse=True) if model.direction == "bi" else None
    return fwd, bwd


def merge_states(fwd_states, bwd_states, model):
    """Attention-weighted sums of the top-layer states, concatenated [forward ; backward]."""
    if model.merge_case not in MERGE_CASES:
        raise ValueError(f"unknown merge case {model.merge_case!r}")
    wf, wb = model.attention_weights()
    parts = [ad.weighted_sum(wf, _stacked(fwd_states))]
    if model.direction == "bi":
        parts.append(ad.weighted_sum(wb, _stacked(bwd_states)))
    return parts[0] if len(parts) == 1 else ad.concat(parts, axis=-1)


def _stacked(states):
    return ad.stack(states) if isinstance(states, (list, tuple)) else ad.as_value(states)


def decoder_logits(y, model):
    fwd, bwd = run_bigru(y, model)
    feat = merge_states(fwd, bwd, model)
    return ad.add(ad.matmul(feat, ad.transpose(model.W_d)), model.v_d)


def decode(y, model):
    """Probability structure: (B, 2^K) block probabilities or (B, K) bit probabilities."""
    logits = decoder_logits(y, model)
    if model.head == "softmax":
        return ad.softmax(logits)
    return ad.sigmoid(logits)


def index_to_bits(idx, K):
    """MSB-first binary expansion of class indices, shape (..., K)."""
    idx = np.asarray(idx, dtype=np.int64)
    shifts = np.arange(K - 1, -1, -1)
    return ((idx[..., None] >> shifts) & 1).astype(np.uint8)


def bits_to_index(bits):
    bits = np.asarray(bits, dtype=np.int64)
    K = bits.shape[-1]
    return (bits << np.arange(K - 1, -1, -1)).sum(axis=-1)


def harden(d_hat, head, K=None):
    """Hard bit decisions from decoder probabilities.

    Softmax: argmax index (ties to the lower index) expanded MSB-first.
    Sigmoid: bit = 1 where probability > 0.5 (0.5 maps to 0).
    """
    p = np.asarray(d_hat.data if isinstance(d_hat, ad.Value) else d_hat, dtype=np.float64)
    if head == "softmax":
        if K is None:
            K = int(round(np.log2(p.shape[-1])))
        return index_to_bits(np.argmax(p, axis=-1), K)
    if head == "sigmoid":
        return (p > 0.5).astype(np.uint8)
    raise ValueError(f"unknown head {head!r}")
