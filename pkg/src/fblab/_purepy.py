"""Numpy fallbacks for the routines in ``_ckernels.pyx``.

Both backends must return bit-identical results; the test suite compares them.
"""
import numpy as np

PHILOX_M0 = np.uint64(0xD2511F53)
PHILOX_M1 = np.uint64(0xCD9E8D57)
PHILOX_W0 = 0x9E3779B9
PHILOX_W1 = 0xBB67AE85
_MASK32 = np.uint64(0xFFFFFFFF)
_SHIFT32 = np.uint64(32)


def philox4x32(counters, key0, key1):
    """Philox4x32-10 block function.

    ``counters`` is a (n, 4) uint32 array; returns a (n, 4) uint32 array.
    """
    c = np.asarray(counters, dtype=np.uint32)
    c0 = c[:, 0].astype(np.uint64)
    c1 = c[:, 1].astype(np.uint64)
    c2 = c[:, 2].astype(np.uint64)
    c3 = c[:, 3].astype(np.uint64)
    k0 = int(key0) & 0xFFFFFFFF
    k1 = int(key1) & 0xFFFFFFFF
    for _ in range(10):
        p0 = PHILOX_M0 * c0
        p1 = PHILOX_M1 * c2
        hi0, lo0 = p0 >> _SHIFT32, p0 & _MASK32
        hi1, lo1 = p1 >> _SHIFT32, p1 & _MASK32
        c0 = hi1 ^ c1 ^ np.uint64(k0)
        c1 = lo1
        c2 = hi0 ^ c3 ^ np.uint64(k1)
        c3 = lo0
        k0 = (k0 + PHILOX_W0) & 0xFFFFFFFF
        k1 = (k1 + PHILOX_W1) & 0xFFFFFFFF
    out = np.empty(c.shape, dtype=np.uint32)
    out[:, 0] = c0
    out[:, 1] = c1
    out[:, 2] = c2
    out[:, 3] = c3
    return out


def viterbi_tailbiting(branch, next_state):
    """Exact ML tail-biting Viterbi over a batch.

    branch: (trials, steps, n_states, 2) branch costs (lower is better) for
    leaving ``state`` with input bit ``u``.
    next_state: (n_states, 2) int table.

    Returns (trials, steps) decoded input bits. For every start state s0 a
    Viterbi pass is run with the end state forced to s0; the lowest metric
    wins, ties going to the lower start state. Survivor ties prefer the lower
    predecessor state, then the lower input bit.
    """
    branch = np.asarray(branch, dtype=np.float64)
    n_trials, n_steps, n_states, _ = branch.shape
    prev_state, prev_bit = _predecessors(next_state)
    out = np.zeros((n_trials, n_steps), dtype=np.uint8)
    starts = np.arange(n_states)
    for t in range(n_trials):
        metric = np.full((n_states, n_states), np.inf)
        metric[starts, starts] = 0.0
        surv = np.empty((n_steps, n_states, n_states), dtype=np.int64)
        for k in range(n_steps):
            bk = branch[t, k]
            # candidate j for target state uses predecessor prev_state[:, j]
            cand0 = metric[:, prev_state[:, 0]] + bk[prev_state[:, 0], prev_bit[:, 0]]
            cand1 = metric[:, prev_state[:, 1]] + bk[prev_state[:, 1], prev_bit[:, 1]]
            take1 = cand1 < cand0
            metric = np.where(take1, cand1, cand0)
            surv[k] = take1
        final = metric[starts, starts]
        s0 = int(np.argmin(final))
        state = s0
        for k in range(n_steps - 1, -1, -1):
            j = int(surv[k, s0, state])
            out[t, k] = prev_bit[state, j]
            state = int(prev_state[state, j])
    return out


def _predecessors(next_state):
    """Per target state, its two (state, bit) predecessors sorted by state then bit."""
    next_state = np.asarray(next_state)
    n_states = next_state.shape[0]
    preds = [[] for _ in range(n_states)]
    for s in range(n_states):
        for u in (0, 1):
            preds[int(next_state[s, u])].append((s, u))
    prev_state = np.empty((n_states, 2), dtype=np.int64)
    prev_bit = np.empty((n_states, 2), dtype=np.int64)
    for j, p in enumerate(preds):
        if len(p) != 2:
            raise ValueError("trellis is not a binary shift-register trellis")
        p.sort()
        prev_state[j] = [p[0][0], p[1][0]]
        prev_bit[j] = [p[0][1], p[1][1]]
    return prev_state, prev_bit
