"""Reverse-mode automatic differentiation over small dense float64 arrays.

Graphs are built define-by-run: every operation on a :class:`Value` that
requires a gradient records its parents and a closure that pushes the output
gradient back to them. :meth:`Value.backward` runs those closures once in
reverse topological order. Arrays are batched along the leading axis; the
recurrent layers operate on ``(batch, features)`` matrices.
"""
import contextlib
import ctypes
import sys

import numpy as np


def _tune_malloc():
    # glibc serves arrays >= 128 KiB with fresh mmap pages by default; the
    # per-timestep temporaries of a batch then page-fault on every step.
    if not sys.platform.startswith("linux"):
        return
    try:
        libc = ctypes.CDLL("libc.so.6")
        libc.mallopt(-3, 1 << 30)  # M_MMAP_THRESHOLD
        libc.mallopt(-1, 1 << 30)  # M_TRIM_THRESHOLD
    except (OSError, AttributeError):
        pass


_tune_malloc()

_GRAD_ENABLED = True
_NEXT_ID = 0


@contextlib.contextmanager
def no_grad():
    """Evaluate without recording a graph (inference and statistics passes)."""
    global _GRAD_ENABLED
    prev = _GRAD_ENABLED
    _GRAD_ENABLED = False
    try:
        yield
    finally:
        _GRAD_ENABLED = prev


class GraphError(RuntimeError):
    pass


class Value:
    __slots__ = ("data", "grad", "requires_grad", "name", "node_id", "_parents", "_backward", "_consumed")

    def __init__(self, data, requires_grad=False, name=None, _parents=(), _backward=None):
        global _NEXT_ID
        self.data = np.asarray(data, dtype=np.float64)
        self.grad = None
        self.requires_grad = requires_grad
        self.name = name
        self.node_id = _NEXT_ID
        _NEXT_ID += 1
        self._parents = _parents
        self._backward = _backward
        self._consumed = False

    @property
    def shape(self):
        return self.data.shape

    def __repr__(self):
        label = f" {self.name!r}" if self.name else ""
        return f"Value{label}(shape={self.data.shape})"

    def zero_grad(self):
        self.grad = None

    def backward(self):
        """Populate ``.grad`` of every reachable leaf with d(self)/d(leaf)."""
        if self.data.size != 1:
            raise GraphError(f"backward needs a scalar root, got shape {self.data.shape}")
        if self._consumed:
            raise GraphError("backward already ran on this graph; rebuild it for a new pass")
        order = _topological(self)
        grads = {id(self): np.ones_like(self.data)}
        for node in reversed(order):
            g = grads.pop(id(node), None)
            if g is None:
                continue
            if node._backward is None:
                node.grad = g if node.grad is None else node.grad + g
                continue
            for parent, pg in zip(node._parents, node._backward(g)):
                if pg is None or not parent.requires_grad:
                    continue
                key = id(parent)
                if key in grads:
                    grads[key] = grads[key] + pg
                else:
                    grads[key] = pg
        self._consumed = True

    # operator sugar
    def __add__(self, other):
        return add(self, other)

    __radd__ = __add__

    def __sub__(self, other):
        return sub(self, other)

    def __rsub__(self, other):
        return sub(other, self)

    def __mul__(self, other):
        return mul(self, other)

    __rmul__ = __mul__

    def __neg__(self):
        return mul(self, -1.0)

    def __matmul__(self, other):
        return matmul(self, other)

    def __getitem__(self, idx):
        return getitem(self, idx)


def _topological(root):
    order, seen = [], set()
    stack = [(root, False)]
    on_path = set()
    while stack:
        node, expanded = stack.pop()
        if expanded:
            on_path.discard(id(node))
            order.append(node)
            continue
        if id(node) in seen:
            if id(node) in on_path:
                raise GraphError("cycle in computation graph")
            continue
        seen.add(id(node))
        on_path.add(id(node))
        stack.append((node, True))
        for p in node._parents:
            if p.requires_grad and id(p) not in seen:
                stack.append((p, False))
    return order


def as_value(x):
    return x if isinstance(x, Value) else Value(x)


def _make(data, parents, backward):
    if _GRAD_ENABLED and any(p.requires_grad for p in parents):
        return Value(data, True, _parents=parents, _backward=backward)
    return Value(data)


def _unbroadcast(g, shape):
    """Sum ``g`` down to ``shape`` after numpy broadcasting."""
    if g.shape == shape:
        return g
    while g.ndim > len(shape):
        g = g.sum(axis=0)
    for axis, n in enumerate(shape):
        if n == 1 and g.shape[axis] != 1:
            g = g.sum(axis=axis, keepdims=True)
    return g


# elementwise and linear algebra

def add(a, b):
    a, b = as_value(a), as_value(b)
    return _make(a.data + b.data, (a, b),
                 lambda g: (_unbroadcast(g, a.shape), _unbroadcast(g, b.shape)))


def sub(a, b):
    a, b = as_value(a), as_value(b)
    return _make(a.data - b.data, (a, b),
                 lambda g: (_unbroadcast(g, a.shape), _unbroadcast(-g, b.shape)))


def mul(a, b):
    a, b = as_value(a), as_value(b)
    return _make(a.data * b.data, (a, b),
                 lambda g: (_unbroadcast(g * b.data, a.shape), _unbroadcast(g * a.data, b.shape)))


def square(a):
    return _make(a.data * a.data, (a,), lambda g: (2.0 * a.data * g,))


def matmul(a, b):
    a, b = as_value(a), as_value(b)

    def backward(g):
        ga = g @ b.data.T if b.data.ndim == 2 else np.multiply.outer(g, b.data)
        if a.data.ndim == 1:
            gb = np.multiply.outer(a.data, g)
        else:
            gb = a.data.T @ g
        return ga, gb

    return _make(a.data @ b.data, (a, b), backward)


def tanh(a):
    out = np.tanh(a.data)
    return _make(out, (a,), lambda g: (g * (1.0 - out * out),))


def _sigmoid(x):
    return _sigmoid_(np.array(x, dtype=np.float64))


def sigmoid(a):
    out = _sigmoid(a.data)
    return _make(out, (a,), lambda g: (g * out * (1.0 - out),))


def total(a):
    """Sum of all entries (scalar)."""
    return _make(a.data.sum(), (a,), lambda g: (np.broadcast_to(g, a.shape).copy(),))


def mean(a):
    n = a.data.size
    return _make(a.data.mean(), (a,), lambda g: (np.full(a.shape, g / n),))


def concat(values, axis=-1):
    values = [as_value(v) for v in values]
    out = np.concatenate([v.data for v in values], axis=axis)
    sizes = np.cumsum([v.data.shape[axis] for v in values])[:-1]
    return _make(out, tuple(values), lambda g: tuple(np.split(g, sizes, axis=axis)))


def stack(values):
    values = [as_value(v) for v in values]
    out = np.stack([v.data for v in values])
    return _make(out, tuple(values), lambda g: tuple(g[i] for i in range(len(values))))


def getitem(a, idx):
    def backward(g):
        full = np.zeros_like(a.data)
        np.add.at(full, idx, g)
        return (full,)

    return _make(a.data[idx], (a,), backward)


def detach(a):
    return Value(a.data)


# layers

def gru_cell(x, h, W, U, bias):
    """One gated-recurrent-unit step on a batch.

    ``x`` (B, I), ``h`` (B, H); ``W`` (I, 3H), ``U`` (H, 3H), ``bias`` (3H,).
    Column blocks are ordered [reset | update | candidate]:

        r = sigmoid(x W_r + h U_r + b_r)
        u = sigmoid(x W_u + h U_u + b_u)
        c = tanh(x W_c + (r * h) U_c + b_c)
        h' = (1 - u) * h + u * c
    """
    x, h, W, U, bias = (as_value(v) for v in (x, h, W, U, bias))
    hs = h.data.shape[-1]
    if W.data.shape != (x.data.shape[-1], 3 * hs) or U.data.shape != (hs, 3 * hs) \
            or bias.data.shape != (3 * hs,):
        raise ValueError(
            f"GRU shape mismatch: x {x.data.shape}, h {h.data.shape}, W {W.data.shape}, "
            f"U {U.data.shape}, bias {bias.data.shape}")
    xd, hd, Wd, Ud = x.data, h.data, W.data, U.data
    ru = hd @ Ud[:, :2 * hs]
    ru += xd @ Wd[:, :2 * hs]
    ru += bias.data[:2 * hs]
    _sigmoid_(ru)
    r, u = ru[..., :hs], ru[..., hs:]
    rh = r * hd
    c = rh @ Ud[:, 2 * hs:]
    c += xd @ Wd[:, 2 * hs:]
    c += bias.data[2 * hs:]
    np.tanh(c, out=c)
    out = hd + u * (c - hd)

    def backward(g):
        du = g * (c - hd)
        dac = g * u * (1.0 - c * c)
        drh = dac @ Ud[:, 2 * hs:].T
        dar = drh * hd * r * (1.0 - r)
        dau = du * u * (1.0 - u)
        dgx = np.concatenate([dar, dau, dac], axis=-1)
        dgh = dgx[..., :2 * hs]
        dh = g * (1.0 - u) + drh * r + dgh @ Ud[:, :2 * hs].T
        x2 = xd.reshape(-1, xd.shape[-1])
        dW = x2.T @ dgx.reshape(-1, 3 * hs)
        dU = np.empty_like(Ud)
        dU[:, :2 * hs] = hd.reshape(-1, hs).T @ dgh.reshape(-1, 2 * hs)
        dU[:, 2 * hs:] = rh.reshape(-1, hs).T @ dac.reshape(-1, hs)
        db = dgx.reshape(-1, 3 * hs).sum(axis=0)
        dx = dgx @ Wd.T
        return dx, dh, dW, dU, db

    return _make(out, (x, h, W, U, bias), backward)


def _softmax(z):
    e = np.exp(z - z.max(axis=-1, keepdims=True))
    return e / e.sum(axis=-1, keepdims=True)


def softmax(a):
    out = _softmax(a.data)

    def backward(g):
        return (out * (g - (g * out).sum(axis=-1, keepdims=True)),)

    return _make(out, (a,), backward)


PROB_FLOOR = 1e-30


def cross_entropy(d, d_hat):
    """Mean over the batch of ``-sum_i d_i log max(d_hat_i, 1e-30)``."""
    d = np.asarray(d.data if isinstance(d, Value) else d, dtype=np.float64)
    p = as_value(d_hat)
    clamped = np.maximum(p.data, PROB_FLOOR)
    rows = d.size // d.shape[-1]
    loss = -(d * np.log(clamped)).sum() / rows

    def backward(g):
        grad = -g * d / clamped / rows
        return (np.where(p.data >= PROB_FLOOR, grad, 0.0),)

    return _make(loss, (p,), backward)


def softmax_cross_entropy(logits, targets):
    """Mean cross-entropy of integer class ``targets`` under ``softmax(logits)``."""
    z = logits.data
    targets = np.asarray(targets)
    shifted = z - z.max(axis=-1, keepdims=True)
    logp = shifted - np.log(np.exp(shifted).sum(axis=-1, keepdims=True))
    rows = np.arange(z.shape[0])
    loss = -logp[rows, targets].mean()

    def backward(g):
        grad = np.exp(logp)
        grad[rows, targets] -= 1.0
        return (grad * (g / z.shape[0]),)

    return _make(loss, (logits,), backward)


def sigmoid_bce(logits, bits):
    """Per-bit binary cross-entropy summed over bits, averaged over the batch."""
    z = logits.data
    t = np.asarray(bits, dtype=np.float64)
    # log(1 + e^z) - t z, stable form
    loss = (np.maximum(z, 0) - z * t + np.log1p(np.exp(-np.abs(z)))).sum() / z.shape[0]

    def backward(g):
        return ((_sigmoid(z) - t) * (g / z.shape[0]),)

    return _make(loss, (logits,), backward)


VAR_FLOOR = 1e-8


def batch_standardize(a, var_floor=VAR_FLOOR):
    """Normalise each column by its batch mean and (1/B) variance.

    The gradient flows through the batch statistics. Variances below
    ``var_floor`` are replaced by the floor and treated as constants.
    """
    x = a.data
    n = x.shape[0]
    if n < 2:
        raise ValueError("batch normalisation needs a batch of at least 2")
    mu = x.mean(axis=0)
    xc = x - mu
    var = (xc * xc).mean(axis=0)
    floored = var < var_floor
    inv = 1.0 / np.sqrt(np.maximum(var, var_floor))
    out = xc * inv

    def backward(g):
        gc = g - g.mean(axis=0)
        corr = np.where(floored, 0.0, (g * out).mean(axis=0))
        return ((gc - out * corr) * inv,)

    return _make(out, (a,), backward)


def standardize(a, mean_, var, var_floor=VAR_FLOOR):
    """Normalise with fixed statistics (inference path)."""
    inv = 1.0 / np.sqrt(np.maximum(np.asarray(var, dtype=np.float64), var_floor))
    return _make((a.data - mean_) * inv, (a,), lambda g: (g * inv,))


def weighted_sum(weights, states):
    """``sum_k weights[k] * states[k]`` for states stacked as (N, B, H)."""
    weights, states = as_value(weights), as_value(states)
    w, s = weights.data, states.data
    out = np.tensordot(w, s, axes=(0, 0))

    def backward(g):
        gw = np.tensordot(s, g, axes=([1, 2], [0, 1]))
        gs = w[:, None, None] * g[None]
        return gw, gs

    return _make(out, (weights, states), backward)


def reshape(a, shape):
    return _make(a.data.reshape(shape), (a,), lambda g: (g.reshape(a.shape),))


def transpose(a):
    return _make(a.data.T, (a,), lambda g: (g.T,))


def _sigmoid_(a):
    """In-place logistic function; returns ``a``."""
    with np.errstate(over="ignore"):
        np.negative(a, out=a)
        np.exp(a, out=a)
    a += 1.0
    np.reciprocal(a, out=a)
    return a


def gru_sequence(xs, W, U, bias, reverse=False):
    """Run a GRU over a whole sequence; returns stacked states (N, B, H).

    ``xs`` is (N, B, I). Equivalent to chaining :func:`gru_cell` from a zero
    state (from the last step backwards when ``reverse``), but the input
    projections and the weight gradients are computed as single matrix
    products over all ``N * B`` rows.
    """
    xs, W, U, bias = (as_value(v) for v in (xs, W, U, bias))
    X = xs.data
    n, B, I = X.shape
    hs = U.data.shape[0]
    if W.data.shape != (I, 3 * hs) or U.data.shape != (hs, 3 * hs) or bias.data.shape != (3 * hs,):
        raise ValueError(f"GRU shape mismatch: xs {X.shape}, W {W.data.shape}, U {U.data.shape}")
    Wd, Ud = W.data, U.data
    U_ru = np.ascontiguousarray(Ud[:, :2 * hs])
    U_c = np.ascontiguousarray(Ud[:, 2 * hs:])
    Xf = X.reshape(n * B, I)
    GX_ru = (Xf @ Wd[:, :2 * hs] + bias.data[:2 * hs]).reshape(n, B, 2 * hs)
    GX_c = (Xf @ Wd[:, 2 * hs:] + bias.data[2 * hs:]).reshape(n, B, hs)
    steps = list(range(n - 1, -1, -1)) if reverse else list(range(n))
    Hs = np.empty((n, B, hs))
    RU = np.empty((n, B, 2 * hs))
    C = np.empty((n, B, hs))
    zero = np.zeros((B, hs))
    h = zero
    for k in steps:
        ru = RU[k]
        np.matmul(h, U_ru, out=ru)
        ru += GX_ru[k]
        _sigmoid_(ru)
        c = C[k]
        np.matmul(ru[:, :hs] * h, U_c, out=c)
        c += GX_c[k]
        np.tanh(c, out=c)
        hn = Hs[k]
        np.subtract(c, h, out=hn)
        hn *= ru[:, hs:]
        hn += h
        h = hn

    def backward(G):
        if reverse:
            Hp = np.concatenate([Hs[1:], zero[None]], axis=0)
        else:
            Hp = np.concatenate([zero[None], Hs[:-1]], axis=0)
        r, u = RU[..., :hs], RU[..., hs:]
        a_c = u * (1.0 - C * C)
        a_r = Hp * r * (1.0 - r)
        a_u = (C - Hp) * u * (1.0 - u)
        keep = 1.0 - u
        DRU = np.empty((n, B, 2 * hs))
        DAC = np.empty((n, B, hs))
        U_cT = np.ascontiguousarray(U_c.T)
        U_ruT = np.ascontiguousarray(U_ru.T)
        dh = np.zeros((B, hs))
        for k in reversed(steps):
            g = G[k] + dh
            dac = DAC[k]
            np.multiply(g, a_c[k], out=dac)
            drh = dac @ U_cT
            dru = DRU[k]
            np.multiply(drh, a_r[k], out=dru[:, :hs])
            np.multiply(g, a_u[k], out=dru[:, hs:])
            dh = g * keep[k]
            drh *= r[k]
            dh += drh
            dh += dru @ U_ruT
        DRUf = DRU.reshape(n * B, 2 * hs)
        DACf = DAC.reshape(n * B, hs)
        dW = np.empty_like(Wd)
        dW[:, :2 * hs] = Xf.T @ DRUf
        dW[:, 2 * hs:] = Xf.T @ DACf
        dU = np.empty_like(Ud)
        dU[:, :2 * hs] = Hp.reshape(n * B, hs).T @ DRUf
        dU[:, 2 * hs:] = (r * Hp).reshape(n * B, hs).T @ DACf
        db = np.concatenate([DRUf.sum(axis=0), DACf.sum(axis=0)])
        dX = (DRUf @ Wd[:, :2 * hs].T + DACf @ Wd[:, 2 * hs:].T).reshape(n, B, I)
        return dX, dW, dU, db

    return _make(Hs, (xs, W, U, bias), backward)
