"""Central finite-difference checks of every differentiable primitive and of a full closed loop."""
import time
from dataclasses import dataclass

import numpy as np

from fblab import autodiff as ad

TOLERANCE = 1e-4


@dataclass
class CheckResult:
    name: str
    max_rel_err: float
    n_checked: int

    @property
    def passed(self):
        return self.max_rel_err < TOLERANCE

    def line(self):
        status = "PASS" if self.passed else "FAIL"
        return f"{status} {self.name:<28s} max_rel_err={self.max_rel_err:.3e} entries={self.n_checked}"


def rel_err(a, n):
    a, n = np.ravel(a), np.ravel(n)
    scale = max(np.linalg.norm(a), np.linalg.norm(n), 1e-10)
    return float(np.linalg.norm(a - n) / scale)


def numeric_grad(f, arr, eps=1e-6):
    """Central differences of scalar ``f()`` w.r.t. every entry of ``arr`` (perturbed in place)."""
    g = np.zeros_like(arr)
    flat, gflat = arr.reshape(-1), g.reshape(-1)
    for i in range(flat.size):
        old = flat[i]
        flat[i] = old + eps
        up = f()
        flat[i] = old - eps
        down = f()
        flat[i] = old
        gflat[i] = (up - down) / (2 * eps)
    return g


def check_function(name, fn, arrays, rng, differentiable=None):
    """Compare backprop and finite differences for ``sum(R * fn(*inputs))`` with a fixed random R."""
    differentiable = differentiable if differentiable is not None else range(len(arrays))
    arrays = [np.array(a, dtype=np.float64) for a in arrays]
    proj = {}

    def scalar(values):
        out = fn(*values)
        if "R" not in proj:
            proj["R"] = rng.standard_normal(out.data.shape)
        return ad.total(ad.mul(out, proj["R"]))

    values = [ad.Value(a, requires_grad=True) for a in arrays]
    scalar(values).backward()
    worst, count = 0.0, 0
    for i in differentiable:
        analytic = values[i].grad if values[i].grad is not None else np.zeros_like(arrays[i])

        def f():
            with ad.no_grad():
                return float(scalar([ad.Value(a) for a in arrays]).data)

        numeric = numeric_grad(f, arrays[i])
        worst = max(worst, rel_err(analytic, numeric))
        count += arrays[i].size
    return CheckResult(name, worst, count)


def primitive_checks(seed=0):
    rng = np.random.default_rng(seed)
    r = rng.standard_normal
    B, I, H = 4, 3, 5
    gru_w = [r((I, 3 * H)) * 0.5, r((H, 3 * H)) * 0.5, r(3 * H) * 0.5]
    probs = rng.dirichlet(np.ones(6), size=4)
    onehot = np.eye(6)[rng.integers(0, 6, 4)]
    targets = rng.integers(0, 6, 4)
    bits = rng.integers(0, 2, (4, 3))
    cases = [
        ("add (broadcast)", lambda a, b: ad.add(a, b), [r((3, 4)), r(4)]),
        ("sub", lambda a, b: ad.sub(a, b), [r((3, 4)), r((3, 4))]),
        ("mul (broadcast)", lambda a, b: ad.mul(a, b), [r((3, 4)), r((1, 4))]),
        ("square", lambda a: ad.square(a), [r((3, 4))]),
        ("matmul", lambda a, b: ad.matmul(a, b), [r((3, 4)), r((4, 2))]),
        ("matmul (vector)", lambda a, b: ad.matmul(a, b), [r((3, 4)), r(4)]),
        ("tanh", lambda a: ad.tanh(a), [r((3, 4))]),
        ("sigmoid", lambda a: ad.sigmoid(a), [r((3, 4)) * 3]),
        ("total", lambda a: ad.total(a), [r((3, 4))]),
        ("mean", lambda a: ad.mean(a), [r((3, 4))]),
        ("concat", lambda a, b: ad.concat([a, b], axis=-1), [r((3, 2)), r((3, 4))]),
        ("stack", lambda a, b: ad.stack([a, b]), [r((3, 2)), r((3, 2))]),
        ("getitem", lambda a: ad.getitem(a, (1, slice(0, 3))), [r((3, 4))]),
        ("reshape", lambda a: ad.reshape(a, (4, 3)), [r((3, 4))]),
        ("transpose", lambda a: ad.transpose(a), [r((3, 4))]),
        ("softmax", lambda a: ad.softmax(a), [r((4, 6))]),
        ("cross_entropy", lambda p: ad.cross_entropy(onehot, p), [probs]),
        ("softmax_cross_entropy", lambda z: ad.softmax_cross_entropy(z, targets), [r((4, 6))]),
        ("sigmoid_bce", lambda z: ad.sigmoid_bce(z, bits), [r((4, 3))]),
        ("batch_standardize", lambda a: ad.batch_standardize(a), [r(8) * 2 + 1]),
        ("standardize (frozen)", lambda a: ad.standardize(a, 0.3, 1.7), [r(8)]),
        ("weighted_sum", lambda w, s: ad.weighted_sum(w, s), [r(5), r((5, 3, 2))]),
        ("gru_cell", lambda x, h, W, U, b: ad.gru_cell(x, h, W, U, b),
         [r((B, I)), r((B, H)) * 0.5] + gru_w),
        ("gru_sequence", lambda x, W, U, b: ad.gru_sequence(x, W, U, b), [r((4, B, I))] + gru_w),
        ("gru_sequence (reverse)", lambda x, W, U, b: ad.gru_sequence(x, W, U, b, reverse=True),
         [r((4, B, I))] + gru_w),
    ]
    return [check_function(name, fn, arrays, rng) for name, fn, arrays in cases]


def closed_loop_check(seed=0, K=4, N=6, hidden=8, batch=16, sigma2_sq=0.01):
    """Gradient of the training loss w.r.t. every encoder and decoder parameter."""
    from fblab.channel import PURPOSE_TRAIN
    from fblab.config import TrainConfig
    from fblab.trainer import FeedbackCode, generate_batch, sample_ids

    cfg = TrainConfig(K=K, N=N, sigma2_sq=sigma2_sq, J=batch, batch=batch, epochs=1,
                      enc_hidden=hidden, dec_hidden=hidden, seed=seed)
    code = FeedbackCode.init(cfg)
    bits, n1, n2 = generate_batch(seed, cfg, sample_ids(PURPOSE_TRAIN, 0, batch))
    loss, _ = code.loss(bits, n1, n2)
    loss.backward()
    named = code.named_parameters()

    def f():
        with ad.no_grad():
            return float(code.loss(bits, n1, n2)[0].data)

    worst, count = 0.0, 0
    for name, p in named.items():
        analytic = p.grad if p.grad is not None else np.zeros_like(p.data)
        numeric = numeric_grad(f, p.data)
        worst = max(worst, rel_err(analytic, numeric))
        count += p.data.size
    return CheckResult(f"closed loop K={K} N={N} H={hidden}", worst, count)


def run_all(seed=0):
    """All checks; returns (results, seconds)."""
    t0 = time.perf_counter()
    results = primitive_checks(seed)
    results.append(closed_loop_check(seed))
    return results, time.perf_counter() - t0
