"""State-propagation feedback encoder with a power-control layer.

At channel use k the encoder feeds ``(2b - 1, z[k-1])`` through a stack of
unidirectional GRUs, maps the top state through ``tanh(w_e . s + b_e)`` to
``x_tilde[k]``, normalises it per timestep and scales it by the power weight
``w_k``. The power weights are kept on the sphere ``sum_k w_k**2 = N``.
"""
import logging
from dataclasses import dataclass, field

import numpy as np

from fblab import autodiff as ad
from fblab.channel import PURPOSE_INIT, purpose_stream, uniforms

log = logging.getLogger(__name__)

POWER_LAYERS = ("norm+power", "norm-only", "power-only", "none")
ENCODER_MODES = ("feedback", "open-loop")


class MissingNormStats(RuntimeError):
    pass


class InitStream:
    """Hands out uniform initialisers from consecutive counter streams."""

    def __init__(self, seed, offset=0):
        self.seed = seed
        self.next_id = offset

    def uniform(self, shape, bound):
        n = int(np.prod(shape)) if shape else 1
        u = uniforms(self.seed, [purpose_stream(PURPOSE_INIT, self.next_id)], 0, n)[0]
        self.next_id += 1
        return ((2.0 * u - 1.0) * bound).reshape(shape)


@dataclass
class GruParams:
    W: ad.Value  # (input, 3H), blocks [reset | update | candidate]
    U: ad.Value  # (H, 3H)
    bias: ad.Value  # (3H,)

    @classmethod
    def init(cls, init, input_size, hidden):
        bound = 1.0 / np.sqrt(hidden)
        return cls(
            ad.Value(init.uniform((input_size, 3 * hidden), bound), True),
            ad.Value(init.uniform((hidden, 3 * hidden), bound), True),
            ad.Value(init.uniform((3 * hidden,), bound), True),
        )

    @property
    def hidden(self):
        return self.U.data.shape[0]

    def __call__(self, x, h):
        return ad.gru_cell(x, h, self.W, self.U, self.bias)

    def named(self, prefix):
        return {f"{prefix}.W": self.W, f"{prefix}.U": self.U, f"{prefix}.bias": self.bias}


def project_power_weights(w):
    """Rescale ``w`` onto ``sum(w**2) == len(w)``."""
    w = np.asarray(w, dtype=np.float64)
    ss = float(np.dot(w, w))
    if ss == 0.0:
        raise ValueError("cannot project an all-zero power-weight vector")
    n = w.shape[0]
    # already on the sphere up to rounding: leave untouched so projection is idempotent
    if abs(ss - n) <= 1e-12 * n:
        return w.copy()
    return w * np.sqrt(n / ss)


@dataclass
class EncoderModel:
    K: int
    N: int
    grus: list
    w_e: ad.Value
    b_e: ad.Value
    power_w: ad.Value
    mode: str = "feedback"
    power_layer: str = "norm+power"
    norm_mean: np.ndarray = None
    norm_var: np.ndarray = None
    stop_feedback_grad: bool = field(default=False, repr=False)

    @classmethod
    def init(cls, K, N, hidden=50, layers=2, mode="feedback", power_layer="norm+power", init=None):
        if mode not in ENCODER_MODES:
            raise ValueError(f"unknown encoder mode {mode!r}")
        if power_layer not in POWER_LAYERS:
            raise ValueError(f"unknown power layer {power_layer!r}")
        init = init if init is not None else InitStream(0)
        grus = [GruParams.init(init, K + 1 if i == 0 else hidden, hidden) for i in range(layers)]
        bound = 1.0 / np.sqrt(hidden)
        return cls(
            K=K, N=N, grus=grus,
            w_e=ad.Value(init.uniform((hidden,), bound), True),
            b_e=ad.Value(init.uniform((), bound), True),
            power_w=ad.Value(np.ones(N), True),
            mode=mode, power_layer=power_layer,
        )

    @property
    def frozen(self):
        return self.norm_mean is not None

    def named_parameters(self):
        out = {}
        for i, g in enumerate(self.grus):
            out.update(g.named(f"enc.gru{i + 1}"))
        out["enc.w_e"] = self.w_e
        out["enc.b_e"] = self.b_e
        if self.power_layer in ("norm+power", "power-only"):
            out["enc.power_w"] = self.power_w
        return out

    def parameters(self):
        return list(self.named_parameters().values())


@dataclass
class EpisodeTrace:
    x: np.ndarray
    x_tilde: np.ndarray
    y: np.ndarray
    z: np.ndarray
    y_values: list = field(repr=False, default=None)

    @property
    def total_power(self):
        return (self.x * self.x).sum(axis=-1)


def check_norm_mode(model, norm_mode, batch):
    if norm_mode not in ("batch", "frozen"):
        raise ValueError(f"unknown norm mode {norm_mode!r}")
    needs_norm = model.power_layer in ("norm+power", "norm-only")
    if needs_norm and norm_mode == "frozen" and not model.frozen:
        raise MissingNormStats("frozen normalisation requested but statistics were never frozen")
    if needs_norm and norm_mode == "batch" and batch < 2:
        raise ValueError("batch normalisation needs a batch of at least 2")


def power_control(xt, k, model, norm_mode, stats_out=None):
    """Normalise ``x_tilde[k]`` and apply the power weight, per ``model.power_layer``."""
    if model.power_layer in ("norm+power", "norm-only"):
        if norm_mode == "batch":
            if stats_out is not None:
                stats_out.setdefault("mean", np.zeros(model.N))[k] = xt.data.mean()
                stats_out.setdefault("var", np.zeros(model.N))[k] = xt.data.var()
            xt = ad.batch_standardize(xt)
        else:
            xt = ad.standardize(xt, model.norm_mean[k], model.norm_var[k])
    if model.power_layer in ("norm+power", "power-only"):
        xt = ad.mul(ad.getitem(model.power_w, k), xt)
    return xt


def encode_episode(bits, n1, n2, model, norm_mode="batch", stats_out=None):
    """Run the closed loop for a batch of episodes.

    ``bits`` (B, K) in {0, 1}; ``n1``, ``n2`` (B, N). ``norm_mode`` is
    ``"batch"`` (live per-timestep batch statistics, differentiated through)
    or ``"frozen"`` (saved statistics). With ``stats_out`` a dict, the batch
    means and variances used at each step are recorded into it.
    """
    bits = np.atleast_2d(np.asarray(bits))
    n1 = np.atleast_2d(np.asarray(n1, dtype=np.float64))
    n2 = np.atleast_2d(np.asarray(n2, dtype=np.float64))
    B, N = n1.shape
    if bits.shape != (B, model.K) or N != model.N or n2.shape != n1.shape:
        raise ValueError(f"episode shapes bits {bits.shape}, n1 {n1.shape}, n2 {n2.shape} "
                         f"do not match K={model.K}, N={model.N}")
    check_norm_mode(model, norm_mode, B)

    msg = ad.Value(2.0 * bits - 1.0)
    states = [ad.Value(np.zeros((B, g.hidden))) for g in model.grus]
    fb = ad.Value(np.zeros((B, 1)))
    xs, xts, ys, zs, y_values = [], [], [], [], []
    for k in range(N):
        inp = ad.concat([msg, fb], axis=-1)
        for i, gru in enumerate(model.grus):
            states[i] = gru(inp, states[i])
            inp = states[i]
        xt = ad.tanh(ad.add(ad.matmul(inp, model.w_e), model.b_e))
        x = power_control(xt, k, model, norm_mode, stats_out)
        y = ad.add(x, n1[:, k])
        z = ad.add(y, n2[:, k])
        xs.append(x.data)
        xts.append(xt.data)
        ys.append(y.data)
        zs.append(z.data)
        y_values.append(y)
        src = z if model.mode == "feedback" else x
        if model.stop_feedback_grad:
            src = ad.detach(src)
        fb = ad.reshape(src, (B, 1))
    return EpisodeTrace(
        x=np.stack(xs, axis=1), x_tilde=np.stack(xts, axis=1),
        y=np.stack(ys, axis=1), z=np.stack(zs, axis=1), y_values=y_values,
    )


def freeze_norm_stats(model, bits, n1, n2, var_floor=ad.VAR_FLOOR, episode=None):
    """Save per-timestep sample mean and (1/J) variance of ``x_tilde`` over J tuples.

    Timesteps are processed in order over the full data set, so the statistics
    at step k see exactly the feedback the frozen encoder will produce.
    ``episode`` replaces :func:`encode_episode` for other encoder families.
    """
    J = np.atleast_2d(bits).shape[0]
    if J < 2:
        raise ValueError("need at least 2 samples to freeze statistics")
    episode = episode or encode_episode
    stats = {}
    with ad.no_grad():
        if model.power_layer in ("norm+power", "norm-only"):
            episode(bits, n1, n2, model, "batch", stats_out=stats)
        else:
            tr = episode(bits, n1, n2, model, "batch")
            stats = {"mean": tr.x_tilde.mean(axis=0), "var": tr.x_tilde.var(axis=0)}
    var = stats["var"].copy()
    low = var < var_floor
    if low.any():
        log.warning("variance floored at %g for timesteps %s", var_floor, np.flatnonzero(low).tolist())
        var[low] = var_floor
    model.norm_mean = stats["mean"].copy()
    model.norm_var = var
    return model
